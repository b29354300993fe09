#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "diffro/mtr_model.hpp"
#include "diffro/objectives.hpp"
#include "diffro/optim.hpp"
#include "diffro/policy_lm.hpp"
#include "diffro/relaxation.hpp"

namespace diffro {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Stage { pretrain, train_reward, diffro, dpo };
std::string to_string(Stage s);
Stage parse_stage(const std::string& s);

struct RlConfig {
  double beta = 0.1;
  // Early stop when the batch mean per-token KL exceeds this.
  double kl_ceiling = 5.0;
  std::size_t max_len = toy::kMaxTokens;
  // Instruction prefixes added to RL texts: emotion "none" or "random";
  // quality_target 0 means no quality instruction.
  std::string emotion_instr = "none";
  int quality_target = 0;
  std::size_t dpo_k = 5;
};

// One experiment stage. Paths are relative to the working directory.
struct ExperimentConfig {
  Stage stage = Stage::pretrain;
  std::uint64_t seed = 1;
  std::string train_data = "data/train.jsonl";
  std::string valid_data = "data/valid.jsonl";
  std::string init;       // policy checkpoint to start from
  std::string reference;  // frozen reference policy
  std::string reward_model;
  std::string out;        // checkpoint path written at the end
  std::string log;        // TrainLog JSONL; empty disables
  LmConfig lm;
  MtrConfig mtr;
  AdamConfig optim;
  double lr_decay_to = 1.0;
  std::size_t batch_size = 16;
  std::size_t steps = 2000;
  std::size_t checkpoint_every = 0;
  bool log_wall_time = false;
  RlConfig rl;
  GumbelConfig gumbel;
  RewardSpec reward;

  // Stage defaults: supervised stages use lr 1e-3, RL stages 1e-5.
  static ExperimentConfig defaults(Stage stage);
  // Throws ConfigError on malformed or inconsistent settings.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
  nlohmann::ordered_json to_json() const;
  void validate() const;
  // Throws ConfigError naming the first input path missing under `workdir`.
  void check_inputs(const std::filesystem::path& workdir) const;
};

}  // namespace diffro
