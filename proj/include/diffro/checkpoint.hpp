#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "diffro/mtr_model.hpp"
#include "diffro/optim.hpp"
#include "diffro/policy_lm.hpp"

namespace diffro {

inline constexpr std::uint64_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Everything beyond the weights needed to resume a run exactly.
struct TrainState {
  std::uint64_t step = 0;
  Rng::State rng;
  std::string optimizer;  // Adam::write bytes; empty when absent
};

std::string optimizer_bytes(const Adam& opt);
void restore_optimizer(Adam& opt, const std::string& bytes);

struct CheckpointInfo {
  std::uint64_t version = 0;
  std::string kind;  // "policy" or "mtr"
  nlohmann::json config;
  bool has_state = false;
};

// Native format: magic, version, kind, model config (JSON text), parameters
// as raw IEEE-754 bits, then an optional TrainState.
void save_checkpoint(const std::filesystem::path& path, const std::string& kind,
                     const nlohmann::json& config, const ParameterSet& params,
                     const TrainState* state = nullptr);
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);
// Loads into existing parameters; names and shapes must match.
CheckpointInfo load_checkpoint(const std::filesystem::path& path, const std::string& kind,
                               ParameterSet& params, TrainState* state = nullptr);

void save_policy(const std::filesystem::path& path, const PolicyLM& lm,
                 const TrainState* state = nullptr);
std::unique_ptr<PolicyLM> load_policy(const std::filesystem::path& path,
                                      TrainState* state = nullptr);
void save_mtr(const std::filesystem::path& path, const MtrModel& mtr,
              const TrainState* state = nullptr);
std::unique_ptr<MtrModel> load_mtr(const std::filesystem::path& path,
                                   TrainState* state = nullptr);

// Portable dump {"kind", "config", "params": {name: {shape, values}}}.
void export_weights(const std::filesystem::path& checkpoint, const std::filesystem::path& out);
std::unique_ptr<PolicyLM> import_policy_json(const std::filesystem::path& path);
std::unique_ptr<MtrModel> import_mtr_json(const std::filesystem::path& path);

}  // namespace diffro
