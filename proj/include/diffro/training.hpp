#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffro/checkpoint.hpp"
#include "diffro/config.hpp"
#include "diffro/objectives.hpp"
#include "diffro/optim.hpp"

namespace diffro {

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  std::map<std::string, double> reward;  // batch means per reward term
  std::optional<double> kl;
  std::map<std::string, double> extra;
  std::optional<double> wall_time;

  nlohmann::ordered_json to_json() const;
};

// Per-step JSON Lines log. Steps must be strictly increasing.
class TrainLog {
 public:
  TrainLog() = default;
  explicit TrainLog(const std::filesystem::path& path, bool wall_time = false,
                    bool append = false);

  void append(StepRecord rec);
  const std::vector<StepRecord>& records() const { return records_; }
  bool records_wall_time() const { return wall_time_; }

 private:
  std::vector<StepRecord> records_;
  std::optional<std::ofstream> out_;
  bool wall_time_ = false;
  double t0_ = 0.0;
};

struct RunOptions {
  std::size_t steps = 100;
  std::size_t batch_size = 16;
  AdamConfig optim;
  // Linear decay of the learning rate to this fraction of optim.lr at the
  // last step; 1 keeps it fixed.
  double lr_decay_to = 1.0;
  std::uint64_t seed = 1;
  // Periodic checkpoints (0 disables) and the path they go to; also where the
  // last good state lands when a run diverges.
  std::size_t checkpoint_every = 0;
  std::filesystem::path checkpoint_path;
  // Continue from a saved TrainState (step and optimizer moments).
  const TrainState* resume = nullptr;
  TrainLog* log = nullptr;
};

struct RunSummary {
  std::size_t steps_run = 0;  // last completed step
  double final_loss = 0.0;
  bool early_stopped = false;
  std::string stop_reason;
  TrainState state;
};

// Teacher-forced next-token CE, averaged per utterance then over the batch.
Tensor lm_loss(const PolicyLM& lm, const toy::Utterance& u);
RunSummary pretrain_lm(PolicyLM& lm, std::span<const toy::Utterance> data, const RunOptions& opt);

struct MtrMetrics {
  double emotion_acc = 0.0;
  double gender_acc = 0.0;
  double quality_acc = 0.0;      // exact level
  double quality_within1 = 0.0;  // |predicted - true| <= 1
  double rate_mse = 0.0;
  double event_f1 = 0.0;
  double asr_ser = 0.0;  // greedy symbol error rate, fraction
  std::size_t n = 0;
  nlohmann::ordered_json to_json() const;
};

// Joint loss with unit task weights: emotion/gender/quality CE, rate MSE,
// event BCE and the summed teacher-forced ASR CE including the end symbol.
Tensor mtr_loss(const MtrModel& mtr, const toy::Utterance& u);
RunSummary train_mtr(MtrModel& mtr, std::span<const toy::Utterance> data, const RunOptions& opt,
                     bool shuffle_labels = false);
// Predicted quality is the rounded expected level.
MtrMetrics evaluate_mtr(const MtrModel& mtr, std::span<const toy::Utterance> data,
                        bool with_asr = true);

struct RlOptions {
  RunOptions run;
  double beta = 0.1;
  double kl_ceiling = 5.0;
  std::size_t max_len = toy::kMaxTokens;
  GumbelConfig gumbel;
  RewardSpec reward;
  std::string emotion_instr = "none";  // none | random
  int quality_target = 0;
  std::size_t dpo_k = 5;
};

struct RlSummary {
  RunSummary run;
  std::string mtr_hash_before, mtr_hash_after;
  std::string reference_hash_before, reference_hash_after;
  std::size_t skipped_pairs = 0;  // DPO only
  bool frozen_intact() const {
    return mtr_hash_before == mtr_hash_after && reference_hash_before == reference_hash_after;
  }
};

// Builds the RL prompt and reward targets for one text under the options'
// instruction settings.
std::pair<toy::TextSeq, RewardTargets> rl_prompt(const toy::TextSeq& text, const RlOptions& opt,
                                                 Rng& rng);

// Gradient of the DiffRO objective over explicit rollout samples; returns the
// batch loss. Gradients accumulate into the policy parameters.
double diffro_batch(const PolicyLM& policy, const PolicyLM& reference, const MtrModel& mtr,
                    std::span<const toy::TextSeq> prompts, std::span<const RewardTargets> targets,
                    std::span<const RolloutSample> samples, const GumbelConfig& gumbel,
                    const RewardSpec& reward, double beta,
                    std::vector<RewardBreakdown>* breakdowns = nullptr);

RlSummary run_diffro(PolicyLM& policy, PolicyLM& reference, MtrModel& mtr,
                     std::span<const toy::TextSeq> texts, const RlOptions& opt);
RlSummary run_dpo(PolicyLM& policy, PolicyLM& reference, MtrModel& mtr,
                  std::span<const toy::TextSeq> texts, const RlOptions& opt);

// Preference pair from K scored samples; nullopt when all K are identical.
std::optional<PreferencePair> select_pair(const toy::TextSeq& text,
                                          const std::vector<toy::TokenSeq>& samples,
                                          const std::vector<double>& scores,
                                          const std::vector<double>& logprobs);

// Optional reward-model path: fits the ASR reward of `mtr` to preference
// pairs with the pairwise logistic loss.
RunSummary train_reward_pairs(MtrModel& mtr, std::span<const PreferencePair> pairs,
                              const RunOptions& opt);

// Config-driven stage entry points used by the command line.
RunSummary run_stage(const ExperimentConfig& cfg, const std::filesystem::path& workdir,
                     bool resume = false);

}  // namespace diffro
