#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "diffro/mtr_model.hpp"
#include "diffro/policy_lm.hpp"
#include "diffro/relaxation.hpp"

namespace diffro {

// Task names accepted by the reward: asr, emotion, gender, quality, rate,
// events.
const std::vector<std::string>& reward_task_names();

struct RewardTargets {
  std::optional<toy::TextSeq> text;  // enables the asr task
  std::optional<toy::Emotion> emotion;
  std::optional<toy::Gender> gender;
  std::optional<int> quality;  // 1..5
  std::optional<double> rate;
  std::optional<toy::Events> events;
};

struct RewardSpec {
  std::vector<std::string> tasks{"asr"};
  std::map<std::string, double> weights;  // missing entries weigh 1

  double weight(const std::string& task) const;
  void validate() const;
};

struct RewardBreakdown {
  double asr = 0.0;
  std::map<std::string, double> tasks;  // unweighted per-task terms
  double kl = 0.0;
  double total = 0.0;  // weighted reward sum - beta * kl
};

struct RewardResult {
  Tensor reward;  // differentiable weighted sum
  RewardBreakdown breakdown;
};

// Mean per-symbol teacher-forced log-probability of `text` given tokens u.
Tensor asr_reward(const MtrModel& mtr, const Tensor& u, const toy::TextSeq& text);

RewardResult mtr_reward(const MtrModel& mtr, const Tensor& u, const RewardTargets& targets,
                        const RewardSpec& spec);

struct DiffroLoss {
  Tensor loss;
  std::vector<RewardBreakdown> breakdowns;  // kl and total filled in
};

// mean_b(-reward_b + beta * mean_t KL_bt).
DiffroLoss diffro_loss(const RolloutBatch& batch, const std::vector<RewardResult>& rewards,
                       double beta);

struct PreferencePair {
  toy::TextSeq text;
  toy::TokenSeq pos, neg;
  double score_pos = 0.0, score_neg = 0.0;
};

double bradley_terry_loss(double reward_pos, double reward_neg);
Tensor bradley_terry_loss(const Tensor& reward_pos, const Tensor& reward_neg);
using SequenceRewardFn = std::function<Tensor(const toy::TokenSeq&, const toy::TextSeq&)>;
Tensor bradley_terry_loss(const SequenceRewardFn& reward, const PreferencePair& pair);

// Sum of per-step log-probabilities of the realized tokens.
Tensor seq_logprob(const PolicyLM& lm, const toy::TextSeq& text, const toy::TokenSeq& tokens);

// -log sigmoid(beta * (pos_ratio - neg_ratio)) from policy/reference log-probs.
Tensor dpo_loss(const Tensor& policy_pos, const Tensor& policy_neg, double ref_pos,
                double ref_neg, double beta);
Tensor dpo_loss(const PolicyLM& policy, const PolicyLM& reference, const PreferencePair& pair,
                double beta);

}  // namespace diffro
