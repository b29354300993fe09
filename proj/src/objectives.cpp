#include "diffro/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "diffro/ops.hpp"

namespace diffro {

const std::vector<std::string>& reward_task_names() {
  static const std::vector<std::string> names{"asr",     "emotion", "gender",
                                              "quality", "rate",    "events"};
  return names;
}

double RewardSpec::weight(const std::string& task) const {
  auto it = weights.find(task);
  return it == weights.end() ? 1.0 : it->second;
}

void RewardSpec::validate() const {
  const auto& known = reward_task_names();
  auto check = [&](const std::string& t) {
    if (std::find(known.begin(), known.end(), t) == known.end()) {
      throw std::invalid_argument("reward: unknown task '" + t + "'");
    }
  };
  if (tasks.empty()) throw std::invalid_argument("reward: no tasks");
  for (const auto& t : tasks) check(t);
  for (const auto& [t, w] : weights) {
    check(t);
    if (!std::isfinite(w)) throw std::invalid_argument("reward: non-finite weight for " + t);
  }
}

Tensor asr_reward(const MtrModel& mtr, const Tensor& u, const toy::TextSeq& text) {
  if (text.symbols.empty()) throw std::invalid_argument("asr_reward: empty text");
  Tensor enc = mtr.encode(u);
  return mean(pick(mtr.asr_log_probs(enc, text.symbols, false), text.symbols));
}

namespace {

Tensor class_logprob(const Tensor& logits, int cls) {
  const int ids[1] = {cls};
  return sum(pick(log_softmax(logits), ids));
}

}  // namespace

RewardResult mtr_reward(const MtrModel& mtr, const Tensor& u, const RewardTargets& targets,
                        const RewardSpec& spec) {
  spec.validate();
  auto missing = [](const std::string& t) {
    return std::invalid_argument("reward: task '" + t + "' has no target");
  };
  const MtrOutput out = mtr.forward(u, nullptr);
  RewardResult res;
  for (const auto& task : spec.tasks) {
    Tensor term;
    if (task == "asr") {
      if (!targets.text) throw missing(task);
      if (targets.text->symbols.empty()) throw std::invalid_argument("asr_reward: empty text");
      term = mean(pick(mtr.asr_log_probs(out.encoded, targets.text->symbols, false),
                       targets.text->symbols));
      res.breakdown.asr = term.item();
    } else if (task == "emotion") {
      if (!targets.emotion) throw missing(task);
      term = class_logprob(out.emotion_logits, static_cast<int>(*targets.emotion));
    } else if (task == "gender") {
      if (!targets.gender) throw missing(task);
      term = class_logprob(out.gender_logits, static_cast<int>(*targets.gender));
    } else if (task == "quality") {
      if (!targets.quality) throw missing(task);
      if (*targets.quality < 1 || *targets.quality > toy::kNumQuality) {
        throw std::invalid_argument("reward: quality target outside 1..5");
      }
      term = class_logprob(out.quality_logits, *targets.quality - 1);
    } else if (task == "rate") {
      if (!targets.rate) throw missing(task);
      Tensor d = add_scalar(out.rate, -*targets.rate);
      term = neg(sum(mul(d, d)));
    } else {
      if (!targets.events) throw missing(task);
      const double sign[2] = {targets.events->laugh ? 1.0 : -1.0,
                              targets.events->breath ? 1.0 : -1.0};
      term = sum(log_sigmoid(mul(out.event_logits, Tensor::from({1, 2}, {sign[0], sign[1]}))));
    }
    res.breakdown.tasks[task] = term.item();
    Tensor weighted = scale(term, spec.weight(task));
    res.reward = res.reward.defined() ? add(res.reward, weighted) : weighted;
  }
  res.breakdown.total = res.reward.item();
  return res;
}

DiffroLoss diffro_loss(const RolloutBatch& batch, const std::vector<RewardResult>& rewards,
                       double beta) {
  if (!(beta >= 0.0)) throw std::invalid_argument("diffro_loss: beta must be >= 0");
  if (batch.size() == 0 || rewards.size() != batch.size()) {
    throw std::invalid_argument("diffro_loss: " + std::to_string(rewards.size()) +
                                " rewards for a batch of " + std::to_string(batch.size()));
  }
  DiffroLoss out;
  Tensor total;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& r = batch.items[b];
    Tensor term = neg(rewards[b].reward);
    if (beta > 0.0) term = add(term, scale(r.mean_kl, beta));
    total = total.defined() ? add(total, term) : term;
    RewardBreakdown bd = rewards[b].breakdown;
    bd.kl = r.mean_kl.item();
    bd.total = rewards[b].reward.item() - beta * bd.kl;
    out.breakdowns.push_back(std::move(bd));
  }
  out.loss = scale(total, 1.0 / static_cast<double>(batch.size()));
  return out;
}

double bradley_terry_loss(double reward_pos, double reward_neg) {
  const double d = reward_pos - reward_neg;
  return d >= 0 ? std::log1p(std::exp(-d)) : -d + std::log1p(std::exp(d));
}

Tensor bradley_terry_loss(const Tensor& reward_pos, const Tensor& reward_neg) {
  return neg(sum(log_sigmoid(sub(reward_pos, reward_neg))));
}

Tensor bradley_terry_loss(const SequenceRewardFn& reward, const PreferencePair& pair) {
  return bradley_terry_loss(reward(pair.pos, pair.text), reward(pair.neg, pair.text));
}

Tensor seq_logprob(const PolicyLM& lm, const toy::TextSeq& text, const toy::TokenSeq& tokens) {
  return sum(pick(log_softmax(lm.forward(text, tokens)), tokens));
}

Tensor dpo_loss(const Tensor& policy_pos, const Tensor& policy_neg, double ref_pos,
                double ref_neg, double beta) {
  if (!(beta >= 0.0)) throw std::invalid_argument("dpo_loss: beta must be >= 0");
  Tensor margin = add_scalar(sub(policy_pos, policy_neg), -(ref_pos - ref_neg));
  return neg(log_sigmoid(scale(margin, beta)));
}

Tensor dpo_loss(const PolicyLM& policy, const PolicyLM& reference, const PreferencePair& pair,
                double beta) {
  double ref_pos = 0.0, ref_neg = 0.0;
  {
    NoGradGuard ng;
    ref_pos = seq_logprob(reference, pair.text, pair.pos).item();
    ref_neg = seq_logprob(reference, pair.text, pair.neg).item();
  }
  return dpo_loss(seq_logprob(policy, pair.text, pair.pos),
                  seq_logprob(policy, pair.text, pair.neg), ref_pos, ref_neg, beta);
}

}  // namespace diffro
