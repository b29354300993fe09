#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffro/policy_lm.hpp"

namespace diffro {

enum class GumbelMode { soft, straight_through };

std::string to_string(GumbelMode m);
GumbelMode parse_gumbel_mode(const std::string& s);

struct GumbelConfig {
  double tau = 1.0;
  GumbelMode mode = GumbelMode::straight_through;
  bool noise = true;
  // Linear anneal from tau to tau_final over the run.
  bool anneal = false;
  double tau_final = 0.5;

  void validate() const;
  double tau_at(double progress) const;
  nlohmann::ordered_json to_json() const;
  static GumbelConfig from_json(const nlohmann::json& j);
};

// i.i.d. -log(-log u), u uniform clamped to [1e-12, 1 - 1e-12].
Tensor gumbel_noise(const Shape& shape, Rng& rng);

struct GumbelSample {
  Tensor value;  // what flows downstream: one-hot (ST) or soft
  Tensor soft;
  std::vector<int> hard;  // per row
};

// Row-wise over (R, Q) or (Q) logits; `noise` may be undefined when
// cfg.noise is false.
GumbelSample gumbel_softmax(const Tensor& logits, const Tensor& noise, const GumbelConfig& cfg);
GumbelSample gumbel_softmax(const Tensor& logits, const GumbelConfig& cfg, Rng& rng);

// Realized ids and the Gumbel noise that produced them. Replaying a sample
// makes the relaxed rollout a deterministic function of the weights.
struct RolloutSample {
  std::vector<int> hard;
  std::vector<double> noise;  // (L * Q), zeros when noise is disabled
};

RolloutSample sample_rollout(const PolicyLM& policy, const toy::TextSeq& text,
                             const GumbelConfig& cfg, Rng& rng, std::size_t max_len);

struct Rollout {
  toy::TextSeq text;
  std::vector<int> hard;
  Tensor tokens;      // (L, Q) reward-model input, connected to the policy
  Tensor soft;        // (L, Q)
  Tensor policy_logp; // (L, Q)
  Tensor ref_logp;    // (L, Q), constant
  Tensor kl;          // (L) exact per-step KL(policy || reference)
  Tensor mean_kl;     // scalar

  std::size_t length() const { return hard.size(); }
};

struct RolloutBatch {
  std::vector<Rollout> items;
  std::size_t size() const { return items.size(); }
};

Rollout relax(const PolicyLM& policy, const PolicyLM& reference, const toy::TextSeq& text,
              const RolloutSample& sample, const GumbelConfig& cfg);

Rollout rollout(const PolicyLM& policy, const PolicyLM& reference, const toy::TextSeq& text,
                const GumbelConfig& cfg, Rng& rng, std::size_t max_len);

// sum_q p(q) (log p(q) - log r(q)) per row of log-probability matrices.
Tensor categorical_kl(const Tensor& logp, const Tensor& logr);

}  // namespace diffro
