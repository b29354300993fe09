#include "diffro/relaxation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "diffro/ops.hpp"

namespace diffro {

std::string to_string(GumbelMode m) {
  return m == GumbelMode::soft ? "soft" : "straight-through";
}

GumbelMode parse_gumbel_mode(const std::string& s) {
  if (s == "soft") return GumbelMode::soft;
  if (s == "straight-through" || s == "st" || s == "hard") return GumbelMode::straight_through;
  throw std::invalid_argument("gumbel.mode: unknown mode '" + s + "'");
}

void GumbelConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw std::invalid_argument("gumbel.tau must be positive, got " + std::to_string(tau));
  }
  if (anneal && (!(tau_final > 0.0) || !std::isfinite(tau_final))) {
    throw std::invalid_argument("gumbel.tau_final must be positive");
  }
}

double GumbelConfig::tau_at(double progress) const {
  if (!anneal) return tau;
  const double p = std::clamp(progress, 0.0, 1.0);
  return tau + (tau_final - tau) * p;
}

nlohmann::ordered_json GumbelConfig::to_json() const {
  return {{"tau", tau},
          {"mode", to_string(mode)},
          {"noise", noise},
          {"anneal", anneal},
          {"tau_final", tau_final}};
}

GumbelConfig GumbelConfig::from_json(const nlohmann::json& j) {
  GumbelConfig c;
  c.tau = j.value("tau", c.tau);
  if (j.contains("mode")) c.mode = parse_gumbel_mode(j.at("mode").get<std::string>());
  c.noise = j.value("noise", c.noise);
  c.anneal = j.value("anneal", c.anneal);
  c.tau_final = j.value("tau_final", c.tau_final);
  c.validate();
  return c;
}

Tensor gumbel_noise(const Shape& shape, Rng& rng) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.gumbel();
  return Tensor::from(shape, std::move(v));
}

GumbelSample gumbel_softmax(const Tensor& logits, const Tensor& noise, const GumbelConfig& cfg) {
  cfg.validate();
  if (logits.rank() == 0 || logits.rank() > 2) {
    throw ShapeError("gumbel_softmax: logits must be (Q) or (R, Q), got " +
                     to_string(logits.shape()));
  }
  for (double v : logits.data()) {
    if (!std::isfinite(v)) throw std::invalid_argument("gumbel_softmax: non-finite logit");
  }
  Tensor z = logits;
  if (cfg.noise) {
    if (!noise.defined() || noise.shape() != logits.shape()) {
      throw ShapeError("gumbel_softmax: noise shape " +
                       (noise.defined() ? to_string(noise.shape()) : std::string("undefined")) +
                       " does not match logits " + to_string(logits.shape()));
    }
    z = add(z, noise);
  }
  GumbelSample s;
  s.soft = softmax(scale(z, 1.0 / cfg.tau));
  const std::size_t r = logits.rows(), q = logits.cols();
  const auto sv = s.soft.data();
  s.hard.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    const auto row = sv.subspan(i * q, q);
    s.hard[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  if (cfg.mode == GumbelMode::soft) {
    s.value = s.soft;
  } else {
    Tensor hot = one_hot(s.hard, q);
    if (logits.rank() == 1) hot = reshape(hot, {q});
    s.value = straight_through(s.soft, hot);
  }
  return s;
}

GumbelSample gumbel_softmax(const Tensor& logits, const GumbelConfig& cfg, Rng& rng) {
  Tensor noise;
  if (cfg.noise) noise = gumbel_noise(logits.shape(), rng);
  return gumbel_softmax(logits, noise, cfg);
}

RolloutSample sample_rollout(const PolicyLM& policy, const toy::TextSeq& text,
                             const GumbelConfig& cfg, Rng& rng, std::size_t max_len) {
  if (max_len == 0) throw std::invalid_argument("rollout: max_len must be positive");
  const auto& lc = policy.config();
  max_len = std::min(max_len, lc.max_tokens);
  const auto q = static_cast<std::size_t>(lc.q);
  RolloutSample s;
  auto dec = policy.start(text);
  std::vector<double> g(q, 0.0);
  while (true) {
    const auto& lg = dec.logits();
    if (cfg.noise) {
      for (double& x : g) x = rng.gumbel();
    }
    int best = 0;
    double best_v = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < q; ++i) {
      if (lg[i] + g[i] > best_v) {
        best_v = lg[i] + g[i];
        best = static_cast<int>(i);
      }
    }
    s.hard.push_back(best);
    s.noise.insert(s.noise.end(), g.begin(), g.end());
    if (best == lc.eos || s.hard.size() >= max_len) break;
    dec.push(best);
  }
  return s;
}

Tensor categorical_kl(const Tensor& logp, const Tensor& logr) {
  return sum_rows(mul(exp(logp), sub(logp, logr)));
}

Rollout relax(const PolicyLM& policy, const PolicyLM& reference, const toy::TextSeq& text,
              const RolloutSample& sample, const GumbelConfig& cfg) {
  cfg.validate();
  if (policy.config().q != reference.config().q) {
    throw std::invalid_argument("rollout: policy and reference vocabularies differ");
  }
  const std::size_t l = sample.hard.size();
  const auto q = static_cast<std::size_t>(policy.config().q);
  if (l == 0 || sample.noise.size() != l * q) {
    throw std::invalid_argument("rollout: malformed sample");
  }
  Rollout r;
  r.text = text;
  r.hard = sample.hard;
  Tensor logits = policy.forward(text, sample.hard);
  Tensor z = cfg.noise ? add(logits, Tensor::from({l, q}, sample.noise)) : logits;
  r.soft = softmax(scale(z, 1.0 / cfg.tau));
  r.tokens = cfg.mode == GumbelMode::soft ? r.soft
                                          : straight_through(r.soft, one_hot(sample.hard, q));
  r.policy_logp = log_softmax(logits);
  {
    NoGradGuard ng;
    r.ref_logp = log_softmax(reference.forward(text, sample.hard));
  }
  r.kl = categorical_kl(r.policy_logp, r.ref_logp);
  r.mean_kl = mean(r.kl);
  return r;
}

Rollout rollout(const PolicyLM& policy, const PolicyLM& reference, const toy::TextSeq& text,
                const GumbelConfig& cfg, Rng& rng, std::size_t max_len) {
  return relax(policy, reference, text, sample_rollout(policy, text, cfg, rng, max_len), cfg);
}

}  // namespace diffro
