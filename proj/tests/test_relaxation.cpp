#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "diffro/relaxation.hpp"

using namespace diffro;

namespace {

GumbelConfig no_noise(double tau, GumbelMode mode = GumbelMode::soft) {
  GumbelConfig c;
  c.tau = tau;
  c.mode = mode;
  c.noise = false;
  return c;
}

Tensor random_logits(std::size_t q, Rng& rng, double spread) {
  std::vector<double> v(q);
  for (double& x : v) x = (rng.uniform() * 2 - 1) * spread;
  return Tensor::from({q}, v);
}

double softmax_prob(const std::vector<double>& z, std::size_t i) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  double s = 0;
  for (double v : z) s += std::exp(v - m);
  return std::exp(z[i] - m) / s;
}

}  // namespace

TEST(GumbelNoise, MeanIsEulerMascheroni) {
  Rng rng(1, 0);
  const Tensor g = gumbel_noise({1000000}, rng);
  double s = 0;
  for (double v : g.data()) s += v;
  EXPECT_NEAR(s / 1e6, 0.5772156649, 0.01);
}

TEST(GumbelNoise, FiniteAndWithinClampBounds) {
  Rng rng(2, 0);
  const double lo = -std::log(-std::log(1e-12));
  const double hi = -std::log(-std::log(1 - 1e-12));
  const Tensor g = gumbel_noise({200000}, rng);
  for (double v : g.data()) {
    ASSERT_TRUE(std::isfinite(v));
    ASSERT_GE(v, lo - 1e-9);
    ASSERT_LE(v, hi + 1e-9);
  }
}

TEST(GumbelNoise, SameSeedSameNoise) {
  Rng a(3, 5), b(3, 5);
  const Tensor x = gumbel_noise({4, 7}, a), y = gumbel_noise({4, 7}, b);
  for (std::size_t i = 0; i < x.size(); ++i) ASSERT_EQ(x.at(i), y.at(i));
}

TEST(GumbelSoftmax, SoftRowsAreDistributionsForAnyTau) {
  Rng rng(4, 0);
  for (double tau : {0.05, 0.3, 1.0, 5.0, 100.0}) {
    GumbelConfig c;
    c.tau = tau;
    c.mode = GumbelMode::soft;
    const Tensor logits = gumbel_noise({6, 80}, rng);
    const auto s = gumbel_softmax(logits, c, rng);
    for (std::size_t r = 0; r < 6; ++r) {
      double sum = 0;
      for (std::size_t k = 0; k < 80; ++k) {
        ASSERT_GE(s.soft.at(r, k), 0.0);
        sum += s.soft.at(r, k);
      }
      EXPECT_NEAR(sum, 1.0, 1e-9);
    }
  }
}

TEST(GumbelSoftmax, HighTemperatureIsUniform) {
  Rng rng(5, 0);
  const auto s = gumbel_softmax(random_logits(10, rng, 3.0), no_noise(1e4), rng);
  for (double v : s.soft.data()) EXPECT_NEAR(v, 0.1, 1e-3);
}

TEST(GumbelSoftmax, LowTemperatureIsNearArgmax) {
  Rng rng(6, 0);
  const auto s = gumbel_softmax(Tensor::from({3}, {2, 0, 0}), no_noise(0.01), rng);
  EXPECT_GE(s.soft.at(0), 0.99);
  EXPECT_EQ(s.hard[0], 0);
}

TEST(GumbelSoftmax, HardFrequencyMatchesSoftmax) {
  Rng rng(7, 0);
  GumbelConfig c;
  const std::size_t n = 100000;
  Tensor noise = gumbel_noise({n, 2}, rng);
  std::vector<double> rep;
  for (std::size_t i = 0; i < n; ++i) rep.insert(rep.end(), {1.0, 0.0});
  const auto s = gumbel_softmax(Tensor::from({n, 2}, rep), noise, c);
  std::size_t zeros = std::count(s.hard.begin(), s.hard.end(), 0);
  EXPECT_NEAR(static_cast<double>(zeros) / n, std::exp(1.0) / (1 + std::exp(1.0)), 0.01);
}

TEST(GumbelSoftmax, HardSamplesFollowSoftmaxAtAnyTau) {
  Rng rng(8, 0);
  const std::vector<double> z{0.5, -1.0, 1.2, 0.0, -0.3};
  const std::size_t n = 100000;
  std::vector<double> rep;
  for (std::size_t i = 0; i < n; ++i) rep.insert(rep.end(), z.begin(), z.end());
  const Tensor logits = Tensor::from({n, 5}, rep);
  const Tensor noise = gumbel_noise({n, 5}, rng);
  std::vector<int> first;
  for (double tau : {0.1, 1.0, 10.0}) {
    GumbelConfig c;
    c.tau = tau;
    const auto s = gumbel_softmax(logits, noise, c);
    if (first.empty()) first = s.hard;
    EXPECT_EQ(s.hard, first) << "hard ids must not depend on tau";
    std::vector<double> freq(5, 0);
    for (int h : s.hard) freq[h] += 1.0 / n;
    double tv = 0;
    for (std::size_t i = 0; i < 5; ++i) tv += 0.5 * std::abs(freq[i] - softmax_prob(z, i));
    EXPECT_LE(tv, 0.02) << "tau " << tau;
  }
}

TEST(GumbelSoftmax, StraightThroughIsOneHotWithSoftGradient) {
  Rng rng(9, 0);
  Tensor logits = random_logits(8, rng, 1.0);
  logits.set_requires_grad(true);
  GumbelConfig c;
  const auto s = gumbel_softmax(logits, c, rng);
  int ones = 0;
  for (double v : s.value.data()) {
    ASSERT_TRUE(v == 0.0 || v == 1.0);
    ones += v == 1.0;
  }
  EXPECT_EQ(ones, 1);
  EXPECT_EQ(s.value.at(s.hard[0]), 1.0);
  const Tensor probe = Tensor::from({8}, {1, -2, 3, 0.5, -1, 2, 0.1, 4});
  backward(sum(mul(s.value, probe)));
  double norm = 0;
  for (double g : logits.grad()) norm += g * g;
  EXPECT_GT(norm, 0.0);
}

TEST(GumbelSoftmax, NonFiniteLogitsRejected) {
  Rng rng(10, 0);
  const Tensor bad = Tensor::from({3}, {0, std::numeric_limits<double>::infinity(), 1});
  EXPECT_THROW(gumbel_softmax(bad, GumbelConfig{}, rng), std::invalid_argument);
  const Tensor nan = Tensor::from({2}, {0, std::nan("")});
  EXPECT_THROW(gumbel_softmax(nan, GumbelConfig{}, rng), std::invalid_argument);
}

TEST(GumbelConfig, ValidationAndParsing) {
  GumbelConfig c;
  c.tau = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_EQ(parse_gumbel_mode("soft"), GumbelMode::soft);
  EXPECT_EQ(parse_gumbel_mode("straight-through"), GumbelMode::straight_through);
  EXPECT_THROW(parse_gumbel_mode("argmax"), std::invalid_argument);
  GumbelConfig a;
  a.anneal = true;
  EXPECT_DOUBLE_EQ(a.tau_at(0.0), 1.0);
  EXPECT_DOUBLE_EQ(a.tau_at(1.0), 0.5);
  EXPECT_DOUBLE_EQ(a.tau_at(0.5), 0.75);
  const auto back = GumbelConfig::from_json(a.to_json());
  EXPECT_EQ(back.mode, a.mode);
  EXPECT_TRUE(back.anneal);
}

TEST(CategoricalKl, MatchesBruteForce) {
  Rng rng(11, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor lp = log_softmax(gumbel_noise({3, 80}, rng));
    const Tensor lr = log_softmax(gumbel_noise({3, 80}, rng));
    const Tensor kl = categorical_kl(lp, lr);
    for (std::size_t r = 0; r < 3; ++r) {
      long double s = 0;
      for (std::size_t q = 0; q < 80; ++q) {
        const long double p = std::exp(static_cast<long double>(lp.at(r, q)));
        s += p * (static_cast<long double>(lp.at(r, q)) - lr.at(r, q));
      }
      EXPECT_NEAR(kl.at(r), static_cast<double>(s), 1e-10);
      EXPECT_GE(kl.at(r), -1e-12);
    }
  }
}

namespace {

LmConfig small_lm() {
  LmConfig c;
  c.width = 32;
  c.ffn = 64;
  return c;
}

}  // namespace

TEST(Rollout, IdenticalPolicyAndReferenceHaveZeroKl) {
  const PolicyLM policy(small_lm(), 1);
  const PolicyLM reference(policy);
  Rng rng(12, 0);
  const auto r = rollout(policy, reference, toy::TextSeq::from_string("same model"),
                         GumbelConfig{}, rng, 30);
  for (double v : r.kl.data()) EXPECT_LE(std::abs(v), 1e-9);
}

TEST(Rollout, FieldsAgreeAndKlNonNegative) {
  const PolicyLM policy(small_lm(), 2);
  const PolicyLM reference(small_lm(), 3);
  Rng rng(13, 0);
  for (GumbelMode mode : {GumbelMode::soft, GumbelMode::straight_through}) {
    GumbelConfig c;
    c.mode = mode;
    const auto r = rollout(policy, reference, toy::TextSeq::from_string("fields"), c, rng, 25);
    const std::size_t l = r.length();
    ASSERT_GE(l, 1u);
    ASSERT_LE(l, 25u);
    EXPECT_EQ(r.tokens.shape(), (Shape{l, 80}));
    EXPECT_EQ(r.soft.shape(), (Shape{l, 80}));
    EXPECT_EQ(r.policy_logp.shape(), (Shape{l, 80}));
    EXPECT_EQ(r.ref_logp.shape(), (Shape{l, 80}));
    EXPECT_EQ(r.kl.size(), l);
    for (double v : r.kl.data()) EXPECT_GE(v, -1e-12);
    for (std::size_t t = 0; t + 1 < l; ++t) EXPECT_NE(r.hard[t], toy::kEos);
    if (mode == GumbelMode::straight_through) {
      for (std::size_t t = 0; t < l; ++t) EXPECT_EQ(r.tokens.at(t, r.hard[t]), 1.0);
    }
  }
}

TEST(Rollout, SoftTokensCarryGradientToPolicy) {
  PolicyLM policy(small_lm(), 4);
  const PolicyLM reference(policy);
  Rng rng(14, 0);
  GumbelConfig c;
  c.mode = GumbelMode::soft;
  const auto r = rollout(policy, reference, toy::TextSeq::from_string("grad"), c, rng, 10);
  // Weighted so the row-sum constraint does not cancel the gradient.
  std::vector<double> w(r.soft.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<double>(i % 7);
  backward(sum(mul(r.tokens, Tensor::from(r.soft.shape(), w))));
  double norm = 0;
  for (const auto& p : policy.params().items()) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) norm += g * g;
  }
  EXPECT_GT(norm, 0.0);
}

TEST(Rollout, PlainSumOfSoftEntriesHasNoGradient) {
  PolicyLM policy(small_lm(), 5);
  const PolicyLM reference(policy);
  Rng rng(15, 0);
  GumbelConfig c;
  c.mode = GumbelMode::soft;
  c.tau = 0.7;
  const auto r = rollout(policy, reference, toy::TextSeq::from_string("sum"), c, rng, 10);
  backward(sum(r.tokens));
  double norm = 0;
  for (const auto& p : policy.params().items()) {
    if (p.tensor.has_grad()) for (double g : p.tensor.grad()) norm += g * g;
  }
  // Rows sum to one, so this gradient is zero up to rounding.
  EXPECT_LE(norm, 1e-20);
}

TEST(Rollout, ZeroMaxLenRejected) {
  const PolicyLM policy(small_lm(), 6);
  Rng rng(16, 0);
  EXPECT_THROW(rollout(policy, policy, toy::TextSeq::from_string("x"), GumbelConfig{}, rng, 0),
               std::invalid_argument);
}

TEST(Rollout, ReplayedSampleIsDeterministic) {
  const PolicyLM policy(small_lm(), 7);
  Rng rng(17, 0);
  const auto text = toy::TextSeq::from_string("replay");
  const auto s = sample_rollout(policy, text, GumbelConfig{}, rng, 20);
  const auto a = relax(policy, policy, text, s, GumbelConfig{});
  const auto b = relax(policy, policy, text, s, GumbelConfig{});
  for (std::size_t i = 0; i < a.soft.size(); ++i) ASSERT_EQ(a.soft.at(i), b.soft.at(i));
  // The relaxed argmax agrees with the sampled ids.
  for (std::size_t t = 0; t < a.length(); ++t) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < 80; ++k) {
      if (a.soft.at(t, k) > a.soft.at(t, best)) best = k;
    }
    EXPECT_EQ(static_cast<int>(best), s.hard[t]);
  }
}
