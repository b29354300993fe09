#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "diffro/mtr_model.hpp"
#include "diffro/optim.hpp"
#include "diffro/policy_lm.hpp"

using namespace diffro;

namespace {

// Copy of a model with every weight jittered.
template <class Model>
Model jittered(Model m, std::uint64_t seed) {
  Rng rng(seed, 99);
  for (auto& it : m.params().items()) {
    for (double& v : it.tensor.mutable_data()) v += 0.1 * (rng.uniform() * 2 - 1);
  }
  return m;
}

toy::TextSeq text_of(const char* s) { return toy::TextSeq::from_string(s); }

std::vector<int> random_tokens(std::size_t n, Rng& rng) {
  std::vector<int> t(n);
  for (int& x : t) x = static_cast<int>(rng.uniform_int(toy::kQ));
  return t;
}

void expect_bitwise(const Tensor& a, const Tensor& b) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a.at(i), b.at(i)) << "at " << i;
}

}  // namespace

TEST(PolicyLM, LogitShape) {
  const PolicyLM lm(LmConfig{}, 1);
  Rng rng(1, 0);
  const Tensor logits = lm.forward(text_of("hello"), random_tokens(8, rng));
  EXPECT_EQ(logits.shape(), (Shape{8, 80}));
}

TEST(PolicyLM, OneHotSoftInputMatchesIds) {
  const PolicyLM lm(LmConfig{}, 2);
  Rng rng(2, 0);
  const auto ids = random_tokens(20, rng);
  toy::TextSeq t = text_of("soft path");
  t.emotion_instr = toy::Emotion::sad;
  expect_bitwise(lm.forward(t, ids), lm.forward(t, one_hot(ids, toy::kQ)));
}

TEST(PolicyLM, CausalMaskHidesFutureTokens) {
  const PolicyLM lm = jittered(PolicyLM(LmConfig{}, 3), 3);
  Rng rng(3, 0);
  auto ids = random_tokens(12, rng);
  const Tensor a = lm.forward(text_of("abc"), ids);
  const std::size_t k = 6;
  ids[k] = (ids[k] + 1) % toy::kQ;
  const Tensor b = lm.forward(text_of("abc"), ids);
  for (std::size_t r = 0; r <= k; ++r) {
    for (std::size_t c = 0; c < 80; ++c) ASSERT_EQ(a.at(r, c), b.at(r, c));
  }
  double diff = 0;
  for (std::size_t c = 0; c < 80; ++c) diff += std::abs(a.at(k + 1, c) - b.at(k + 1, c));
  EXPECT_GT(diff, 0.0);
}

TEST(PolicyLM, CachedDecoderMatchesTeacherForcing) {
  const PolicyLM lm = jittered(PolicyLM(LmConfig{}, 4), 4);
  Rng rng(4, 0);
  const auto ids = random_tokens(15, rng);
  const auto text = text_of("cache me");
  const Tensor full = lm.forward(text, ids);
  auto dec = lm.start(text);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    for (std::size_t c = 0; c < 80; ++c) ASSERT_NEAR(dec.logits()[c], full.at(t, c), 1e-9);
    dec.push(ids[t]);
  }
}

TEST(PolicyLM, ZeroTemperatureIsGreedyArgmax) {
  const PolicyLM lm = jittered(PolicyLM(LmConfig{}, 5), 5);
  Rng rng(5, 0);
  const auto text = text_of("greedy");
  const auto greedy = lm.generate(text, rng, 20, 0.0);
  // Independent oracle: argmax of teacher-forced logits, one step at a time.
  std::vector<int> oracle;
  for (std::size_t t = 0; t < 20; ++t) {
    std::vector<int> prefix = oracle;
    prefix.push_back(0);
    const Tensor logits = lm.forward(text, prefix);
    int best = 0;
    for (int c = 1; c < 80; ++c) {
      if (logits.at(t, c) > logits.at(t, best)) best = c;
    }
    oracle.push_back(best);
    if (best == toy::kEos) break;
  }
  EXPECT_EQ(greedy, oracle);
  Rng r2(6, 0);
  EXPECT_EQ(lm.generate(text, r2, 20, 1e-9), greedy);
}

TEST(PolicyLM, SameSeedSameSample) {
  const PolicyLM lm(LmConfig{}, 6);
  Rng a(7, 1), b(7, 1), c(8, 1);
  const auto text = text_of("sample");
  const auto sa = lm.generate(text, a, 40, 1.0);
  EXPECT_EQ(sa, lm.generate(text, b, 40, 1.0));
  EXPECT_NE(sa, lm.generate(text, c, 40, 1.0));
  EXPECT_LE(sa.size(), 40u);
}

TEST(PolicyLM, OverlongInputsRejected) {
  const PolicyLM lm(LmConfig{}, 7);
  Rng rng(7, 0);
  EXPECT_THROW(lm.forward(text_of("x"), random_tokens(97, rng)), std::invalid_argument);
  toy::TextSeq long_text;
  long_text.symbols.assign(33, 1);
  EXPECT_THROW(lm.forward(long_text, random_tokens(3, rng)), std::invalid_argument);
  EXPECT_THROW(lm.forward(text_of("x"), std::vector<int>{}), std::invalid_argument);
}

TEST(PolicyLM, CopyIsIndependent) {
  PolicyLM a(LmConfig{}, 8);
  PolicyLM b(a);
  EXPECT_EQ(a.params().hash(), b.params().hash());
  b.params().items()[0].tensor.mutable_data()[0] += 1.0;
  EXPECT_NE(a.params().hash(), b.params().hash());
}

TEST(PolicyLM, OverfitsASmallBatch) {
  PolicyLM lm(LmConfig{}, 9);
  const auto data = toy::make_dataset(8, "overfit", {}, 9);
  Adam opt(lm.params(), {.lr = 3e-3});
  double ce = 0;
  for (int step = 0; step < 500; ++step) {
    ce = 0;
    for (const auto& u : data) {
      const Tensor loss = scale(cross_entropy(lm.forward(u.text, u.tokens), u.tokens), 1.0 / 8);
      backward(loss);
      ce += loss.item();
    }
    opt.step(lm.params());
    lm.params().zero_grad();
  }
  EXPECT_LE(ce, 0.05);
}

TEST(MtrModel, PoolingWeightsAreDistributions) {
  const MtrModel m(MtrConfig{}, 1);
  Rng rng(1, 0);
  const auto out = m.forward(random_tokens(30, rng), nullptr);
  ASSERT_EQ(out.pooling.size(), kMtrHeads.size());
  for (const auto& [name, w] : out.pooling) {
    ASSERT_EQ(w.shape(), (Shape{1, 30}));
    double s = 0;
    for (double v : w.data()) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-9) << name;
  }
}

TEST(MtrModel, UntrainedHeadsAreUniform) {
  const MtrModel m(MtrConfig{}, 2);
  Rng rng(2, 0);
  const auto out = m.forward(random_tokens(25, rng), nullptr);
  const Tensor lp = log_softmax(out.emotion_logits);
  for (double v : lp.data()) EXPECT_NEAR(v, std::log(0.25), 0.2);
  EXPECT_EQ(out.emotion_logits.shape(), (Shape{1, 4}));
  EXPECT_EQ(out.gender_logits.shape(), (Shape{1, 2}));
  EXPECT_EQ(out.quality_logits.shape(), (Shape{1, 5}));
  EXPECT_EQ(out.rate.shape(), (Shape{1, 1}));
  EXPECT_EQ(out.event_logits.shape(), (Shape{1, 2}));
}

TEST(MtrModel, AsrLogProbsShapeAndSign) {
  const MtrModel m(MtrConfig{}, 3);
  Rng rng(3, 0);
  const auto text = text_of("recognize this");
  const auto out = m.forward(random_tokens(40, rng), &text);
  EXPECT_EQ(out.asr_log_probs.shape(), (Shape{text.symbols.size(), std::size_t{MtrConfig::kAsrVocab}}));
  for (double v : out.asr_log_probs.data()) EXPECT_LE(v, 0.0);
}

TEST(MtrModel, OneHotSoftInputMatchesIds) {
  const MtrModel m(MtrConfig{}, 4);
  Rng rng(4, 0);
  const auto ids = random_tokens(33, rng);
  const auto text = text_of("same");
  const auto a = m.forward(ids, &text);
  const auto b = m.forward(one_hot(ids, toy::kQ), &text);
  expect_bitwise(a.encoded, b.encoded);
  expect_bitwise(a.asr_log_probs, b.asr_log_probs);
  expect_bitwise(a.emotion_logits, b.emotion_logits);
  expect_bitwise(a.rate, b.rate);
}

TEST(MtrModel, BadInputsRejected) {
  const MtrModel m(MtrConfig{}, 5);
  Rng rng(5, 0);
  EXPECT_THROW(m.forward(std::vector<int>{}, nullptr), std::invalid_argument);
  EXPECT_THROW(m.forward(random_tokens(97, rng), nullptr), std::invalid_argument);
  EXPECT_THROW(m.encode(Tensor::zeros({4, 79})), ShapeError);
}

TEST(MtrModel, GradientReachesSoftInput) {
  const MtrModel m = jittered(MtrModel(MtrConfig{}, 6), 6);
  Rng rng(6, 0);
  Tensor u = one_hot(random_tokens(10, rng), toy::kQ);
  u.set_requires_grad(true);
  const auto text = text_of("grad");
  backward(sum(m.forward(u, &text).asr_log_probs));
  double norm = 0;
  for (double g : u.grad()) norm += g * g;
  EXPECT_GT(norm, 0.0);
}
