#include <gtest/gtest.h>

#include <cmath>

#include "diffro/gradcheck.hpp"
#include "diffro/objectives.hpp"
#include "diffro/optim.hpp"

using namespace diffro;

namespace {

Tensor& param(ParameterSet& ps, const std::string& name) {
  for (auto& it : ps.items()) {
    if (it.name == name) return it.tensor;
  }
  throw std::out_of_range(name);
}

void fill(Tensor& t, double v) {
  for (double& x : t.mutable_data()) x = v;
}

Tensor random_soft(std::size_t rows, std::size_t q, Rng& rng) {
  return softmax(gumbel_noise({rows, q}, rng));
}

double ln(double x) { return std::log(x); }

}  // namespace

TEST(AsrReward, CertainDecoderGivesZero) {
  MtrModel m(MtrConfig{}, 1);
  fill(param(m.params(), "asr.out.w"), 0.0);
  Tensor& b = param(m.params(), "asr.out.b");
  fill(b, 0.0);
  b.mutable_data()[0] = 100.0;
  Rng rng(1, 0);
  const auto r = asr_reward(m, random_soft(20, 80, rng), toy::TextSeq::from_string("aaaa"));
  EXPECT_EQ(r.item(), 0.0);
}

TEST(AsrReward, UniformDecoderGivesMinusLogAlphabet) {
  MtrModel m(MtrConfig{}, 2);
  fill(param(m.params(), "asr.out.w"), 0.0);
  fill(param(m.params(), "asr.out.b"), 0.0);
  Rng rng(2, 0);
  const auto r = asr_reward(m, random_soft(20, 80, rng), toy::TextSeq::from_string("any text"));
  EXPECT_NEAR(r.item(), -ln(30.0), 1e-12);
  EXPECT_NEAR(r.item(), -3.401, 1e-3);
}

TEST(AsrReward, EmptyTextRejected) {
  const MtrModel m(MtrConfig{}, 3);
  Rng rng(3, 0);
  EXPECT_THROW(asr_reward(m, random_soft(5, 80, rng), toy::TextSeq{}), std::invalid_argument);
}

TEST(MtrReward, CertainEmotionGivesZero) {
  MtrModel m(MtrConfig{}, 4);
  Tensor& b = param(m.params(), "head.emotion.out.b");
  fill(b, 0.0);
  b.mutable_data()[2] = 100.0;
  Rng rng(4, 0);
  RewardTargets t;
  t.emotion = toy::Emotion::sad;
  RewardSpec spec;
  spec.tasks = {"emotion"};
  EXPECT_EQ(mtr_reward(m, random_soft(12, 80, rng), t, spec).reward.item(), 0.0);
}

TEST(MtrReward, UntrainedEmotionHeadIsUniform) {
  const MtrModel m(MtrConfig{}, 5);
  Rng rng(5, 0);
  RewardTargets t;
  t.emotion = toy::Emotion::angry;
  RewardSpec spec;
  spec.tasks = {"emotion"};
  EXPECT_NEAR(mtr_reward(m, random_soft(12, 80, rng), t, spec).reward.item(), -ln(4.0), 1e-12);
}

namespace {

RewardTargets all_targets() {
  RewardTargets t;
  t.text = toy::TextSeq::from_string("target text");
  t.emotion = toy::Emotion::happy;
  t.gender = toy::Gender::male;
  t.quality = 3;
  t.rate = 0.4;
  t.events = toy::Events{true, false};
  return t;
}

// Perturbs every parameter so no head is trivially uniform.
MtrModel perturbed_mtr(std::uint64_t seed) {
  MtrModel m(MtrConfig{}, seed);
  Rng rng(seed, 99);
  for (auto& it : m.params().items()) {
    for (double& v : it.tensor.mutable_data()) v += 0.1 * (rng.uniform() * 2 - 1);
  }
  return m;
}

}  // namespace

TEST(MtrReward, AdditiveOverTasks) {
  const MtrModel m = perturbed_mtr(6);
  Rng rng(6, 0);
  const auto targets = all_targets();
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor u = random_soft(18, 80, rng);
    RewardSpec all;
    all.tasks = reward_task_names();
    double parts = 0;
    for (const auto& task : reward_task_names()) {
      RewardSpec one;
      one.tasks = {task};
      parts += mtr_reward(m, u, targets, one).reward.item();
    }
    EXPECT_NEAR(mtr_reward(m, u, targets, all).reward.item(), parts, 1e-12);
    RewardSpec eg;
    eg.tasks = {"emotion", "gender"};
    RewardSpec e, g;
    e.tasks = {"emotion"};
    g.tasks = {"gender"};
    EXPECT_NEAR(mtr_reward(m, u, targets, eg).reward.item(),
                mtr_reward(m, u, targets, e).reward.item() +
                    mtr_reward(m, u, targets, g).reward.item(),
                1e-12);
  }
}

TEST(MtrReward, BreakdownTermsAreLogProbsOrNegativeErrors) {
  const MtrModel m = perturbed_mtr(7);
  Rng rng(7, 0);
  RewardSpec all;
  all.tasks = reward_task_names();
  for (int trial = 0; trial < 5; ++trial) {
    const auto r = mtr_reward(m, random_soft(15, 80, rng), all_targets(), all);
    for (const auto& [task, v] : r.breakdown.tasks) EXPECT_LE(v, 0.0) << task;
    EXPECT_LE(r.breakdown.asr, 0.0);
    EXPECT_EQ(r.breakdown.asr, r.breakdown.tasks.at("asr"));
  }
}

TEST(MtrReward, RateIsNegativeSquaredError) {
  const MtrModel m = perturbed_mtr(8);
  Rng rng(8, 0);
  const Tensor u = random_soft(10, 80, rng);
  RewardTargets t;
  t.rate = 0.3;
  RewardSpec spec;
  spec.tasks = {"rate"};
  const double pred = m.forward(u, nullptr).rate.item();
  EXPECT_NEAR(mtr_reward(m, u, t, spec).reward.item(), -(pred - 0.3) * (pred - 0.3), 1e-15);
}

TEST(MtrReward, EventsAreBernoulliLogLikelihood) {
  const MtrModel m = perturbed_mtr(9);
  Rng rng(9, 0);
  const Tensor u = random_soft(10, 80, rng);
  RewardTargets t;
  t.events = toy::Events{false, true};
  RewardSpec spec;
  spec.tasks = {"events"};
  const Tensor z = m.forward(u, nullptr).event_logits;
  const double p_laugh = 1 / (1 + std::exp(-z.at(0))), p_breath = 1 / (1 + std::exp(-z.at(1)));
  EXPECT_NEAR(mtr_reward(m, u, t, spec).reward.item(), ln(1 - p_laugh) + ln(p_breath), 1e-12);
}

TEST(MtrReward, UnknownTaskAndMissingTargetRejected) {
  const MtrModel m(MtrConfig{}, 10);
  Rng rng(10, 0);
  const Tensor u = random_soft(10, 80, rng);
  RewardSpec bad;
  bad.tasks = {"pitch"};
  EXPECT_THROW(mtr_reward(m, u, all_targets(), bad), std::invalid_argument);
  RewardSpec emo;
  emo.tasks = {"emotion"};
  EXPECT_THROW(mtr_reward(m, u, RewardTargets{}, emo), std::invalid_argument);
  RewardSpec w;
  w.weights["pitch"] = 1.0;
  EXPECT_THROW(w.validate(), std::invalid_argument);
}

TEST(MtrReward, WeightScalingIsLinear) {
  const MtrModel m = perturbed_mtr(11);
  Rng rng(11, 0);
  const Tensor u = random_soft(14, 80, rng);
  RewardSpec base;
  base.tasks = reward_task_names();
  base.weights = {{"asr", 0.5}, {"emotion", 2.0}, {"rate", 3.0}};
  RewardSpec scaled = base;
  const double c = 2.5;
  for (const auto& t : base.tasks) scaled.weights[t] = c * base.weight(t);
  EXPECT_NEAR(mtr_reward(m, u, all_targets(), scaled).reward.item(),
              c * mtr_reward(m, u, all_targets(), base).reward.item(), 1e-12);
}

TEST(BradleyTerry, KnownValues) {
  EXPECT_NEAR(bradley_terry_loss(1.5, 1.5), ln(2.0), 1e-15);
  EXPECT_NEAR(bradley_terry_loss(2.0, 0.0), 0.12693, 1e-5);
  EXPECT_NEAR(bradley_terry_loss(2.0, 0.0), std::log1p(std::exp(-2.0)), 1e-15);
  EXPECT_LT(bradley_terry_loss(800.0, 0.0), 1e-300);
  EXPECT_NEAR(bradley_terry_loss(0.0, 800.0), 800.0, 1e-9);
  double prev = bradley_terry_loss(-10.0, 0.0);
  for (double d = -9.5; d <= 30.0; d += 0.5) {
    const double cur = bradley_terry_loss(d, 0.0);
    EXPECT_LT(cur, prev);
    prev = cur;
  }
  const Tensor t = bradley_terry_loss(Tensor::scalar(2.0), Tensor::scalar(0.0));
  EXPECT_NEAR(t.item(), 0.12693, 1e-5);
}

TEST(BradleyTerry, SequenceRewardFunction) {
  PreferencePair p;
  p.text = toy::TextSeq::from_string("ab");
  p.pos = {1, 2, 70};
  p.neg = {3, 70};
  const SequenceRewardFn len = [](const toy::TokenSeq& u, const toy::TextSeq&) {
    return Tensor::scalar(static_cast<double>(u.size()));
  };
  EXPECT_NEAR(bradley_terry_loss(len, p).item(), std::log1p(std::exp(-1.0)), 1e-15);
}

TEST(Dpo, KnownValue) {
  const Tensor l = dpo_loss(Tensor::scalar(-3.0), Tensor::scalar(-7.0), -4.0, -6.0, 0.1);
  EXPECT_NEAR(l.item(), 0.59814, 1e-5);
  EXPECT_NEAR(l.item(), std::log1p(std::exp(-0.2)), 1e-15);
  EXPECT_THROW(dpo_loss(Tensor::scalar(0), Tensor::scalar(0), 0, 0, -0.1), std::invalid_argument);
}

namespace {

LmConfig tiny_lm() {
  LmConfig c;
  c.width = 16;
  c.ffn = 32;
  return c;
}

}  // namespace

TEST(Dpo, EqualPolicyAndReferenceIsLog2) {
  PolicyLM policy(tiny_lm(), 12);
  const PolicyLM reference(policy);
  Rng rng(12, 0);
  PreferencePair p;
  p.text = toy::TextSeq::from_string("pair");
  p.pos = policy.generate(p.text, rng, 20, 1.0);
  p.neg = policy.generate(p.text, rng, 20, 1.0);
  const Tensor l = dpo_loss(policy, reference, p, 0.1);
  EXPECT_NEAR(l.item(), ln(2.0), 1e-6);
  backward(l);
  double norm = 0;
  for (const auto& it : policy.params().items()) {
    if (it.tensor.has_grad()) for (double g : it.tensor.grad()) norm += g * g;
  }
  EXPECT_GT(norm, 0.0);
}

TEST(Dpo, ZeroBetaIsExactlyLog2WithZeroGradient) {
  PolicyLM policy(tiny_lm(), 13);
  const PolicyLM reference(tiny_lm(), 14);
  Rng rng(13, 0);
  PreferencePair p;
  p.text = toy::TextSeq::from_string("zero beta");
  p.pos = policy.generate(p.text, rng, 20, 1.0);
  p.neg = policy.generate(p.text, rng, 20, 1.0);
  const Tensor l = dpo_loss(policy, reference, p, 0.0);
  EXPECT_EQ(l.item(), ln(2.0));
  backward(l);
  for (const auto& it : policy.params().items()) {
    if (it.tensor.has_grad()) for (double g : it.tensor.grad()) ASSERT_EQ(g, 0.0);
  }
}

TEST(DiffroLoss, NegativeBetaRejected) {
  const PolicyLM policy(tiny_lm(), 15);
  const MtrModel m(MtrConfig{}, 15);
  Rng rng(15, 0);
  RolloutBatch batch;
  batch.items.push_back(rollout(policy, policy, toy::TextSeq::from_string("b"), {}, rng, 10));
  std::vector<RewardResult> rewards{
      {asr_reward(m, batch.items[0].tokens, toy::TextSeq::from_string("b")), {}}};
  EXPECT_THROW(diffro_loss(batch, rewards, -0.5), std::invalid_argument);
  EXPECT_THROW(diffro_loss(batch, {}, 0.1), std::invalid_argument);
}

TEST(DiffroLoss, ConstantRewardAndZeroBetaGivesNoGradient) {
  PolicyLM policy(tiny_lm(), 16);
  const PolicyLM reference(tiny_lm(), 17);
  Rng rng(16, 0);
  RolloutBatch batch;
  batch.items.push_back(rollout(policy, reference, toy::TextSeq::from_string("c"), {}, rng, 10));
  std::vector<RewardResult> rewards{{Tensor::scalar(-2.0), {}}};
  const auto loss = diffro_loss(batch, rewards, 0.0);
  EXPECT_EQ(loss.loss.item(), 2.0);
  backward(loss.loss);
  for (const auto& it : policy.params().items()) {
    if (it.tensor.has_grad()) for (double g : it.tensor.grad()) ASSERT_EQ(g, 0.0);
  }
}

TEST(DiffroLoss, IdenticalModelsContributeNoKl) {
  const PolicyLM policy(tiny_lm(), 18);
  const PolicyLM reference(policy);
  const MtrModel m(MtrConfig{}, 18);
  Rng rng(18, 0);
  const auto text = toy::TextSeq::from_string("kl free");
  RolloutBatch batch;
  batch.items.push_back(rollout(policy, reference, text, {}, rng, 20));
  std::vector<RewardResult> rewards{{asr_reward(m, batch.items[0].tokens, text), {}}};
  const double r = rewards[0].reward.item();
  const auto loss = diffro_loss(batch, rewards, 7.0);
  EXPECT_NEAR(loss.loss.item(), -r, 1e-9);
  EXPECT_LE(std::abs(loss.breakdowns[0].kl), 1e-9);
  EXPECT_NEAR(loss.breakdowns[0].total, r, 1e-9);
}

namespace {

LmConfig micro_lm() {
  LmConfig c;
  c.q = 8;
  c.eos = 7;
  c.max_tokens = 6;
  c.width = 8;
  c.heads = 2;
  c.ffn = 16;
  c.layers = 1;
  return c;
}

MtrConfig micro_mtr() {
  MtrConfig c;
  c.q = 8;
  c.max_tokens = 6;
  c.width = 8;
  c.heads = 2;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.ffn = 16;
  c.head_hidden = 8;
  return c;
}

}  // namespace

TEST(DiffroLoss, GradientMatchesFiniteDifferences) {
  PolicyLM policy(micro_lm(), 19);
  const PolicyLM reference(micro_lm(), 20);
  const MtrModel m = [] {
    MtrModel x(micro_mtr(), 21);
    Rng rng(21, 1);
    for (auto& it : x.params().items()) {
      for (double& v : it.tensor.mutable_data()) v += 0.2 * (rng.uniform() * 2 - 1);
    }
    return x;
  }();
  GumbelConfig g;
  g.mode = GumbelMode::soft;
  g.tau = 0.8;
  std::vector<toy::TextSeq> texts{toy::TextSeq::from_string("ab"),
                                  toy::TextSeq::from_string("cab")};
  std::vector<RolloutSample> samples;
  Rng rng(19, 0);
  for (const auto& t : texts) samples.push_back(sample_rollout(policy, t, g, rng, 6));
  RewardSpec spec;
  spec.tasks = {"asr", "emotion", "rate"};
  RewardTargets targets;
  targets.emotion = toy::Emotion::happy;
  targets.rate = 0.7;
  auto loss = [&] {
    RolloutBatch batch;
    std::vector<RewardResult> rewards;
    for (std::size_t i = 0; i < texts.size(); ++i) {
      batch.items.push_back(relax(policy, reference, texts[i], samples[i], g));
      RewardTargets t = targets;
      t.text = texts[i];
      rewards.push_back(mtr_reward(m, batch.items.back().tokens, t, spec));
    }
    return diffro_loss(batch, rewards, 0.1).loss;
  };
  const auto r = grad_check(loss, policy.params(), 1e-6);
  EXPECT_TRUE(r.ok());
  EXPECT_LE(r.max_rel_error, 1e-4);
}

TEST(DiffroLoss, DecreasesOnAFixedMicroTask) {
  PolicyLM policy(tiny_lm(), 22);
  const PolicyLM reference(policy);
  const MtrModel m = perturbed_mtr(23);
  const auto text = toy::TextSeq::from_string("descend");
  Adam opt(policy.params(), {.lr = 3e-3});
  std::vector<double> losses;
  for (int step = 0; step < 50; ++step) {
    Rng rng(22, 0);
    RolloutBatch batch;
    std::vector<RewardResult> rewards;
    for (int b = 0; b < 4; ++b) {
      batch.items.push_back(rollout(policy, reference, text, {}, rng, 30));
      rewards.push_back({asr_reward(m, batch.items.back().tokens, text), {}});
    }
    const auto l = diffro_loss(batch, rewards, 0.1);
    losses.push_back(l.loss.item());
    backward(l.loss);
    opt.step(policy.params());
    policy.params().zero_grad();
  }
  double sx = 0, sy = 0, sxy = 0, sxx = 0;
  const double n = static_cast<double>(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) {
    sx += i;
    sy += losses[i];
    sxy += i * losses[i];
    sxx += static_cast<double>(i * i);
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  EXPECT_LT(slope, 0.0);
}
