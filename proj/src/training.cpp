#include "diffro/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>

#include "diffro/ops.hpp"

namespace diffro {

nlohmann::ordered_json StepRecord::to_json() const {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["loss"] = loss;
  if (!reward.empty()) {
    nlohmann::ordered_json r = nlohmann::ordered_json::object();
    for (const auto& [k, v] : reward) r[k] = v;
    j["reward"] = r;
  }
  if (kl) j["kl"] = *kl;
  for (const auto& [k, v] : extra) j[k] = v;
  if (wall_time) j["wall_time"] = *wall_time;
  return j;
}

namespace {

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

}  // namespace

TrainLog::TrainLog(const std::filesystem::path& path, bool wall_time, bool append)
    : wall_time_(wall_time), t0_(now_seconds()) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.emplace(path, append ? std::ios::app : std::ios::trunc);
  if (!*out_) throw std::runtime_error("cannot write train log " + path.string());
}

void TrainLog::append(StepRecord rec) {
  if (!records_.empty() && rec.step <= records_.back().step) {
    throw std::logic_error("train log: step " + std::to_string(rec.step) + " after " +
                           std::to_string(records_.back().step));
  }
  if (wall_time_) rec.wall_time = now_seconds() - t0_;
  if (out_) *out_ << rec.to_json().dump() << '\n' << std::flush;
  records_.push_back(std::move(rec));
}

namespace {

// Epoch-shuffled example order that depends only on (seed, stream, position),
// so any step's batch can be recomputed on resume.
class BatchOrder {
 public:
  BatchOrder(std::size_t n, std::uint64_t seed, std::string_view stream)
      : n_(n), base_(seed, stream_id(stream)) {
    if (n == 0) throw std::invalid_argument("training: empty dataset");
  }

  std::vector<std::size_t> batch(std::size_t step, std::size_t size) {
    std::vector<std::size_t> out;
    for (std::size_t k = (step - 1) * size; k < step * size; ++k) {
      const std::size_t epoch = k / n_;
      if (epoch != epoch_ || perm_.empty()) {
        epoch_ = epoch;
        perm_.resize(n_);
        std::iota(perm_.begin(), perm_.end(), std::size_t{0});
        Rng r = base_.split(epoch);
        for (std::size_t i = n_ - 1; i > 0; --i) {
          std::swap(perm_[i], perm_[r.uniform_int(i + 1)]);
        }
      }
      out.push_back(perm_[k % n_]);
    }
    return out;
  }

 private:
  std::size_t n_;
  Rng base_;
  std::size_t epoch_ = 0;
  std::vector<std::size_t> perm_;
};

using SaveFn = std::function<void(const TrainState&)>;

struct Loop {
  const RunOptions& opt;
  ParameterSet& params;
  Adam adam;
  SaveFn save;
  std::string stage;
  std::size_t start = 0;

  Loop(const RunOptions& o, ParameterSet& p, SaveFn s, std::string name)
      : opt(o), params(p), adam(p, o.optim), save(std::move(s)), stage(std::move(name)) {
    if (opt.batch_size == 0) throw std::invalid_argument(stage + ": batch size must be positive");
    if (opt.resume) {
      restore_optimizer(adam, opt.resume->optimizer);
      start = opt.resume->step;
    }
  }

  TrainState state(std::size_t step) const {
    TrainState s;
    s.step = step;
    s.rng = Rng(opt.seed, stream_id(stage)).state();
    s.optimizer = optimizer_bytes(adam);
    return s;
  }

  [[noreturn]] void diverge(std::size_t step, const std::string& why) {
    std::string msg = stage + ": " + why + " at step " + std::to_string(step);
    if (!opt.checkpoint_path.empty()) {
      save(state(step - 1));
      msg += "; last good checkpoint " + opt.checkpoint_path.string();
    }
    throw TrainingDiverged(msg);
  }

  // Applies the accumulated gradients; diverges on non-finite loss or grads.
  void update(std::size_t step, double loss) {
    if (!std::isfinite(loss)) {
      params.zero_grad();
      diverge(step, "non-finite loss");
    }
    if (opt.lr_decay_to != 1.0 && opt.steps > 1) {
      const double progress = static_cast<double>(step - 1) / static_cast<double>(opt.steps - 1);
      adam.set_lr(opt.optim.lr * (1.0 - (1.0 - opt.lr_decay_to) * progress));
    }
    try {
      adam.step(params);
    } catch (const NonFiniteGradient& e) {
      params.zero_grad();
      diverge(step, e.what());
    }
    params.zero_grad();
  }

  void after_step(std::size_t step) {
    if (opt.checkpoint_every && !opt.checkpoint_path.empty() && step % opt.checkpoint_every == 0) {
      save(state(step));
    }
  }
};

StepRecord record(std::size_t step, double loss) {
  StepRecord r;
  r.step = step;
  r.loss = loss;
  return r;
}

template <class T>
double mean_of(const std::vector<T>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

Tensor lm_loss(const PolicyLM& lm, const toy::Utterance& u) {
  return cross_entropy(lm.forward(u.text, u.tokens), u.tokens);
}

RunSummary pretrain_lm(PolicyLM& lm, std::span<const toy::Utterance> data, const RunOptions& opt) {
  Loop loop(opt, lm.params(), [&](const TrainState& s) { save_policy(opt.checkpoint_path, lm, &s); },
            "pretrain");
  BatchOrder order(data.size(), opt.seed, "pretrain.order");
  RunSummary sum;
  sum.steps_run = loop.start;
  for (std::size_t step = loop.start + 1; step <= opt.steps; ++step) {
    const auto idx = order.batch(step, opt.batch_size);
    double loss = 0.0;
    for (std::size_t i : idx) {
      Tensor l = lm_loss(lm, data[i]);
      loss += l.item() / static_cast<double>(idx.size());
      backward(scale(l, 1.0 / static_cast<double>(idx.size())));
    }
    loop.update(step, loss);
    if (opt.log) opt.log->append(record(step, loss));
    loop.after_step(step);
    sum.steps_run = step;
    sum.final_loss = loss;
  }
  sum.state = loop.state(sum.steps_run);
  return sum;
}

nlohmann::ordered_json MtrMetrics::to_json() const {
  return {{"emotion_acc", emotion_acc},
          {"gender_acc", gender_acc},
          {"quality_acc", quality_acc},
          {"quality_within1", quality_within1},
          {"rate_mse", rate_mse},
          {"event_f1", event_f1},
          {"asr_ser", asr_ser},
          {"n", n}};
}

Tensor mtr_loss(const MtrModel& mtr, const toy::Utterance& u) {
  const MtrOutput out = mtr.forward(std::span<const int>(u.tokens), nullptr);
  const int emo[1] = {static_cast<int>(u.attrs.emotion)};
  const int gen[1] = {static_cast<int>(u.attrs.gender)};
  const int qual[1] = {u.attrs.quality - 1};
  Tensor loss = add(cross_entropy(out.emotion_logits, emo), cross_entropy(out.gender_logits, gen));
  loss = add(loss, cross_entropy(out.quality_logits, qual));
  Tensor d = add_scalar(out.rate, -u.attrs.rate);
  loss = add(loss, sum(mul(d, d)));
  const double sign[2] = {u.attrs.events.laugh ? 1.0 : -1.0, u.attrs.events.breath ? 1.0 : -1.0};
  loss = sub(loss, sum(log_sigmoid(mul(out.event_logits, Tensor::from({1, 2}, {sign[0], sign[1]})))));
  std::vector<int> target = u.text.symbols;
  target.push_back(MtrConfig::kAsrEos);
  Tensor lp = mtr.asr_log_probs(out.encoded, u.text.symbols, true);
  return add(loss, neg(sum(pick(lp, target))));
}

RunSummary train_mtr(MtrModel& mtr, std::span<const toy::Utterance> data, const RunOptions& opt,
                     bool shuffle_labels) {
  std::vector<toy::Utterance> shuffled;
  if (shuffle_labels) {
    shuffled.assign(data.begin(), data.end());
    std::vector<toy::AttributeSet> attrs;
    for (const auto& u : shuffled) attrs.push_back(u.attrs);
    Rng r(opt.seed, stream_id("train-reward.shuffle"));
    for (std::size_t i = attrs.size(); i-- > 1;) std::swap(attrs[i], attrs[r.uniform_int(i + 1)]);
    for (std::size_t i = 0; i < shuffled.size(); ++i) shuffled[i].attrs = attrs[i];
    data = shuffled;
  }
  Loop loop(opt, mtr.params(), [&](const TrainState& s) { save_mtr(opt.checkpoint_path, mtr, &s); },
            "train-reward");
  BatchOrder order(data.size(), opt.seed, "train-reward.order");
  RunSummary sum;
  sum.steps_run = loop.start;
  for (std::size_t step = loop.start + 1; step <= opt.steps; ++step) {
    const auto idx = order.batch(step, opt.batch_size);
    double loss = 0.0;
    for (std::size_t i : idx) {
      Tensor l = mtr_loss(mtr, data[i]);
      loss += l.item() / static_cast<double>(idx.size());
      backward(scale(l, 1.0 / static_cast<double>(idx.size())));
    }
    loop.update(step, loss);
    if (opt.log) opt.log->append(record(step, loss));
    loop.after_step(step);
    sum.steps_run = step;
    sum.final_loss = loss;
  }
  sum.state = loop.state(sum.steps_run);
  return sum;
}

MtrMetrics evaluate_mtr(const MtrModel& mtr, std::span<const toy::Utterance> data, bool with_asr) {
  NoGradGuard ng;
  MtrMetrics m;
  m.n = data.size();
  if (data.empty()) return m;
  auto argmax = [](std::span<const double> v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
  };
  std::size_t tp = 0, fp = 0, fn = 0, errors = 0, symbols = 0;
  for (const auto& u : data) {
    const MtrOutput out = mtr.forward(std::span<const int>(u.tokens), nullptr);
    m.emotion_acc += argmax(out.emotion_logits.data()) == static_cast<int>(u.attrs.emotion);
    m.gender_acc += argmax(out.gender_logits.data()) == static_cast<int>(u.attrs.gender);
    const Tensor pq = softmax(out.quality_logits);
    double expected = 0.0;
    for (int l = 0; l < toy::kNumQuality; ++l) expected += (l + 1) * pq.at(static_cast<std::size_t>(l));
    const int q = static_cast<int>(std::lround(expected));
    m.quality_acc += q == u.attrs.quality;
    m.quality_within1 += std::abs(q - u.attrs.quality) <= 1;
    const double d = out.rate.item() - u.attrs.rate;
    m.rate_mse += d * d;
    const bool truth[2] = {u.attrs.events.laugh, u.attrs.events.breath};
    for (int k = 0; k < 2; ++k) {
      const bool pred = out.event_logits.at(static_cast<std::size_t>(k)) > 0.0;
      tp += pred && truth[k];
      fp += pred && !truth[k];
      fn += !pred && truth[k];
    }
    if (with_asr) {
      const auto hyp = mtr.asr_greedy(out.encoded);
      errors += toy::edit_distance(hyp, u.text.symbols);
      symbols += u.text.symbols.size();
    }
  }
  const auto n = static_cast<double>(data.size());
  m.emotion_acc /= n;
  m.gender_acc /= n;
  m.quality_acc /= n;
  m.quality_within1 /= n;
  m.rate_mse /= n;
  m.event_f1 = tp + fp + fn == 0 ? 1.0
                                 : 2.0 * static_cast<double>(tp) /
                                       static_cast<double>(2 * tp + fp + fn);
  m.asr_ser = symbols ? static_cast<double>(errors) / static_cast<double>(symbols) : 0.0;
  return m;
}

std::pair<toy::TextSeq, RewardTargets> rl_prompt(const toy::TextSeq& text, const RlOptions& opt,
                                                 Rng& rng) {
  toy::TextSeq prompt = text;
  RewardTargets t;
  if (opt.emotion_instr == "random") {
    prompt.emotion_instr = static_cast<toy::Emotion>(rng.uniform_int(toy::kNumEmotions));
  }
  if (opt.quality_target > 0) prompt.quality_instr = opt.quality_target;
  if (prompt.emotion_instr) t.emotion = prompt.emotion_instr;
  if (prompt.quality_instr) t.quality = prompt.quality_instr;
  if (!prompt.symbols.empty()) {
    toy::TextSeq plain;
    plain.symbols = prompt.symbols;
    t.text = plain;
  }
  return {prompt, t};
}

double diffro_batch(const PolicyLM& policy, const PolicyLM& reference, const MtrModel& mtr,
                    std::span<const toy::TextSeq> prompts, std::span<const RewardTargets> targets,
                    std::span<const RolloutSample> samples, const GumbelConfig& gumbel,
                    const RewardSpec& reward, double beta,
                    std::vector<RewardBreakdown>* breakdowns) {
  const std::size_t b = prompts.size();
  if (b == 0 || targets.size() != b || samples.size() != b) {
    throw std::invalid_argument("diffro_batch: inconsistent batch");
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    RolloutBatch one;
    one.items.push_back(relax(policy, reference, prompts[i], samples[i], gumbel));
    std::vector<RewardResult> rr{mtr_reward(mtr, one.items[0].tokens, targets[i], reward)};
    DiffroLoss dl = diffro_loss(one, rr, beta);
    backward(scale(dl.loss, 1.0 / static_cast<double>(b)));
    loss += dl.loss.item() / static_cast<double>(b);
    if (breakdowns) breakdowns->push_back(dl.breakdowns[0]);
  }
  return loss;
}

namespace {

struct FrozenGuard {
  RlSummary& sum;
  PolicyLM& reference;
  MtrModel& mtr;
  FrozenGuard(RlSummary& s, PolicyLM& r, MtrModel& m) : sum(s), reference(r), mtr(m) {
    reference.params().set_requires_grad(false);
    mtr.params().set_requires_grad(false);
    sum.mtr_hash_before = mtr.params().hash();
    sum.reference_hash_before = reference.params().hash();
  }
  void finish() {
    sum.mtr_hash_after = mtr.params().hash();
    sum.reference_hash_after = reference.params().hash();
  }
};

void check_rl(const PolicyLM& policy, const PolicyLM& reference, const MtrModel& mtr,
              std::span<const toy::TextSeq> texts, const RlOptions& opt) {
  if (texts.empty()) throw std::invalid_argument("rl: no texts");
  if (policy.config() != reference.config()) {
    throw std::invalid_argument("rl: policy and reference configs differ");
  }
  if (policy.config().q != mtr.config().q) {
    throw std::invalid_argument("rl: policy and reward model vocabularies differ");
  }
  if (opt.beta < 0.0) throw std::invalid_argument("rl: beta must be >= 0");
  opt.reward.validate();
  opt.gumbel.validate();
}

}  // namespace

RlSummary run_diffro(PolicyLM& policy, PolicyLM& reference, MtrModel& mtr,
                     std::span<const toy::TextSeq> texts, const RlOptions& opt) {
  check_rl(policy, reference, mtr, texts, opt);
  RlSummary sum;
  FrozenGuard guard(sum, reference, mtr);
  const RunOptions& ro = opt.run;
  Loop loop(ro, policy.params(), [&](const TrainState& s) { save_policy(ro.checkpoint_path, policy, &s); },
            "diffro");
  const Rng base(ro.seed, stream_id("diffro"));
  sum.run.steps_run = loop.start;
  for (std::size_t step = loop.start + 1; step <= ro.steps; ++step) {
    Rng rng = base.split(step);
    GumbelConfig g = opt.gumbel;
    g.tau = opt.gumbel.tau_at(ro.steps > 1 ? static_cast<double>(step - 1) /
                                                 static_cast<double>(ro.steps - 1)
                                           : 0.0);
    std::vector<toy::TextSeq> prompts;
    std::vector<RewardTargets> targets;
    std::vector<RolloutSample> samples;
    for (std::size_t b = 0; b < ro.batch_size; ++b) {
      auto [p, t] = rl_prompt(texts[rng.uniform_int(texts.size())], opt, rng);
      samples.push_back(sample_rollout(policy, p, g, rng, opt.max_len));
      prompts.push_back(std::move(p));
      targets.push_back(std::move(t));
    }
    std::vector<RewardBreakdown> bds;
    const double loss = diffro_batch(policy, reference, mtr, prompts, targets, samples, g,
                                     opt.reward, opt.beta, &bds);
    StepRecord rec = record(step, loss);
    std::vector<double> kl, total;
    std::map<std::string, std::vector<double>> terms;
    for (const auto& bd : bds) {
      kl.push_back(bd.kl);
      total.push_back(bd.total);
      for (const auto& [k, v] : bd.tasks) terms[k].push_back(v);
    }
    for (const auto& [k, v] : terms) rec.reward[k] = mean_of(v);
    rec.reward["total"] = mean_of(total);
    rec.kl = mean_of(kl);
    if (opt.gumbel.anneal) rec.extra["tau"] = g.tau;
    if (*rec.kl > opt.kl_ceiling) {
      policy.params().zero_grad();
      if (ro.log) ro.log->append(std::move(rec));
      sum.run.early_stopped = true;
      sum.run.stop_reason = "KL " + std::to_string(mean_of(kl)) + " exceeds ceiling " +
                            std::to_string(opt.kl_ceiling) + " at step " + std::to_string(step);
      std::cerr << "warning: diffro early stop: " << sum.run.stop_reason << '\n';
      break;
    }
    loop.update(step, loss);
    if (ro.log) ro.log->append(std::move(rec));
    loop.after_step(step);
    sum.run.steps_run = step;
    sum.run.final_loss = loss;
  }
  sum.run.state = loop.state(sum.run.steps_run);
  guard.finish();
  return sum;
}

std::optional<PreferencePair> select_pair(const toy::TextSeq& text,
                                          const std::vector<toy::TokenSeq>& samples,
                                          const std::vector<double>& scores,
                                          const std::vector<double>& logprobs) {
  if (samples.size() < 2 || scores.size() != samples.size() || logprobs.size() != samples.size()) {
    throw std::invalid_argument("select_pair: need >= 2 scored samples");
  }
  if (std::all_of(samples.begin(), samples.end(), [&](const auto& s) { return s == samples[0]; })) {
    return std::nullopt;
  }
  auto key_less = [&](std::size_t a, std::size_t b) {
    return scores[a] != scores[b] ? scores[a] < scores[b] : logprobs[a] < logprobs[b];
  };
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const auto [lo, hi] = std::minmax_element(idx.begin(), idx.end(), key_less);
  if (samples[*lo] == samples[*hi]) return std::nullopt;
  return PreferencePair{text, samples[*hi], samples[*lo], scores[*hi], scores[*lo]};
}

RlSummary run_dpo(PolicyLM& policy, PolicyLM& reference, MtrModel& mtr,
                  std::span<const toy::TextSeq> texts, const RlOptions& opt) {
  check_rl(policy, reference, mtr, texts, opt);
  if (opt.dpo_k < 2) throw std::invalid_argument("dpo: K must be >= 2");
  RlSummary sum;
  FrozenGuard guard(sum, reference, mtr);
  const RunOptions& ro = opt.run;
  Loop loop(ro, policy.params(), [&](const TrainState& s) { save_policy(ro.checkpoint_path, policy, &s); },
            "dpo");
  const Rng base(ro.seed, stream_id("dpo"));
  const auto q = static_cast<std::size_t>(policy.config().q);
  sum.run.steps_run = loop.start;
  for (std::size_t step = loop.start + 1; step <= ro.steps; ++step) {
    Rng rng = base.split(step);
    std::vector<PreferencePair> pairs;
    std::vector<double> best, worst;
    std::size_t skipped = 0;
    for (std::size_t b = 0; b < ro.batch_size; ++b) {
      auto [prompt, targets] = rl_prompt(texts[rng.uniform_int(texts.size())], opt, rng);
      std::vector<toy::TokenSeq> samples;
      std::vector<double> scores, lps;
      {
        NoGradGuard ng;
        for (std::size_t k = 0; k < opt.dpo_k; ++k) {
          samples.push_back(policy.generate(prompt, rng, opt.max_len, 1.0));
          scores.push_back(targets.text
                               ? asr_reward(mtr, one_hot(samples.back(), q), *targets.text).item()
                               : 0.0);
          lps.push_back(seq_logprob(policy, prompt, samples.back()).item());
        }
      }
      auto pair = select_pair(prompt, samples, scores, lps);
      if (!pair) {
        ++skipped;
        continue;
      }
      best.push_back(pair->score_pos);
      worst.push_back(pair->score_neg);
      pairs.push_back(std::move(*pair));
    }
    sum.skipped_pairs += skipped;
    double loss = 0.0;
    for (const auto& p : pairs) {
      Tensor l = dpo_loss(policy, reference, p, opt.beta);
      loss += l.item() / static_cast<double>(pairs.size());
      backward(scale(l, 1.0 / static_cast<double>(pairs.size())));
    }
    StepRecord rec = record(step, loss);
    rec.reward["pos"] = mean_of(best);
    rec.reward["neg"] = mean_of(worst);
    rec.extra["pairs"] = static_cast<double>(pairs.size());
    rec.extra["skipped"] = static_cast<double>(skipped);
    if (!pairs.empty()) loop.update(step, loss);
    if (ro.log) ro.log->append(std::move(rec));
    loop.after_step(step);
    sum.run.steps_run = step;
    sum.run.final_loss = loss;
  }
  sum.run.state = loop.state(sum.run.steps_run);
  guard.finish();
  return sum;
}

RunSummary train_reward_pairs(MtrModel& mtr, std::span<const PreferencePair> pairs,
                              const RunOptions& opt) {
  Loop loop(opt, mtr.params(), [&](const TrainState& s) { save_mtr(opt.checkpoint_path, mtr, &s); },
            "train-reward.pairs");
  BatchOrder order(pairs.size(), opt.seed, "train-reward.pairs.order");
  const auto q = static_cast<std::size_t>(mtr.config().q);
  const SequenceRewardFn reward = [&](const toy::TokenSeq& u, const toy::TextSeq& y) {
    return asr_reward(mtr, one_hot(u, q), y);
  };
  RunSummary sum;
  sum.steps_run = loop.start;
  for (std::size_t step = loop.start + 1; step <= opt.steps; ++step) {
    const auto idx = order.batch(step, opt.batch_size);
    double loss = 0.0;
    for (std::size_t i : idx) {
      Tensor l = bradley_terry_loss(reward, pairs[i]);
      loss += l.item() / static_cast<double>(idx.size());
      backward(scale(l, 1.0 / static_cast<double>(idx.size())));
    }
    loop.update(step, loss);
    if (opt.log) opt.log->append(record(step, loss));
    loop.after_step(step);
    sum.steps_run = step;
    sum.final_loss = loss;
  }
  sum.state = loop.state(sum.steps_run);
  return sum;
}

namespace {

RlOptions rl_options(const ExperimentConfig& cfg) {
  RlOptions o;
  o.beta = cfg.rl.beta;
  o.kl_ceiling = cfg.rl.kl_ceiling;
  o.max_len = cfg.rl.max_len;
  o.gumbel = cfg.gumbel;
  o.reward = cfg.reward;
  o.emotion_instr = cfg.rl.emotion_instr;
  o.quality_target = cfg.rl.quality_target;
  o.dpo_k = cfg.rl.dpo_k;
  return o;
}

}  // namespace

RunSummary run_stage(const ExperimentConfig& cfg, const std::filesystem::path& workdir,
                     bool resume) {
  cfg.validate();
  cfg.check_inputs(workdir);
  if (cfg.out.empty()) throw ConfigError("config: out path required");
  const auto out = workdir / cfg.out;
  for (const auto& p : {out, workdir / cfg.log, workdir / cfg.reference}) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  }
  RunOptions ro;
  ro.steps = cfg.steps;
  ro.batch_size = cfg.batch_size;
  ro.optim = cfg.optim;
  ro.lr_decay_to = cfg.lr_decay_to;
  ro.seed = cfg.seed;
  ro.checkpoint_every = cfg.checkpoint_every;
  ro.checkpoint_path = out;
  TrainState state;
  const bool resuming = resume && std::filesystem::exists(out);
  if (resuming) ro.resume = &state;
  std::optional<TrainLog> log;
  if (!cfg.log.empty()) {
    log.emplace(workdir / cfg.log, cfg.log_wall_time, resuming);
    ro.log = &*log;
  }

  switch (cfg.stage) {
    case Stage::pretrain: {
      const auto data = toy::read_jsonl(workdir / cfg.train_data);
      std::unique_ptr<PolicyLM> lm = resuming ? load_policy(out, &state)
                                              : std::make_unique<PolicyLM>(cfg.lm, cfg.seed);
      RunSummary s = pretrain_lm(*lm, data, ro);
      save_policy(out, *lm, &s.state);
      if (!cfg.reference.empty()) save_policy(workdir / cfg.reference, *lm);
      return s;
    }
    case Stage::train_reward: {
      const auto data = toy::read_jsonl(workdir / cfg.train_data);
      std::unique_ptr<MtrModel> m = resuming ? load_mtr(out, &state)
                                             : std::make_unique<MtrModel>(cfg.mtr, cfg.seed);
      RunSummary s = train_mtr(*m, data, ro);
      save_mtr(out, *m, &s.state);
      if (!cfg.valid_data.empty() && std::filesystem::exists(workdir / cfg.valid_data)) {
        const auto valid = toy::read_jsonl(workdir / cfg.valid_data);
        auto metrics = evaluate_mtr(*m, valid);
        std::ofstream(out.string() + ".metrics.json") << metrics.to_json().dump(2) << '\n';
      }
      return s;
    }
    case Stage::diffro:
    case Stage::dpo: {
      const auto texts = toy::read_texts(workdir / cfg.train_data);
      auto policy = resuming ? load_policy(out, &state) : load_policy(workdir / cfg.init);
      auto reference = load_policy(workdir / (cfg.reference.empty() ? cfg.init : cfg.reference));
      auto mtr = load_mtr(workdir / cfg.reward_model);
      RlOptions o = rl_options(cfg);
      o.run = ro;
      RlSummary s = cfg.stage == Stage::diffro ? run_diffro(*policy, *reference, *mtr, texts, o)
                                               : run_dpo(*policy, *reference, *mtr, texts, o);
      if (!s.frozen_intact()) throw std::logic_error("frozen model changed during RL");
      save_policy(out, *policy, &s.run.state);
      return s.run;
    }
  }
  return {};
}

}  // namespace diffro
