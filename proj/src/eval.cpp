#include "diffro/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "diffro/ops.hpp"
#include "diffro/relaxation.hpp"

namespace diffro {

double text_error_rate(std::span<const toy::TokenSeq> tokens, std::span<const toy::TextSeq> refs,
                       const toy::Codebook& codebook) {
  if (refs.empty()) throw std::invalid_argument("text error rate: empty dataset");
  if (tokens.size() != refs.size()) {
    throw std::invalid_argument("text error rate: " + std::to_string(tokens.size()) +
                                " hypotheses for " + std::to_string(refs.size()) + " references");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto hyp = toy::oracle_decode(tokens[i], codebook).text.symbols;
    const auto& ref = refs[i].symbols;
    const double d = static_cast<double>(toy::edit_distance(hyp, ref));
    // Per-utterance error is capped at 1 so the rate stays within [0, 100].
    total += ref.empty() ? (hyp.empty() ? 0.0 : 1.0)
                         : std::min(1.0, d / static_cast<double>(ref.size()));
  }
  return 100.0 * total / static_cast<double>(refs.size());
}

double eval_ter(const PolicyLM& policy, std::span<const toy::TextSeq> texts,
                const toy::Codebook& codebook, std::size_t max_len) {
  if (texts.empty()) throw std::invalid_argument("eval_ter: empty dataset");
  NoGradGuard ng;
  Rng unused(0, 0);
  std::vector<toy::TokenSeq> gen;
  gen.reserve(texts.size());
  for (const auto& t : texts) gen.push_back(policy.generate(t, unused, max_len, 0.0));
  return text_error_rate(gen, texts, codebook);
}

EmotionResult eval_emotion(const PolicyLM& policy, std::span<const toy::TextSeq> texts,
                           const toy::Codebook& codebook, std::size_t per_class) {
  if (texts.empty() || per_class == 0) throw std::invalid_argument("eval_emotion: no prompts");
  NoGradGuard ng;
  Rng unused(0, 0);
  EmotionResult r;
  r.per_class = per_class;
  for (int e = 0; e < toy::kNumEmotions; ++e) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < per_class; ++i) {
      toy::TextSeq prompt = texts[i % texts.size()];
      prompt.emotion_instr = static_cast<toy::Emotion>(e);
      const auto tokens = policy.generate(prompt, unused, toy::kMaxTokens, 0.0);
      hits += toy::oracle_decode(tokens, codebook).attrs.emotion == static_cast<toy::Emotion>(e);
    }
    r.accuracy[static_cast<std::size_t>(e)] =
        static_cast<double>(hits) / static_cast<double>(per_class);
  }
  for (double a : r.accuracy) r.mean += a / toy::kNumEmotions;
  return r;
}

double expected_quality(const MtrModel& mtr, std::span<const int> tokens) {
  NoGradGuard ng;
  const Tensor p = softmax(mtr.forward(tokens, nullptr).quality_logits);
  double e = 0.0;
  for (int l = 0; l < toy::kNumQuality; ++l) e += (l + 1) * p.at(static_cast<std::size_t>(l));
  return e;
}

QualityResult eval_quality_tracking(const PolicyLM& policy, const MtrModel& mtr,
                                    std::span<const toy::TextSeq> texts, int target,
                                    const toy::Codebook& codebook, std::uint64_t seed) {
  if (texts.empty()) throw std::invalid_argument("eval_quality_tracking: empty dataset");
  if (target < 0 || target > toy::kNumQuality) {
    throw std::invalid_argument("eval_quality_tracking: target outside 1..5");
  }
  NoGradGuard ng;
  const Rng base(seed, stream_id("eval.quality"));
  QualityResult r;
  r.target = target;
  r.n = texts.size();
  for (std::size_t i = 0; i < texts.size(); ++i) {
    toy::TextSeq prompt = texts[i];
    if (target > 0) prompt.quality_instr = target;
    Rng rng = base.split(i);
    const auto tokens = policy.generate(prompt, rng, toy::kMaxTokens, 1.0);
    r.expected_level += expected_quality(mtr, tokens);
    const auto dec = toy::oracle_decode(tokens, codebook);
    r.oracle_level += dec.attrs.quality;
    r.noise_fraction += dec.noise_fraction;
  }
  const auto n = static_cast<double>(texts.size());
  r.expected_level /= n;
  r.oracle_level /= n;
  r.noise_fraction /= n;
  return r;
}

double kl_drift(const PolicyLM& policy, const PolicyLM& reference,
                std::span<const toy::TextSeq> texts, std::uint64_t seed) {
  if (texts.empty()) throw std::invalid_argument("kl_drift: empty dataset");
  NoGradGuard ng;
  const Rng base(seed, stream_id("eval.kl"));
  double total = 0.0;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    Rng rng = base.split(i);
    const auto tokens = policy.generate(texts[i], rng, toy::kMaxTokens, 1.0);
    const Tensor lp = log_softmax(policy.forward(texts[i], tokens));
    const Tensor lr = log_softmax(reference.forward(texts[i], tokens));
    total += mean(categorical_kl(lp, lr)).item();
  }
  return total / static_cast<double>(texts.size());
}

EvalRow evaluate_system(const std::string& name, const PolicyLM& policy, const PolicyLM& reference,
                        const MtrModel& mtr, std::span<const toy::TextSeq> texts,
                        const toy::Codebook& codebook, const EvalOptions& opt) {
  if (texts.empty()) throw std::invalid_argument("evaluate: empty dataset");
  std::vector<toy::TextSeq> plain(texts.begin(), texts.end());
  for (auto& t : plain) {
    t.emotion_instr.reset();
    t.quality_instr.reset();
  }
  EvalRow row;
  row.system = name;
  row.samples = plain.size();
  row.ter = eval_ter(policy, plain, codebook);
  const auto emo = eval_emotion(policy, plain, codebook, opt.emotion_per_class);
  row.emotion_acc = emo.accuracy;
  row.emotion_mean = emo.mean;
  row.mos_codec = eval_quality_tracking(policy, mtr, plain, 0, codebook, opt.seed).expected_level;
  row.kl_drift = kl_drift(policy, reference, plain, opt.seed);
  return row;
}

const std::vector<std::string>& EvalReport::columns() {
  static const std::vector<std::string> cols{
      "system",  "split",      "ter_percent", "acc_neutral", "acc_happy", "acc_sad",
      "acc_angry", "acc_mean", "mos_codec",   "kl_drift",    "samples"};
  return cols;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  const auto& cols = columns();
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
  for (const auto& r : rows) {
    os << r.system << ',' << r.split << ',' << fmt(r.ter);
    for (double a : r.emotion_acc) os << ',' << fmt(a);
    os << ',' << fmt(r.emotion_mean) << ',' << fmt(r.mos_codec) << ',' << fmt(r.kl_drift) << ','
       << r.samples << '\n';
  }
  return os.str();
}

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json e;
    e["system"] = r.system;
    e["split"] = r.split;
    e["ter_percent"] = r.ter;
    nlohmann::ordered_json acc;
    for (int k = 0; k < toy::kNumEmotions; ++k) {
      acc[std::string(toy::to_string(static_cast<toy::Emotion>(k)))] =
          r.emotion_acc[static_cast<std::size_t>(k)];
    }
    e["emotion_accuracy"] = acc;
    e["emotion_mean"] = r.emotion_mean;
    e["mos_codec"] = r.mos_codec;
    e["kl_drift"] = r.kl_drift;
    e["samples"] = r.samples;
    j.push_back(e);
  }
  return {{"rows", j}};
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << std::left << std::setw(16) << "system" << std::setw(6) << "split" << std::right
     << std::setw(9) << "TER(%)" << std::setw(9) << "neutral" << std::setw(9) << "happy"
     << std::setw(9) << "sad" << std::setw(9) << "angry" << std::setw(9) << "emo" << std::setw(9)
     << "MOS-C" << std::setw(9) << "KL" << std::setw(8) << "n" << '\n';
  os << std::fixed;
  for (const auto& r : rows) {
    os << std::left << std::setw(16) << r.system << std::setw(6) << r.split << std::right
       << std::setprecision(2) << std::setw(9) << r.ter << std::setprecision(3);
    for (double a : r.emotion_acc) os << std::setw(9) << a;
    os << std::setw(9) << r.emotion_mean << std::setprecision(2) << std::setw(9) << r.mos_codec
       << std::setprecision(4) << std::setw(9) << r.kl_drift << std::setw(8) << r.samples << '\n';
  }
  return os.str();
}

EvalReport EvalReport::from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || split_csv(line) != columns()) {
    throw std::invalid_argument("report: CSV header does not match the report schema");
  }
  EvalReport rep;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != columns().size()) {
      throw std::invalid_argument("report: malformed CSV row '" + line + "'");
    }
    EvalRow r;
    r.system = f[0];
    r.split = f[1];
    r.ter = std::stod(f[2]);
    for (std::size_t k = 0; k < r.emotion_acc.size(); ++k) r.emotion_acc[k] = std::stod(f[3 + k]);
    r.emotion_mean = std::stod(f[7]);
    r.mos_codec = std::stod(f[8]);
    r.kl_drift = std::stod(f[9]);
    r.samples = std::stoul(f[10]);
    rep.rows.push_back(r);
  }
  return rep;
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport rep;
  for (const auto& e : j.at("rows")) {
    EvalRow r;
    r.system = e.at("system").get<std::string>();
    r.split = e.value("split", std::string("toy"));
    r.ter = e.at("ter_percent").get<double>();
    for (int k = 0; k < toy::kNumEmotions; ++k) {
      r.emotion_acc[static_cast<std::size_t>(k)] =
          e.at("emotion_accuracy").at(std::string(toy::to_string(static_cast<toy::Emotion>(k))));
    }
    r.emotion_mean = e.at("emotion_mean").get<double>();
    r.mos_codec = e.at("mos_codec").get<double>();
    r.kl_drift = e.at("kl_drift").get<double>();
    r.samples = e.at("samples").get<std::size_t>();
    rep.rows.push_back(r);
  }
  return rep;
}

EvalReport EvalReport::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open report " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  if (path.extension() == ".json") return from_json(nlohmann::json::parse(ss.str()));
  return from_csv(ss.str());
}

void EvalReport::merge(const EvalReport& other) {
  for (const auto& r : other.rows) {
    auto it = std::find_if(rows.begin(), rows.end(), [&](const EvalRow& x) {
      return x.system == r.system && x.split == r.split;
    });
    if (it != rows.end()) {
      *it = r;
    } else {
      rows.push_back(r);
    }
  }
}

}  // namespace diffro
