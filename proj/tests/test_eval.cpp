#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "diffro/eval.hpp"

using namespace diffro;
namespace fs = std::filesystem;

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

std::vector<toy::TextSeq> texts_of(const std::vector<toy::Utterance>& d) {
  std::vector<toy::TextSeq> t;
  for (const auto& u : d) t.push_back(u.text);
  return t;
}

std::vector<toy::TokenSeq> tokens_of(const std::vector<toy::Utterance>& d) {
  std::vector<toy::TokenSeq> t;
  for (const auto& u : d) t.push_back(u.tokens);
  return t;
}

EvalRow row(const std::string& name, double ter) {
  EvalRow r;
  r.system = name;
  r.ter = ter;
  r.emotion_acc = {1.0, 0.25, 0.5, 0.125};
  r.emotion_mean = 0.46875;
  r.mos_codec = 4.25;
  r.kl_drift = 0.0125;
  r.samples = 200;
  return r;
}

}  // namespace

TEST(TextErrorRate, ZeroOnEncodedTruth) {
  const auto data = toy::make_dataset(500, "test", {}, 3);
  EXPECT_EQ(text_error_rate(tokens_of(data), texts_of(data), toy::Codebook(7)), 0.0);
}

TEST(TextErrorRate, HundredForEmptyGenerations) {
  const auto data = toy::make_dataset(50, "test", {}, 3);
  const std::vector<toy::TokenSeq> empty(data.size(), toy::TokenSeq{toy::kEos});
  EXPECT_EQ(text_error_rate(empty, texts_of(data), toy::Codebook(7)), 100.0);
}

TEST(TextErrorRate, HandComputedValue) {
  const toy::Codebook cb(7);
  const auto ref = toy::TextSeq::from_string("abcd");
  auto c = [&](char ch) { return cb.content(ch - 'a', toy::Gender::female); };
  // One substitution out of four symbols, then one deletion out of four.
  const std::vector<toy::TokenSeq> hyp{{c('a'), c('b'), c('x'), c('d'), toy::kEos},
                                       {c('a'), c('b'), c('c'), toy::kEos}};
  const std::vector<toy::TextSeq> refs{ref, ref};
  EXPECT_DOUBLE_EQ(text_error_rate(hyp, refs, cb), 25.0);
}

TEST(TextErrorRate, CappedPerUtterance) {
  const toy::Codebook cb(7);
  toy::TokenSeq garbage;
  for (int i = 0; i < 20; ++i) garbage.push_back(cb.content(i % 2 ? 3 : 5, toy::Gender::male));
  garbage.push_back(toy::kEos);
  const std::vector<toy::TokenSeq> hyp{garbage};
  const std::vector<toy::TextSeq> refs{toy::TextSeq::from_string("a")};
  EXPECT_EQ(text_error_rate(hyp, refs, cb), 100.0);
}

TEST(TextErrorRate, EmptyDatasetRejected) {
  EXPECT_THROW(text_error_rate({}, {}, toy::Codebook(7)), std::invalid_argument);
  const PolicyLM lm(LmConfig{}, 1);
  EXPECT_THROW(eval_ter(lm, {}, toy::Codebook(7)), std::invalid_argument);
}

TEST(Emotion, CleanCorpusIsPerfect) {
  // Scoring the encoder's own output: every utterance's oracle emotion matches.
  for (int e = 0; e < toy::kNumEmotions; ++e) {
    toy::DatasetConfig cfg;
    cfg.pin_emotion = static_cast<toy::Emotion>(e);
    const auto data = toy::make_dataset(100, "emo", cfg, 4);
    std::size_t hits = 0;
    for (const auto& u : data) {
      hits += toy::oracle_decode(u.tokens, toy::Codebook(7)).attrs.emotion == cfg.pin_emotion;
    }
    EXPECT_EQ(hits, 100u);
  }
}

TEST(Emotion, ResultShape) {
  const PolicyLM lm(LmConfig{}, 2);
  const auto texts = texts_of(toy::make_dataset(3, "test", {}, 5));
  const auto r = eval_emotion(lm, texts, toy::Codebook(7), 2);
  EXPECT_EQ(r.per_class, 2u);
  double mean = 0;
  for (double a : r.accuracy) {
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
    mean += a / 4;
  }
  EXPECT_DOUBLE_EQ(r.mean, mean);
}

TEST(Quality, ExpectedLevelWithinRange) {
  const MtrModel m(MtrConfig{}, 3);
  const auto data = toy::make_dataset(5, "test", {}, 6);
  for (const auto& u : data) {
    // Untrained head is uniform over 1..5.
    EXPECT_NEAR(expected_quality(m, u.tokens), 3.0, 1e-9);
  }
}

TEST(Quality, TrackingIsDeterministic) {
  const PolicyLM lm(LmConfig{}, 4);
  const MtrModel m(MtrConfig{}, 4);
  const auto texts = texts_of(toy::make_dataset(3, "test", {}, 7));
  const auto a = eval_quality_tracking(lm, m, texts, 3, toy::Codebook(7), 11);
  const auto b = eval_quality_tracking(lm, m, texts, 3, toy::Codebook(7), 11);
  EXPECT_EQ(a.expected_level, b.expected_level);
  EXPECT_EQ(a.oracle_level, b.oracle_level);
  EXPECT_GE(a.oracle_level, 1.0);
  EXPECT_LE(a.oracle_level, 5.0);
  EXPECT_THROW(eval_quality_tracking(lm, m, texts, 6, toy::Codebook(7), 11),
               std::invalid_argument);
}

TEST(KlDrift, ZeroForIdenticalModels) {
  const PolicyLM lm(LmConfig{}, 5);
  const PolicyLM copy(lm);
  const auto texts = texts_of(toy::make_dataset(3, "test", {}, 8));
  EXPECT_LE(std::abs(kl_drift(lm, copy, texts, 1)), 1e-9);
  EXPECT_GT(kl_drift(lm, jittered(PolicyLM(LmConfig{}, 6), 6), texts, 1), 0.0);
}

TEST(Report, CsvGoldenHeader) {
  EvalReport rep;
  rep.rows.push_back(row("sft", 8.5));
  const std::string csv = rep.to_csv();
  EXPECT_EQ(csv,
            "system,split,ter_percent,acc_neutral,acc_happy,acc_sad,acc_angry,acc_mean,"
            "mos_codec,kl_drift,samples\n"
            "sft,toy,8.500000,1.000000,0.250000,0.500000,0.125000,0.468750,4.250000,0.012500,"
            "200\n");
}

TEST(Report, CsvAndJsonRoundTrip) {
  EvalReport rep;
  rep.rows.push_back(row("sft", 8.5));
  rep.rows.push_back(row("diffro-asr", 3.25));
  const auto from_csv = EvalReport::from_csv(rep.to_csv());
  EXPECT_EQ(from_csv.to_csv(), rep.to_csv());
  const auto from_json = EvalReport::from_json(nlohmann::json::parse(rep.to_json().dump()));
  EXPECT_EQ(from_json.to_csv(), rep.to_csv());
  EXPECT_THROW(EvalReport::from_csv("system,ter\nsft,1\n"), std::invalid_argument);
}

TEST(Report, MergeReplacesSameSystem) {
  EvalReport a, b;
  a.rows = {row("sft", 8.5), row("dpo", 6.0)};
  b.rows = {row("dpo", 5.5), row("diffro-asr", 3.0)};
  a.merge(b);
  ASSERT_EQ(a.rows.size(), 3u);
  EXPECT_EQ(a.rows[1].system, "dpo");
  EXPECT_EQ(a.rows[1].ter, 5.5);
  EXPECT_EQ(a.rows[2].system, "diffro-asr");
}

TEST(Report, LoadByExtension) {
  const fs::path dir = fs::temp_directory_path() / "diffro_eval_load";
  fs::create_directories(dir);
  EvalReport rep;
  rep.rows.push_back(row("sft", 1.0));
  std::ofstream(dir / "r.csv") << rep.to_csv();
  std::ofstream(dir / "r.json") << rep.to_json().dump();
  EXPECT_EQ(EvalReport::load(dir / "r.csv").to_csv(), rep.to_csv());
  EXPECT_EQ(EvalReport::load(dir / "r.json").to_csv(), rep.to_csv());
  EXPECT_THROW(EvalReport::load(dir / "missing.csv"), std::runtime_error);
  EXPECT_NE(rep.to_text().find("sft"), std::string::npos);
}
