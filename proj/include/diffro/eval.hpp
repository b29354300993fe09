#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffro/mtr_model.hpp"
#include "diffro/policy_lm.hpp"
#include "diffro/toytask.hpp"

namespace diffro {

// Mean normalized edit distance x 100 between oracle-decoded token sequences
// and reference texts.
double text_error_rate(std::span<const toy::TokenSeq> tokens, std::span<const toy::TextSeq> refs,
                       const toy::Codebook& codebook);

// Greedy generation per text, scored by text_error_rate.
double eval_ter(const PolicyLM& policy, std::span<const toy::TextSeq> texts,
                const toy::Codebook& codebook, std::size_t max_len = toy::kMaxTokens);

struct EmotionResult {
  std::array<double, toy::kNumEmotions> accuracy{};
  double mean = 0.0;
  std::size_t per_class = 0;
};

// Each of the first `per_class` texts is prompted once per emotion
// instruction and decoded greedily.
EmotionResult eval_emotion(const PolicyLM& policy, std::span<const toy::TextSeq> texts,
                           const toy::Codebook& codebook, std::size_t per_class = 100);

// Sum_l l * P(l | tokens) under the reward model's quality head.
double expected_quality(const MtrModel& mtr, std::span<const int> tokens);

struct QualityResult {
  int target = 0;  // 0: no quality instruction
  double expected_level = 0.0;
  double oracle_level = 0.0;
  double noise_fraction = 0.0;
  std::size_t n = 0;
};

// Ancestral samples at temperature 1, scored by the frozen reward model and
// by the oracle decoder.
QualityResult eval_quality_tracking(const PolicyLM& policy, const MtrModel& mtr,
                                    std::span<const toy::TextSeq> texts, int target,
                                    const toy::Codebook& codebook, std::uint64_t seed);

// Mean per-token KL(policy || reference) on sampled sequences.
double kl_drift(const PolicyLM& policy, const PolicyLM& reference,
                std::span<const toy::TextSeq> texts, std::uint64_t seed);

struct EvalRow {
  std::string system;
  std::string split = "toy";
  double ter = 0.0;
  std::array<double, toy::kNumEmotions> emotion_acc{};
  double emotion_mean = 0.0;
  double mos_codec = 0.0;
  double kl_drift = 0.0;
  std::size_t samples = 0;
};

struct EvalOptions {
  std::size_t emotion_per_class = 100;
  std::uint64_t seed = 1;
};

EvalRow evaluate_system(const std::string& name, const PolicyLM& policy, const PolicyLM& reference,
                        const MtrModel& mtr, std::span<const toy::TextSeq> texts,
                        const toy::Codebook& codebook, const EvalOptions& opt);

struct EvalReport {
  std::vector<EvalRow> rows;

  static const std::vector<std::string>& columns();
  std::string to_csv() const;
  nlohmann::ordered_json to_json() const;
  std::string to_text() const;
  static EvalReport from_csv(const std::string& text);
  static EvalReport from_json(const nlohmann::json& j);
  static EvalReport load(const std::filesystem::path& path);
  // Appends rows; a later row replaces an earlier one with the same system
  // and split.
  void merge(const EvalReport& other);
};

}  // namespace diffro
