#pragma once

// Synthetic codec language: a deterministic text -> token encoder with
// emotion-style, noise and event channels, plus its analytic inverse.

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffro/rng.hpp"

namespace diffro::toy {

// Text alphabet: 'a'..'z' -> 0..25, ' ' -> 26, then instruction symbols.
inline constexpr int kAlphabet = 27;
inline constexpr int kEmotionInstrBase = 27;  // 4 ids
inline constexpr int kQualityInstrBase = 31;  // 5 ids, level 1..5
inline constexpr int kTextVocab = 36;
inline constexpr std::size_t kMaxTextLen = 32;

// Codec vocabulary partition.
inline constexpr int kQ = 80;
inline constexpr std::size_t kMaxTokens = 96;
inline constexpr int kContentBase = 0;  // 54 ids: 2 variants per symbol
inline constexpr int kStyleBase = 54;   // 2 per emotion
inline constexpr int kNoiseBase = 62;   // 4 ids
inline constexpr int kEventBase = 66;   // laugh 66-67, breath 68-69
inline constexpr int kEos = 70;

inline constexpr int kNumEmotions = 4;
inline constexpr int kNumGenders = 2;
inline constexpr int kNumQuality = 5;

enum class Emotion { neutral = 0, happy = 1, sad = 2, angry = 3 };
enum class Gender { female = 0, male = 1 };
enum class TokenClass { content, style, noise, event, eos, reserved };

std::string_view to_string(Emotion e);
std::string_view to_string(Gender g);
Emotion parse_emotion(std::string_view s);
Gender parse_gender(std::string_view s);

struct Events {
  bool laugh = false;
  bool breath = false;
  bool operator==(const Events&) const = default;
};

struct AttributeSet {
  Emotion emotion = Emotion::neutral;
  Gender gender = Gender::female;
  int quality = 5;    // 1..5
  double rate = 1.0;  // [0, 1]; lower rates duplicate more content tokens
  Events events;

  void validate() const;
  bool operator==(const AttributeSet&) const = default;
};

struct TextSeq {
  std::optional<Emotion> emotion_instr;
  std::optional<int> quality_instr;  // target level 1..5
  std::vector<int> symbols;

  // Instruction ids in prefix order (emotion first).
  std::vector<int> instr_ids() const;
  void validate() const;
  bool operator==(const TextSeq&) const = default;

  static TextSeq from_string(std::string_view text);
  std::string str() const;
};

using TokenSeq = std::vector<int>;

class Codebook {
 public:
  explicit Codebook(std::uint64_t seed = 7);

  std::uint64_t seed() const { return seed_; }
  int content(int symbol, Gender variant) const;
  // (symbol, variant) for a content id.
  std::pair<int, Gender> symbol_of(int content_id) const;
  static TokenClass classify(int id);

  nlohmann::ordered_json to_json() const;
  static Codebook from_json(const nlohmann::json& j);

 private:
  std::uint64_t seed_;
  std::array<int, 2 * kAlphabet> forward_{};
  std::array<int, 2 * kAlphabet> inverse_{};
};

// Draws the stochastic channels (duplication, style choice, noise, events)
// from `rng`. Throws std::invalid_argument for an empty uninstructed text and
// std::length_error if the result would exceed kMaxTokens.
TokenSeq encode(const TextSeq& text, const AttributeSet& attrs,
                const Codebook& codebook, Rng& rng);

struct DecodeResult {
  TextSeq text;        // symbols only
  AttributeSet attrs;  // estimates
  double noise_fraction = 0.0;
};

// Best-effort inverse for any token sequence; reading stops at the first EOS.
DecodeResult oracle_decode(std::span<const int> tokens, const Codebook& codebook);

struct Utterance {
  TextSeq text;
  AttributeSet attrs;
  TokenSeq tokens;
};

enum class InstrMode { none, random, match };

struct DatasetConfig {
  std::size_t min_len = 12;
  std::size_t max_len = 28;
  std::uint64_t codebook_seed = 7;
  InstrMode emotion_instr = InstrMode::none;
  InstrMode quality_instr = InstrMode::none;
  std::optional<Emotion> pin_emotion;
  std::optional<Gender> pin_gender;
  std::optional<int> pin_quality;
  std::optional<double> pin_rate;
  std::optional<Events> pin_events;
  // Fixed quality instruction level for quality_instr == match with no pin.
  std::optional<int> quality_target;

  static DatasetConfig from_json(const nlohmann::json& j);
};

// Random text of the given length with no two equal neighbours, so duplicate
// collapse in oracle_decode is lossless.
std::vector<int> random_text(std::size_t len, Rng& rng);

// Utterance i of a split is generated from its own sub-stream.
std::vector<Utterance> make_dataset(std::size_t n, std::string_view split,
                                    const DatasetConfig& cfg, std::uint64_t seed);

nlohmann::ordered_json to_json(const Utterance& u);
Utterance utterance_from_json(const nlohmann::json& j);

void write_jsonl(const std::filesystem::path& path, std::span<const Utterance> utts);
std::vector<Utterance> read_jsonl(const std::filesystem::path& path);
// Reads only the `text` and `instr` fields; labels and tokens are ignored.
std::vector<TextSeq> read_texts(const std::filesystem::path& path);

// Levenshtein distance between symbol sequences.
std::size_t edit_distance(std::span<const int> a, std::span<const int> b);

}  // namespace diffro::toy
