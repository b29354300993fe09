#pragma once

#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffro/layers.hpp"
#include "diffro/toytask.hpp"

namespace diffro {

struct MtrConfig {
  int q = toy::kQ;
  std::size_t max_tokens = toy::kMaxTokens;
  std::size_t max_text = toy::kMaxTextLen;
  std::size_t width = 64;
  std::size_t heads = 2;
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 1;
  std::size_t ffn = 128;
  std::size_t head_hidden = 64;

  // ASR output alphabet: the 27 text symbols plus BOS, EOS and UNK.
  static constexpr int kBos = toy::kAlphabet;
  static constexpr int kAsrEos = toy::kAlphabet + 1;
  static constexpr int kAsrVocab = toy::kAlphabet + 3;

  nlohmann::ordered_json to_json() const;
  static MtrConfig from_json(const nlohmann::json& j);
  bool operator==(const MtrConfig&) const = default;
};

// Attribute heads in a fixed order; each owns an attention-pooling query.
enum class MtrHead { emotion, gender, quality, rate, events };
inline constexpr std::array<MtrHead, 5> kMtrHeads{MtrHead::emotion, MtrHead::gender,
                                                  MtrHead::quality, MtrHead::rate,
                                                  MtrHead::events};
std::string_view head_name(MtrHead h);

struct MtrOutput {
  Tensor encoded;         // (T, D)
  Tensor asr_log_probs;   // (N, kAsrVocab) under teacher forcing; undefined if no text
  Tensor emotion_logits;  // (1, 4)
  Tensor gender_logits;   // (1, 2)
  Tensor quality_logits;  // (1, 5)
  Tensor rate;            // (1, 1) in (0, 1)
  Tensor event_logits;    // (1, 2): laugh, breath
  std::map<std::string, Tensor> pooling;  // (1, T) weights per head
};

// Multi-task reward model over codec tokens: embedding front end, shared
// bidirectional encoder, per-task attention pooling and an autoregressive
// ASR decoder cross-attending to the encoder.
class MtrModel {
 public:
  explicit MtrModel(const MtrConfig& cfg, std::uint64_t seed = 0);
  MtrModel(const MtrModel& other);
  MtrModel& operator=(const MtrModel&) = delete;

  const MtrConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  // `tokens` is (T, Q): one-hot or relaxed rows.
  Tensor encode(const Tensor& tokens) const;
  MtrOutput forward(const Tensor& tokens, const toy::TextSeq* text) const;
  MtrOutput forward(std::span<const int> tokens, const toy::TextSeq* text) const;

  // Teacher-forced ASR log-probabilities; with_eos appends the EOS row.
  Tensor asr_log_probs(const Tensor& encoded, std::span<const int> symbols,
                       bool with_eos) const;
  std::vector<int> asr_greedy(const Tensor& encoded) const;

 private:
  void build(std::uint64_t seed);
  Tensor pool(const Tensor& encoded, MtrHead h, MtrOutput& out) const;

  struct Head {
    Tensor query;  // (D, 1)
    nn::Linear hidden, out;
  };

  MtrConfig cfg_;
  ParameterSet params_;
  Tensor tok_emb_, pos_emb_;
  std::vector<nn::Block> encoder_;
  nn::LayerNorm ln_enc_;
  std::array<Head, kMtrHeads.size()> heads_;
  Tensor asr_emb_, asr_pos_;
  std::vector<nn::Block> decoder_;
  nn::LayerNorm ln_dec_;
  nn::Linear asr_out_;
};

}  // namespace diffro
