#pragma once

#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffro/layers.hpp"
#include "diffro/toytask.hpp"

namespace diffro {

struct LmConfig {
  int q = toy::kQ;
  int eos = toy::kEos;
  std::size_t max_text = toy::kMaxTextLen;
  std::size_t max_tokens = toy::kMaxTokens;
  std::size_t width = 64;
  std::size_t heads = 2;
  std::size_t layers = 2;
  std::size_t ffn = 128;

  // Prompt ids: toy text ids, then two slot placeholders.
  static constexpr int kNoInstr = toy::kTextVocab;
  static constexpr int kSep = toy::kTextVocab + 1;
  static constexpr int kTextVocab = toy::kTextVocab + 2;

  std::size_t max_positions() const { return 2 + max_text + 1 + max_tokens; }
  nlohmann::ordered_json to_json() const;
  static LmConfig from_json(const nlohmann::json& j);
  bool operator==(const LmConfig&) const = default;
};

// Causal prefix LM: [emotion slot, quality slot, text..., SEP, tokens...] in
// one stream. Logit row t predicts token t.
class PolicyLM {
 public:
  explicit PolicyLM(const LmConfig& cfg, std::uint64_t seed = 0);
  PolicyLM(const PolicyLM& other);
  PolicyLM& operator=(const PolicyLM&) = delete;

  const LmConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  std::vector<int> prompt_ids(const toy::TextSeq& text) const;

  // Teacher-forced logits (L, Q) for an L-token sequence.
  Tensor forward(const toy::TextSeq& text, std::span<const int> tokens) const;
  // Same with token inputs embedded by expected lookup; rows of `soft` are
  // distributions over Q.
  Tensor forward(const toy::TextSeq& text, const Tensor& soft) const;

  // Incremental decoding with cached keys/values; no graph is recorded.
  class Decoder {
   public:
    // Logits for the next token.
    const std::vector<double>& logits() const { return logits_; }
    void push(int token);
    std::size_t generated() const { return generated_; }

   private:
    friend class PolicyLM;
    Decoder(const PolicyLM& lm, const std::vector<int>& prompt);
    void feed(std::span<const double> embedding_row);

    const PolicyLM* lm_;
    std::size_t pos_ = 0;
    std::size_t generated_ = 0;
    std::vector<std::vector<double>> keys_, values_;
    std::vector<double> logits_;
  };
  Decoder start(const toy::TextSeq& text) const;

  // Ancestral sampling by Gumbel-max on logits / temperature; temperature
  // <= 0 decodes greedily.
  toy::TokenSeq generate(const toy::TextSeq& text, Rng& rng, std::size_t max_len,
                         double temperature) const;

 private:
  void build(std::uint64_t seed);
  Tensor run(const toy::TextSeq& text, const Tensor& token_embeddings,
             std::size_t n_tokens) const;

  LmConfig cfg_;
  ParameterSet params_;
  Tensor text_emb_, tok_emb_, pos_emb_;
  std::vector<nn::Block> blocks_;
  nn::LayerNorm ln_f_;
  nn::Linear out_;
};

}  // namespace diffro
