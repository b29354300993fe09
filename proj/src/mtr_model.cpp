#include "diffro/mtr_model.hpp"

#include <cmath>

namespace diffro {

std::string_view head_name(MtrHead h) {
  switch (h) {
    case MtrHead::emotion: return "emotion";
    case MtrHead::gender: return "gender";
    case MtrHead::quality: return "quality";
    case MtrHead::rate: return "rate";
    case MtrHead::events: return "events";
  }
  return "?";
}

namespace {

std::size_t head_outputs(MtrHead h) {
  switch (h) {
    case MtrHead::emotion: return toy::kNumEmotions;
    case MtrHead::gender: return toy::kNumGenders;
    case MtrHead::quality: return toy::kNumQuality;
    case MtrHead::rate: return 1;
    case MtrHead::events: return 2;
  }
  return 0;
}

}  // namespace

nlohmann::ordered_json MtrConfig::to_json() const {
  return {{"q", q},
          {"max_tokens", max_tokens},
          {"max_text", max_text},
          {"width", width},
          {"heads", heads},
          {"enc_layers", enc_layers},
          {"dec_layers", dec_layers},
          {"ffn", ffn},
          {"head_hidden", head_hidden}};
}

MtrConfig MtrConfig::from_json(const nlohmann::json& j) {
  MtrConfig c;
  c.q = j.value("q", c.q);
  c.max_tokens = j.value("max_tokens", c.max_tokens);
  c.max_text = j.value("max_text", c.max_text);
  c.width = j.value("width", c.width);
  c.heads = j.value("heads", c.heads);
  c.enc_layers = j.value("enc_layers", c.enc_layers);
  c.dec_layers = j.value("dec_layers", c.dec_layers);
  c.ffn = j.value("ffn", c.ffn);
  c.head_hidden = j.value("head_hidden", c.head_hidden);
  if (c.heads == 0 || c.width % c.heads) {
    throw std::invalid_argument("mtr config: width not divisible by heads");
  }
  return c;
}

MtrModel::MtrModel(const MtrConfig& cfg, std::uint64_t seed) : cfg_(cfg) { build(seed); }

MtrModel::MtrModel(const MtrModel& other) : cfg_(other.cfg_) {
  build(0);
  params_.copy_from(other.params_);
}

void MtrModel::build(std::uint64_t seed) {
  Rng rng(seed, stream_id("mtr.init"));
  const std::size_t d = cfg_.width;
  const double s_in = 1.0 / std::sqrt(static_cast<double>(d));
  tok_emb_ = params_.add_normal("tok_emb", {static_cast<std::size_t>(cfg_.q), d}, 0.1, rng);
  pos_emb_ = params_.add_normal("pos_emb", {cfg_.max_tokens, d}, 0.1, rng);
  for (std::size_t l = 0; l < cfg_.enc_layers; ++l) {
    encoder_.push_back(nn::make_block(params_, "enc" + std::to_string(l), d, cfg_.heads,
                                      cfg_.ffn, cfg_.enc_layers, false, false, rng));
  }
  ln_enc_ = nn::make_layer_norm(params_, "ln_enc", d);
  for (std::size_t i = 0; i < kMtrHeads.size(); ++i) {
    const std::string n = "head." + std::string(head_name(kMtrHeads[i]));
    auto& h = heads_[i];
    h.query = params_.add_normal(n + ".query", {d, 1}, s_in, rng);
    h.hidden = nn::make_linear(params_, n + ".hidden", d, cfg_.head_hidden, s_in, rng);
    // Zeroed output layer: untrained heads are uniform.
    h.out = nn::make_linear(params_, n + ".out", cfg_.head_hidden,
                            head_outputs(kMtrHeads[i]), 0.0, rng);
  }
  asr_emb_ = params_.add_normal("asr.emb", {MtrConfig::kAsrVocab, d}, 0.1, rng);
  asr_pos_ = params_.add_normal("asr.pos", {cfg_.max_text + 1, d}, 0.1, rng);
  for (std::size_t l = 0; l < cfg_.dec_layers; ++l) {
    decoder_.push_back(nn::make_block(params_, "asr.dec" + std::to_string(l), d, cfg_.heads,
                                      cfg_.ffn, cfg_.dec_layers, true, true, rng));
  }
  ln_dec_ = nn::make_layer_norm(params_, "asr.ln", d);
  asr_out_ = nn::make_linear(params_, "asr.out", d, MtrConfig::kAsrVocab, 0.0, rng);
}

Tensor MtrModel::encode(const Tensor& tokens) const {
  if (tokens.rank() != 2 || tokens.rows() == 0) {
    throw ShapeError("mtr: token input must be a non-empty (T, Q) matrix, got " +
                     (tokens.defined() ? to_string(tokens.shape()) : std::string("undefined")));
  }
  if (tokens.cols() != static_cast<std::size_t>(cfg_.q)) {
    throw ShapeError("mtr: token rows have " + std::to_string(tokens.cols()) +
                     " classes, expected " + std::to_string(cfg_.q));
  }
  if (tokens.rows() > cfg_.max_tokens) {
    throw std::invalid_argument("mtr: " + std::to_string(tokens.rows()) +
                                " tokens exceed " + std::to_string(cfg_.max_tokens));
  }
  Tensor x = add(expected_embedding(tokens, tok_emb_), slice_rows(pos_emb_, 0, tokens.rows()));
  for (const auto& b : encoder_) x = b(x);
  return ln_enc_(x);
}

Tensor MtrModel::pool(const Tensor& encoded, MtrHead h, MtrOutput& out) const {
  const auto& head = heads_[static_cast<std::size_t>(h)];
  Tensor weights = softmax(transpose(matmul(encoded, head.query)));
  out.pooling[std::string(head_name(h))] = weights;
  return head.out(gelu(head.hidden(matmul(weights, encoded))));
}

MtrOutput MtrModel::forward(const Tensor& tokens, const toy::TextSeq* text) const {
  MtrOutput out;
  out.encoded = encode(tokens);
  out.emotion_logits = pool(out.encoded, MtrHead::emotion, out);
  out.gender_logits = pool(out.encoded, MtrHead::gender, out);
  out.quality_logits = pool(out.encoded, MtrHead::quality, out);
  out.rate = sigmoid(pool(out.encoded, MtrHead::rate, out));
  out.event_logits = pool(out.encoded, MtrHead::events, out);
  if (text != nullptr && !text->symbols.empty()) {
    out.asr_log_probs = asr_log_probs(out.encoded, text->symbols, false);
  }
  return out;
}

MtrOutput MtrModel::forward(std::span<const int> tokens, const toy::TextSeq* text) const {
  return forward(one_hot(tokens, static_cast<std::size_t>(cfg_.q)), text);
}

Tensor MtrModel::asr_log_probs(const Tensor& encoded, std::span<const int> symbols,
                               bool with_eos) const {
  if (symbols.empty() && !with_eos) throw std::invalid_argument("mtr: empty ASR target");
  if (symbols.size() > cfg_.max_text) {
    throw std::invalid_argument("mtr: ASR target of " + std::to_string(symbols.size()) +
                                " symbols exceeds " + std::to_string(cfg_.max_text));
  }
  std::vector<int> in{MtrConfig::kBos};
  const std::size_t rows = symbols.size() + (with_eos ? 1 : 0);
  for (std::size_t i = 0; i + 1 < rows; ++i) in.push_back(symbols[i]);
  Tensor x = add(embedding(asr_emb_, in), slice_rows(asr_pos_, 0, rows));
  for (const auto& b : decoder_) x = b(x, &encoded);
  return log_softmax(asr_out_(ln_dec_(x)));
}

std::vector<int> MtrModel::asr_greedy(const Tensor& encoded) const {
  NoGradGuard ng;
  std::vector<int> out;
  // Recomputes the prefix each step; ASR decoding is evaluation-only.
  while (out.size() < cfg_.max_text) {
    Tensor lp = asr_log_probs(encoded, out, true);
    const auto row = lp.data().subspan(out.size() * MtrConfig::kAsrVocab, MtrConfig::kAsrVocab);
    int best = 0;
    for (int i = 1; i < toy::kAlphabet + 1 + 1; ++i) {
      if (row[i] > row[best]) best = i;
    }
    if (best == MtrConfig::kAsrEos || best == MtrConfig::kBos) break;
    out.push_back(best);
  }
  return out;
}

}  // namespace diffro
