#include "diffro/policy_lm.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

namespace diffro {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

std::vector<double> linear_row(std::span<const double> x, const nn::Linear& l) {
  const auto in = static_cast<Eigen::Index>(l.w.rows());
  const auto out = static_cast<Eigen::Index>(l.w.cols());
  Eigen::Map<const RowMat> w(l.w.data().data(), in, out);
  Eigen::Map<const RowVec> xv(x.data(), in);
  Eigen::Map<const RowVec> b(l.b.data().data(), out);
  std::vector<double> y(static_cast<std::size_t>(out));
  Eigen::Map<RowVec>(y.data(), out) = xv * w + b;
  return y;
}

std::vector<double> layer_norm_row(std::span<const double> x, const nn::LayerNorm& ln) {
  const std::size_t c = x.size();
  double mu = 0.0;
  for (double v : x) mu += v;
  mu /= static_cast<double>(c);
  double var = 0.0;
  for (double v : x) var += (v - mu) * (v - mu);
  var /= static_cast<double>(c);
  const double rstd = 1.0 / std::sqrt(var + 1e-5);
  std::vector<double> y(c);
  for (std::size_t j = 0; j < c; ++j) {
    y[j] = (x[j] - mu) * rstd * ln.gain.data()[j] + ln.bias.data()[j];
  }
  return y;
}

double gelu_scalar(double x) {
  return 0.5 * x * (1.0 + std::tanh(0.7978845608028654 * (x + 0.044715 * x * x * x)));
}

}  // namespace

nlohmann::ordered_json LmConfig::to_json() const {
  return {{"q", q},           {"eos", eos},       {"max_text", max_text},
          {"max_tokens", max_tokens}, {"width", width}, {"heads", heads},
          {"layers", layers}, {"ffn", ffn}};
}

LmConfig LmConfig::from_json(const nlohmann::json& j) {
  LmConfig c;
  c.q = j.value("q", c.q);
  c.eos = j.value("eos", c.eos);
  c.max_text = j.value("max_text", c.max_text);
  c.max_tokens = j.value("max_tokens", c.max_tokens);
  c.width = j.value("width", c.width);
  c.heads = j.value("heads", c.heads);
  c.layers = j.value("layers", c.layers);
  c.ffn = j.value("ffn", c.ffn);
  if (c.eos < 0 || c.eos >= c.q) throw std::invalid_argument("lm config: eos outside vocabulary");
  if (c.heads == 0 || c.width % c.heads) {
    throw std::invalid_argument("lm config: width not divisible by heads");
  }
  return c;
}

PolicyLM::PolicyLM(const LmConfig& cfg, std::uint64_t seed) : cfg_(cfg) { build(seed); }

PolicyLM::PolicyLM(const PolicyLM& other) : cfg_(other.cfg_) {
  build(0);
  params_.copy_from(other.params_);
}

void PolicyLM::build(std::uint64_t seed) {
  Rng rng(seed, stream_id("policy_lm.init"));
  const std::size_t d = cfg_.width;
  text_emb_ = params_.add_normal("text_emb", {LmConfig::kTextVocab, d}, 0.1, rng);
  tok_emb_ = params_.add_normal("tok_emb", {static_cast<std::size_t>(cfg_.q), d}, 0.1, rng);
  pos_emb_ = params_.add_normal("pos_emb", {cfg_.max_positions(), d}, 0.1, rng);
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    blocks_.push_back(nn::make_block(params_, "block" + std::to_string(l), d, cfg_.heads,
                                     cfg_.ffn, cfg_.layers, true, false, rng));
  }
  ln_f_ = nn::make_layer_norm(params_, "ln_f", d);
  // Zero projection: the untrained model predicts the uniform distribution.
  out_ = nn::make_linear(params_, "out", d, static_cast<std::size_t>(cfg_.q), 0.0, rng);
}

std::vector<int> PolicyLM::prompt_ids(const toy::TextSeq& text) const {
  text.validate();
  if (text.symbols.size() > cfg_.max_text) {
    throw std::invalid_argument("policy lm: text length " + std::to_string(text.symbols.size()) +
                                " exceeds " + std::to_string(cfg_.max_text));
  }
  std::vector<int> ids;
  ids.reserve(text.symbols.size() + 3);
  ids.push_back(text.emotion_instr ? toy::kEmotionInstrBase + static_cast<int>(*text.emotion_instr)
                                   : LmConfig::kNoInstr);
  ids.push_back(text.quality_instr ? toy::kQualityInstrBase + *text.quality_instr - 1
                                   : LmConfig::kNoInstr);
  ids.insert(ids.end(), text.symbols.begin(), text.symbols.end());
  ids.push_back(LmConfig::kSep);
  return ids;
}

Tensor PolicyLM::run(const toy::TextSeq& text, const Tensor& token_embeddings,
                     std::size_t n_tokens) const {
  const auto prompt = prompt_ids(text);
  const std::size_t p = prompt.size();
  const std::size_t total = p + n_tokens - 1;
  if (n_tokens == 0 || n_tokens > cfg_.max_tokens || total > cfg_.max_positions()) {
    throw std::invalid_argument("policy lm: sequence of " + std::to_string(n_tokens) +
                                " tokens after a " + std::to_string(p) +
                                "-symbol prompt exceeds limits (max tokens " +
                                std::to_string(cfg_.max_tokens) + ")");
  }
  Tensor x = embedding(text_emb_, prompt);
  if (n_tokens > 1) x = concat_rows({x, token_embeddings});
  x = add(x, slice_rows(pos_emb_, 0, total));
  for (const auto& b : blocks_) x = b(x);
  return out_(ln_f_(slice_rows(x, p - 1, total)));
}

Tensor PolicyLM::forward(const toy::TextSeq& text, std::span<const int> tokens) const {
  if (tokens.empty()) throw std::invalid_argument("policy lm: empty token sequence");
  Tensor emb;
  if (tokens.size() > 1) emb = embedding(tok_emb_, tokens.first(tokens.size() - 1));
  return run(text, emb, tokens.size());
}

Tensor PolicyLM::forward(const toy::TextSeq& text, const Tensor& soft) const {
  if (soft.rank() != 2 || soft.cols() != static_cast<std::size_t>(cfg_.q) || soft.rows() == 0) {
    throw ShapeError("policy lm: soft tokens must be (L, " + std::to_string(cfg_.q) +
                     "), got " + to_string(soft.shape()));
  }
  const std::size_t l = soft.rows();
  Tensor emb;
  if (l > 1) emb = expected_embedding(slice_rows(soft, 0, l - 1), tok_emb_);
  return run(text, emb, l);
}

PolicyLM::Decoder::Decoder(const PolicyLM& lm, const std::vector<int>& prompt)
    : lm_(&lm), keys_(lm.cfg_.layers), values_(lm.cfg_.layers) {
  const std::size_t d = lm.cfg_.width;
  for (int id : prompt) {
    feed(lm.text_emb_.data().subspan(static_cast<std::size_t>(id) * d, d));
  }
}

void PolicyLM::Decoder::push(int token) {
  const auto& lm = *lm_;
  if (token < 0 || token >= lm.cfg_.q) {
    throw std::out_of_range("decoder: token " + std::to_string(token) + " outside vocabulary");
  }
  if (generated_ + 1 >= lm.cfg_.max_tokens) {
    throw std::length_error("decoder: token budget exhausted");
  }
  const std::size_t d = lm.cfg_.width;
  feed(lm.tok_emb_.data().subspan(static_cast<std::size_t>(token) * d, d));
  ++generated_;
}

void PolicyLM::Decoder::feed(std::span<const double> embedding_row) {
  const auto& lm = *lm_;
  const std::size_t d = lm.cfg_.width;
  if (pos_ >= lm.cfg_.max_positions()) throw std::length_error("decoder: out of positions");
  std::vector<double> x(embedding_row.begin(), embedding_row.end());
  const auto pe = lm.pos_emb_.data().subspan(pos_ * d, d);
  for (std::size_t j = 0; j < d; ++j) x[j] += pe[j];

  const std::size_t heads = lm.cfg_.heads;
  const std::size_t dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t l = 0; l < lm.blocks_.size(); ++l) {
    const auto& b = lm.blocks_[l];
    const auto h = layer_norm_row(x, b.ln_self);
    const auto q = linear_row(h, b.self_attn.q);
    const auto k = linear_row(h, b.self_attn.k);
    const auto v = linear_row(h, b.self_attn.v);
    auto& kc = keys_[l];
    auto& vc = values_[l];
    kc.insert(kc.end(), k.begin(), k.end());
    vc.insert(vc.end(), v.begin(), v.end());
    const std::size_t n = pos_ + 1;
    std::vector<double> att(d, 0.0), p(n);
    for (std::size_t hh = 0; hh < heads; ++hh) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t t = 0; t < dh; ++t) s += q[hh * dh + t] * kc[j * d + hh * dh + t];
        p[j] = s * sc;
        mx = std::max(mx, p[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) z += (p[j] = std::exp(p[j] - mx));
      for (std::size_t j = 0; j < n; ++j) {
        const double w = p[j] / z;
        for (std::size_t t = 0; t < dh; ++t) att[hh * dh + t] += w * vc[j * d + hh * dh + t];
      }
    }
    const auto o = linear_row(att, b.self_attn.o);
    for (std::size_t j = 0; j < d; ++j) x[j] += o[j];
    auto up = linear_row(layer_norm_row(x, b.ln_ff), b.ff.up);
    for (double& u : up) u = gelu_scalar(u);
    const auto down = linear_row(up, b.ff.down);
    for (std::size_t j = 0; j < d; ++j) x[j] += down[j];
  }
  logits_ = linear_row(layer_norm_row(x, lm.ln_f_), lm.out_);
  ++pos_;
}

PolicyLM::Decoder PolicyLM::start(const toy::TextSeq& text) const {
  return Decoder(*this, prompt_ids(text));
}

toy::TokenSeq PolicyLM::generate(const toy::TextSeq& text, Rng& rng, std::size_t max_len,
                                 double temperature) const {
  max_len = std::min(max_len, cfg_.max_tokens);
  toy::TokenSeq out;
  if (max_len == 0) return out;
  Decoder dec = start(text);
  while (true) {
    const auto& lg = dec.logits();
    int best = 0;
    double best_v = -std::numeric_limits<double>::infinity();
    for (int qi = 0; qi < cfg_.q; ++qi) {
      const double v = temperature > 0.0 ? lg[qi] / temperature + rng.gumbel() : lg[qi];
      if (v > best_v) {
        best_v = v;
        best = qi;
      }
    }
    out.push_back(best);
    if (best == cfg_.eos || out.size() >= max_len) break;
    dec.push(best);
  }
  return out;
}

}  // namespace diffro
