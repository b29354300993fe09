#include "diffro/layers.hpp"

#include <cmath>

namespace diffro::nn {

Tensor MultiHeadAttention::self(const Tensor& x, bool causal) const {
  return o(attention(q(x), k(x), v(x), heads, causal));
}

Tensor MultiHeadAttention::cross(const Tensor& x, const Tensor& memory) const {
  return o(attention(q(x), k(memory), v(memory), heads, false));
}

Tensor Block::operator()(const Tensor& x, const Tensor* memory) const {
  Tensor h = add(x, self_attn.self(ln_self(x), causal));
  if (has_cross) {
    if (memory == nullptr) throw std::invalid_argument("block: cross-attention needs memory");
    h = add(h, cross_attn.cross(ln_cross(h), *memory));
  }
  return add(h, ff(ln_ff(h)));
}

Linear make_linear(ParameterSet& ps, const std::string& name, std::size_t in,
                   std::size_t out, double stddev, Rng& rng) {
  Linear l;
  l.w = ps.add_normal(name + ".w", {in, out}, stddev, rng);
  l.b = ps.add_constant(name + ".b", {out}, 0.0);
  return l;
}

LayerNorm make_layer_norm(ParameterSet& ps, const std::string& name, std::size_t width) {
  return {ps.add_constant(name + ".gain", {width}, 1.0),
          ps.add_constant(name + ".bias", {width}, 0.0)};
}

Block make_block(ParameterSet& ps, const std::string& name, std::size_t width,
                 std::size_t heads, std::size_t ffn, std::size_t depth, bool causal,
                 bool cross, Rng& rng) {
  const double s_in = 1.0 / std::sqrt(static_cast<double>(width));
  // Residual-branch outputs shrink with depth.
  const double s_out = s_in / std::sqrt(2.0 * static_cast<double>(depth));
  Block b;
  b.causal = causal;
  b.has_cross = cross;
  auto attn = [&](const std::string& n) {
    MultiHeadAttention a;
    a.heads = heads;
    a.q = make_linear(ps, n + ".q", width, width, s_in, rng);
    a.k = make_linear(ps, n + ".k", width, width, s_in, rng);
    a.v = make_linear(ps, n + ".v", width, width, s_in, rng);
    a.o = make_linear(ps, n + ".o", width, width, s_out, rng);
    return a;
  };
  b.ln_self = make_layer_norm(ps, name + ".ln_self", width);
  b.self_attn = attn(name + ".self");
  if (cross) {
    b.ln_cross = make_layer_norm(ps, name + ".ln_cross", width);
    b.cross_attn = attn(name + ".cross");
  }
  b.ln_ff = make_layer_norm(ps, name + ".ln_ff", width);
  b.ff.up = make_linear(ps, name + ".ff.up", width, ffn, s_in, rng);
  b.ff.down = make_linear(ps, name + ".ff.down", ffn, width,
                          s_out * std::sqrt(static_cast<double>(width) / static_cast<double>(ffn)),
                          rng);
  return b;
}

}  // namespace diffro::nn
