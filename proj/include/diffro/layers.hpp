#pragma once

#include <string>

#include "diffro/ops.hpp"
#include "diffro/params.hpp"

namespace diffro::nn {

struct Linear {
  Tensor w;  // (in, out)
  Tensor b;  // (out)
  Tensor operator()(const Tensor& x) const { return add(matmul(x, w), b); }
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
};

struct MultiHeadAttention {
  Linear q, k, v, o;
  std::size_t heads = 1;
  Tensor self(const Tensor& x, bool causal) const;
  Tensor cross(const Tensor& x, const Tensor& memory) const;
};

struct FeedForward {
  Linear up, down;
  Tensor operator()(const Tensor& x) const { return down(gelu(up(x))); }
};

// Pre-norm residual block; an optional cross-attention sublayer sits between
// self-attention and the feed-forward.
struct Block {
  LayerNorm ln_self, ln_cross, ln_ff;
  MultiHeadAttention self_attn, cross_attn;
  FeedForward ff;
  bool causal = false;
  bool has_cross = false;

  Tensor operator()(const Tensor& x, const Tensor* memory = nullptr) const;
};

// `stddev` 0 zero-initializes the weights.
Linear make_linear(ParameterSet& ps, const std::string& name, std::size_t in,
                   std::size_t out, double stddev, Rng& rng);
LayerNorm make_layer_norm(ParameterSet& ps, const std::string& name, std::size_t width);
Block make_block(ParameterSet& ps, const std::string& name, std::size_t width,
                 std::size_t heads, std::size_t ffn, std::size_t depth, bool causal,
                 bool cross, Rng& rng);

}  // namespace diffro::nn
