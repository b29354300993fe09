#pragma once

#include <span>
#include <vector>

#include "diffro/tensor.hpp"

namespace diffro {

// Elementwise binary ops accept equal shapes, a row vector (shape (C) or
// (1, C)) broadcast over the rows of an (R, C) left operand, or a one-element
// right operand.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log_sigmoid(const Tensor& a);
Tensor gelu(const Tensor& a);

// Row-wise over the last dimension.
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// Row gather: out[i] = table[ids[i]].
Tensor embedding(const Tensor& table, std::span<const int> ids);
// Probability-weighted lookup: (L, V) x (V, D). Degenerates to embedding()
// bitwise for one-hot rows.
Tensor expected_embedding(const Tensor& probs, const Tensor& table);

// q k^T * scale with future positions (j > i) set to -inf when causal.
Tensor attention_scores(const Tensor& q, const Tensor& k, double scale,
                        bool causal);
// Fused multi-head scaled dot-product attention over (L, D) projections.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 std::size_t heads, bool causal);

// Mean over rows of -log softmax(logits)[target].
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);
// out[i] = a[i, ids[i]], shape (R).
Tensor pick(const Tensor& a, std::span<const int> ids);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Sum over the last dimension: (R, C) -> (R).
Tensor sum_rows(const Tensor& a);

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& a, Shape shape);

// Forward value is `hard`; the backward pass routes the gradient to `soft`.
Tensor straight_through(const Tensor& soft, const Tensor& hard);

Tensor one_hot(std::span<const int> ids, std::size_t classes);

}  // namespace diffro
