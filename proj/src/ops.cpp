#include "diffro/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

namespace diffro {

using detail::make_result;
using detail::Node;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using StridedConst = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using StridedMut = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;

ConstMap cmap(const std::vector<double>& v, std::size_t r, std::size_t c) {
  return ConstMap(v.data(), static_cast<Eigen::Index>(r),
                  static_cast<Eigen::Index>(c));
}

MutMap mmap(std::span<double> v, std::size_t r, std::size_t c) {
  return MutMap(v.data(), static_cast<Eigen::Index>(r),
                static_cast<Eigen::Index>(c));
}

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " +
                   to_string(a.shape()) + " and " + to_string(b.shape()));
}

void require_matrix(const char* op, const Tensor& a) {
  if (a.rank() > 2) {
    throw ShapeError(std::string(op) + ": expected rank <= 2, got " +
                     to_string(a.shape()));
  }
}

enum class Broadcast { Same, Row, Scalar };

Broadcast classify(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::Same;
  if (b.size() == 1) return Broadcast::Scalar;
  if (a.rank() == 2 && (b.rank() == 1 || (b.rank() == 2 && b.rows() == 1)) &&
      b.cols() == a.cols()) {
    return Broadcast::Row;
  }
  shape_fail(op, a, b);
}

double bval(const std::vector<double>& b, Broadcast kind, std::size_t i,
            std::size_t cols) {
  switch (kind) {
    case Broadcast::Same: return b[i];
    case Broadcast::Row: return b[i % cols];
    case Broadcast::Scalar: return b[0];
  }
  return 0.0;
}

void bacc(std::span<double> gb, Broadcast kind, std::size_t i, std::size_t cols,
          double g) {
  switch (kind) {
    case Broadcast::Same: gb[i] += g; break;
    case Broadcast::Row: gb[i % cols] += g; break;
    case Broadcast::Scalar: gb[0] += g; break;
  }
}

template <typename F, typename DA, typename DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DA da,
              DB db) {
  const Broadcast kind = classify(op, a, b);
  const std::size_t n = a.size();
  const std::size_t cols = a.rank() == 0 ? 1 : a.cols();
  std::vector<double> out(n);
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bval(bv, kind, i, cols));
  Node* pa = a.node();
  Node* pb = b.node();
  return make_result(a.shape(), std::move(out), {a, b}, op,
                     [pa, pb, kind, cols, da, db](const Node& self) {
                       const auto& g = self.grad;
                       if (pa->requires_grad) {
                         auto ga = pa->ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           ga[i] += g[i] * da(pa->value[i],
                                              bval(pb->value, kind, i, cols));
                         }
                       }
                       if (pb->requires_grad) {
                         auto gb = pb->ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           bacc(gb, kind, i, cols,
                                g[i] * db(pa->value[i],
                                          bval(pb->value, kind, i, cols)));
                         }
                       }
                     });
}

template <typename F, typename D>
Tensor unary(const char* op, const Tensor& a, F f, D d) {
  const auto& av = a.node()->value;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  Node* pa = a.node();
  return make_result(a.shape(), std::move(out), {a}, op,
                     [pa, d](const Node& self) {
                       auto ga = pa->ensure_grad();
                       for (std::size_t i = 0; i < ga.size(); ++i) {
                         ga[i] += self.grad[i] * d(pa->value[i], self.value[i]);
                       }
                     });
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double c) {
  return unary(
      "scale", a, [c](double x) { return c * x; },
      [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary(
      "add_scalar", a, [c](double x) { return x + c; },
      [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      "log", a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor tanh(const Tensor& a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor log_sigmoid(const Tensor& a) {
  // log sigma(x) = -softplus(-x), evaluated stably.
  return unary(
      "log_sigmoid", a,
      [](double x) {
        return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
      },
      [](double x, double) { return 1.0 / (1.0 + std::exp(x)); });
}

Tensor gelu(const Tensor& a) {
  return unary(
      "gelu", a,
      [](double x) {
        return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
      },
      [](double x, double) {
        const double u = kGeluC * (x + 0.044715 * x * x * x);
        const double t = std::tanh(u);
        const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
      });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) shape_fail("matmul", a, b);
  std::vector<double> out(m * n);
  mmap(out, m, n).noalias() = cmap(a.node()->value, m, k) * cmap(b.node()->value, k, n);
  Node* pa = a.node();
  Node* pb = b.node();
  return make_result({m, n}, std::move(out), {a, b}, "matmul",
                     [pa, pb, m, k, n](const Node& self) {
                       auto g = cmap(self.grad, m, n);
                       if (pa->requires_grad) {
                         mmap(pa->ensure_grad(), m, k).noalias() +=
                             g * cmap(pb->value, k, n).transpose();
                       }
                       if (pb->requires_grad) {
                         mmap(pb->ensure_grad(), k, n).noalias() +=
                             cmap(pa->value, m, k).transpose() * g;
                       }
                     });
}

Tensor transpose(const Tensor& a) {
  require_matrix("transpose", a);
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  mmap(out, c, r) = cmap(a.node()->value, r, c).transpose();
  Node* pa = a.node();
  return make_result({c, r}, std::move(out), {a}, "transpose",
                     [pa, r, c](const Node& self) {
                       mmap(pa->ensure_grad(), r, c) +=
                           cmap(self.grad, c, r).transpose();
                     });
}

Tensor softmax(const Tensor& a) {
  require_matrix("softmax", a);
  const std::size_t r = a.rows(), c = a.cols();
  const auto& av = a.node()->value;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < r; ++i) {
    const double* x = av.data() + i * c;
    double* y = out.data() + i * c;
    const double mx = *std::max_element(x, x + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < c; ++j) y[j] /= s;
  }
  Node* pa = a.node();
  return make_result(a.shape(), std::move(out), {a}, "softmax",
                     [pa, r, c](const Node& self) {
                       auto ga = pa->ensure_grad();
                       for (std::size_t i = 0; i < r; ++i) {
                         const double* y = self.value.data() + i * c;
                         const double* g = self.grad.data() + i * c;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < c; ++j) dot += g[j] * y[j];
                         for (std::size_t j = 0; j < c; ++j) {
                           ga[i * c + j] += y[j] * (g[j] - dot);
                         }
                       }
                     });
}

Tensor log_softmax(const Tensor& a) {
  require_matrix("log_softmax", a);
  const std::size_t r = a.rows(), c = a.cols();
  const auto& av = a.node()->value;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < r; ++i) {
    const double* x = av.data() + i * c;
    double* y = out.data() + i * c;
    const double mx = *std::max_element(x, x + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(x[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) y[j] = x[j] - lse;
  }
  Node* pa = a.node();
  return make_result(a.shape(), std::move(out), {a}, "log_softmax",
                     [pa, r, c](const Node& self) {
                       auto ga = pa->ensure_grad();
                       for (std::size_t i = 0; i < r; ++i) {
                         const double* y = self.value.data() + i * c;
                         const double* g = self.grad.data() + i * c;
                         double gs = 0.0;
                         for (std::size_t j = 0; j < c; ++j) gs += g[j];
                         for (std::size_t j = 0; j < c; ++j) {
                           ga[i * c + j] += g[j] - std::exp(y[j]) * gs;
                         }
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  require_matrix("layer_norm", x);
  const std::size_t r = x.rows(), c = x.cols();
  if (gain.size() != c) shape_fail("layer_norm", x, gain);
  if (bias.size() != c) shape_fail("layer_norm", x, bias);
  const auto& xv = x.node()->value;
  const auto& gv = gain.node()->value;
  const auto& bv = bias.node()->value;
  std::vector<double> out(xv.size()), xhat(xv.size()), rstd(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double* xi = xv.data() + i * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xi[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= static_cast<double>(c);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (xi[j] - mu) * rstd[i];
      out[i * c + j] = xhat[i * c + j] * gv[j] + bv[j];
    }
  }
  Node* px = x.node();
  Node* pg = gain.node();
  Node* pb = bias.node();
  return make_result(
      x.shape(), std::move(out), {x, gain, bias}, "layer_norm",
      [px, pg, pb, r, c, xhat = std::move(xhat),
       rstd = std::move(rstd)](const Node& self) {
        const auto& g = self.grad;
        if (pg->requires_grad) {
          auto gg = pg->ensure_grad();
          for (std::size_t i = 0; i < r * c; ++i) gg[i % c] += g[i] * xhat[i];
        }
        if (pb->requires_grad) {
          auto gb = pb->ensure_grad();
          for (std::size_t i = 0; i < r * c; ++i) gb[i % c] += g[i];
        }
        if (px->requires_grad) {
          auto gx = px->ensure_grad();
          const auto& gain_v = pg->value;
          const double inv_c = 1.0 / static_cast<double>(c);
          for (std::size_t i = 0; i < r; ++i) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double d = g[i * c + j] * gain_v[j];
              s1 += d;
              s2 += d * xhat[i * c + j];
            }
            for (std::size_t j = 0; j < c; ++j) {
              const double d = g[i * c + j] * gain_v[j];
              gx[i * c + j] +=
                  rstd[i] * (d - inv_c * s1 - xhat[i * c + j] * inv_c * s2);
            }
          }
        }
      });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_matrix("embedding", table);
  const std::size_t v = table.rows(), d = table.cols();
  std::vector<int> idv(ids.begin(), ids.end());
  std::vector<double> out(idv.size() * d);
  const auto& tv = table.node()->value;
  for (std::size_t i = 0; i < idv.size(); ++i) {
    if (idv[i] < 0 || static_cast<std::size_t>(idv[i]) >= v) {
      throw std::out_of_range("embedding: id " + std::to_string(idv[i]) +
                              " outside table of " + std::to_string(v) + " rows");
    }
    std::copy_n(tv.data() + idv[i] * d, d, out.data() + i * d);
  }
  Node* pt = table.node();
  const std::size_t n = idv.size();
  return make_result({n, d}, std::move(out), {table}, "embedding",
                     [pt, d, idv = std::move(idv)](const Node& self) {
                       auto gt = pt->ensure_grad();
                       for (std::size_t i = 0; i < idv.size(); ++i) {
                         for (std::size_t j = 0; j < d; ++j) {
                           gt[idv[i] * d + j] += self.grad[i * d + j];
                         }
                       }
                     });
}

Tensor expected_embedding(const Tensor& probs, const Tensor& table) {
  if (probs.cols() != table.rows()) shape_fail("expected_embedding", probs, table);
  return matmul(probs, table);
}

Tensor attention_scores(const Tensor& q, const Tensor& k, double scale_factor,
                        bool causal) {
  if (q.cols() != k.cols()) shape_fail("attention_scores", q, k);
  if (causal && q.rows() != k.rows()) shape_fail("attention_scores", q, k);
  Tensor s = scale(matmul(q, transpose(k)), scale_factor);
  if (!causal) return s;
  const std::size_t l = q.rows();
  std::vector<double> mask(l * l, 0.0);
  for (std::size_t i = 0; i < l; ++i) {
    for (std::size_t j = i + 1; j < l; ++j) {
      mask[i * l + j] = -std::numeric_limits<double>::infinity();
    }
  }
  return add(s, Tensor::from({l, l}, std::move(mask)));
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 std::size_t heads, bool causal) {
  require_matrix("attention", q);
  const std::size_t lq = q.rows(), lk = k.rows(), d = q.cols();
  if (k.cols() != d) shape_fail("attention", q, k);
  if (v.cols() != d || v.rows() != lk) shape_fail("attention", k, v);
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("attention: width " + std::to_string(d) +
                     " not divisible into " + std::to_string(heads) + " heads");
  }
  if (causal && lq != lk) shape_fail("attention", q, k);
  const std::size_t dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto& qv = q.node()->value;
  const auto& kv = k.node()->value;
  const auto& vv = v.node()->value;
  std::vector<double> out(lq * d);
  std::vector<double> probs(heads * lq * lk);
  const auto ld = static_cast<Eigen::Index>(d);
  const auto Lq = static_cast<Eigen::Index>(lq);
  const auto Lk = static_cast<Eigen::Index>(lk);
  const auto Dh = static_cast<Eigen::Index>(dh);
  for (std::size_t h = 0; h < heads; ++h) {
    StridedConst qh(qv.data() + h * dh, Lq, Dh, Eigen::OuterStride<>(ld));
    StridedConst kh(kv.data() + h * dh, Lk, Dh, Eigen::OuterStride<>(ld));
    StridedConst vh(vv.data() + h * dh, Lk, Dh, Eigen::OuterStride<>(ld));
    MutMap p(probs.data() + h * lq * lk, Lq, Lk);
    p.noalias() = (qh * kh.transpose()) * sc;
    for (std::size_t i = 0; i < lq; ++i) {
      double* row = probs.data() + h * lq * lk + i * lk;
      const std::size_t valid = causal ? i + 1 : lk;
      const double mx = *std::max_element(row, row + valid);
      double s = 0.0;
      for (std::size_t j = 0; j < valid; ++j) s += (row[j] = std::exp(row[j] - mx));
      for (std::size_t j = 0; j < valid; ++j) row[j] /= s;
      for (std::size_t j = valid; j < lk; ++j) row[j] = 0.0;
    }
    StridedMut oh(out.data() + h * dh, Lq, Dh, Eigen::OuterStride<>(ld));
    oh.noalias() = p * vh;
  }
  Node* pq = q.node();
  Node* pk = k.node();
  Node* pv = v.node();
  return make_result(
      {lq, d}, std::move(out), {q, k, v}, "attention",
      [pq, pk, pv, heads, lq, lk, d, dh, sc,
       probs = std::move(probs)](const Node& self) {
        const auto ld = static_cast<Eigen::Index>(d);
        const auto Lq = static_cast<Eigen::Index>(lq);
        const auto Lk = static_cast<Eigen::Index>(lk);
        const auto Dh = static_cast<Eigen::Index>(dh);
        std::span<double> gq, gk, gv;
        if (pq->requires_grad) gq = pq->ensure_grad();
        if (pk->requires_grad) gk = pk->ensure_grad();
        if (pv->requires_grad) gv = pv->ensure_grad();
        RowMat dp(Lq, Lk);
        for (std::size_t h = 0; h < heads; ++h) {
          ConstMap p(probs.data() + h * lq * lk, Lq, Lk);
          StridedConst go(self.grad.data() + h * dh, Lq, Dh, Eigen::OuterStride<>(ld));
          StridedConst qh(pq->value.data() + h * dh, Lq, Dh, Eigen::OuterStride<>(ld));
          StridedConst kh(pk->value.data() + h * dh, Lk, Dh, Eigen::OuterStride<>(ld));
          StridedConst vh(pv->value.data() + h * dh, Lk, Dh, Eigen::OuterStride<>(ld));
          if (!gv.empty()) {
            StridedMut gvh(gv.data() + h * dh, Lk, Dh, Eigen::OuterStride<>(ld));
            gvh.noalias() += p.transpose() * go;
          }
          if (gq.empty() && gk.empty()) continue;
          dp.noalias() = go * vh.transpose();
          for (Eigen::Index i = 0; i < Lq; ++i) {
            const double dot = dp.row(i).dot(p.row(i));
            dp.row(i) = p.row(i).cwiseProduct(
                (dp.row(i).array() - dot).matrix());
          }
          if (!gq.empty()) {
            StridedMut gqh(gq.data() + h * dh, Lq, Dh, Eigen::OuterStride<>(ld));
            gqh.noalias() += (dp * kh) * sc;
          }
          if (!gk.empty()) {
            StridedMut gkh(gk.data() + h * dh, Lk, Dh, Eigen::OuterStride<>(ld));
            gkh.noalias() += (dp.transpose() * qh) * sc;
          }
        }
      });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  require_matrix("cross_entropy", logits);
  if (targets.size() != logits.rows()) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) +
                     " targets for logits " + to_string(logits.shape()));
  }
  return neg(mean(pick(log_softmax(logits), targets)));
}

Tensor pick(const Tensor& a, std::span<const int> ids) {
  require_matrix("pick", a);
  const std::size_t r = a.rows(), c = a.cols();
  if (ids.size() != r) {
    throw ShapeError("pick: " + std::to_string(ids.size()) + " ids for " +
                     to_string(a.shape()));
  }
  std::vector<int> idv(ids.begin(), ids.end());
  std::vector<double> out(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (idv[i] < 0 || static_cast<std::size_t>(idv[i]) >= c) {
      throw std::out_of_range("pick: id " + std::to_string(idv[i]) +
                              " outside " + std::to_string(c) + " columns");
    }
    out[i] = a.node()->value[i * c + idv[i]];
  }
  Node* pa = a.node();
  return make_result({r}, std::move(out), {a}, "pick",
                     [pa, c, idv = std::move(idv)](const Node& self) {
                       auto ga = pa->ensure_grad();
                       for (std::size_t i = 0; i < idv.size(); ++i) {
                         ga[i * c + idv[i]] += self.grad[i];
                       }
                     });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;
  Node* pa = a.node();
  return make_result({}, {s}, {a}, "sum", [pa](const Node& self) {
    auto ga = pa->ensure_grad();
    for (double& g : ga) g += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor sum_rows(const Tensor& a) {
  require_matrix("sum_rows", a);
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i] += a.node()->value[i * c + j];
  }
  Node* pa = a.node();
  return make_result({r}, std::move(out), {a}, "sum_rows",
                     [pa, r, c](const Node& self) {
                       auto ga = pa->ensure_grad();
                       for (std::size_t i = 0; i < r; ++i) {
                         for (std::size_t j = 0; j < c; ++j) {
                           ga[i * c + j] += self.grad[i];
                         }
                       }
                     });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  const std::size_t c = parts.front().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_matrix("concat_rows", p);
    if (p.cols() != c) shape_fail("concat_rows", parts.front(), p);
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(total * c);
  std::vector<Node*> nodes;
  for (const auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    nodes.push_back(p.node());
  }
  return make_result({total, c}, std::move(out), parts, "concat_rows",
                     [nodes = std::move(nodes)](const Node& self) {
                       std::size_t off = 0;
                       for (Node* n : nodes) {
                         if (n->requires_grad) {
                           auto g = n->ensure_grad();
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             g[i] += self.grad[off + i];
                           }
                         }
                         off += n->value.size();
                       }
                     });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_matrix("slice_rows", a);
  const std::size_t r = a.rows(), c = a.cols();
  if (begin > end || end > r) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") outside " + to_string(a.shape()));
  }
  std::vector<double> out(a.data().begin() + begin * c, a.data().begin() + end * c);
  Node* pa = a.node();
  return make_result({end - begin, c}, std::move(out), {a}, "slice_rows",
                     [pa, begin, c](const Node& self) {
                       auto ga = pa->ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i) {
                         ga[begin * c + i] += self.grad[i];
                       }
                     });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: " + to_string(a.shape()) + " to " + to_string(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  Node* pa = a.node();
  return make_result(std::move(shape), std::move(out), {a}, "reshape",
                     [pa](const Node& self) {
                       auto ga = pa->ensure_grad();
                       for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
                     });
}

Tensor straight_through(const Tensor& soft, const Tensor& hard) {
  if (soft.shape() != hard.shape()) shape_fail("straight_through", soft, hard);
  std::vector<double> out(hard.data().begin(), hard.data().end());
  Node* ps = soft.node();
  return make_result(soft.shape(), std::move(out), {soft}, "straight_through",
                     [ps](const Node& self) {
                       auto gs = ps->ensure_grad();
                       for (std::size_t i = 0; i < gs.size(); ++i) gs[i] += self.grad[i];
                     });
}

Tensor one_hot(std::span<const int> ids, std::size_t classes) {
  std::vector<double> out(ids.size() * classes, 0.0);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= classes) {
      throw std::out_of_range("one_hot: id " + std::to_string(ids[i]) +
                              " outside " + std::to_string(classes) + " classes");
    }
    out[i * classes + ids[i]] = 1.0;
  }
  return Tensor::from({ids.size(), classes}, std::move(out));
}

}  // namespace diffro
