#include "diffro/optim.hpp"

#include <cmath>
#include <istream>
#include <ostream>

namespace diffro {

Adam::Adam(const ParameterSet& params, AdamConfig cfg) : cfg_(cfg) {
  for (const auto& it : params.items()) {
    m_.emplace_back(it.tensor.size(), 0.0);
    v_.emplace_back(it.tensor.size(), 0.0);
  }
}

void Adam::step(ParameterSet& params) {
  auto& items = params.items();
  if (items.size() != m_.size()) {
    throw std::invalid_argument("adam: built for " + std::to_string(m_.size()) +
                                " parameters, stepping " + std::to_string(items.size()));
  }
  double sq = 0.0;
  for (const auto& it : items) {
    for (double g : it.tensor.grad()) {
      if (!std::isfinite(g)) {
        throw NonFiniteGradient("adam: non-finite gradient in parameter " + it.name);
      }
      sq += g * g;
    }
  }
  double factor = 1.0;
  if (cfg_.clip_norm > 0.0 && std::sqrt(sq) > cfg_.clip_norm) {
    factor = cfg_.clip_norm / std::sqrt(sq);
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t p = 0; p < items.size(); ++p) {
    auto& t = items[p].tensor;
    if (!t.has_grad()) continue;
    auto w = t.mutable_data();
    auto g = t.grad();
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] * factor;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
      w[i] -= cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
    }
  }
}

void Adam::write(std::ostream& os) const {
  io::write_f64(os, cfg_.lr);
  io::write_f64(os, cfg_.beta1);
  io::write_f64(os, cfg_.beta2);
  io::write_f64(os, cfg_.eps);
  io::write_f64(os, cfg_.clip_norm);
  io::write_u64(os, t_);
  io::write_u64(os, m_.size());
  for (std::size_t i = 0; i < m_.size(); ++i) {
    io::write_f64s(os, m_[i]);
    io::write_f64s(os, v_[i]);
  }
}

void Adam::read(std::istream& is) {
  cfg_.lr = io::read_f64(is);
  cfg_.beta1 = io::read_f64(is);
  cfg_.beta2 = io::read_f64(is);
  cfg_.eps = io::read_f64(is);
  cfg_.clip_norm = io::read_f64(is);
  t_ = io::read_u64(is);
  const auto n = io::read_u64(is);
  if (n != m_.size()) {
    throw std::invalid_argument("optimizer state for " + std::to_string(n) +
                                " parameters, expected " + std::to_string(m_.size()));
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto m = io::read_f64s(is);
    auto v = io::read_f64s(is);
    if (m.size() != m_[i].size() || v.size() != v_[i].size()) {
      throw std::invalid_argument("optimizer moment size mismatch at parameter " +
                                  std::to_string(i));
    }
    m_[i] = std::move(m);
    v_[i] = std::move(v);
  }
}

}  // namespace diffro
