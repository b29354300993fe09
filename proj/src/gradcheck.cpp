#include "diffro/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace diffro {

namespace {

void check_coords(const std::function<double()>& eval, Tensor& t,
                  const std::vector<double>& analytic, const std::string& label,
                  double h, GradCheckResult& out) {
  auto w = t.mutable_data();
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double orig = w[i];
    w[i] = orig + h;
    const double fp = eval();
    w[i] = orig - h;
    const double fm = eval();
    w[i] = orig;
    ++out.coordinates;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      out.non_finite.push_back(label + "[" + std::to_string(i) + "]");
      continue;
    }
    const double numeric = (fp - fm) / (2.0 * h);
    const double err =
        std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    out.max_rel_error = std::max(out.max_rel_error, err);
  }
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f,
                           Tensor point, double h) {
  if (!point.is_leaf()) throw std::invalid_argument("grad_check: point must be a leaf");
  const bool had = point.requires_grad();
  point.set_requires_grad(true);
  point.zero_grad();
  backward(f(point));
  std::vector<double> analytic(point.size(), 0.0);
  if (point.has_grad()) std::ranges::copy(point.grad(), analytic.begin());
  GradCheckResult out;
  {
    NoGradGuard ng;
    check_coords([&] { return f(point).item(); }, point, analytic, "x", h, out);
  }
  point.zero_grad();
  point.set_requires_grad(had);
  return out;
}

GradCheckResult grad_check(const std::function<Tensor()>& loss,
                           ParameterSet& params, double h) {
  params.zero_grad();
  backward(loss());
  GradCheckResult out;
  NoGradGuard ng;
  for (auto& it : params.items()) {
    std::vector<double> analytic(it.tensor.size(), 0.0);
    if (it.tensor.has_grad()) std::ranges::copy(it.tensor.grad(), analytic.begin());
    check_coords([&] { return loss().item(); }, it.tensor, analytic, it.name, h, out);
  }
  params.zero_grad();
  return out;
}

}  // namespace diffro
