#pragma once

#include <functional>
#include <string>
#include <vector>

#include "diffro/params.hpp"
#include "diffro/tensor.hpp"

namespace diffro {

struct GradCheckResult {
  // max over coordinates of |analytic - central difference| / max(1, |analytic|)
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  // Coordinates where f was non-finite at a perturbed point.
  std::vector<std::string> non_finite;

  bool ok() const { return non_finite.empty(); }
};

// Checks d f / d point for a scalar-valued f. `point` must be a leaf; it is
// restored after each perturbation.
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f,
                           Tensor point, double h = 1e-6);

// Same check over every coordinate of a parameter set, for a loss closure that
// rebuilds its graph on each call.
GradCheckResult grad_check(const std::function<Tensor()>& loss,
                           ParameterSet& params, double h = 1e-6);

}  // namespace diffro
