#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <vector>

#include "diffro/params.hpp"

namespace diffro {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Global L2 clip on the gradient; <= 0 disables.
  double clip_norm = 0.0;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Adam with bias correction. Moment buffers follow the parameter order of the
// ParameterSet it was built for.
class Adam {
 public:
  explicit Adam(const ParameterSet& params, AdamConfig cfg = {});

  // Applies one update from the accumulated grads. Rejects the whole step,
  // leaving every parameter untouched, if any gradient entry is non-finite.
  void step(ParameterSet& params);

  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  std::uint64_t steps() const { return t_; }

  void write(std::ostream& os) const;
  void read(std::istream& is);

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace diffro
