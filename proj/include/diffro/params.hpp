#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffro/rng.hpp"
#include "diffro/tensor.hpp"

namespace diffro {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Ordered registry of a model's trainable leaves.
class ParameterSet {
 public:
  Tensor& add(std::string name, Tensor t);
  // Gaussian init scaled by `stddev`; zero stddev gives zeros.
  Tensor& add_normal(std::string name, Shape shape, double stddev, Rng& rng);
  Tensor& add_constant(std::string name, Shape shape, double v);

  const Tensor& get(const std::string& name) const;
  std::vector<NamedTensor>& items() { return items_; }
  const std::vector<NamedTensor>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t count() const;

  void zero_grad();
  void set_requires_grad(bool on);

  // Copies values from `other`; names and shapes must match.
  void copy_from(const ParameterSet& other);

  // FNV-1a over names, shapes and raw value bytes, as 16 hex digits.
  std::string hash() const;

  // Portable dump: {name: {"shape": [...], "values": [...]}} row-major.
  nlohmann::ordered_json to_json() const;
  void load_json(const nlohmann::json& j);

  // Native binary form: exact bits of every value.
  void write(std::ostream& os) const;
  void read(std::istream& is);

 private:
  std::vector<NamedTensor> items_;
};

namespace io {
void write_u64(std::ostream& os, std::uint64_t v);
std::uint64_t read_u64(std::istream& is);
void write_f64(std::ostream& os, double v);
double read_f64(std::istream& is);
void write_str(std::ostream& os, const std::string& s);
std::string read_str(std::istream& is);
void write_f64s(std::ostream& os, std::span<const double> v);
std::vector<double> read_f64s(std::istream& is);
}  // namespace io

}  // namespace diffro
