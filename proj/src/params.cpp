#include "diffro/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace diffro {

Tensor& ParameterSet::add(std::string name, Tensor t) {
  for (const auto& it : items_) {
    if (it.name == name) throw std::invalid_argument("duplicate parameter " + name);
  }
  t.set_requires_grad(true);
  items_.push_back({std::move(name), std::move(t)});
  return items_.back().tensor;
}

Tensor& ParameterSet::add_normal(std::string name, Shape shape, double stddev,
                                 Rng& rng) {
  std::vector<double> v(numel(shape));
  for (double& x : v) {
    // Box-Muller; zero stddev skips the draws entirely.
    if (stddev == 0.0) {
      x = 0.0;
      continue;
    }
    const double u1 = std::max(rng.uniform(), 1e-300);
    const double u2 = rng.uniform();
    x = stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
  return add(std::move(name), Tensor::from(std::move(shape), std::move(v)));
}

Tensor& ParameterSet::add_constant(std::string name, Shape shape, double v) {
  return add(std::move(name), Tensor::full(std::move(shape), v));
}

const Tensor& ParameterSet::get(const std::string& name) const {
  for (const auto& it : items_) {
    if (it.name == name) return it.tensor;
  }
  throw std::out_of_range("no parameter named " + name);
}

std::size_t ParameterSet::count() const {
  std::size_t n = 0;
  for (const auto& it : items_) n += it.tensor.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& it : items_) it.tensor.zero_grad();
}

void ParameterSet::set_requires_grad(bool on) {
  for (auto& it : items_) it.tensor.set_requires_grad(on);
}

void ParameterSet::copy_from(const ParameterSet& other) {
  if (other.items_.size() != items_.size()) {
    throw std::invalid_argument("copy_from: parameter count " +
                                std::to_string(other.items_.size()) + " vs " +
                                std::to_string(items_.size()));
  }
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const auto& src = other.items_[i];
    auto& dst = items_[i];
    if (src.name != dst.name || src.tensor.shape() != dst.tensor.shape()) {
      throw std::invalid_argument("copy_from: " + src.name + to_string(src.tensor.shape()) +
                                  " does not match " + dst.name +
                                  to_string(dst.tensor.shape()));
    }
    std::ranges::copy(src.tensor.data(), dst.tensor.mutable_data().begin());
  }
}

std::string ParameterSet::hash() const {
  std::uint64_t h = 0xCBF29CE484222325ull;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001B3ull;
    }
  };
  for (const auto& it : items_) {
    feed(it.name.data(), it.name.size());
    for (std::size_t d : it.tensor.shape()) feed(&d, sizeof d);
    feed(it.tensor.data().data(), it.tensor.size() * sizeof(double));
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

nlohmann::ordered_json ParameterSet::to_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& it : items_) {
    j[it.name] = {{"shape", it.tensor.shape()},
                  {"values", std::vector<double>(it.tensor.data().begin(),
                                                 it.tensor.data().end())}};
  }
  return j;
}

void ParameterSet::load_json(const nlohmann::json& j) {
  for (auto& it : items_) {
    if (!j.contains(it.name)) {
      throw std::invalid_argument("weight dump lacks parameter " + it.name);
    }
    const auto& e = j.at(it.name);
    const auto shape = e.at("shape").get<Shape>();
    if (shape != it.tensor.shape()) {
      throw ShapeError("weight dump: " + it.name + " has shape " + to_string(shape) +
                       ", model expects " + to_string(it.tensor.shape()));
    }
    const auto values = e.at("values").get<std::vector<double>>();
    if (values.size() != it.tensor.size()) {
      throw ShapeError("weight dump: " + it.name + " value count mismatch");
    }
    std::ranges::copy(values, it.tensor.mutable_data().begin());
  }
}

void ParameterSet::write(std::ostream& os) const {
  io::write_u64(os, items_.size());
  for (const auto& it : items_) {
    io::write_str(os, it.name);
    io::write_u64(os, it.tensor.rank());
    for (std::size_t d : it.tensor.shape()) io::write_u64(os, d);
    io::write_f64s(os, it.tensor.data());
  }
}

void ParameterSet::read(std::istream& is) {
  const auto n = io::read_u64(is);
  if (n != items_.size()) {
    throw std::invalid_argument("checkpoint has " + std::to_string(n) +
                                " parameters, model has " +
                                std::to_string(items_.size()));
  }
  for (auto& it : items_) {
    const auto name = io::read_str(is);
    Shape shape(io::read_u64(is));
    for (auto& d : shape) d = io::read_u64(is);
    if (name != it.name || shape != it.tensor.shape()) {
      throw ShapeError("checkpoint parameter " + name + to_string(shape) +
                       " does not match model parameter " + it.name +
                       to_string(it.tensor.shape()));
    }
    const auto values = io::read_f64s(is);
    if (values.size() != it.tensor.size()) {
      throw ShapeError("checkpoint parameter " + name + " value count mismatch");
    }
    std::ranges::copy(values, it.tensor.mutable_data().begin());
  }
}

namespace io {

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) {
    throw std::runtime_error("checkpoint truncated");
  }
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{b[i]} << (8 * i);
  return v;
}

void write_f64(std::ostream& os, double v) { write_u64(os, std::bit_cast<std::uint64_t>(v)); }

double read_f64(std::istream& is) { return std::bit_cast<double>(read_u64(is)); }

void write_str(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::istream& is) {
  const auto n = read_u64(is);
  if (n > (1ull << 32)) throw std::runtime_error("checkpoint string too long");
  std::string s(n, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(n))) {
    throw std::runtime_error("checkpoint truncated");
  }
  return s;
}

void write_f64s(std::ostream& os, std::span<const double> v) {
  write_u64(os, v.size());
  for (double x : v) write_f64(os, x);
}

std::vector<double> read_f64s(std::istream& is) {
  const auto n = read_u64(is);
  if (n > (1ull << 32)) throw std::runtime_error("checkpoint array too long");
  std::vector<double> v(n);
  for (auto& x : v) x = read_f64(is);
  return v;
}

}  // namespace io

}  // namespace diffro
