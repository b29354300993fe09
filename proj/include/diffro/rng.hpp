#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace diffro {

// Counter-based generator (Philox4x32-10). A (seed, stream) pair names an
// independent sequence; `cursor` is the number of 128-bit blocks consumed, so
// saving (seed, stream, cursor, lane) restores the exact position.
class Rng {
 public:
  Rng(std::uint64_t seed = 0, std::uint64_t stream = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Unbiased integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }
  // Standard Gumbel draw with u clamped to [1e-12, 1 - 1e-12].
  double gumbel();

  // Derives an independent generator for a named sub-task.
  Rng split(std::uint64_t stream) const;

  struct State {
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;
    std::uint64_t cursor = 0;
    std::uint32_t lane = 0;
  };
  State state() const { return {seed_, stream_, cursor_, lane_}; }
  static Rng restore(const State& s);

 private:
  void refill();

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t cursor_ = 0;
  std::uint32_t lane_ = 2;  // next 64-bit lane of block_; 2 means empty
  std::array<std::uint64_t, 2> block_{};
};

// Stable 64-bit hash for deriving stream ids from names.
std::uint64_t stream_id(std::string_view name);
std::uint64_t mix64(std::uint64_t a, std::uint64_t b);

}  // namespace diffro
