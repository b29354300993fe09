#include "diffro/rng.hpp"

#include <algorithm>
#include <cmath>

namespace diffro {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

std::array<std::uint32_t, 4> philox(std::array<std::uint32_t, 4> ctr,
                                    std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
    const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

}  // namespace

std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::uint64_t stream_id(std::string_view name) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

void Rng::refill() {
  // Counter words: low/high of cursor, low/high of stream. Key: the seed.
  const std::array<std::uint32_t, 4> ctr{
      static_cast<std::uint32_t>(cursor_), static_cast<std::uint32_t>(cursor_ >> 32),
      static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)};
  const std::array<std::uint32_t, 2> key{static_cast<std::uint32_t>(seed_),
                                         static_cast<std::uint32_t>(seed_ >> 32)};
  const auto out = philox(ctr, key);
  block_[0] = (std::uint64_t{out[0]} << 32) | out[1];
  block_[1] = (std::uint64_t{out[2]} << 32) | out[3];
  ++cursor_;
  lane_ = 0;
}

std::uint64_t Rng::next_u64() {
  if (lane_ >= 2) refill();
  return block_[lane_++];
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  if (n <= 1) return 0;
  // Rejection keeps the draw unbiased.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double Rng::gumbel() {
  const double u = std::clamp(uniform(), 1e-12, 1.0 - 1e-12);
  return -std::log(-std::log(u));
}

Rng Rng::split(std::uint64_t stream) const {
  return Rng(seed_, mix64(stream_, stream));
}

Rng Rng::restore(const State& s) {
  Rng r(s.seed, s.stream);
  if (s.lane < 2) {
    r.cursor_ = s.cursor - 1;
    r.refill();
    r.lane_ = s.lane;
  } else {
    r.cursor_ = s.cursor;
  }
  return r;
}

}  // namespace diffro
