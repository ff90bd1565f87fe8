#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>

namespace flbi {

// Seeded ChaCha20 keystream. Every source of randomness in a simulation
// (key generation, latency jitter, sensor noise) draws from one of these,
// so a scenario seed fixes the whole run on every platform.
class Rng
{
public:
  explicit Rng(std::uint64_t seed);
  explicit Rng(const std::array<std::uint8_t, 32> &key) : key_(key) {}

  void fill(std::span<std::uint8_t> out);
  std::uint64_t next_u64();
  // Uniform in [0, bound); bound must be > 0.
  std::uint64_t below(std::uint64_t bound);
  // Uniform in [lo, hi].
  std::int64_t between(std::int64_t lo, std::int64_t hi);
  // Uniform in [0, 1).
  double unit();

  // Independent child stream; same (parent seed, label) -> same child.
  Rng fork(std::string_view label) const;

private:
  void refill();

  std::array<std::uint8_t, 32> key_{};
  std::uint64_t counter_{0};
  std::array<std::uint8_t, 256> buffer_{};
  std::size_t used_{buffer_.size()};
};

}  // namespace flbi
