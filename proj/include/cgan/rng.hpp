#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>

namespace cgan {

/// Seeded generator with distribution code written out explicitly so that
/// draws are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  /// Uniform on (0, 1); safe under log().
  double uniform_open() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  bool bernoulli(double p) { return uniform() < p; }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  /// Draw from unnormalized non-negative weights.
  std::size_t categorical(std::span<const double> weights);

  /// Independent child stream, deterministic in (parent state, stream id).
  Rng derive(std::uint64_t stream);

  std::string state() const;
  void set_state(const std::string& text);

 private:
  std::mt19937_64 engine_;
};

}  // namespace cgan
