#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace mhcg {

/// Seeded random stream. Every sampler in the library takes one of these
/// explicitly; two streams built from the same seed produce the same draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  double normal();
  /// Gamma(shape, 1).
  double gamma(double shape);
  /// Uniform index in [0, n).
  std::size_t index(std::size_t n);

  /// Independent child stream; does not advance this stream.
  Rng fork(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }
  std::mt19937_64& engine() { return engine_; }

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace mhcg
