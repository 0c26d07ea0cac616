#pragma once

#include <cstdint>

namespace flowinv {

// Counter-based generator. Draw k of a stream with key K is
//   bits(k) = splitmix64_finalize(K + (k + 1) * 0x9E3779B97F4A7C15)
// Uniforms take the top 53 bits; Gaussians use Box-Muller on two uniforms
// and cache the sine branch for the next call. split() derives a child key
// from the parent key and a dedicated split counter, so splitting never
// perturbs the parent's draw sequence.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_bits();
  // Uniform on [0, 1).
  double uniform();
  // Uniform on (0, 1].
  double uniform_open0();
  double gaussian();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  RngStream split();

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::uint64_t splits_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64_finalize(std::uint64_t z);

}  // namespace flowinv
