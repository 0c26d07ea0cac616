#include "flowinv/rng.hpp"

#include <cmath>
#include <numbers>

namespace flowinv {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
constexpr std::uint64_t kSplitSalt = 0xD1B54A32D192ED03ULL;
}  // namespace

std::uint64_t splitmix64_finalize(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

RngStream::RngStream(std::uint64_t seed) : seed_(seed), key_(splitmix64_finalize(seed + kGolden)) {}

std::uint64_t RngStream::next_bits() {
  ++counter_;
  return splitmix64_finalize(key_ + counter_ * kGolden);
}

double RngStream::uniform() { return static_cast<double>(next_bits() >> 11) * 0x1.0p-53; }

double RngStream::uniform_open0() {
  return static_cast<double>((next_bits() >> 11) + 1) * 0x1.0p-53;
}

double RngStream::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = uniform_open0();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::uint64_t RngStream::below(std::uint64_t n) {
  // Rejection removes modulo bias.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t r = next_bits();
  while (r >= limit) r = next_bits();
  return r % n;
}

RngStream RngStream::split() {
  ++splits_;
  RngStream child(0);
  child.seed_ = splitmix64_finalize(key_ ^ (splits_ * kSplitSalt));
  child.key_ = splitmix64_finalize(child.seed_ + kGolden);
  return child;
}

}  // namespace flowinv
