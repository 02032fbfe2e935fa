#pragma once

#include <cstdint>
#include <random>

#include "emanet/tensor.hpp"

namespace emanet::testing {

// Small seeded generator for property tests.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo = -1.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  Index integer(Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng_); }
  bool coin() { return integer(0, 1) == 1; }

  template <typename Scalar = double>
  Tensor<Scalar> tensor(const Shape& shape, double lo = -1.0, double hi = 1.0) {
    return Tensor<Scalar>::generate(shape, [&] { return static_cast<Scalar>(uniform(lo, hi)); });
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

}  // namespace emanet::testing
