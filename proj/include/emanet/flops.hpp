#pragma once

#include <cstdint>

namespace emanet {

/// Tally of floating-point operations executed by forward kernels on this
/// thread. One multiply-add counts as 2 FLOPs; element-wise arithmetic
/// (add, sub, mul, scale) counts 1 per element. Normalization, activations,
/// bias broadcasts and data movement are not tallied.
class FlopCounter {
 public:
  FlopCounter() : start_(total()) {}
  std::int64_t count() const { return total() - start_; }
  void reset() { start_ = total(); }

  static void add(std::int64_t flops) { total() += flops; }

 private:
  static std::int64_t& total() {
    thread_local std::int64_t value = 0;
    return value;
  }
  std::int64_t start_;
};

}  // namespace emanet
