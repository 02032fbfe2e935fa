#pragma once

// Randomized cross-checks of the CTAL fusion stage against slow references.

#include <cstdint>
#include <string>

namespace emanet {

struct OracleResult {
  std::string name;
  std::int64_t cases = 0;
  double max_abs_diff = 0;
  bool passed = false;
};

/// fuse_task vs a dense convolution whose weight embeds the grouped kernels
/// block-diagonally, over `cases` random (N <= 3, HW <= 36, f in {1, 3}).
OracleResult grouped_fusion_oracle(std::uint64_t seed, int cases = 50);

/// Interleave layout (channel c*N + k == task k, channel c) and the
/// de-interleave round trip for N = 1, 2, 3.
OracleResult interleave_oracle(std::uint64_t seed);

}  // namespace emanet
