#include "emanet/oracle.hpp"

#include <algorithm>
#include <random>

#include "emanet/ctal.hpp"
#include "emanet/reference.hpp"

namespace emanet {

OracleResult grouped_fusion_oracle(std::uint64_t seed, int cases) {
  OracleResult r{"grouped_fusion_vs_block_diagonal"};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto gen = [&] { return u(rng); };
  std::vector<std::pair<Index, Index>> dims;
  for (Index h = 1; h <= 6; ++h) {
    for (Index w = 1; w <= 6; ++w) {
      if (h * w <= 36) dims.emplace_back(h, w);
    }
  }
  for (int c = 0; c < cases; ++c) {
    const Index n = std::uniform_int_distribution<Index>(1, 3)(rng);
    const auto [h, w] = dims[std::uniform_int_distribution<std::size_t>(0, dims.size() - 1)(rng)];
    const Index f = (c % 2 == 0) ? 3 : 1;
    const Index hw = h * w, b = 1 + c % 2;

    const auto m = Tensor<double>::generate({b, n * hw, h, w}, gen);
    const auto weight = Tensor<double>::generate({hw, n, f, f}, gen);
    const auto bias = Tensor<double>::generate({hw}, gen);

    Tape<double> tape;
    const JointAffinity<double> joint{tape.constant(m), n, h, w};
    const auto fused = fuse_task(joint, tape.constant(weight), std::optional(tape.constant(bias)), f, 0);

    const auto dense = reference::embed_block_diagonal(weight, hw);
    const auto conv = reference::conv2d_direct(m, dense, &bias, Conv2dOptions{1, (f - 1) / 2, 1});
    const auto expected = transpose(conv.reshaped({b, hw, hw}));

    r.max_abs_diff = std::max(r.max_abs_diff, max_abs_diff(fused.values.value(), expected));
    ++r.cases;
  }
  r.passed = r.cases >= cases && r.max_abs_diff < 1e-6;
  return r;
}

OracleResult interleave_oracle(std::uint64_t seed) {
  OracleResult r{"interleave_layout_and_round_trip"};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  bool exact = true;
  for (Index n = 1; n <= 3; ++n) {
    const Index b = 2, h = 2, w = 3, hw = h * w;
    Tape<double> tape;
    std::vector<Tensor<double>> parts;
    std::vector<Var<double>> vars;
    for (Index k = 0; k < n; ++k) {
      parts.push_back(Tensor<double>::generate({b, hw, h, w}, [&] { return u(rng); }));
      vars.push_back(tape.constant(parts.back()));
    }
    const Tensor<double>& joint = interleave_concat(vars).values.value();
    for (Index bi = 0; bi < b; ++bi) {
      for (Index c = 0; c < hw; ++c) {
        for (Index k = 0; k < n; ++k) {
          for (Index y = 0; y < h; ++y) {
            for (Index x = 0; x < w; ++x) {
              exact = exact && joint.at({bi, c * n + k, y, x}) == parts[static_cast<std::size_t>(k)].at({bi, c, y, x});
            }
          }
        }
      }
    }
    const auto back = deinterleave(joint, n);
    for (Index k = 0; k < n; ++k) exact = exact && back[static_cast<std::size_t>(k)] == parts[static_cast<std::size_t>(k)];
    ++r.cases;
  }
  r.max_abs_diff = exact ? 0.0 : 1.0;
  r.passed = exact;
  return r;
}

}  // namespace emanet
