#pragma once

// Central finite-difference checks of reverse-mode gradients in 64-bit.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "emanet/autodiff.hpp"

namespace emanet {

struct GradCheckOptions {
  double tolerance = 1e-4;
  /// Entries probed per input tensor; 0 probes every entry.
  Index max_probes = 0;
  std::uint64_t seed = 0;
  /// Drop probes whose one-sided slopes disagree, i.e. where the step
  /// straddles a kink (ReLU, |.|) and central differences are meaningless.
  bool skip_nonsmooth = false;
  /// Fail when more than this fraction of probes is dropped.
  double max_skipped_fraction = 0.25;
  /// Fail when fewer probes than this survive.
  std::int64_t min_probes = 1;
};

struct GradCheckResult {
  std::string name;
  /// Largest per-input ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-6).
  double max_rel_error = 0;
  std::int64_t probes = 0;
  std::int64_t skipped = 0;
  /// Input index with the largest error.
  std::size_t worst_input = 0;
  bool passed = false;
};

/// Builds a scalar from leaves bound to `inputs`.
using GradGraph = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// Step for entry x is h = 1e-4 * (1 + |x|).
GradCheckResult check_gradients(const std::string& name, const std::vector<Tensor<double>>& inputs,
                                const GradGraph& graph, const GradCheckOptions& options = {});

/// Reduces any tensor to a scalar through fixed pseudo-random weights, so
/// every output entry contributes a distinct amount to the gradient.
Var<double> random_projection(const Var<double>& out, std::uint64_t seed);

/// Every differentiable op, the CTAL stages, the full CTAL composition
/// (C=2, H=W=3, N=2, f=3) and the task losses.
std::vector<GradCheckResult> gradcheck_op_suite(std::uint64_t seed);

/// Miniature end-to-end model (C=2, N=2, 32x32 input, both variants).
std::vector<GradCheckResult> gradcheck_model_suite(std::uint64_t seed);

}  // namespace emanet
