#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "emanet/tensor.hpp"

namespace emanet {

enum class WeightDecayMode {
  /// g += wd * p before the moment updates (classical Adam with L2 penalty).
  kCoupled,
  /// p *= 1 - lr * wd before the adaptive step (AdamW).
  kDecoupled,
};

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  WeightDecayMode decay_mode = WeightDecayMode::kCoupled;
};

template <typename Scalar>
struct AdamState {
  AdamOptions options;
  std::int64_t step = 0;
  std::vector<Tensor<Scalar>> first_moment;
  std::vector<Tensor<Scalar>> second_moment;

  AdamState() = default;
  AdamState(AdamOptions opts, std::span<const Tensor<Scalar>> params) : options(opts) {
    for (const auto& p : params) {
      first_moment.emplace_back(p.shape());
      second_moment.emplace_back(p.shape());
    }
  }
};

/// One bias-corrected Adam update using `state.options.lr`.
template <typename Scalar>
void adam_step(std::span<Tensor<Scalar>> params, std::span<const Tensor<Scalar>> grads, AdamState<Scalar>& state) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw ContractError("adam_step: " + std::to_string(params.size()) + " parameters, " + std::to_string(grads.size()) +
                        " gradients, " + std::to_string(state.first_moment.size()) + " moment buffers");
  }
  const AdamOptions& o = state.options;
  ++state.step;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  const auto b1 = static_cast<Scalar>(o.beta1);
  const auto b2 = static_cast<Scalar>(o.beta2);
  const auto step_size = static_cast<Scalar>(o.lr / bc1);
  const auto root_bc2 = static_cast<Scalar>(std::sqrt(bc2));
  const auto eps = static_cast<Scalar>(o.eps);
  const auto wd = static_cast<Scalar>(o.weight_decay);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<Scalar>& p = params[i];
    const Tensor<Scalar>& g = grads[i];
    Tensor<Scalar>& m = state.first_moment[i];
    Tensor<Scalar>& v = state.second_moment[i];
    if (p.shape() != g.shape() || p.shape() != m.shape()) {
      throw ContractError("adam_step: parameter " + std::to_string(i) + " has shape " + to_string(p.shape()) +
                          " but gradient/moments have " + to_string(g.shape()) + "/" + to_string(m.shape()));
    }
    auto pa = p.array();
    Eigen::Array<Scalar, Eigen::Dynamic, 1> grad = g.array();
    if (wd != Scalar(0)) {
      if (o.decay_mode == WeightDecayMode::kCoupled) {
        grad += wd * pa;
      } else {
        pa *= Scalar(1) - static_cast<Scalar>(o.lr) * wd;
      }
    }
    m.array() = b1 * m.array() + (Scalar(1) - b1) * grad;
    v.array() = b2 * v.array() + (Scalar(1) - b2) * grad.square();
    pa -= step_size * m.array() / (v.array().sqrt() / root_bc2 + eps);
  }
}

/// Cosine-annealed learning rate from `base_lr` at step 0 down to 0 at `total`.
/// With a restart period the schedule repeats every `period` steps.
inline double cosine_lr(std::int64_t step, std::int64_t total, double base_lr,
                        std::optional<std::int64_t> restart_period = std::nullopt) {
  std::int64_t span = total;
  std::int64_t t = step;
  if (restart_period) {
    if (*restart_period <= 0) throw ConfigError("warm-restart period must be positive");
    span = *restart_period;
    t = step % span;
  }
  if (span <= 0) throw ConfigError("cosine schedule length must be positive");
  t = std::clamp<std::int64_t>(t, 0, span);
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) / static_cast<double>(span)));
}

}  // namespace emanet
