#pragma once

// Cross-task affinity learning: per-task affinity (Gram) matrices of
// normalized features, interleaved so a grouped convolution sees the N task
// similarity maps of one spatial position together, and a per-task
// diffusion of the fused affinities into projected features.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "emanet/ops.hpp"
#include "emanet/params.hpp"

namespace emanet {

struct CtalConfig {
  Index tasks = 3;
  Index channels = 16;
  Index height = 16;
  Index width = 16;
  Index filter = 3;
  double gamma = 0.05;
  bool fusion_bias = true;

  Index area() const { return height * width; }

  void validate() const {
    if (tasks < 1 || channels < 1 || height < 1 || width < 1) throw ConfigError("CTAL extents must be positive");
    if (filter < 1 || filter % 2 == 0) throw ConfigError("CTAL filter size must be odd and positive");
    if (gamma < 0.0 || gamma > 1.0) throw ConfigError("blend factor gamma must lie in [0, 1]");
  }
};

/// Cosine similarities between every pair of spatial features of one task.
/// values: B x HW x HW, row-major over flat positions r = i*W + j.
template <typename Scalar>
struct AffinityMatrix {
  Index task = 0;
  Var<Scalar> values;
  Index height = 0;
  Index width = 0;
};

/// All tasks' reshaped affinities, interleaved: channel c*N + k holds channel
/// c of task k. values: B x (N*HW) x H x W.
template <typename Scalar>
struct JointAffinity {
  Var<Scalar> values;
  Index tasks = 0;
  Index height = 0;
  Index width = 0;
};

/// Fused cross-task affinities for one task, B x HW x HW. Row r collects the
/// cross-task pattern of the feature at flat position r.
template <typename Scalar>
struct CrossTaskMatrix {
  Index task = 0;
  Var<Scalar> values;
};

/// Tape handles for the learnable part of one CTAL instance.
template <typename Scalar>
struct CtalParams {
  struct Task {
    Var<Scalar> fuse_weight;  // HW x N x f x f
    std::optional<Var<Scalar>> fuse_bias;  // HW
    Var<Scalar> project_weight;  // C x C x 1 x 1
    std::optional<Var<Scalar>> project_bias;  // C
  };
  std::vector<Task> tasks;
  Index filter = 3;
  double gamma = 0.05;

  static CtalParams bind(const BoundParams<Scalar>& bound, const std::string& prefix, const CtalConfig& cfg) {
    CtalParams p;
    p.filter = cfg.filter;
    p.gamma = cfg.gamma;
    for (Index k = 0; k < cfg.tasks; ++k) {
      const std::string t = ".task" + std::to_string(k);
      Task task;
      task.fuse_weight = bound[prefix + ".fuse" + t + ".weight"];
      if (bound.contains(prefix + ".fuse" + t + ".bias")) task.fuse_bias = bound[prefix + ".fuse" + t + ".bias"];
      task.project_weight = bound[prefix + ".project" + t + ".weight"];
      if (bound.contains(prefix + ".project" + t + ".bias")) task.project_bias = bound[prefix + ".project" + t + ".bias"];
      p.tasks.push_back(task);
    }
    return p;
  }
};

/// Registers fusion and projection parameters for every task. Fusion weights
/// are uniform in +-1/sqrt(N f^2) with zero bias.
template <typename Scalar>
void init_ctal_params(ParamStore<Scalar>& store, const std::string& prefix, const CtalConfig& cfg,
                      std::mt19937_64& rng) {
  cfg.validate();
  const Index hw = cfg.area();
  const double fuse_bound = 1.0 / std::sqrt(static_cast<double>(cfg.tasks * cfg.filter * cfg.filter));
  const double proj_bound = 1.0 / std::sqrt(static_cast<double>(cfg.channels));
  for (Index k = 0; k < cfg.tasks; ++k) {
    const std::string t = ".task" + std::to_string(k);
    store.add_uniform(prefix + ".fuse" + t + ".weight", {hw, cfg.tasks, cfg.filter, cfg.filter}, fuse_bound, rng);
    if (cfg.fusion_bias) store.add(prefix + ".fuse" + t + ".bias", Tensor<Scalar>({hw}));
    store.add_uniform(prefix + ".project" + t + ".weight", {cfg.channels, cfg.channels, 1, 1}, proj_bound, rng);
    store.add(prefix + ".project" + t + ".bias", Tensor<Scalar>({cfg.channels}));
  }
}

/// Number of `ctal_forward` calls made on this thread.
inline std::int64_t& ctal_invocations() {
  thread_local std::int64_t count = 0;
  return count;
}

namespace detail {
template <typename Scalar>
void require_feature_map(const Var<Scalar>& f, const char* what) {
  if (f.rank() != 4) throw ShapeError(std::string(what) + " expects B x C x H x W features, got " + to_string(f.shape()));
}
}  // namespace detail

/// Flattens to C x HW, L2-normalizes each column and returns X^T X.
template <typename Scalar>
AffinityMatrix<Scalar> compute_affinity(const Var<Scalar>& features, Index task = 0) {
  detail::require_feature_map(features, "compute_affinity");
  const Index b = features.dim(0), c = features.dim(1), h = features.dim(2), w = features.dim(3);
  const Var<Scalar> flat = reshape(features, {b, c, h * w});
  const Var<Scalar> unit = l2_normalize(flat, 1, Scalar(kNormalizeEps));
  return {task, bmm(transpose(unit), unit), h, w};
}

/// HW x HW -> HW x H x W without moving data: channel c at (i, j) is the
/// similarity of x_{i,j} with the feature at flat index c.
template <typename Scalar>
Var<Scalar> reshape_affinity(const AffinityMatrix<Scalar>& a) {
  const Shape& s = a.values.shape();
  const Index hw = a.height * a.width;
  if (s.size() != 3 || s[1] != hw || s[2] != hw) {
    throw ShapeError("affinity " + to_string(s) + " does not match spatial dims " + std::to_string(a.height) + "x" +
                     std::to_string(a.width));
  }
  return reshape(a.values, {s[0], hw, a.height, a.width});
}

/// Interleaves channel c of each task so that channel c*N + k = task k, c.
template <typename Scalar>
JointAffinity<Scalar> interleave_concat(const std::vector<Var<Scalar>>& reshaped) {
  if (reshaped.empty()) throw ShapeError("interleave_concat of no tasks");
  const Shape& ref = reshaped.front().shape();
  if (ref.size() != 4) throw ShapeError("interleave_concat expects B x HW x H x W inputs, got " + to_string(ref));
  for (const auto& r : reshaped) {
    if (r.shape() != ref) throw ShapeError("interleave_concat of " + to_string(r.shape()) + " with " + to_string(ref));
  }
  const auto n = static_cast<Index>(reshaped.size());
  // B x HW x N x H x W flattens to the interleaved channel order.
  const Var<Scalar> stacked = stack(reshaped, 2);
  return {reshape(stacked, {ref[0], ref[1] * n, ref[2], ref[3]}), n, ref[2], ref[3]};
}

/// Inverse of `interleave_concat` on plain tensors.
template <typename Scalar>
std::vector<Tensor<Scalar>> deinterleave(const Tensor<Scalar>& joint, Index tasks) {
  if (joint.rank() != 4 || joint.dim(1) % tasks != 0) {
    throw ShapeError("cannot split " + to_string(joint.shape()) + " into " + std::to_string(tasks) + " tasks");
  }
  const Index b = joint.dim(0), hw = joint.dim(1) / tasks, h = joint.dim(2), w = joint.dim(3);
  const Tensor<Scalar> by_task = kernels::permute(joint.reshaped({b, hw, tasks, h, w}), {0, 2, 1, 3, 4});
  std::vector<Tensor<Scalar>> out;
  for (Index k = 0; k < tasks; ++k) out.push_back(kernels::slice(by_task, 1, k, 1).reshaped({b, hw, h, w}));
  return out;
}

/// Grouped convolution of the joint affinity with HW groups (N channels in,
/// one out, same padding), reshaped to HW x HW and transposed.
template <typename Scalar>
CrossTaskMatrix<Scalar> fuse_task(const JointAffinity<Scalar>& joint, const Var<Scalar>& weight,
                                  const std::optional<std::type_identity_t<Var<Scalar>>>& bias, Index filter,
                                  Index task) {
  if (filter < 1 || filter % 2 == 0) throw ConfigError("fusion filter size must be odd and positive");
  const Index hw = joint.height * joint.width;
  const Index channels = joint.values.dim(1);
  if (channels != joint.tasks * hw) {
    throw GroupingError("joint affinity has " + std::to_string(channels) + " channels, expected N*HW = " +
                        std::to_string(joint.tasks * hw));
  }
  if (weight.shape() != Shape{hw, joint.tasks, filter, filter}) {
    throw GroupingError("fusion weight " + to_string(weight.shape()) + " does not match " + std::to_string(hw) +
                        " groups of " + std::to_string(joint.tasks) + " channels");
  }
  const Conv2dOptions opt{1, (filter - 1) / 2, hw};
  const Var<Scalar> fused = conv2d(joint.values, weight, bias, opt);
  const Var<Scalar> square = reshape(fused, {fused.dim(0), hw, hw});
  return {task, transpose(square)};
}

/// 1x1 convolution then flatten: B x C x H x W -> B x C x HW.
template <typename Scalar>
Var<Scalar> project(const Var<Scalar>& features, const Var<Scalar>& weight,
                    const std::optional<std::type_identity_t<Var<Scalar>>>& bias) {
  detail::require_feature_map(features, "project");
  const Var<Scalar> p = conv2d(features, weight, bias, Conv2dOptions{});
  return reshape(p, {p.dim(0), p.dim(1), p.dim(2) * p.dim(3)});
}

/// F^d = F^p x G^T.
template <typename Scalar>
Var<Scalar> diffuse(const Var<Scalar>& projected, const CrossTaskMatrix<Scalar>& cross) {
  return bmm(projected, transpose(cross.values));
}

/// F^r = gamma * F^d + (1 - gamma) * F^i, with F^d reshaped to F^i's shape.
template <typename Scalar>
Var<Scalar> blend(const Var<Scalar>& diffused, const Var<Scalar>& initial, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("blend factor gamma must lie in [0, 1]");
  const Var<Scalar> d = reshape(diffused, initial.shape());
  return add(scale(d, static_cast<Scalar>(gamma)), scale(initial, static_cast<Scalar>(1.0 - gamma)));
}

/// Refines each task's features with cross-task affinity information.
/// Inputs share B x C x H x W; outputs have the same shape.
template <typename Scalar>
std::vector<Var<Scalar>> ctal_forward(const std::vector<Var<Scalar>>& features, const CtalParams<Scalar>& params) {
  if (features.empty()) throw ShapeError("ctal_forward needs at least one task");
  if (features.size() != params.tasks.size()) {
    throw ContractError("ctal_forward got " + std::to_string(features.size()) + " feature maps for " +
                        std::to_string(params.tasks.size()) + " task parameter sets");
  }
  for (const auto& f : features) {
    detail::require_feature_map(f, "ctal_forward");
    if (f.shape() != features.front().shape()) {
      throw ShapeError("ctal_forward features disagree: " + to_string(f.shape()) + " vs " +
                       to_string(features.front().shape()));
    }
  }
  ++ctal_invocations();

  std::vector<Var<Scalar>> reshaped;
  for (std::size_t k = 0; k < features.size(); ++k) {
    reshaped.push_back(reshape_affinity(compute_affinity(features[k], static_cast<Index>(k))));
  }
  const JointAffinity<Scalar> joint = interleave_concat(reshaped);

  std::vector<Var<Scalar>> refined;
  for (std::size_t k = 0; k < features.size(); ++k) {
    const auto& tp = params.tasks[k];
    const CrossTaskMatrix<Scalar> cross =
        fuse_task(joint, tp.fuse_weight, tp.fuse_bias, params.filter, static_cast<Index>(k));
    const Var<Scalar> projected = project(features[k], tp.project_weight, tp.project_bias);
    refined.push_back(blend(diffuse(projected, cross), features[k], params.gamma));
  }
  return refined;
}

}  // namespace emanet
