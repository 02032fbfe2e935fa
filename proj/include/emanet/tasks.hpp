#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "emanet/ops.hpp"

namespace emanet {

enum class TaskKind { kSegmentation, kDepth, kNormals };

std::string to_string(TaskKind kind);
TaskKind parse_task_kind(const std::string& name);

/// One dense-prediction task. `lower_is_better` is the direction bit l_t of
/// the MTL gain for `delta_metric`.
struct TaskSpec {
  std::string id;
  TaskKind kind = TaskKind::kSegmentation;
  Index out_channels = 1;
  std::string delta_metric;
  bool lower_is_better = false;

  static TaskSpec segmentation(Index classes);
  static TaskSpec depth();
  static TaskSpec normals();
  /// Default spec for a task id ("segmentation", "depth", "normals").
  static TaskSpec from_id(const std::string& id, Index classes = 0);
};

/// Per-pixel supervision for a batch at prediction resolution. Masks are 1 on
/// valid pixels. Segmentation labels < 0 are void.
template <typename Scalar>
struct Targets {
  Index batch = 0;
  Index height = 0;
  Index width = 0;
  std::vector<std::int32_t> seg;       // B x H x W
  Tensor<Scalar> depth;                // B x 1 x H x W
  Tensor<Scalar> normals;              // B x 3 x H x W
  std::vector<std::uint8_t> valid;     // B x H x W, depth/normal validity
  std::vector<std::uint8_t> seg_valid; // B x H x W, non-void segmentation pixels
};

template <typename Scalar>
struct MaskedLoss {
  Var<Scalar> value;
  /// No valid pixel: value is 0 and carries no gradient.
  bool empty_mask = false;
};

namespace detail {
inline void require_mask(std::size_t mask_size, Index b, Index h, Index w, const char* what) {
  if (static_cast<Index>(mask_size) != b * h * w) {
    throw ShapeError(std::string(what) + ": mask of " + std::to_string(mask_size) + " pixels for " +
                     std::to_string(b) + "x" + std::to_string(h) + "x" + std::to_string(w) + " predictions");
  }
}
}  // namespace detail

/// Mean softmax cross-entropy over non-void pixels. logits: B x K x H x W.
template <typename Scalar>
MaskedLoss<Scalar> seg_loss(const Var<Scalar>& logits, std::span<const std::int32_t> labels,
                            std::span<const std::uint8_t> mask) {
  if (logits.rank() != 4) throw ShapeError("seg_loss expects B x K x H x W logits, got " + to_string(logits.shape()));
  const Index b = logits.dim(0), k = logits.dim(1), h = logits.dim(2), w = logits.dim(3), area = h * w;
  detail::require_mask(mask.size(), b, h, w, "seg_loss");
  detail::require_mask(labels.size(), b, h, w, "seg_loss labels");
  const Tensor<Scalar>& x = logits.value();

  Tensor<Scalar> probs(logits.shape());
  double total = 0;
  Index valid = 0;
  for (Index n = 0; n < b; ++n) {
    for (Index p = 0; p < area; ++p) {
      const Index pix = n * area + p;
      const Scalar* col = x.ptr() + n * k * area + p;
      Scalar mx = col[0];
      for (Index c = 1; c < k; ++c) mx = std::max(mx, col[c * area]);
      Scalar z = 0;
      for (Index c = 0; c < k; ++c) z += std::exp(col[c * area] - mx);
      Scalar* out = probs.ptr() + n * k * area + p;
      for (Index c = 0; c < k; ++c) out[c * area] = std::exp(col[c * area] - mx) / z;
      const std::int32_t label = labels[static_cast<std::size_t>(pix)];
      if (!mask[static_cast<std::size_t>(pix)] || label < 0) continue;
      if (label >= k) throw ShapeError("segmentation label " + std::to_string(label) + " >= class count");
      total += static_cast<double>(std::log(z) + mx - col[label * area]);
      ++valid;
    }
  }
  if (valid == 0) return {logits.tape().constant(Tensor<Scalar>::scalar(0)), true};

  std::vector<std::int32_t> lab(labels.begin(), labels.end());
  std::vector<std::uint8_t> msk(mask.begin(), mask.end());
  const auto inv = static_cast<Scalar>(1.0 / static_cast<double>(valid));
  Var<Scalar> out = logits.tape().record(
      Tensor<Scalar>::scalar(static_cast<Scalar>(total / static_cast<double>(valid))), {logits},
      [logits, probs = std::move(probs), lab = std::move(lab), msk = std::move(msk), inv, b, k, area](
          Tape<Scalar>& t, const Tensor<Scalar>& g) {
        auto* sink = t.grad_sink(logits);
        if (!sink) return;
        const Scalar s = g[0] * inv;
        for (Index n = 0; n < b; ++n) {
          for (Index p = 0; p < area; ++p) {
            const Index pix = n * area + p;
            const std::int32_t label = lab[static_cast<std::size_t>(pix)];
            if (!msk[static_cast<std::size_t>(pix)] || label < 0) continue;
            for (Index c = 0; c < k; ++c) {
              const Index at = n * k * area + c * area + p;
              (*sink)[at] += s * (probs[at] - (c == label ? Scalar(1) : Scalar(0)));
            }
          }
        }
      });
  return {out, false};
}

/// Mean |pred - target| over valid pixels. pred, target: B x 1 x H x W.
template <typename Scalar>
MaskedLoss<Scalar> depth_loss(const Var<Scalar>& pred, const Tensor<Scalar>& target, std::span<const std::uint8_t> mask) {
  if (pred.shape() != target.shape() || pred.rank() != 4 || pred.dim(1) != 1) {
    throw ShapeError("depth_loss of " + to_string(pred.shape()) + " against " + to_string(target.shape()));
  }
  const Index b = pred.dim(0), h = pred.dim(2), w = pred.dim(3);
  detail::require_mask(mask.size(), b, h, w, "depth_loss");
  const Tensor<Scalar>& x = pred.value();
  double total = 0;
  Index valid = 0;
  Tensor<Scalar> dir(pred.shape());
  for (Index i = 0; i < x.size(); ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    const Scalar diff = x[i] - target[i];
    total += std::abs(static_cast<double>(diff));
    dir[i] = diff > 0 ? Scalar(1) : (diff < 0 ? Scalar(-1) : Scalar(0));
    ++valid;
  }
  if (valid == 0) return {pred.tape().constant(Tensor<Scalar>::scalar(0)), true};
  const auto inv = static_cast<Scalar>(1.0 / static_cast<double>(valid));
  dir.array() *= inv;
  Var<Scalar> out = pred.tape().record(Tensor<Scalar>::scalar(static_cast<Scalar>(total / static_cast<double>(valid))),
                                       {pred}, [pred, dir = std::move(dir)](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                                         if (auto* sink = t.grad_sink(pred)) sink->array() += g[0] * dir.array();
                                       });
  return {out, false};
}

/// Mean of 1 - cos(pred, target) over valid pixels, where the prediction is
/// L2-normalized per pixel. pred, target: B x 3 x H x W, target unit length.
template <typename Scalar>
MaskedLoss<Scalar> normals_loss(const Var<Scalar>& pred, const Tensor<Scalar>& target,
                                std::span<const std::uint8_t> mask) {
  if (pred.shape() != target.shape() || pred.rank() != 4 || pred.dim(1) != 3) {
    throw ShapeError("normals_loss of " + to_string(pred.shape()) + " against " + to_string(target.shape()));
  }
  const Index b = pred.dim(0), h = pred.dim(2), w = pred.dim(3), area = h * w;
  detail::require_mask(mask.size(), b, h, w, "normals_loss");
  const Tensor<Scalar>& x = pred.value();
  const auto eps = static_cast<Scalar>(kNormalizeEps);
  double total = 0;
  Index valid = 0;
  Tensor<Scalar> dx(pred.shape());
  for (Index n = 0; n < b; ++n) {
    for (Index p = 0; p < area; ++p) {
      if (!mask[static_cast<std::size_t>(n * area + p)]) continue;
      const Index base = n * 3 * area + p;
      Scalar v[3], s[3];
      Scalar sq = 0;
      for (int c = 0; c < 3; ++c) {
        v[c] = x[base + c * area];
        s[c] = target[base + c * area];
        sq += v[c] * v[c];
      }
      const Scalar norm = std::sqrt(sq);
      const Scalar denom = std::max(norm, eps);
      Scalar cosine = 0;
      for (int c = 0; c < 3; ++c) cosine += v[c] / denom * s[c];
      total += 1.0 - static_cast<double>(cosine);
      ++valid;
      // d(-cos)/dv = -(s - u (u.s)) / |v| with u = v/|v|; linear below eps.
      for (int c = 0; c < 3; ++c) {
        dx[base + c * area] = norm > eps ? -(s[c] - v[c] / norm * cosine) / norm : -s[c] / eps;
      }
    }
  }
  if (valid == 0) return {pred.tape().constant(Tensor<Scalar>::scalar(0)), true};
  const auto inv = static_cast<Scalar>(1.0 / static_cast<double>(valid));
  dx.array() *= inv;
  Var<Scalar> out = pred.tape().record(Tensor<Scalar>::scalar(static_cast<Scalar>(total / static_cast<double>(valid))),
                                       {pred}, [pred, dx = std::move(dx)](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                                         if (auto* sink = t.grad_sink(pred)) sink->array() += g[0] * dx.array();
                                       });
  return {out, false};
}

/// Loss for one task's prediction against the batch targets.
template <typename Scalar>
MaskedLoss<Scalar> task_loss(const TaskSpec& spec, const Var<Scalar>& pred, const Targets<Scalar>& targets) {
  switch (spec.kind) {
    case TaskKind::kSegmentation:
      return seg_loss(pred, std::span<const std::int32_t>(targets.seg), std::span<const std::uint8_t>(targets.seg_valid));
    case TaskKind::kDepth:
      return depth_loss(pred, targets.depth, std::span<const std::uint8_t>(targets.valid));
    case TaskKind::kNormals:
      return normals_loss(pred, targets.normals, std::span<const std::uint8_t>(targets.valid));
  }
  throw ContractError("unknown task kind");
}

// ---------------------------------------------------------------------------
// Metrics. Accumulators merge associatively so partial results from
// independent batches can be combined in any grouping.

/// Confusion-matrix based segmentation scores.
class SegAccumulator {
 public:
  explicit SegAccumulator(Index classes);

  void add(std::span<const std::int32_t> predicted, std::span<const std::int32_t> labels,
           std::span<const std::uint8_t> mask);
  void merge(const SegAccumulator& other);

  /// Mean over classes present in the ground truth of TP / (TP + FP + FN).
  std::optional<double> mean_iou() const;
  std::optional<double> pixel_accuracy() const;
  std::optional<double> class_iou(Index c) const;
  std::int64_t confusion(Index truth, Index predicted) const;
  Index classes() const { return classes_; }

 private:
  Index classes_;
  std::vector<std::int64_t> confusion_;  // truth-major
};

class DepthAccumulator {
 public:
  /// Pixels with ground-truth depth <= eps are skipped for the relative error.
  explicit DepthAccumulator(double eps = 1e-6) : eps_(eps) {}

  void add(std::span<const float> pred, std::span<const float> target, std::span<const std::uint8_t> mask);
  void add(std::span<const double> pred, std::span<const double> target, std::span<const std::uint8_t> mask);
  void merge(const DepthAccumulator& other);

  std::optional<double> relative_error() const;
  std::optional<double> mean_abs_error() const;

 private:
  template <typename T>
  void add_impl(std::span<const T> pred, std::span<const T> target, std::span<const std::uint8_t> mask);

  double eps_;
  double abs_sum_ = 0;
  double rel_sum_ = 0;
  std::int64_t abs_count_ = 0;
  std::int64_t rel_count_ = 0;
};

class NormalsAccumulator {
 public:
  static constexpr double kThresholds[3] = {11.25, 22.5, 30.0};

  /// pred/target laid out B x 3 x H x W; mask B x H x W.
  void add(std::span<const float> pred, std::span<const float> target, std::span<const std::uint8_t> mask, Index batch,
           Index area);
  void add(std::span<const double> pred, std::span<const double> target, std::span<const std::uint8_t> mask,
           Index batch, Index area);
  void merge(const NormalsAccumulator& other);

  std::optional<double> mean_angle_deg() const;
  /// Fraction of valid pixels with angular error <= kThresholds[i].
  std::optional<double> within(int i) const;

 private:
  template <typename T>
  void add_impl(std::span<const T> pred, std::span<const T> target, std::span<const std::uint8_t> mask, Index batch,
                Index area);

  double angle_sum_ = 0;
  std::int64_t count_ = 0;
  std::int64_t within_[3] = {0, 0, 0};
};

struct SegMetrics {
  std::optional<double> miou;
  std::optional<double> pix_acc;
};
struct DepthMetrics {
  std::optional<double> rel_err;
  std::optional<double> mean_err;
};
struct NormalsMetrics {
  std::optional<double> mean_err_deg;
  std::optional<double> within[3];
};

SegMetrics seg_metrics(std::span<const std::int32_t> predicted, std::span<const std::int32_t> labels,
                       std::span<const std::uint8_t> mask, Index classes);
DepthMetrics depth_metrics(std::span<const float> pred, std::span<const float> target,
                           std::span<const std::uint8_t> mask);
NormalsMetrics normals_metrics(std::span<const float> pred, std::span<const float> target,
                               std::span<const std::uint8_t> mask, Index batch, Index area);

/// Arg-max over the class axis of B x K x H x W logits.
template <typename Scalar>
std::vector<std::int32_t> argmax_labels(const Tensor<Scalar>& logits) {
  const Index b = logits.dim(0), k = logits.dim(1), area = logits.dim(2) * logits.dim(3);
  std::vector<std::int32_t> out(static_cast<std::size_t>(b * area));
  for (Index n = 0; n < b; ++n) {
    for (Index p = 0; p < area; ++p) {
      const Scalar* col = logits.ptr() + n * k * area + p;
      Index best = 0;
      for (Index c = 1; c < k; ++c) {
        if (col[c * area] > col[best * area]) best = c;
      }
      out[static_cast<std::size_t>(n * area + p)] = static_cast<std::int32_t>(best);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// MTL gain

/// Measured metrics of one model, grouped by task id in a fixed order.
struct MetricRecord {
  struct TaskMetrics {
    std::string task;
    std::vector<std::pair<std::string, double>> values;

    std::optional<double> get(const std::string& name) const;
    void set(const std::string& name, double value);
  };

  std::string model;
  std::vector<TaskMetrics> tasks;

  const TaskMetrics* find(const std::string& task) const;
  TaskMetrics& task(const std::string& task);

  /// Flat text: a `model = ...` line, then `[task]` sections of `name = value`
  /// lines. `#` starts a comment.
  void write(std::ostream& os) const;
  static MetricRecord read(std::istream& is);
};

/// Mean signed relative improvement of `model` over `baseline`, in percent,
/// one metric per task as selected by each spec.
double mtl_gain(const MetricRecord& model, const MetricRecord& baseline, const std::vector<TaskSpec>& specs);

}  // namespace emanet
