#pragma once

// Single-process training and evaluation loops for the 32-bit model.

#include <cstdint>
#include <optional>
#include <string>

#include "emanet/data.hpp"
#include "emanet/network.hpp"
#include "emanet/optim.hpp"

namespace emanet {

enum class Schedule { kConstant, kCosine };

struct TrainOptions {
  AdamOptions adam;
  Schedule schedule = Schedule::kCosine;
  /// Length of the cosine schedule in optimizer steps.
  std::int64_t total_steps = 1;
  std::optional<std::int64_t> restart_period;
  LossWeights weights;
};

struct StepResult {
  double loss = 0;
  double lr = 0;
};

class Trainer {
 public:
  Trainer(EmaNet<float>& net, TrainOptions options);

  /// Forward, backward and one Adam update on `batch`. Throws
  /// std::runtime_error on a non-finite loss or gradient.
  StepResult step(const Batch& batch);
  /// Loss on `batch` without updating anything.
  double loss(const Batch& batch) const;

  std::int64_t steps_taken() const { return state_.step; }
  const AdamState<float>& state() const { return state_; }

 private:
  EmaNet<float>* net_;
  TrainOptions opts_;
  AdamState<float> state_;
};

/// Accumulated metrics of the final predictions over a set of batches.
class Evaluator {
 public:
  explicit Evaluator(const ModelConfig& cfg);

  void add(const EmaNet<float>& net, const Batch& batch);
  MetricRecord record(const std::string& model) const;

 private:
  ModelConfig cfg_;
  std::vector<SegAccumulator> seg_;
  std::vector<DepthAccumulator> depth_;
  std::vector<NormalsAccumulator> normals_;
};

}  // namespace emanet
