#include "emanet/train.hpp"

#include <cmath>
#include <stdexcept>

namespace emanet {

namespace {

bool all_finite(const Tensor<float>& t) {
  for (float v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace

Trainer::Trainer(EmaNet<float>& net, TrainOptions options)
    : net_(&net), opts_(std::move(options)), state_(opts_.adam, net.params().values()) {}

StepResult Trainer::step(const Batch& batch) {
  Tape<float> tape;
  BoundParams<float> bound(tape, net_->params());
  const auto preds = net_->forward(bound, tape.constant(batch.images));
  const Var<float> loss = total_loss(net_->config(), preds, batch.targets, opts_.weights, tape);
  const double value = loss.value()[0];
  if (!std::isfinite(value)) throw std::runtime_error("non-finite loss at step " + std::to_string(state_.step));
  tape.backward(loss);
  const auto grads = bound.grads();
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!all_finite(grads[i])) {
      throw std::runtime_error("non-finite gradient for " + net_->params().names()[i]);
    }
  }
  StepResult r;
  r.loss = value;
  r.lr = opts_.schedule == Schedule::kCosine
             ? cosine_lr(state_.step, opts_.total_steps, opts_.adam.lr, opts_.restart_period)
             : opts_.adam.lr;
  state_.options.lr = r.lr;
  adam_step(net_->params().values(), std::span<const Tensor<float>>(grads), state_);
  return r;
}

double Trainer::loss(const Batch& batch) const {
  Tape<float> tape;
  BoundParams<float> bound(tape, net_->params(), false);
  const auto preds = net_->forward(bound, tape.constant(batch.images));
  return total_loss(net_->config(), preds, batch.targets, opts_.weights, tape).value()[0];
}

Evaluator::Evaluator(const ModelConfig& cfg) : cfg_(cfg) {
  for (const auto& t : cfg_.tasks) seg_.emplace_back(t.kind == TaskKind::kSegmentation ? t.out_channels : 1);
  depth_.resize(cfg_.tasks.size());
  normals_.resize(cfg_.tasks.size());
}

void Evaluator::add(const EmaNet<float>& net, const Batch& batch) {
  Tape<float> tape;
  BoundParams<float> bound(tape, net.params(), false);
  const auto preds = net.forward(bound, tape.constant(batch.images));
  const auto& t = batch.targets;
  for (std::size_t k = 0; k < cfg_.tasks.size(); ++k) {
    const Tensor<float>& p = preds.final[k].value();
    switch (cfg_.tasks[k].kind) {
      case TaskKind::kSegmentation:
        seg_[k].add(argmax_labels(p), t.seg, t.seg_valid);
        break;
      case TaskKind::kDepth:
        depth_[k].add(p.data(), t.depth.data(), t.valid);
        break;
      case TaskKind::kNormals:
        normals_[k].add(p.data(), t.normals.data(), t.valid, t.batch, t.height * t.width);
        break;
    }
  }
}

MetricRecord Evaluator::record(const std::string& model) const {
  MetricRecord r;
  r.model = model;
  auto put = [](MetricRecord::TaskMetrics& tm, const char* name, const std::optional<double>& v) {
    if (v) tm.set(name, *v);
  };
  for (std::size_t k = 0; k < cfg_.tasks.size(); ++k) {
    auto& tm = r.task(cfg_.tasks[k].id);
    switch (cfg_.tasks[k].kind) {
      case TaskKind::kSegmentation:
        put(tm, "mIoU", seg_[k].mean_iou());
        put(tm, "pixAcc", seg_[k].pixel_accuracy());
        break;
      case TaskKind::kDepth:
        put(tm, "relErr", depth_[k].relative_error());
        put(tm, "mErr", depth_[k].mean_abs_error());
        break;
      case TaskKind::kNormals:
        put(tm, "mErr", normals_[k].mean_angle_deg());
        put(tm, "within11.25", normals_[k].within(0));
        put(tm, "within22.5", normals_[k].within(1));
        put(tm, "within30", normals_[k].within(2));
        break;
    }
  }
  return r;
}

}  // namespace emanet
