#include "emanet/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace emanet {

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kSegmentation:
      return "segmentation";
    case TaskKind::kDepth:
      return "depth";
    case TaskKind::kNormals:
      return "normals";
  }
  return "unknown";
}

TaskKind parse_task_kind(const std::string& name) {
  if (name == "segmentation" || name == "seg") return TaskKind::kSegmentation;
  if (name == "depth") return TaskKind::kDepth;
  if (name == "normals" || name == "normal") return TaskKind::kNormals;
  throw ConfigError("unknown task '" + name + "' (expected segmentation, depth or normals)");
}

TaskSpec TaskSpec::segmentation(Index classes) {
  if (classes < 2) throw ConfigError("segmentation needs at least 2 classes");
  return {"segmentation", TaskKind::kSegmentation, classes, "mIoU", false};
}

TaskSpec TaskSpec::depth() { return {"depth", TaskKind::kDepth, 1, "relErr", true}; }

TaskSpec TaskSpec::normals() { return {"normals", TaskKind::kNormals, 3, "mErr", true}; }

TaskSpec TaskSpec::from_id(const std::string& id, Index classes) {
  switch (parse_task_kind(id)) {
    case TaskKind::kSegmentation:
      return segmentation(std::max<Index>(classes, 2));
    case TaskKind::kDepth:
      return depth();
    case TaskKind::kNormals:
      return normals();
  }
  throw ConfigError("unknown task '" + id + "'");
}

// ---------------------------------------------------------------------------

SegAccumulator::SegAccumulator(Index classes)
    : classes_(classes), confusion_(static_cast<std::size_t>(classes * classes), 0) {
  if (classes < 1) throw ConfigError("segmentation metrics need at least one class");
}

void SegAccumulator::add(std::span<const std::int32_t> predicted, std::span<const std::int32_t> labels,
                         std::span<const std::uint8_t> mask) {
  if (predicted.size() != labels.size() || labels.size() != mask.size()) {
    throw ShapeError("segmentation metrics: prediction, label and mask sizes differ");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!mask[i] || labels[i] < 0) continue;
    if (labels[i] >= classes_ || predicted[i] < 0 || predicted[i] >= classes_) {
      throw ShapeError("segmentation class id out of range");
    }
    ++confusion_[static_cast<std::size_t>(labels[i] * classes_ + predicted[i])];
  }
}

void SegAccumulator::merge(const SegAccumulator& other) {
  if (other.classes_ != classes_) throw ContractError("merging segmentation accumulators of different class counts");
  for (std::size_t i = 0; i < confusion_.size(); ++i) confusion_[i] += other.confusion_[i];
}

std::int64_t SegAccumulator::confusion(Index truth, Index predicted) const {
  return confusion_[static_cast<std::size_t>(truth * classes_ + predicted)];
}

std::optional<double> SegAccumulator::class_iou(Index c) const {
  std::int64_t tp = confusion(c, c), fn = 0, fp = 0;
  for (Index o = 0; o < classes_; ++o) {
    if (o == c) continue;
    fn += confusion(c, o);
    fp += confusion(o, c);
  }
  if (tp + fn == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
}

std::optional<double> SegAccumulator::mean_iou() const {
  double sum = 0;
  int present = 0;
  for (Index c = 0; c < classes_; ++c) {
    if (auto iou = class_iou(c)) {
      sum += *iou;
      ++present;
    }
  }
  if (present == 0) return std::nullopt;
  return sum / present;
}

std::optional<double> SegAccumulator::pixel_accuracy() const {
  std::int64_t correct = 0, total = 0;
  for (Index t = 0; t < classes_; ++t) {
    for (Index p = 0; p < classes_; ++p) {
      total += confusion(t, p);
      if (t == p) correct += confusion(t, p);
    }
  }
  if (total == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(total);
}

template <typename T>
void DepthAccumulator::add_impl(std::span<const T> pred, std::span<const T> target,
                                std::span<const std::uint8_t> mask) {
  if (pred.size() != target.size() || pred.size() != mask.size()) {
    throw ShapeError("depth metrics: prediction, target and mask sizes differ");
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    const double err = std::abs(static_cast<double>(pred[i]) - static_cast<double>(target[i]));
    abs_sum_ += err;
    ++abs_count_;
    if (static_cast<double>(target[i]) > eps_) {
      rel_sum_ += err / static_cast<double>(target[i]);
      ++rel_count_;
    }
  }
}

void DepthAccumulator::add(std::span<const float> pred, std::span<const float> target,
                           std::span<const std::uint8_t> mask) {
  add_impl(pred, target, mask);
}

void DepthAccumulator::add(std::span<const double> pred, std::span<const double> target,
                           std::span<const std::uint8_t> mask) {
  add_impl(pred, target, mask);
}

void DepthAccumulator::merge(const DepthAccumulator& other) {
  abs_sum_ += other.abs_sum_;
  rel_sum_ += other.rel_sum_;
  abs_count_ += other.abs_count_;
  rel_count_ += other.rel_count_;
}

std::optional<double> DepthAccumulator::relative_error() const {
  if (rel_count_ == 0) return std::nullopt;
  return rel_sum_ / static_cast<double>(rel_count_);
}

std::optional<double> DepthAccumulator::mean_abs_error() const {
  if (abs_count_ == 0) return std::nullopt;
  return abs_sum_ / static_cast<double>(abs_count_);
}

template <typename T>
void NormalsAccumulator::add_impl(std::span<const T> pred, std::span<const T> target,
                                  std::span<const std::uint8_t> mask, Index batch, Index area) {
  const auto n = static_cast<std::size_t>(batch * 3 * area);
  if (pred.size() != n || target.size() != n || mask.size() != static_cast<std::size_t>(batch * area)) {
    throw ShapeError("normals metrics: expected B x 3 x HW predictions and B x HW mask");
  }
  for (Index b = 0; b < batch; ++b) {
    for (Index p = 0; p < area; ++p) {
      if (!mask[static_cast<std::size_t>(b * area + p)]) continue;
      double v[3], s[3], vn = 0, sn = 0;
      for (int c = 0; c < 3; ++c) {
        const auto at = static_cast<std::size_t>(b * 3 * area + c * area + p);
        v[c] = static_cast<double>(pred[at]);
        s[c] = static_cast<double>(target[at]);
        vn += v[c] * v[c];
        sn += s[c] * s[c];
      }
      vn = std::max(std::sqrt(vn), kNormalizeEps);
      sn = std::max(std::sqrt(sn), kNormalizeEps);
      double dot = 0;
      for (int c = 0; c < 3; ++c) dot += (v[c] / vn) * (s[c] / sn);
      const double deg = std::acos(std::clamp(dot, -1.0, 1.0)) * 180.0 / std::numbers::pi;
      angle_sum_ += deg;
      ++count_;
      for (int t = 0; t < 3; ++t) {
        if (deg <= kThresholds[t]) ++within_[t];
      }
    }
  }
}

void NormalsAccumulator::add(std::span<const float> pred, std::span<const float> target,
                             std::span<const std::uint8_t> mask, Index batch, Index area) {
  add_impl(pred, target, mask, batch, area);
}

void NormalsAccumulator::add(std::span<const double> pred, std::span<const double> target,
                             std::span<const std::uint8_t> mask, Index batch, Index area) {
  add_impl(pred, target, mask, batch, area);
}

void NormalsAccumulator::merge(const NormalsAccumulator& other) {
  angle_sum_ += other.angle_sum_;
  count_ += other.count_;
  for (int t = 0; t < 3; ++t) within_[t] += other.within_[t];
}

std::optional<double> NormalsAccumulator::mean_angle_deg() const {
  if (count_ == 0) return std::nullopt;
  return angle_sum_ / static_cast<double>(count_);
}

std::optional<double> NormalsAccumulator::within(int i) const {
  if (count_ == 0) return std::nullopt;
  return static_cast<double>(within_[i]) / static_cast<double>(count_);
}

SegMetrics seg_metrics(std::span<const std::int32_t> predicted, std::span<const std::int32_t> labels,
                       std::span<const std::uint8_t> mask, Index classes) {
  SegAccumulator acc(classes);
  acc.add(predicted, labels, mask);
  return {acc.mean_iou(), acc.pixel_accuracy()};
}

DepthMetrics depth_metrics(std::span<const float> pred, std::span<const float> target,
                           std::span<const std::uint8_t> mask) {
  DepthAccumulator acc;
  acc.add(pred, target, mask);
  return {acc.relative_error(), acc.mean_abs_error()};
}

NormalsMetrics normals_metrics(std::span<const float> pred, std::span<const float> target,
                               std::span<const std::uint8_t> mask, Index batch, Index area) {
  NormalsAccumulator acc;
  acc.add(pred, target, mask, batch, area);
  return {acc.mean_angle_deg(), {acc.within(0), acc.within(1), acc.within(2)}};
}

// ---------------------------------------------------------------------------

std::optional<double> MetricRecord::TaskMetrics::get(const std::string& name) const {
  for (const auto& [k, v] : values) {
    if (k == name) return v;
  }
  return std::nullopt;
}

void MetricRecord::TaskMetrics::set(const std::string& name, double value) {
  for (auto& [k, v] : values) {
    if (k == name) {
      v = value;
      return;
    }
  }
  values.emplace_back(name, value);
}

const MetricRecord::TaskMetrics* MetricRecord::find(const std::string& task) const {
  for (const auto& t : tasks) {
    if (t.task == task) return &t;
  }
  return nullptr;
}

MetricRecord::TaskMetrics& MetricRecord::task(const std::string& task) {
  for (auto& t : tasks) {
    if (t.task == task) return t;
  }
  tasks.push_back({task, {}});
  return tasks.back();
}

void MetricRecord::write(std::ostream& os) const {
  os << "# emanet metric record v1\n";
  os << "model = " << model << '\n';
  std::ostringstream num;
  num.precision(10);
  for (const auto& t : tasks) {
    os << '[' << t.task << "]\n";
    for (const auto& [k, v] : t.values) {
      num.str("");
      num << v;
      os << k << " = " << num.str() << '\n';
    }
  }
}

namespace {
std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}
}  // namespace

MetricRecord MetricRecord::read(std::istream& is) {
  MetricRecord rec;
  std::string line;
  int lineno = 0;
  TaskMetrics* current = nullptr;
  auto fail = [&](const std::string& msg) {
    throw ConfigError("metric record line " + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) fail("malformed section header");
      current = &rec.task(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected 'name = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail("empty name");
    if (!current) {
      if (key != "model") fail("unknown top-level key '" + key + "'");
      rec.model = value;
      continue;
    }
    try {
      std::size_t used = 0;
      const double v = std::stod(value, &used);
      if (used != value.size()) fail("trailing characters in value '" + value + "'");
      current->set(key, v);
    } catch (const std::logic_error&) {
      fail("value '" + value + "' is not a number");
    }
  }
  return rec;
}

double mtl_gain(const MetricRecord& model, const MetricRecord& baseline, const std::vector<TaskSpec>& specs) {
  if (specs.empty()) throw ContractError("mtl_gain needs at least one task");
  double total = 0;
  for (const auto& spec : specs) {
    const auto* m = model.find(spec.id);
    const auto* b = baseline.find(spec.id);
    if (!m || !b) throw ContractError("task '" + spec.id + "' missing from a metric record");
    const auto mv = m->get(spec.delta_metric);
    const auto bv = b->get(spec.delta_metric);
    if (!mv || !bv) throw ContractError("metric '" + spec.delta_metric + "' missing for task '" + spec.id + "'");
    if (*bv == 0.0) throw std::domain_error("baseline " + spec.delta_metric + " of task '" + spec.id + "' is zero");
    const double sign = spec.lower_is_better ? -1.0 : 1.0;
    total += sign * (*mv - *bv) / *bv;
  }
  return 100.0 * total / static_cast<double>(specs.size());
}

}  // namespace emanet
