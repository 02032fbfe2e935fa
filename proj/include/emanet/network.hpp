#pragma once

// EMA-Net assembly: a strided-conv pyramid encoder, residual prediction
// heads, cross-scale fusion (CSF), and a single CTAL distillation stage.
//
// Single-scale (SS): encoder -> CSF -> initial heads -> CTAL -> final heads.
// Multi-scale (MS):  encoder -> per-scale initial heads -> per-task CSF ->
//                    CTAL -> final conv blocks.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "emanet/ctal.hpp"
#include "emanet/model_config.hpp"
#include "emanet/params.hpp"
#include "emanet/tasks.hpp"

namespace emanet {

inline constexpr Index kImageChannels = 3;

/// Registers a k x k convolution. Weights are uniform in +-sqrt(gain / fan_in)
/// (gain 6 ahead of a ReLU, 3 otherwise); bias starts at zero.
template <typename Scalar>
void add_conv(ParamStore<Scalar>& store, const std::string& name, Index out, Index in, Index k, bool feeds_relu,
              std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(in * k * k);
  store.add_uniform(name + ".weight", {out, in, k, k}, std::sqrt((feeds_relu ? 6.0 : 3.0) / fan_in), rng);
  store.add(name + ".bias", Tensor<Scalar>({out}));
}

template <typename Scalar>
Var<Scalar> conv_layer(const BoundParams<Scalar>& p, const std::string& name, const Var<Scalar>& x,
                       const Conv2dOptions& opt = {}) {
  const Var<Scalar> w = p[name + ".weight"];
  std::optional<Var<Scalar>> b;
  if (p.contains(name + ".bias")) b = p[name + ".bias"];
  Conv2dOptions o = opt;
  if (o.padding == 0 && o.stride == 1) o.padding = (w.dim(2) - 1) / 2;
  return conv2d(x, w, b, o);
}

// ---------------------------------------------------------------------------
// Encoder

template <typename Scalar>
void init_encoder(ParamStore<Scalar>& store, const ModelConfig& cfg, std::mt19937_64& rng) {
  const auto& w = cfg.encoder_widths;
  add_conv(store, "encoder.stem0", w[0], kImageChannels, 3, true, rng);
  add_conv(store, "encoder.stem1", w[0], w[0], 3, true, rng);
  for (int l = 1; l < 4; ++l) add_conv(store, "encoder.down" + std::to_string(l), w[l], w[l - 1], 3, true, rng);
}

/// Feature maps at 1/4, 1/8, 1/16 and 1/32 of the input resolution.
template <typename Scalar>
std::array<Var<Scalar>, 4> encoder_forward(const BoundParams<Scalar>& p, const Var<Scalar>& image) {
  if (image.rank() != 4 || image.dim(1) != kImageChannels) {
    throw ShapeError("encoder expects B x 3 x H x W images, got " + to_string(image.shape()));
  }
  if (image.dim(2) % 32 != 0 || image.dim(3) % 32 != 0) {
    throw ConfigError("encoder input " + std::to_string(image.dim(2)) + "x" + std::to_string(image.dim(3)) +
                      " is not divisible by 32");
  }
  const Conv2dOptions down{2, 1, 1};
  std::array<Var<Scalar>, 4> out;
  Var<Scalar> x = relu(conv_layer(p, "encoder.stem0", image, down));
  out[0] = relu(conv_layer(p, "encoder.stem1", x, down));
  for (int l = 1; l < 4; ++l) out[static_cast<std::size_t>(l)] = relu(conv_layer(p, "encoder.down" + std::to_string(l), out[static_cast<std::size_t>(l - 1)], down));
  return out;
}

// ---------------------------------------------------------------------------
// Heads

template <typename Scalar>
struct HeadOutput {
  Var<Scalar> intermediate;  // output of the second residual block
  Var<Scalar> prediction;
};

/// Input projection (1x1, in -> C), two residual blocks, output conv (1x1).
template <typename Scalar>
void init_head(ParamStore<Scalar>& store, const std::string& prefix, Index in, Index channels, Index out,
               std::mt19937_64& rng) {
  add_conv(store, prefix + ".in", channels, in, 1, false, rng);
  for (int r = 1; r <= 2; ++r) {
    const std::string block = prefix + ".res" + std::to_string(r);
    add_conv(store, block + ".conv1", channels, channels, 3, true, rng);
    add_conv(store, block + ".conv2", channels, channels, 3, false, rng);
  }
  add_conv(store, prefix + ".out", out, channels, 1, false, rng);
}

/// conv3x3 - ReLU - conv3x3 plus identity skip.
template <typename Scalar>
Var<Scalar> residual_block(const BoundParams<Scalar>& p, const std::string& prefix, const Var<Scalar>& x) {
  const Var<Scalar> h = relu(conv_layer(p, prefix + ".conv1", x));
  return add(conv_layer(p, prefix + ".conv2", h), x);
}

template <typename Scalar>
HeadOutput<Scalar> head_forward(const BoundParams<Scalar>& p, const std::string& prefix, const Var<Scalar>& features) {
  const Var<Scalar> x = conv_layer(p, prefix + ".in", features);
  const Var<Scalar> r1 = residual_block(p, prefix + ".res1", x);
  const Var<Scalar> r2 = residual_block(p, prefix + ".res2", r1);
  return {r2, conv_layer(p, prefix + ".out", r2)};
}

// ---------------------------------------------------------------------------
// Cross-scale fusion

/// Upsamples every input to (out_h, out_w), concatenates along channels, then
/// applies conv3x3 + ReLU.
template <typename Scalar>
Var<Scalar> csf_forward(const BoundParams<Scalar>& p, const std::string& prefix,
                        const std::vector<Var<Scalar>>& features, Index out_h, Index out_w) {
  if (features.empty()) throw ShapeError("cross-scale fusion of no features");
  std::vector<Var<Scalar>> aligned;
  for (const auto& f : features) aligned.push_back(resize_bilinear(f, out_h, out_w));
  const Var<Scalar> joined = aligned.size() == 1 ? aligned.front() : concat(aligned, 1);
  return relu(conv_layer(p, prefix + ".conv", joined));
}

// ---------------------------------------------------------------------------
// Whole model

template <typename Scalar>
struct Predictions {
  /// One per task, at 1/4 input resolution.
  std::vector<Var<Scalar>> final;
  /// initial[level][task], resampled to 1/4 input resolution. SS has one level.
  std::vector<std::vector<Var<Scalar>>> initial;
};

struct LossWeights {
  /// Per-task weight; empty means 1 for every task.
  std::vector<double> task;
  /// Multiplier on every initial-prediction (deep supervision) term.
  double initial = 1.0;

  double for_task(std::size_t t) const { return task.empty() ? 1.0 : task.at(t); }
};

template <typename Scalar>
class EmaNet {
 public:
  EmaNet(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (cfg_.variant == Variant::kMultiScale && !cfg_.deep_supervision) {
      throw ConfigError("the multi-scale variant is trained with deep supervision at every scale");
    }
    std::mt19937_64 rng(seed);
    init_encoder(store_, cfg_, rng);
    const Index c = cfg_.channels;
    const auto& widths = cfg_.encoder_widths;
    if (cfg_.variant == Variant::kSingleScale) {
      add_conv(store_, "csf.shared.conv", c, widths[0] + widths[1] + widths[2] + widths[3], 3, true, rng);
      for (const auto& t : cfg_.tasks) init_head(store_, "initial." + t.id, c, c, t.out_channels, rng);
    } else {
      for (int l = 0; l < 4; ++l) {
        for (const auto& t : cfg_.tasks) {
          init_head(store_, level_prefix(l, t.id), widths[static_cast<std::size_t>(l)], c, t.out_channels, rng);
        }
      }
      for (const auto& t : cfg_.tasks) add_conv(store_, "csf." + t.id + ".conv", c, 4 * c, 3, true, rng);
    }
    init_ctal_params(store_, "ctal", ctal_config(), rng);
    for (const auto& t : cfg_.tasks) {
      if (cfg_.variant == Variant::kSingleScale) {
        init_head(store_, "final." + t.id, c, c, t.out_channels, rng);
      } else {
        add_conv(store_, "final." + t.id + ".conv1", c, c, 3, true, rng);
        add_conv(store_, "final." + t.id + ".out", t.out_channels, c, 1, false, rng);
      }
    }
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<Scalar>& params() { return store_; }
  const ParamStore<Scalar>& params() const { return store_; }

  CtalConfig ctal_config() const {
    CtalConfig c;
    c.tasks = cfg_.task_count();
    c.channels = cfg_.channels;
    c.height = cfg_.distill_height();
    c.width = cfg_.distill_width();
    c.filter = cfg_.filter;
    c.gamma = cfg_.gamma;
    c.fusion_bias = cfg_.fusion_bias;
    return c;
  }

  static std::string level_prefix(int level, const std::string& task) {
    return "initial.s" + std::to_string(level) + "." + task;
  }

  Predictions<Scalar> forward(const BoundParams<Scalar>& p, const Var<Scalar>& image) const {
    if (image.dim(2) != cfg_.input_height || image.dim(3) != cfg_.input_width) {
      throw ShapeError("model configured for " + std::to_string(cfg_.input_height) + "x" +
                       std::to_string(cfg_.input_width) + " inputs, got " + to_string(image.shape()));
    }
    const auto feats = encoder_forward(p, image);
    const Index fh = cfg_.feature_height(), fw = cfg_.feature_width();
    Predictions<Scalar> out;
    std::vector<Var<Scalar>> distill_inputs;

    if (cfg_.variant == Variant::kSingleScale) {
      const Var<Scalar> fused = csf_forward(p, "csf.shared", {feats[0], feats[1], feats[2], feats[3]}, fh, fw);
      out.initial.emplace_back();
      for (const auto& t : cfg_.tasks) {
        HeadOutput<Scalar> h = head_forward(p, "initial." + t.id, fused);
        out.initial[0].push_back(h.prediction);
        distill_inputs.push_back(h.intermediate);
      }
    } else {
      std::vector<std::vector<Var<Scalar>>> per_task(cfg_.tasks.size());
      for (int l = 0; l < 4; ++l) {
        out.initial.emplace_back();
        for (std::size_t t = 0; t < cfg_.tasks.size(); ++t) {
          HeadOutput<Scalar> h = head_forward(p, level_prefix(l, cfg_.tasks[t].id), feats[static_cast<std::size_t>(l)]);
          out.initial.back().push_back(resize_bilinear(h.prediction, fh, fw));
          per_task[t].push_back(h.intermediate);
        }
      }
      for (std::size_t t = 0; t < cfg_.tasks.size(); ++t) {
        distill_inputs.push_back(csf_forward(p, "csf." + cfg_.tasks[t].id, per_task[t], fh, fw));
      }
    }

    const Index dh = cfg_.distill_height(), dw = cfg_.distill_width();
    std::vector<Var<Scalar>> scaled;
    for (const auto& f : distill_inputs) scaled.push_back(resize_bilinear(f, dh, dw));
    const auto refined = ctal_forward(scaled, CtalParams<Scalar>::bind(p, "ctal", ctal_config()));

    for (std::size_t t = 0; t < cfg_.tasks.size(); ++t) {
      const Var<Scalar> r = resize_bilinear(refined[t], fh, fw);
      const std::string prefix = "final." + cfg_.tasks[t].id;
      if (cfg_.variant == Variant::kSingleScale) {
        out.final.push_back(head_forward(p, prefix, r).prediction);
      } else {
        out.final.push_back(conv_layer(p, prefix + ".out", relu(conv_layer(p, prefix + ".conv1", r))));
      }
    }
    return out;
  }

 private:
  ModelConfig cfg_;
  ParamStore<Scalar> store_;
};

/// Weighted sum of final-prediction losses plus, with deep supervision, the
/// losses of every initial prediction. Zero-weight terms are left out.
template <typename Scalar>
Var<Scalar> total_loss(const ModelConfig& cfg, const Predictions<Scalar>& preds, const Targets<Scalar>& targets,
                       const LossWeights& weights, Tape<Scalar>& tape) {
  std::vector<Var<Scalar>> terms;
  auto push = [&](const TaskSpec& spec, const Var<Scalar>& pred, double w) {
    if (w < 0) throw ConfigError("loss weights must be non-negative");
    if (w == 0) return;
    MaskedLoss<Scalar> l = task_loss(spec, pred, targets);
    if (l.empty_mask) return;
    terms.push_back(w == 1.0 ? l.value : scale(l.value, static_cast<Scalar>(w)));
  };
  for (std::size_t t = 0; t < cfg.tasks.size(); ++t) {
    push(cfg.tasks[t], preds.final.at(t), weights.for_task(t));
  }
  if (cfg.deep_supervision) {
    for (const auto& level : preds.initial) {
      for (std::size_t t = 0; t < cfg.tasks.size(); ++t) {
        push(cfg.tasks[t], level.at(t), weights.initial * weights.for_task(t));
      }
    }
  }
  if (terms.empty()) return tape.constant(Tensor<Scalar>::scalar(0));
  return add_n(terms);
}

}  // namespace emanet
