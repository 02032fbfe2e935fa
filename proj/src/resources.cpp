#include "emanet/resources.hpp"

namespace emanet {

namespace {

// params and flops of an initial/final residual head
CostComponent head_cost(std::int64_t in, std::int64_t c, std::int64_t out, std::int64_t area) {
  CostComponent h;
  h.params = conv_params(in, c, 1) + 4 * conv_params(c, c, 3) + conv_params(c, out, 1);
  h.flops = conv_flops(in, c, 1, area) + 4 * conv_flops(c, c, 3, area) + 2 * c * area  // two skip adds
            + conv_flops(c, out, 1, area);
  return h;
}

void add_to(CostComponent& into, const CostComponent& c) {
  into.params += c.params;
  into.flops += c.flops;
}

}  // namespace

std::int64_t grouped_fusion_params(std::int64_t tasks, std::int64_t height, std::int64_t width, std::int64_t filter,
                                   bool bias) {
  const std::int64_t hw = height * width;
  return hw * tasks * filter * filter + (bias ? hw : 0);
}

std::int64_t standard_fusion_params(std::int64_t tasks, std::int64_t height, std::int64_t width, std::int64_t filter) {
  const std::int64_t hw = height * width;
  return hw * (tasks * hw) * filter * filter;
}

std::int64_t conv_params(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t groups, bool bias) {
  return out * (in / groups) * kernel * kernel + (bias ? out : 0);
}

std::int64_t conv_flops(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t out_area,
                        std::int64_t groups) {
  return 2 * out * (in / groups) * kernel * kernel * out_area;
}

CtalFlops ctal_flop_breakdown(std::int64_t tasks, std::int64_t channels, std::int64_t height, std::int64_t width,
                              std::int64_t filter) {
  const std::int64_t hw = height * width;
  CtalFlops f;
  f.affinity = tasks * 2 * channels * hw * hw;
  f.fusion = tasks * 2 * tasks * filter * filter * hw * hw;
  f.projection = 2 * channels * channels * hw * tasks;
  f.diffusion = tasks * 2 * channels * hw * hw;
  f.blend = 3 * tasks * channels * hw;
  return f;
}

std::int64_t ctal_flops(std::int64_t tasks, std::int64_t channels, std::int64_t height, std::int64_t width,
                        std::int64_t filter) {
  return ctal_flop_breakdown(tasks, channels, height, width, filter).total();
}

std::int64_t CostReport::total_params() const {
  std::int64_t s = 0;
  for (const auto& c : components) s += c.params;
  return s;
}

std::int64_t CostReport::total_flops() const {
  std::int64_t s = 0;
  for (const auto& c : components) s += c.flops;
  return s;
}

const CostComponent* CostReport::find(const std::string& name) const {
  for (const auto& c : components) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

CostReport model_cost(const ModelConfig& cfg) {
  cfg.validate();
  CostReport r;
  r.tasks = cfg.task_count();
  r.channels = cfg.channels;
  r.input_height = cfg.input_height;
  r.input_width = cfg.input_width;
  r.distill_height = cfg.distill_height();
  r.distill_width = cfg.distill_width();
  r.filter = cfg.filter;
  r.scale = cfg.distill_denominator;
  r.variant = cfg.variant;

  const std::int64_t c = cfg.channels;
  const auto& w = cfg.encoder_widths;
  auto area = [&](int level) { return cfg.scale_height(level) * cfg.scale_width(level); };
  const std::int64_t a4 = area(0);

  CostComponent enc{"encoder"};
  const std::int64_t stem_area = (cfg.input_height / 2) * (cfg.input_width / 2);
  add_to(enc, {"", conv_params(3, w[0], 3), conv_flops(3, w[0], 3, stem_area)});
  add_to(enc, {"", conv_params(w[0], w[0], 3), conv_flops(w[0], w[0], 3, a4)});
  for (int l = 1; l < 4; ++l) add_to(enc, {"", conv_params(w[l - 1], w[l], 3), conv_flops(w[l - 1], w[l], 3, area(l))});
  r.components.push_back(enc);

  CostComponent csf{"csf"}, initial{"initial_heads"}, final{"final_heads"};
  for (const auto& t : cfg.tasks) {
    if (cfg.variant == Variant::kSingleScale) {
      add_to(initial, head_cost(c, c, t.out_channels, a4));
      add_to(final, head_cost(c, c, t.out_channels, a4));
    } else {
      for (int l = 0; l < 4; ++l) add_to(initial, head_cost(w[l], c, t.out_channels, area(l)));
      add_to(csf, {"", conv_params(4 * c, c, 3), conv_flops(4 * c, c, 3, a4)});
      add_to(final, {"", conv_params(c, c, 3) + conv_params(c, t.out_channels, 1),
                     conv_flops(c, c, 3, a4) + conv_flops(c, t.out_channels, 1, a4)});
    }
  }
  if (cfg.variant == Variant::kSingleScale) {
    const std::int64_t in = w[0] + w[1] + w[2] + w[3];
    add_to(csf, {"", conv_params(in, c, 3), conv_flops(in, c, 3, a4)});
  }
  r.components.push_back(csf);
  r.components.push_back(initial);

  const std::int64_t n = cfg.task_count(), dh = cfg.distill_height(), dw = cfg.distill_width(), f = cfg.filter;
  const CtalFlops cf = ctal_flop_breakdown(n, c, dh, dw, f);
  r.components.push_back({"ctal.affinity", 0, cf.affinity});
  r.components.push_back({"ctal.fusion", n * grouped_fusion_params(n, dh, dw, f, cfg.fusion_bias), cf.fusion});
  r.components.push_back({"ctal.projection", n * conv_params(c, c, 1), cf.projection});
  r.components.push_back({"ctal.diffusion", 0, cf.diffusion});
  r.components.push_back({"ctal.blend", 0, cf.blend});
  r.components.push_back(final);
  return r;
}

}  // namespace emanet
