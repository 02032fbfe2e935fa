#pragma once

// Analytic parameter and FLOP accounting. One multiply-add is 2 FLOPs; the
// element-wise add/sub/mul/scale ops are 1 FLOP per element. Bias adds,
// activations, normalization, resampling and layout changes are free, which
// is exactly what the runtime FlopCounter tallies.

#include <cstdint>
#include <string>
#include <vector>

#include "emanet/model_config.hpp"

namespace emanet {

/// Per-task parameters of the grouped fusion conv: HW groups of N x f x f.
std::int64_t grouped_fusion_params(std::int64_t tasks, std::int64_t height, std::int64_t width, std::int64_t filter,
                                   bool bias = false);
/// The same fusion as one dense conv over all N*HW channels.
std::int64_t standard_fusion_params(std::int64_t tasks, std::int64_t height, std::int64_t width, std::int64_t filter);

std::int64_t conv_params(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t groups = 1,
                         bool bias = true);
std::int64_t conv_flops(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t out_area,
                        std::int64_t groups = 1);

struct CtalFlops {
  std::int64_t affinity = 0;
  std::int64_t fusion = 0;
  std::int64_t projection = 0;
  std::int64_t diffusion = 0;
  std::int64_t blend = 0;

  std::int64_t total() const { return affinity + fusion + projection + diffusion + blend; }
};

/// FLOPs of one CTAL pass over a single image.
CtalFlops ctal_flop_breakdown(std::int64_t tasks, std::int64_t channels, std::int64_t height, std::int64_t width,
                              std::int64_t filter);
std::int64_t ctal_flops(std::int64_t tasks, std::int64_t channels, std::int64_t height, std::int64_t width,
                        std::int64_t filter);

struct CostComponent {
  std::string name;
  std::int64_t params = 0;
  std::int64_t flops = 0;
};

struct CostReport {
  // config echo
  std::int64_t tasks = 0;
  std::int64_t channels = 0;
  std::int64_t input_height = 0;
  std::int64_t input_width = 0;
  std::int64_t distill_height = 0;
  std::int64_t distill_width = 0;
  std::int64_t filter = 0;
  std::int64_t scale = 0;
  Variant variant = Variant::kSingleScale;

  std::vector<CostComponent> components;

  std::int64_t total_params() const;
  std::int64_t total_flops() const;
  const CostComponent* find(const std::string& name) const;
};

/// Per-image cost of one forward pass of the model described by `cfg`.
CostReport model_cost(const ModelConfig& cfg);

}  // namespace emanet
