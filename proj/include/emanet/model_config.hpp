#pragma once

#include <array>
#include <string>
#include <vector>

#include "emanet/tasks.hpp"

namespace emanet {

enum class Variant { kSingleScale, kMultiScale };

inline std::string to_string(Variant v) { return v == Variant::kSingleScale ? "ss" : "ms"; }

struct ModelConfig {
  std::vector<TaskSpec> tasks{TaskSpec::segmentation(5), TaskSpec::depth(), TaskSpec::normals()};
  Index channels = 16;
  Index input_height = 64;
  Index input_width = 64;
  /// Encoder widths at 1/4, 1/8, 1/16 and 1/32 of the input.
  std::array<Index, 4> encoder_widths{16, 24, 32, 48};
  Index filter = 3;
  double gamma = 0.05;
  Variant variant = Variant::kSingleScale;
  /// Distillation at 1/denominator of the input: 4, 6 or 8.
  Index distill_denominator = 4;
  /// Supervise the initial predictions as well as the final ones.
  bool deep_supervision = true;
  bool fusion_bias = true;

  Index task_count() const { return static_cast<Index>(tasks.size()); }
  Index scale_height(int level) const { return input_height >> (2 + level); }
  Index scale_width(int level) const { return input_width >> (2 + level); }
  Index feature_height() const { return scale_height(0); }
  Index feature_width() const { return scale_width(0); }
  Index distill_height() const { return input_height / distill_denominator; }
  Index distill_width() const { return input_width / distill_denominator; }

  void validate() const {
    if (tasks.empty()) throw ConfigError("model needs at least one task");
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        if (tasks[i].id == tasks[j].id) throw ConfigError("task '" + tasks[i].id + "' listed twice");
      }
    }
    if (channels < 1) throw ConfigError("head channel count must be positive");
    for (Index w : encoder_widths) {
      if (w < 1) throw ConfigError("encoder widths must be positive");
    }
    if (input_height <= 0 || input_width <= 0 || input_height % 32 != 0 || input_width % 32 != 0) {
      throw ConfigError("input height and width must be positive multiples of 32, got " + std::to_string(input_height) +
                        "x" + std::to_string(input_width));
    }
    if (filter < 1 || filter % 2 == 0) throw ConfigError("filter size must be odd and positive");
    if (gamma < 0.0 || gamma > 1.0) throw ConfigError("gamma must lie in [0, 1]");
    if (distill_denominator != 4 && distill_denominator != 6 && distill_denominator != 8) {
      throw ConfigError("distillation scale must be 1/4, 1/6 or 1/8");
    }
    if (distill_height() < filter || distill_width() < filter) {
      throw ConfigError("distillation feature map " + std::to_string(distill_height()) + "x" +
                        std::to_string(distill_width()) + " is smaller than the filter");
    }
  }
};

}  // namespace emanet
