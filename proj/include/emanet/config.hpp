#pragma once

// Plain-text run configuration: one `key = value` per line, `#` comments.
// Unknown keys are rejected with a line-numbered diagnostic.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "emanet/data.hpp"
#include "emanet/model_config.hpp"
#include "emanet/train.hpp"

namespace emanet {

struct RunConfig {
  // model
  std::vector<std::string> tasks{"segmentation", "depth", "normals"};
  Index channels = 16;
  std::array<Index, 4> encoder_widths{16, 24, 32, 48};
  Index filter = 3;
  double gamma = 0.05;
  Variant variant = Variant::kSingleScale;
  Index scale = 4;
  bool deep_supervision = true;
  bool fusion_bias = true;
  // optim
  double lr = 1e-4;
  double weight_decay = 1e-4;
  WeightDecayMode decay_mode = WeightDecayMode::kCoupled;
  Schedule schedule = Schedule::kCosine;
  std::int64_t restart_period = 0;  // 0: no warm restarts
  // data
  std::uint64_t data_seed = 0;
  std::int64_t count = 16;
  Index height = 64;
  Index width = 64;
  Index classes = 5;
  std::uint64_t eval_seed = 1;
  std::int64_t eval_count = 8;
  // run
  std::uint64_t seed = 0;
  std::int64_t epochs = 1;
  std::int64_t batch = 8;
  std::string out = "out";
  std::string checkpoint;  // empty: <out>/model.ckpt

  /// Sets one key from its text form. Throws ConfigError on an unknown key or
  /// a malformed value.
  void set(const std::string& key, const std::string& value);
  /// Every key with its current value, in documentation order.
  std::vector<std::pair<std::string, std::string>> entries() const;

  ModelConfig model() const;
  DataOptions train_data() const;
  DataOptions eval_data() const;
  TrainOptions train_options() const;
  std::string checkpoint_path() const;
};

/// Parses `is`; errors read "<source>:<line>: <message>".
RunConfig parse_config(std::istream& is, const std::string& source = "<config>", RunConfig base = {});
RunConfig load_config(const std::string& path, RunConfig base = {});

/// Applies a "key=value" override.
void apply_override(RunConfig& cfg, const std::string& assignment);

}  // namespace emanet
