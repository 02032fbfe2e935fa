#include "emanet/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace emanet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& v) {
  Int out{};
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a number, got '" + v + "'");
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

Index positive(const std::string& key, Index v) {
  if (v < 1) throw ConfigError(key + " must be positive");
  return v;
}

template <typename T>
std::string str(const T& v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) out += (out.empty() ? "" : ",") + p;
  return out;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (key == "model.tasks") {
    auto list = split_list(v);
    if (list.empty()) throw ConfigError("model.tasks must name at least one task");
    for (const auto& t : list) {
      if (t != "segmentation" && t != "depth" && t != "normals") {
        throw ConfigError("model.tasks: unknown task '" + t + "' (segmentation, depth, normals)");
      }
      if (std::count(list.begin(), list.end(), t) > 1) throw ConfigError("model.tasks: '" + t + "' listed twice");
    }
    tasks = list;
  } else if (key == "model.channels") {
    channels = positive(key, parse_int<Index>(key, v));
  } else if (key == "model.encoder_widths") {
    const auto list = split_list(v);
    if (list.size() != 4) throw ConfigError("model.encoder_widths needs 4 comma-separated widths");
    for (std::size_t i = 0; i < 4; ++i) encoder_widths[i] = positive(key, parse_int<Index>(key, list[i]));
  } else if (key == "model.filter") {
    filter = parse_int<Index>(key, v);
    if (filter < 1 || filter % 2 == 0) throw ConfigError("model.filter must be odd and positive");
  } else if (key == "model.gamma") {
    gamma = parse_double(key, v);
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("model.gamma must lie in [0, 1]");
  } else if (key == "model.variant") {
    if (v == "ss") {
      variant = Variant::kSingleScale;
    } else if (v == "ms") {
      variant = Variant::kMultiScale;
    } else {
      throw ConfigError("model.variant must be ss or ms, got '" + v + "'");
    }
  } else if (key == "model.scale") {
    scale = parse_int<Index>(key, v);
    if (scale != 4 && scale != 6 && scale != 8) throw ConfigError("model.scale must be 4, 6 or 8");
  } else if (key == "model.deep_supervision") {
    deep_supervision = parse_bool(key, v);
  } else if (key == "model.fusion_bias") {
    fusion_bias = parse_bool(key, v);
  } else if (key == "optim.lr") {
    lr = parse_double(key, v);
    if (!(lr > 0)) throw ConfigError("optim.lr must be positive");
  } else if (key == "optim.weight_decay") {
    weight_decay = parse_double(key, v);
    if (!(weight_decay >= 0)) throw ConfigError("optim.weight_decay must be non-negative");
  } else if (key == "optim.decay_mode") {
    if (v == "coupled") {
      decay_mode = WeightDecayMode::kCoupled;
    } else if (v == "decoupled") {
      decay_mode = WeightDecayMode::kDecoupled;
    } else {
      throw ConfigError("optim.decay_mode must be coupled or decoupled");
    }
  } else if (key == "optim.schedule") {
    if (v == "cosine") {
      schedule = Schedule::kCosine;
    } else if (v == "constant") {
      schedule = Schedule::kConstant;
    } else {
      throw ConfigError("optim.schedule must be cosine or constant");
    }
  } else if (key == "optim.restart_period") {
    restart_period = parse_int<std::int64_t>(key, v);
    if (restart_period < 0) throw ConfigError("optim.restart_period must be >= 0");
  } else if (key == "data.seed") {
    data_seed = parse_int<std::uint64_t>(key, v);
  } else if (key == "data.count") {
    count = positive(key, parse_int<std::int64_t>(key, v));
  } else if (key == "data.height") {
    height = positive(key, parse_int<Index>(key, v));
  } else if (key == "data.width") {
    width = positive(key, parse_int<Index>(key, v));
  } else if (key == "data.classes") {
    classes = parse_int<Index>(key, v);
    if (classes < 2) throw ConfigError("data.classes must be at least 2");
  } else if (key == "data.eval_seed") {
    eval_seed = parse_int<std::uint64_t>(key, v);
  } else if (key == "data.eval_count") {
    eval_count = positive(key, parse_int<std::int64_t>(key, v));
  } else if (key == "run.seed") {
    seed = parse_int<std::uint64_t>(key, v);
  } else if (key == "run.epochs") {
    epochs = positive(key, parse_int<std::int64_t>(key, v));
  } else if (key == "run.batch") {
    batch = positive(key, parse_int<std::int64_t>(key, v));
  } else if (key == "run.out") {
    if (v.empty()) throw ConfigError("run.out must not be empty");
    out = v;
  } else if (key == "run.checkpoint") {
    checkpoint = v;
  } else {
    throw ConfigError("unknown key '" + key + "'");
  }
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  std::string widths;
  for (Index w : encoder_widths) widths += (widths.empty() ? "" : ",") + std::to_string(w);
  return {
      {"model.tasks", join(tasks)},
      {"model.channels", str(channels)},
      {"model.encoder_widths", widths},
      {"model.filter", str(filter)},
      {"model.gamma", str(gamma)},
      {"model.variant", to_string(variant)},
      {"model.scale", str(scale)},
      {"model.deep_supervision", deep_supervision ? "true" : "false"},
      {"model.fusion_bias", fusion_bias ? "true" : "false"},
      {"optim.lr", str(lr)},
      {"optim.weight_decay", str(weight_decay)},
      {"optim.decay_mode", decay_mode == WeightDecayMode::kCoupled ? "coupled" : "decoupled"},
      {"optim.schedule", schedule == Schedule::kCosine ? "cosine" : "constant"},
      {"optim.restart_period", str(restart_period)},
      {"data.seed", str(data_seed)},
      {"data.count", str(count)},
      {"data.height", str(height)},
      {"data.width", str(width)},
      {"data.classes", str(classes)},
      {"data.eval_seed", str(eval_seed)},
      {"data.eval_count", str(eval_count)},
      {"run.seed", str(seed)},
      {"run.epochs", str(epochs)},
      {"run.batch", str(batch)},
      {"run.out", out},
      {"run.checkpoint", checkpoint},
  };
}

ModelConfig RunConfig::model() const {
  ModelConfig m;
  m.tasks.clear();
  for (const auto& t : tasks) m.tasks.push_back(TaskSpec::from_id(t, classes));
  m.channels = channels;
  m.input_height = height;
  m.input_width = width;
  m.encoder_widths = encoder_widths;
  m.filter = filter;
  m.gamma = gamma;
  m.variant = variant;
  m.distill_denominator = scale;
  m.deep_supervision = deep_supervision;
  m.fusion_bias = fusion_bias;
  m.validate();
  return m;
}

DataOptions RunConfig::train_data() const {
  DataOptions d;
  d.seed = data_seed;
  d.count = count;
  d.height = height;
  d.width = width;
  d.classes = classes;
  return d;
}

DataOptions RunConfig::eval_data() const {
  DataOptions d = train_data();
  d.seed = eval_seed;
  d.count = eval_count;
  return d;
}

TrainOptions RunConfig::train_options() const {
  TrainOptions o;
  o.adam.lr = lr;
  o.adam.weight_decay = weight_decay;
  o.adam.decay_mode = decay_mode;
  o.schedule = schedule;
  o.total_steps = epochs * ((count + batch - 1) / batch);
  if (restart_period > 0) o.restart_period = restart_period;
  return o;
}

std::string RunConfig::checkpoint_path() const { return checkpoint.empty() ? out + "/model.ckpt" : checkpoint; }

RunConfig parse_config(std::istream& is, const std::string& source, RunConfig base) {
  std::string line;
  int number = 0;
  while (std::getline(is, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(number) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + line + "'");
    try {
      base.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return base;
}

RunConfig load_config(const std::string& path, RunConfig base) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(is, path, std::move(base));
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  try {
    cfg.set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("--set ") + e.what());
  }
}

}  // namespace emanet
