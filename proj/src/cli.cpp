#include "emanet/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "emanet/binary_io.hpp"
#include "emanet/checkpoint.hpp"
#include "emanet/config.hpp"
#include "emanet/gradcheck.hpp"
#include "emanet/oracle.hpp"
#include "emanet/resources.hpp"
#include "emanet/train.hpp"

namespace emanet {

namespace {

namespace fs = std::filesystem;

struct CommonFlags {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<Index> scale;
  std::optional<std::string> out;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "key=value config file");
  cmd->add_option("--set", f.overrides, "override one config key (key=value), repeatable");
  cmd->add_option("--seed", f.seed, "run seed (model init, checks)");
  cmd->add_option("--scale", f.scale, "distillation scale denominator")->check(CLI::IsMember({4, 6, 8}));
  cmd->add_option("--out", f.out, "output directory");
}

RunConfig resolve(const CommonFlags& f) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : load_config(f.config);
  for (const auto& o : f.overrides) apply_override(cfg, o);
  if (f.seed) cfg.seed = *f.seed;
  if (f.scale) cfg.set("model.scale", std::to_string(*f.scale));
  if (f.out) cfg.set("run.out", *f.out);
  return cfg;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create directory '" + dir + "': " + ec.message());
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string signed_fixed(double v, int digits) { return (v >= 0 ? "+" : "") + fixed(v, digits); }

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  const ModelConfig mc = cfg.model();
  EmaNet<float> net(mc, cfg.seed);
  Trainer trainer(net, cfg.train_options());
  BatchIterator batches(cfg.train_data(), cfg.batch);
  ensure_dir(cfg.out);
  const std::string log_path = cfg.out + "/train_log.tsv";
  std::ofstream log(log_path);
  if (!log) throw std::runtime_error("cannot write " + log_path);
  log << "epoch\tsteps\tmean_loss\tlast_loss\tlr\n";
  out << "training " << to_string(mc.variant) << " model, " << net.params().scalar_count() << " parameters\n";
  for (std::int64_t e = 0; e < cfg.epochs; ++e) {
    double total = 0, last = 0, lr = 0;
    std::int64_t n = 0;
    while (auto batch = batches.next()) {
      const StepResult r = trainer.step(*batch);
      total += r.loss;
      last = r.loss;
      lr = r.lr;
      ++n;
    }
    const double mean_loss = total / static_cast<double>(std::max<std::int64_t>(n, 1));
    log << e + 1 << '\t' << trainer.steps_taken() << '\t' << std::setprecision(9) << mean_loss << '\t' << last << '\t'
        << lr << '\n';
    out << "epoch " << e + 1 << " mean_loss " << std::setprecision(6) << mean_loss << "\n";
  }
  save_checkpoint(cfg.checkpoint_path(), net.params());
  out << "wrote " << cfg.checkpoint_path() << " and " << log_path << "\n";
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, const std::string& output, std::ostream& out) {
  const ModelConfig mc = cfg.model();
  EmaNet<float> net(mc, cfg.seed);
  assign_params(net.params(), load_checkpoint(cfg.checkpoint_path()));
  Evaluator ev(mc);
  BatchIterator batches(cfg.eval_data(), cfg.batch);
  while (auto batch = batches.next()) ev.add(net, *batch);
  const MetricRecord rec = ev.record("emanet-" + to_string(mc.variant));
  const std::string path = output.empty() ? cfg.out + "/metrics.txt" : output;
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) ensure_dir(parent.string());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  rec.write(os);
  rec.write(out);
  return kExitOk;
}

int cmd_gradcheck(const RunConfig& cfg, std::ostream& out) {
  auto results = gradcheck_op_suite(cfg.seed);
  const auto model = gradcheck_model_suite(cfg.seed);
  results.insert(results.end(), model.begin(), model.end());
  bool ok = true;
  out << "# central differences, 64-bit, h = 1e-4 (1 + |x|), tolerance 1e-4\n";
  for (const auto& r : results) {
    out << (r.passed ? "PASS " : "FAIL ") << r.name << " max_rel_err=" << std::scientific << std::setprecision(3)
        << r.max_rel_error << " probes=" << r.probes << "\n";
    ok = ok && r.passed;
  }
  out << std::defaultfloat;
  return ok ? kExitOk : kExitVerificationFailed;
}

int cmd_oracle(const RunConfig& cfg, std::ostream& out) {
  bool ok = true;
  for (const auto& r : {grouped_fusion_oracle(cfg.seed), interleave_oracle(cfg.seed)}) {
    out << (r.passed ? "PASS " : "FAIL ") << r.name << " cases=" << r.cases << " max_abs_diff=" << std::scientific
        << std::setprecision(3) << r.max_abs_diff << std::defaultfloat << "\n";
    ok = ok && r.passed;
  }
  return ok ? kExitOk : kExitVerificationFailed;
}

void write_cost(const CostReport& r, std::ostream& out) {
  out << "# emanet cost report v1\n";
  out << "# flops: 1 multiply-add = 2 FLOPs; element-wise add/scale = 1 FLOP; bias, activation, normalization and "
         "resampling are not counted; per image\n";
  out << "# config: variant=" << to_string(r.variant) << " tasks=" << r.tasks << " channels=" << r.channels
      << " input=" << r.input_height << "x" << r.input_width << " distill=" << r.distill_height << "x"
      << r.distill_width << " scale=1/" << r.scale << " filter=" << r.filter << "\n";
  out << "component params flops\n";
  for (const auto& c : r.components) out << c.name << ' ' << c.params << ' ' << c.flops << '\n';
  out << "total " << r.total_params() << ' ' << r.total_flops() << '\n';

  const std::int64_t hw = r.distill_height * r.distill_width;
  const std::int64_t grouped = grouped_fusion_params(r.tasks, r.distill_height, r.distill_width, r.filter);
  const std::int64_t standard = standard_fusion_params(r.tasks, r.distill_height, r.distill_width, r.filter);
  out << "fusion.grouped_per_task " << grouped << ' ' << 2 * grouped * hw << '\n';
  out << "fusion.standard_per_task " << standard << ' ' << 2 * standard * hw << '\n';
  out << "# standard/grouped fusion parameter ratio: " << standard / grouped << " (= HW " << hw << ")\n";
}

int cmd_mtl_gain(const std::string& model_path, const std::string& baseline_path, std::ostream& out) {
  auto read = [](const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open metric record '" + path + "'");
    return MetricRecord::read(is);
  };
  const MetricRecord m = read(model_path), b = read(baseline_path);
  std::vector<TaskSpec> specs;
  for (const auto& t : b.tasks) specs.push_back(TaskSpec::from_id(t.task, 2));
  const double gain = mtl_gain(m, b, specs);
  out << "model " << m.model << " baseline " << b.model << "\n";
  out << "delta_m " << signed_fixed(gain, 2) << "\n";
  return kExitOk;
}

int cmd_gen_data(const RunConfig& cfg, std::ostream& out) {
  ensure_dir(cfg.out);
  const DataOptions d = cfg.train_data();
  for (std::int64_t i = 0; i < d.count; ++i) {
    const Scene s = generate_scene(scene_seed(d.seed, i), d.height, d.width, d.classes);
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%05lld.emsc", static_cast<long long>(i));
    const std::string path = cfg.out + "/" + name;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    write_scene(os, s);
  }
  out << "wrote " << d.count << " scenes to " << cfg.out << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"EMA-Net / cross-task affinity learning toolkit", "emanet"};
  app.require_subcommand(1, 1);

  CommonFlags flags;
  std::string eval_output, model_record, baseline_record;
  auto* train = app.add_subcommand("train", "train on synthetic scenes, write checkpoint and epoch log");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint, write a metric record");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  auto* oracle = app.add_subcommand("oracle", "grouped-fusion and interleave oracles");
  auto* cost = app.add_subcommand("cost", "analytic parameter/FLOP report");
  auto* gain = app.add_subcommand("mtl-gain", "multitask gain of MODEL over BASELINE metric records");
  auto* gen = app.add_subcommand("gen-data", "dump synthetic scenes");
  for (auto* c : {train, eval, gradcheck, oracle, cost, gen}) add_common(c, flags);
  eval->add_option("--output", eval_output, "metric record path (default <out>/metrics.txt)");
  gain->add_option("model", model_record, "metric record of the model")->required();
  gain->add_option("baseline", baseline_record, "metric record of the baseline")->required();

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "emanet: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*gain) return cmd_mtl_gain(model_record, baseline_record, out);
    const RunConfig cfg = resolve(flags);
    if (*train) return cmd_train(cfg, out);
    if (*eval) return cmd_eval(cfg, eval_output, out);
    if (*gradcheck) return cmd_gradcheck(cfg, out);
    if (*oracle) return cmd_oracle(cfg, out);
    if (*cost) {
      write_cost(model_cost(cfg.model()), out);
      return kExitOk;
    }
    if (*gen) return cmd_gen_data(cfg, out);
  } catch (const ConfigError& e) {
    err << "emanet: config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const binary::FormatError& e) {
    err << "emanet: bad file: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "emanet: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace emanet
