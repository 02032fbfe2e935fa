// One line per acceptance criterion; exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "emanet/ctal.hpp"
#include "emanet/data.hpp"
#include "emanet/gradcheck.hpp"
#include "emanet/network.hpp"
#include "emanet/oracle.hpp"
#include "emanet/resources.hpp"
#include "emanet/tasks.hpp"
#include "emanet/train.hpp"

using namespace emanet;

namespace {

using Td = Tensor<double>;
using Vd = Var<double>;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Td random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> d(lo, hi);
  return Td::generate(std::move(shape), [&] { return d(rng); });
}

Index random_int(std::mt19937_64& rng, Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng); }

// ---------------------------------------------------------------------------

Verdict ac1() {
  const auto grouped = grouped_fusion_params(3, 72, 96, 3);
  const auto standard = standard_fusion_params(3, 72, 96, 3);
  const bool ok = grouped == 186624 && standard == 1289945088 && standard % grouped == 0 && standard / grouped == 6912;
  return {ok, fmt("grouped=%lld standard=%lld ratio=%lld", static_cast<long long>(grouped),
                  static_cast<long long>(standard), static_cast<long long>(standard / grouped))};
}

Verdict ac2() {
  auto rec = [](std::vector<std::pair<std::string, double>> v) {
    MetricRecord r;
    const char* tasks[] = {"segmentation", "depth", "normals"};
    const char* metrics[] = {"mIoU", "relErr", "mErr"};
    for (std::size_t i = 0; i < v.size(); ++i) r.task(tasks[i]).set(metrics[i], v[i].second);
    return r;
  };
  const std::vector<TaskSpec> nyu{TaskSpec::segmentation(40), TaskSpec::depth(), TaskSpec::normals()};
  const std::vector<TaskSpec> city{TaskSpec::segmentation(7), TaskSpec::depth()};
  const auto nyu_stl = rec({{"", 49.23}, {"", 0.1636}, {"", 23.15}});
  const auto city_stl = rec({{"", 48.89}, {"", 29.91}});
  struct Row {
    const char* name;
    MetricRecord m;
    const MetricRecord* base;
    const std::vector<TaskSpec>* specs;
    double expected;
  };
  const Row rows[] = {
      {"ss/nyu", rec({{"", 51.59}, {"", 0.1607}, {"", 22.84}}), &nyu_stl, &nyu, 2.64},
      {"ms/nyu", rec({{"", 52.70}, {"", 0.1529}, {"", 22.99}}), &nyu_stl, &nyu, 4.76},
      {"ss/city", rec({{"", 51.36}, {"", 23.84}}), &city_stl, &city, 12.67},
      {"ms/city", rec({{"", 51.94}, {"", 22.89}}), &city_stl, &city, 14.85},
      {"mtl/nyu", rec({{"", 49.25}, {"", 0.1658}, {"", 24.16}}), &nyu_stl, &nyu, -1.89},
      {"mti/nyu", rec({{"", 51.51}, {"", 0.1538}, {"", 23.50}}), &nyu_stl, &nyu, 3.04},
      {"pap/city", rec({{"", 50.82}, {"", 26.97}}), &city_stl, &city, 6.89},
  };
  bool ok = true;
  std::ostringstream d;
  for (const auto& r : rows) {
    const double g = mtl_gain(r.m, *r.base, *r.specs);
    ok = ok && std::abs(g - r.expected) <= 0.01;
    d << r.name << fmt("=%+.2f ", g);
  }
  std::string detail = d.str();
  detail.pop_back();
  return {ok, detail};
}

Verdict ac3() {
  const auto r = grouped_fusion_oracle(2024, 60);
  return {r.passed && r.cases >= 50 && r.max_abs_diff < 1e-6,
          fmt("cases=%lld max_abs_diff=%.3e", static_cast<long long>(r.cases), r.max_abs_diff)};
}

Verdict ac4() {
  bool ok = true, saw_ctal = false;
  double worst = 0;
  std::string worst_name;
  int count = 0;
  for (const auto& r : gradcheck_op_suite(0)) {
    ++count;
    ok = ok && r.passed && r.max_rel_error < 1e-4;
    saw_ctal = saw_ctal || r.name == "ctal_forward";
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = r.name;
    }
  }
  return {ok && saw_ctal, fmt("ops=%d worst=%s rel_err=%.3e", count, worst_name.c_str(), worst)};
}

Verdict ac5() {
  std::mt19937_64 rng(5);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Index c = random_int(rng, 1, 6), h = random_int(rng, 1, 6), w = random_int(rng, 1, 6), hw = h * w;
    const Td f = random_tensor(rng, {1, c, h, w});
    Td scaled = f;
    scaled.array() *= std::uniform_real_distribution<double>(0.01, 100)(rng);
    Tape<double> tape;
    const Td a = compute_affinity(tape.constant(f)).values.value();
    const Td as = compute_affinity(tape.constant(scaled)).values.value();
    worst = std::max(worst, max_abs_diff(a, as));
    for (Index i = 0; i < hw; ++i) {
      double norm = 0;
      for (Index k = 0; k < c; ++k) norm += f[k * hw + i] * f[k * hw + i];
      if (std::sqrt(norm) > kNormalizeEps) worst = std::max(worst, std::abs(a.at({0, i, i}) - 1));
      for (Index j = 0; j < hw; ++j) {
        const double v = a.at({0, i, j});
        worst = std::max({worst, std::abs(v - a.at({0, j, i})), v - 1, -1 - v});
      }
    }
  }
  return {worst <= 1e-6, fmt("maps=100 worst_violation=%.3e", worst)};
}

Verdict ac6() {
  std::mt19937_64 rng(6);
  // gamma = 0: exact identity
  bool identity = true;
  for (int trial = 0; trial < 10; ++trial) {
    CtalConfig cfg;
    cfg.tasks = random_int(rng, 1, 3);
    cfg.channels = random_int(rng, 1, 4);
    cfg.height = random_int(rng, 3, 5);
    cfg.width = random_int(rng, 3, 5);
    cfg.gamma = 0;
    ParamStore<double> store;
    init_ctal_params(store, "ctal", cfg, rng);
    Tape<double> tape;
    BoundParams<double> p(tape, store, false);
    std::vector<Vd> feats;
    for (Index k = 0; k < cfg.tasks; ++k) feats.push_back(tape.constant(random_tensor(rng, {2, cfg.channels, cfg.height, cfg.width})));
    const auto out = ctal_forward(feats, CtalParams<double>::bind(p, "ctal", cfg));
    for (std::size_t k = 0; k < feats.size(); ++k) identity = identity && out[k].value() == feats[k].value();
  }
  // N = 1, f = 1, unit fusion weight: F^d = F^p A^T, checked position by position
  double worst = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const Index c = random_int(rng, 1, 4), h = random_int(rng, 1, 5), w = random_int(rng, 1, 5), hw = h * w;
    const Td f = random_tensor(rng, {1, c, h, w});
    const Td fp = random_tensor(rng, {1, c, hw});
    Tape<double> tape;
    const auto a = compute_affinity(tape.constant(f));
    const auto joint = interleave_concat(std::vector<Vd>{reshape_affinity(a)});
    const auto g = fuse_task(joint, tape.constant(Td({hw, 1, 1, 1}, 1.0)), std::nullopt, 1, 0);
    const Td d = diffuse(tape.constant(fp), g).value();
    for (Index ch = 0; ch < c; ++ch) {
      for (Index r = 0; r < hw; ++r) {
        double acc = 0;
        for (Index q = 0; q < hw; ++q) {
          double dot = 0, nr = 0, nq = 0;
          for (Index k = 0; k < c; ++k) {
            dot += f[k * hw + r] * f[k * hw + q];
            nr += f[k * hw + r] * f[k * hw + r];
            nq += f[k * hw + q] * f[k * hw + q];
          }
          acc += dot / std::max(std::sqrt(nr), kNormalizeEps) / std::max(std::sqrt(nq), kNormalizeEps) * fp[ch * hw + q];
        }
        worst = std::max(worst, std::abs(d[ch * hw + r] - acc));
      }
    }
  }
  return {identity && worst < 1e-6, fmt("gamma0_identity=%s diffusion_oracle_max_diff=%.3e", identity ? "exact" : "broken", worst)};
}

Verdict ac7() {
  const auto r = interleave_oracle(7);
  return {r.passed && r.max_abs_diff == 0.0, fmt("N=1..3 cases=%lld max_abs_diff=%.1f", static_cast<long long>(r.cases), r.max_abs_diff)};
}

Verdict ac8() {
  ModelConfig cfg;
  cfg.variant = Variant::kMultiScale;
  cfg.channels = 4;
  cfg.encoder_widths = {4, 4, 6, 6};
  EmaNet<float> net(cfg, 8);
  Tape<float> tape;
  BoundParams<float> p(tape, net.params(), false);
  const auto before = ctal_invocations();
  const auto preds = net.forward(p, tape.constant(Tensor<float>({1, 3, 64, 64}, 0.5f)));
  const auto calls = ctal_invocations() - before;
  std::size_t initial = 0;
  for (const auto& level : preds.initial) initial += level.size();
  const bool ok = calls == 1 && preds.initial.size() == 4 && initial == 4 * cfg.tasks.size();
  return {ok, fmt("ctal_calls=%lld initial_predictions=%zu (4 scales x %zu tasks)", static_cast<long long>(calls), initial,
                  cfg.tasks.size())};
}

Verdict ac9() {
  const auto f4 = ctal_flops(3, 16, 72, 96, 3), f6 = ctal_flops(3, 16, 48, 64, 3), f8 = ctal_flops(3, 16, 36, 48, 3);
  bool exact = true;
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    CtalConfig cfg;
    cfg.tasks = random_int(rng, 1, 3);
    cfg.channels = random_int(rng, 1, 4);
    cfg.height = random_int(rng, 3, 6);
    cfg.width = random_int(rng, 3, 6);
    ParamStore<double> store;
    init_ctal_params(store, "ctal", cfg, rng);
    Tape<double> tape;
    BoundParams<double> p(tape, store, false);
    std::vector<Vd> feats;
    for (Index k = 0; k < cfg.tasks; ++k) feats.push_back(tape.constant(random_tensor(rng, {1, cfg.channels, cfg.height, cfg.width})));
    FlopCounter counter;
    ctal_forward(feats, CtalParams<double>::bind(p, "ctal", cfg));
    exact = exact && counter.count() == ctal_flops(cfg.tasks, cfg.channels, cfg.height, cfg.width, cfg.filter);
  }
  return {f4 > f6 && f6 > f8 && exact,
          fmt("flops 1/4=%lld 1/6=%lld 1/8=%lld instrumented=%s", static_cast<long long>(f4), static_cast<long long>(f6),
              static_cast<long long>(f8), exact ? "exact" : "mismatch")};
}

Verdict ac10() {
  ModelConfig cfg;  // SS, segmentation/depth/normals, 64x64
  EmaNet<float> net(cfg, 7);
  std::vector<Scene> scenes;
  std::vector<std::int64_t> idx;
  for (std::int64_t i = 0; i < 8; ++i) {
    scenes.push_back(generate_scene(scene_seed(3, i), 64, 64, 5));
    idx.push_back(i);
  }
  const Batch batch = make_batch(scenes, idx, 4);
  TrainOptions opts;
  opts.adam.lr = 1e-3;
  opts.schedule = Schedule::kCosine;
  opts.total_steps = 300;
  Trainer trainer(net, opts);
  const double first = trainer.loss(batch);
  int reached = -1;
  try {
    for (int s = 1; s <= 300; ++s) {
      trainer.step(batch);
      if (reached < 0 && s % 10 == 0 && trainer.loss(batch) <= 0.1 * first) reached = s;
    }
  } catch (const std::exception& e) {
    return {false, std::string("non-finite values: ") + e.what()};
  }
  const double last = trainer.loss(batch);
  bool finite = std::isfinite(last);
  for (const auto& t : net.params().values()) {
    for (float v : t.data()) finite = finite && std::isfinite(v);
  }
  const double drop = 1 - last / first;
  return {finite && drop >= 0.9, fmt("loss %.4f -> %.4f (drop %.1f%%, 90%% first seen at step %d) finite=%s", first, last,
                                     100 * drop, reached, finite ? "yes" : "no")};
}

Verdict ac11() {
  std::mt19937_64 rng(11);
  bool same = true;
  int trials = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Index b = random_int(rng, 1, 2), h = random_int(rng, 2, 6), w = random_int(rng, 2, 6), area = h * w;
    const Index k = 4;
    Targets<double> t;
    t.batch = b;
    t.height = h;
    t.width = w;
    std::uniform_int_distribution<int> coin(0, 1), cls(0, static_cast<int>(k - 1));
    for (Index i = 0; i < b * area; ++i) {
      t.seg.push_back(cls(rng));
      t.valid.push_back(static_cast<std::uint8_t>(coin(rng)));
      t.seg_valid.push_back(static_cast<std::uint8_t>(coin(rng)));
    }
    t.depth = random_tensor(rng, {b, 1, h, w}, 0.5, 5);
    t.normals = random_tensor(rng, {b, 3, h, w});
    Td logits = random_tensor(rng, {b, k, h, w}), depth = random_tensor(rng, {b, 1, h, w}, 0.5, 5),
       normals = random_tensor(rng, {b, 3, h, w});

    auto measure = [&](const Td& lg, const Td& dp, const Td& nm) {
      Tape<double> tape;
      std::vector<double> v;
      v.push_back(task_loss(TaskSpec::segmentation(k), tape.constant(lg), t).value.value()[0]);
      v.push_back(task_loss(TaskSpec::depth(), tape.constant(dp), t).value.value()[0]);
      v.push_back(task_loss(TaskSpec::normals(), tape.constant(nm), t).value.value()[0]);
      const auto labels = argmax_labels(lg);
      const auto seg = seg_metrics(labels, t.seg, t.seg_valid, k);
      std::vector<float> dpf(dp.data().begin(), dp.data().end()), dtf(t.depth.data().begin(), t.depth.data().end());
      std::vector<float> npf(nm.data().begin(), nm.data().end()), ntf(t.normals.data().begin(), t.normals.data().end());
      const auto dm = depth_metrics(dpf, dtf, t.valid);
      const auto nmx = normals_metrics(npf, ntf, t.valid, b, area);
      for (const auto& o : {seg.miou, seg.pix_acc, dm.rel_err, dm.mean_err, nmx.mean_err_deg, nmx.within[0], nmx.within[1],
                            nmx.within[2]}) {
        v.push_back(o ? *o : -1.0);
      }
      return v;
    };
    const auto before = measure(logits, depth, normals);
    for (Index n = 0; n < b; ++n) {
      for (Index p = 0; p < area; ++p) {
        const auto i = static_cast<std::size_t>(n * area + p);
        if (!t.seg_valid[i]) {
          for (Index c = 0; c < k; ++c) logits[(n * k + c) * area + p] += 10.0 * static_cast<double>(c);
        }
        if (!t.valid[i]) {
          depth[n * area + p] += 7;
          for (Index c = 0; c < 3; ++c) normals[(n * 3 + c) * area + p] *= -2;
        }
      }
    }
    same = same && measure(logits, depth, normals) == before;
    ++trials;
  }
  return {same, fmt("trials=%d losses and metrics bit-identical=%s", trials, same ? "yes" : "no")};
}

}  // namespace

int main() {
  struct Criterion {
    const char* id;
    const char* title;
    std::function<Verdict()> run;
  };
  const Criterion criteria[] = {
      {"AC1", "fusion parameter arithmetic", ac1},
      {"AC2", "MTL gain reproduction", ac2},
      {"AC3", "grouped fusion oracle", ac3},
      {"AC4", "gradient suite", ac4},
      {"AC5", "affinity invariants", ac5},
      {"AC6", "identity reductions", ac6},
      {"AC7", "interleave layout", ac7},
      {"AC8", "single CTAL in MS forward", ac8},
      {"AC9", "scale/FLOP monotonicity", ac9},
      {"AC10", "training smoke", ac10},
      {"AC11", "masking invariance", ac11},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%-4s %s  %s: %s [%.2fs]\n", c.id, v.pass ? "PASS" : "FAIL", c.title, v.detail.c_str(), secs);
    std::fflush(stdout);
    if (!v.pass) ++failed;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(std::size(criteria)) - failed, std::size(criteria));
  return failed == 0 ? 0 : 1;
}
