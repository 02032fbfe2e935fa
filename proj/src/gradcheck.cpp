#include "emanet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "emanet/ctal.hpp"
#include "emanet/network.hpp"

namespace emanet {

namespace {

using T = Tensor<double>;
using V = Var<double>;

T random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  return T::generate(shape, [&] { return u(rng); });
}

// Values bounded away from zero, so ReLU and |.| kinks stay out of reach of the step.
T signed_away_from_zero(const Shape& shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.2, 1.0);
  std::bernoulli_distribution sign(0.5);
  return T::generate(shape, [&] { return sign(rng) ? mag(rng) : -mag(rng); });
}

double norm(const std::vector<double>& v) {
  return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
}

}  // namespace

Var<double> random_projection(const Var<double>& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const V w = out.tape().constant(random_tensor(out.shape(), rng));
  return sum(mul(out, w));
}

GradCheckResult check_gradients(const std::string& name, const std::vector<Tensor<double>>& inputs,
                                const GradGraph& graph, const GradCheckOptions& options) {
  GradCheckResult result;
  result.name = name;

  Tape<double> tape;
  std::vector<V> leaves;
  for (const auto& x : inputs) leaves.push_back(tape.leaf(x));
  const V loss = graph(tape, leaves);
  tape.backward(loss);

  auto evaluate = [&](const std::vector<T>& xs) {
    Tape<double> t;
    std::vector<V> ls;
    for (const auto& x : xs) ls.push_back(t.constant(x));
    return graph(t, ls).value()[0];
  };

  std::mt19937_64 rng(options.seed);
  std::vector<T> work = inputs;
  const double f0 = options.skip_nonsmooth ? evaluate(work) : 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Index n = inputs[i].size();
    std::vector<Index> probe(static_cast<std::size_t>(n));
    std::iota(probe.begin(), probe.end(), 0);
    if (options.max_probes > 0 && options.max_probes < n) {
      std::shuffle(probe.begin(), probe.end(), rng);
      probe.resize(static_cast<std::size_t>(options.max_probes));
    }
    const T& analytic = leaves[i].grad();
    std::vector<double> a, diff, num;
    for (Index j : probe) {
      const double x0 = inputs[i][j];
      const double h = 1e-4 * (1.0 + std::abs(x0));
      work[i][j] = x0 + h;
      const double fp = evaluate(work);
      work[i][j] = x0 - h;
      const double fm = evaluate(work);
      work[i][j] = x0;
      const double numeric = (fp - fm) / (2 * h);
      if (options.skip_nonsmooth) {
        const double forward = (fp - f0) / h, backward = (f0 - fm) / h;
        bool kink = std::abs(forward - backward) > options.tolerance * std::max(std::abs(forward), std::abs(backward)) + 1e-9;
        if (!kink) {
          // Kinks on both sides can cancel in the one-sided test; a smooth
          // function also has D(h) == D(h/2) up to O(h^2).
          work[i][j] = x0 + h / 2;
          const double fp2 = evaluate(work);
          work[i][j] = x0 - h / 2;
          const double fm2 = evaluate(work);
          work[i][j] = x0;
          const double half = (fp2 - fm2) / h;
          kink = std::abs(half - numeric) > 0.1 * options.tolerance * std::max(std::abs(half), std::abs(numeric)) + 1e-9;
        }
        if (kink) {
          ++result.skipped;
          continue;
        }
      }
      a.push_back(analytic[j]);
      num.push_back(numeric);
      diff.push_back(analytic[j] - numeric);
      ++result.probes;
    }
    const double denom = std::max({norm(a), norm(num), 1e-6});
    const double err = norm(diff) / denom;
    if (i == 0 || err > result.max_rel_error) {
      result.max_rel_error = std::max(result.max_rel_error, err);
      result.worst_input = i;
    }
  }
  const double skipped = static_cast<double>(result.skipped) / static_cast<double>(std::max<std::int64_t>(result.probes + result.skipped, 1));
  result.passed = std::isfinite(result.max_rel_error) && result.max_rel_error < options.tolerance &&
                  skipped <= options.max_skipped_fraction && result.probes >= options.min_probes;
  return result;
}

std::vector<GradCheckResult> gradcheck_op_suite(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<GradCheckResult> out;
  auto check = [&](const std::string& name, std::vector<T> inputs, const GradGraph& g) {
    GradCheckOptions o;
    o.seed = seed;
    out.push_back(check_gradients(name, inputs, g, o));
  };
  const std::uint64_t ps = seed + 17;
  auto proj = [ps](const V& v) { return random_projection(v, ps); };

  check("matmul", {random_tensor({4, 3}, rng), random_tensor({3, 5}, rng)},
        [&](Tape<double>&, const std::vector<V>& x) { return proj(matmul(x[0], x[1])); });
  check("bmm", {random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 2}, rng)},
        [&](Tape<double>&, const std::vector<V>& x) { return proj(bmm(x[0], x[1])); });
  check("add_sub_mul_scale", {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)},
        [&](Tape<double>&, const std::vector<V>& x) {
          return proj(sub(add(mul(x[0], x[1]), scale(x[0], 0.7)), x[1]));
        });
  check("relu", {signed_away_from_zero({3, 4}, rng)},
        [&](Tape<double>&, const std::vector<V>& x) { return proj(relu(x[0])); });
  check("sum_mean", {random_tensor({3, 3}, rng)},
        [&](Tape<double>&, const std::vector<V>& x) { return add(sum(mul(x[0], x[0])), mean(x[0])); });
  check("reshape_permute_transpose", {random_tensor({2, 3, 4}, rng)},
        [&](Tape<double>&, const std::vector<V>& x) {
          return proj(transpose(permute(reshape(x[0], {4, 3, 2}), {2, 0, 1})));
        });
  check("concat_stack_slice", {random_tensor({2, 2, 3}, rng), random_tensor({2, 1, 3}, rng)},
        [&](Tape<double>&, const std::vector<V>& x) {
          const V c = concat(std::vector<V>{x[0], x[1]}, 1);
          return add(proj(stack(std::vector<V>{slice(c, 1, 2, 1), slice(x[0], 1, 0, 1)}, 0)), proj(c));
        });
  check("conv2d", {random_tensor({2, 4, 5, 5}, rng), random_tensor({6, 2, 3, 3}, rng), random_tensor({6}, rng)},
        [&](Tape<double>&, const std::vector<V>& x) {
          return proj(conv2d(x[0], x[1], std::optional<V>(x[2]), Conv2dOptions{2, 1, 2}));
        });
  check("conv2d_1x1", {random_tensor({1, 3, 4, 3}, rng), random_tensor({2, 3, 1, 1}, rng)},
        [&](Tape<double>&, const std::vector<V>& x) { return proj(conv2d(x[0], x[1], std::optional<V>())); });
  check("resize_bilinear", {random_tensor({1, 2, 5, 3}, rng)},
        [&](Tape<double>&, const std::vector<V>& x) {
          return add(proj(resize_bilinear(x[0], 3, 7)), proj(resize_bilinear(x[0], 2, 2)));
        });
  check("upsample_bilinear", {random_tensor({2, 1, 2, 3}, rng)},
        [&](Tape<double>&, const std::vector<V>& x) { return proj(upsample_bilinear(x[0], 2)); });
  check("l2_normalize_columns", {random_tensor({4, 5}, rng)},
        [&](Tape<double>&, const std::vector<V>& x) { return proj(l2_normalize_columns(x[0])); });
  check("l2_normalize_axis", {random_tensor({2, 3, 4}, rng)},
        [&](Tape<double>&, const std::vector<V>& x) { return proj(l2_normalize(x[0], 1)); });

  // CTAL stages: C=2, H=W=3, N=2, f=3
  const Index n = 2, c = 2, h = 3, w = 3, hw = h * w, f = 3;
  check("compute_affinity", {random_tensor({1, c, h, w}, rng)},
        [&](Tape<double>&, const std::vector<V>& x) { return proj(compute_affinity(x[0]).values); });
  check("fuse_task",
        {random_tensor({1, n * hw, h, w}, rng), random_tensor({hw, n, f, f}, rng), random_tensor({hw}, rng)},
        [&](Tape<double>&, const std::vector<V>& x) {
          const JointAffinity<double> joint{x[0], n, h, w};
          return proj(fuse_task(joint, x[1], std::optional<V>(x[2]), f, 0).values);
        });
  check("interleave_concat", {random_tensor({1, hw, h, w}, rng), random_tensor({1, hw, h, w}, rng)},
        [&](Tape<double>&, const std::vector<V>& x) { return proj(interleave_concat(std::vector<V>{x[0], x[1]}).values); });
  check("project", {random_tensor({1, c, h, w}, rng), random_tensor({c, c, 1, 1}, rng), random_tensor({c}, rng)},
        [&](Tape<double>&, const std::vector<V>& x) { return proj(project(x[0], x[1], std::optional<V>(x[2]))); });
  check("diffuse", {random_tensor({1, c, hw}, rng), random_tensor({1, hw, hw}, rng)},
        [&](Tape<double>&, const std::vector<V>& x) { return proj(diffuse(x[0], CrossTaskMatrix<double>{0, x[1]})); });
  check("blend", {random_tensor({1, c, hw}, rng), random_tensor({1, c, h, w}, rng)},
        [&](Tape<double>&, const std::vector<V>& x) { return proj(blend(x[0], x[1], 0.3)); });

  {
    std::vector<T> inputs = {random_tensor({1, c, h, w}, rng), random_tensor({1, c, h, w}, rng)};
    for (Index k = 0; k < n; ++k) {
      inputs.push_back(random_tensor({hw, n, f, f}, rng));
      inputs.push_back(random_tensor({hw}, rng));
      inputs.push_back(random_tensor({c, c, 1, 1}, rng));
      inputs.push_back(random_tensor({c}, rng));
    }
    check("ctal_forward", inputs, [&](Tape<double>&, const std::vector<V>& x) {
      CtalParams<double> p;
      p.filter = f;
      p.gamma = 0.5;
      for (Index k = 0; k < n; ++k) {
        const auto o = static_cast<std::size_t>(2 + 4 * k);
        p.tasks.push_back({x[o], x[o + 1], x[o + 2], x[o + 3]});
      }
      const auto refined = ctal_forward(std::vector<V>{x[0], x[1]}, p);
      return add(sum(refined[0]), sum(refined[1]));
    });
  }

  // losses over a 2 x 3 x 3 batch with one masked pixel
  const Index b = 2, lh = 3, lw = 3;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(b * lh * lw), 1);
  mask[4] = 0;
  Targets<double> tg;
  tg.batch = b;
  tg.height = lh;
  tg.width = lw;
  std::uniform_int_distribution<int> cls(0, 2);
  for (std::size_t i = 0; i < mask.size(); ++i) tg.seg.push_back(cls(rng));
  tg.seg_valid = mask;
  tg.valid = mask;
  tg.depth = random_tensor({b, 1, lh, lw}, rng, 1.0, 2.0);
  tg.normals = kernels::l2_normalize(random_tensor({b, 3, lh, lw}, rng), 1, 1e-12);
  check("seg_loss", {random_tensor({b, 3, lh, lw}, rng)}, [=](Tape<double>&, const std::vector<V>& x) {
    return task_loss(TaskSpec::segmentation(3), x[0], tg).value;
  });
  check("depth_loss", {random_tensor({b, 1, lh, lw}, rng, 3.0, 4.0)}, [=](Tape<double>&, const std::vector<V>& x) {
    return task_loss(TaskSpec::depth(), x[0], tg).value;
  });
  check("normals_loss", {random_tensor({b, 3, lh, lw}, rng)}, [=](Tape<double>&, const std::vector<V>& x) {
    return task_loss(TaskSpec::normals(), x[0], tg).value;
  });
  return out;
}

std::vector<GradCheckResult> gradcheck_model_suite(std::uint64_t seed) {
  std::vector<GradCheckResult> out;
  for (Variant variant : {Variant::kSingleScale, Variant::kMultiScale}) {
    ModelConfig cfg;
    cfg.tasks = {TaskSpec::segmentation(3), TaskSpec::depth()};
    cfg.channels = 2;
    cfg.encoder_widths = {2, 2, 3, 3};
    cfg.input_height = 32;
    cfg.input_width = 32;
    cfg.distill_denominator = 8;
    cfg.gamma = 0.5;
    cfg.variant = variant;
    EmaNet<double> net(cfg, seed);
    // Nonzero biases so every bias gradient is exercised.
    std::mt19937_64 rng(seed + 1);
    for (std::size_t i = 0; i < net.params().count(); ++i) {
      const std::string& pname = net.params().names()[i];
      if (pname.size() > 5 && pname.ends_with(".bias")) {
        net.params().values()[i] = random_tensor(net.params().values()[i].shape(), rng, -0.1, 0.1);
      }
    }

    const Index b = 1, lh = cfg.feature_height(), lw = cfg.feature_width();
    Targets<double> tg;
    tg.batch = b;
    tg.height = lh;
    tg.width = lw;
    std::uniform_int_distribution<int> cls(0, 2);
    for (Index i = 0; i < b * lh * lw; ++i) tg.seg.push_back(cls(rng));
    tg.valid.assign(static_cast<std::size_t>(b * lh * lw), 1);
    tg.valid[3] = 0;
    tg.seg_valid = tg.valid;
    tg.depth = random_tensor({b, 1, lh, lw}, rng, 5.0, 6.0);
    tg.normals = T({b, 3, lh, lw});

    std::vector<T> inputs{random_tensor({b, 3, cfg.input_height, cfg.input_width}, rng, 0.0, 1.0)};
    for (const auto& v : net.params().values()) inputs.push_back(v);

    const ParamStore<double>& store = net.params();
    GradGraph graph = [&](Tape<double>& tape, const std::vector<V>& x) {
      BoundParams<double> bound(store, std::vector<V>(x.begin() + 1, x.end()));
      const auto preds = net.forward(bound, x[0]);
      return total_loss(cfg, preds, tg, LossWeights{}, tape);
    };
    GradCheckOptions o;
    o.seed = seed;
    o.max_probes = 6;
    // A ReLU network at this step size crosses roughly one kink per probe, so
    // a large share of probes is legitimately non-smooth.
    o.skip_nonsmooth = true;
    o.max_skipped_fraction = 0.6;
    o.min_probes = 100;
    out.push_back(check_gradients("model_" + to_string(variant), inputs, graph, o));
  }
  return out;
}

}  // namespace emanet
