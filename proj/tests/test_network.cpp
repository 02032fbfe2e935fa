#include <gtest/gtest.h>

#include <cmath>

#include "emanet/data.hpp"
#include "emanet/network.hpp"
#include "emanet/resources.hpp"
#include "emanet/train.hpp"
#include "support.hpp"

using namespace emanet;
using emanet::testing::Gen;

using Tf = Tensor<float>;
using Vf = Var<float>;

namespace {

ModelConfig small_config(Variant variant = Variant::kSingleScale) {
  ModelConfig cfg;
  cfg.tasks = {TaskSpec::segmentation(3), TaskSpec::depth(), TaskSpec::normals()};
  cfg.channels = 4;
  cfg.encoder_widths = {4, 4, 6, 6};
  cfg.input_height = 64;
  cfg.input_width = 64;
  cfg.variant = variant;
  return cfg;
}

Batch scene_batch(std::uint64_t seed, std::int64_t n, Index classes = 3) {
  std::vector<Scene> scenes;
  std::vector<std::int64_t> idx;
  for (std::int64_t i = 0; i < n; ++i) {
    scenes.push_back(generate_scene(scene_seed(seed, i), 64, 64, classes));
    idx.push_back(i);
  }
  return make_batch(scenes, idx, 4);
}

bool all_zero(const Tf& t) {
  for (float v : t.data()) {
    if (v != 0.0f) return false;
  }
  return true;
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

TEST(Encoder, PyramidExtents) {
  const ModelConfig cfg = small_config();
  ParamStore<float> store;
  std::mt19937_64 rng(1);
  init_encoder(store, cfg, rng);
  Tape<float> tape;
  BoundParams<float> p(tape, store, false);
  Gen g(2);
  const auto feats = encoder_forward(p, tape.constant(g.tensor<float>({2, 3, 64, 64})));
  const Index extents[] = {16, 8, 4, 2};
  for (std::size_t l = 0; l < 4; ++l) {
    EXPECT_EQ(feats[l].shape(), (Shape{2, cfg.encoder_widths[l], extents[l], extents[l]}));
  }
}

TEST(Encoder, RejectsIndivisibleInput) {
  const ModelConfig cfg = small_config();
  ParamStore<float> store;
  std::mt19937_64 rng(1);
  init_encoder(store, cfg, rng);
  Tape<float> tape;
  BoundParams<float> p(tape, store, false);
  EXPECT_THROW(encoder_forward(p, tape.constant(Tf({1, 3, 48, 64}))), ConfigError);
  ModelConfig bad = cfg;
  bad.input_height = 48;
  EXPECT_THROW(EmaNet<float>(bad, 0), ConfigError);
}

TEST(Encoder, ParameterCountMatchesCostModel) {
  const ModelConfig cfg = small_config();
  ParamStore<float> store;
  std::mt19937_64 rng(1);
  init_encoder(store, cfg, rng);
  EXPECT_EQ(store.scalar_count(), model_cost(cfg).find("encoder")->params);
}

// ---------------------------------------------------------------------------

TEST(Head, ZeroResidualBranchesPassProjectionThrough) {
  Gen g(3);
  ParamStore<float> store;
  init_head(store, "h", 5, 4, 3, g.engine());
  for (const char* r : {"h.res1.conv2", "h.res2.conv2"}) {
    store.at(std::string(r) + ".weight").array() = 0;
    store.at(std::string(r) + ".bias").array() = 0;
  }
  Tape<float> tape;
  BoundParams<float> p(tape, store, false);
  const Vf x = tape.constant(g.tensor<float>({2, 5, 4, 4}));
  const auto out = head_forward(p, "h", x);
  const Tf projected = conv_layer(p, "h.in", x).value();
  EXPECT_EQ(out.intermediate.value(), projected);
  EXPECT_EQ(out.intermediate.dim(1), 4);
  EXPECT_EQ(out.prediction.shape(), (Shape{2, 3, 4, 4}));
}

TEST(Head, OutputChannelsFollowTasks) {
  EmaNet<float> net(small_config(), 4);
  for (const auto& t : net.config().tasks) {
    EXPECT_EQ(net.params().at("initial." + t.id + ".out.weight").dim(0), t.out_channels);
    EXPECT_EQ(net.params().at("final." + t.id + ".out.weight").dim(0), t.out_channels);
  }
}

TEST(Head, GradientReachesBothBranches) {
  ModelConfig cfg = small_config();
  EmaNet<float> net(cfg, 5);
  const Batch batch = scene_batch(1, 2);
  Tape<float> tape;
  BoundParams<float> p(tape, net.params());
  const auto preds = net.forward(p, tape.constant(batch.images));
  tape.backward(total_loss(cfg, preds, batch.targets, LossWeights{}, tape));
  for (const auto& t : cfg.tasks) {
    // the initial output conv is reached only through the initial loss, the
    // residual trunk through both the initial loss and CTAL
    EXPECT_FALSE(all_zero(p["initial." + t.id + ".out.weight"].grad()));
    EXPECT_FALSE(all_zero(p["initial." + t.id + ".res2.conv2.weight"].grad()));
  }

  cfg.deep_supervision = false;
  EmaNet<float> plain(cfg, 5);
  Tape<float> tape2;
  BoundParams<float> p2(tape2, plain.params());
  const auto preds2 = plain.forward(p2, tape2.constant(batch.images));
  tape2.backward(total_loss(cfg, preds2, batch.targets, LossWeights{}, tape2));
  for (const auto& t : cfg.tasks) {
    EXPECT_TRUE(all_zero(p2["initial." + t.id + ".out.weight"].grad()));
    EXPECT_FALSE(all_zero(p2["initial." + t.id + ".res2.conv2.weight"].grad()));
  }
}

// ---------------------------------------------------------------------------

TEST(Csf, SingleInputIsConvBlock) {
  Gen g(6);
  ParamStore<float> store;
  add_conv(store, "csf.conv", 4, 3, 3, true, g.engine());
  Tape<float> tape;
  BoundParams<float> p(tape, store, false);
  const Vf x = tape.constant(g.tensor<float>({1, 3, 8, 8}));
  EXPECT_EQ(csf_forward(p, "csf", {x}, 8, 8).value(), relu(conv_layer(p, "csf.conv", x)).value());
}

TEST(Csf, OutputAtTargetScale) {
  Gen g(7);
  ParamStore<float> store;
  add_conv(store, "csf.conv", 4, 2 + 3 + 5, 3, true, g.engine());
  Tape<float> tape;
  BoundParams<float> p(tape, store, false);
  const std::vector<Vf> feats{tape.constant(g.tensor<float>({2, 2, 16, 16})), tape.constant(g.tensor<float>({2, 3, 8, 8})),
                              tape.constant(g.tensor<float>({2, 5, 2, 2}))};
  EXPECT_EQ(csf_forward(p, "csf", feats, 16, 16).shape(), (Shape{2, 4, 16, 16}));
  EXPECT_EQ(csf_forward(p, "csf", feats, 12, 12).shape(), (Shape{2, 4, 12, 12}));
}

TEST(Csf, ConcatWidthIsSumOfScales) {
  const ModelConfig cfg = small_config();
  EmaNet<float> net(cfg, 8);
  const auto& w = cfg.encoder_widths;
  EXPECT_EQ(net.params().at("csf.shared.conv.weight").dim(1), w[0] + w[1] + w[2] + w[3]);
  EmaNet<float> ms(small_config(Variant::kMultiScale), 8);
  EXPECT_EQ(ms.params().at("csf.depth.conv.weight").dim(1), 4 * cfg.channels);
}

// ---------------------------------------------------------------------------

TEST(SingleScale, OutputShapes) {
  const ModelConfig cfg = small_config();
  EmaNet<float> net(cfg, 9);
  Tape<float> tape;
  BoundParams<float> p(tape, net.params(), false);
  Gen g(10);
  const auto preds = net.forward(p, tape.constant(g.tensor<float>({2, 3, 64, 64})));
  ASSERT_EQ(preds.final.size(), 3u);
  ASSERT_EQ(preds.initial.size(), 1u);
  const Shape expected[] = {{2, 3, 16, 16}, {2, 1, 16, 16}, {2, 3, 16, 16}};
  for (std::size_t t = 0; t < 3; ++t) {
    EXPECT_EQ(preds.final[t].shape(), expected[t]);
    EXPECT_EQ(preds.initial[0][t].shape(), expected[t]);
  }
}

TEST(SingleScale, ZeroGammaWithMirroredHeadsReproducesInitial) {
  ModelConfig cfg = small_config();
  cfg.gamma = 0;
  EmaNet<float> net(cfg, 11);
  auto& s = net.params();
  const Index c = cfg.channels;
  for (const auto& t : cfg.tasks) {
    for (const std::string stage : {"initial.", "final."}) {
      for (const char* r : {".res1.conv2", ".res2.conv2"}) {
        s.at(stage + t.id + r + ".weight").array() = 0;
        s.at(stage + t.id + r + ".bias").array() = 0;
      }
    }
    Tf eye({c, c, 1, 1});
    for (Index i = 0; i < c; ++i) eye.at({i, i, 0, 0}) = 1;
    s.at("final." + t.id + ".in.weight") = eye;
    s.at("final." + t.id + ".in.bias").array() = 0;
    s.at("final." + t.id + ".out.weight") = s.at("initial." + t.id + ".out.weight");
    s.at("final." + t.id + ".out.bias") = s.at("initial." + t.id + ".out.bias");
  }
  Tape<float> tape;
  BoundParams<float> p(tape, s, false);
  Gen g(12);
  const auto preds = net.forward(p, tape.constant(g.tensor<float>({1, 3, 64, 64})));
  for (std::size_t t = 0; t < 3; ++t) EXPECT_LT(max_abs_diff(preds.final[t].value(), preds.initial[0][t].value()), 1e-5);
}

TEST(SingleScale, ParameterCountMatchesCostModel) {
  for (Index denom : {4, 8}) {
    ModelConfig cfg = small_config();
    cfg.distill_denominator = denom;
    EmaNet<float> net(cfg, 13);
    EXPECT_EQ(net.params().scalar_count(), model_cost(cfg).total_params());
  }
}

TEST(SingleScale, RuntimeFlopsMatchCostModel) {
  for (Variant v : {Variant::kSingleScale, Variant::kMultiScale}) {
    const ModelConfig cfg = small_config(v);
    EmaNet<float> net(cfg, 14);
    Tape<float> tape;
    BoundParams<float> p(tape, net.params(), false);
    const Vf image = tape.constant(Tf({1, 3, 64, 64}, 0.5f));
    FlopCounter counter;
    net.forward(p, image);
    EXPECT_EQ(counter.count(), model_cost(cfg).total_flops()) << to_string(v);
  }
}

TEST(SingleScale, LossDecreasesOnFixedBatch) {
  const ModelConfig cfg = small_config();
  EmaNet<float> net(cfg, 15);
  TrainOptions opts;
  opts.adam.lr = 2e-3;
  opts.schedule = Schedule::kConstant;
  opts.total_steps = 50;
  Trainer trainer(net, opts);
  const Batch batch = scene_batch(2, 2);
  const double first = trainer.loss(batch);
  for (int i = 0; i < 50; ++i) trainer.step(batch);
  const double last = trainer.loss(batch);
  EXPECT_LT(last, 0.8 * first) << first << " -> " << last;
}

// ---------------------------------------------------------------------------

TEST(MultiScale, EmitsInitialPredictionsAtEveryScale) {
  const ModelConfig cfg = small_config(Variant::kMultiScale);
  EmaNet<float> net(cfg, 16);
  Tape<float> tape;
  BoundParams<float> p(tape, net.params(), false);
  Gen g(17);
  const auto preds = net.forward(p, tape.constant(g.tensor<float>({1, 3, 64, 64})));
  ASSERT_EQ(preds.initial.size(), 4u);
  for (const auto& level : preds.initial) {
    ASSERT_EQ(level.size(), 3u);
    for (std::size_t t = 0; t < 3; ++t) EXPECT_EQ(level[t].shape(), preds.final[t].shape());
  }
}

TEST(MultiScale, SingleCtalPerForward) {
  for (Variant v : {Variant::kSingleScale, Variant::kMultiScale}) {
    EmaNet<float> net(small_config(v), 18);
    Tape<float> tape;
    BoundParams<float> p(tape, net.params(), false);
    const auto before = ctal_invocations();
    net.forward(p, tape.constant(Tf({1, 3, 64, 64})));
    EXPECT_EQ(ctal_invocations() - before, 1);
  }
}

TEST(MultiScale, ExtraParametersAreTheHeadCost) {
  const ModelConfig ss_cfg = small_config(), ms_cfg = small_config(Variant::kMultiScale);
  EmaNet<float> ss(ss_cfg, 19), ms(ms_cfg, 19);
  const auto ss_cost = model_cost(ss_cfg), ms_cost = model_cost(ms_cfg);
  EXPECT_EQ(ms.params().scalar_count(), ms_cost.total_params());
  EXPECT_GT(ms.params().scalar_count(), ss.params().scalar_count());
  EXPECT_EQ(ms.params().scalar_count() - ss.params().scalar_count(), ms_cost.total_params() - ss_cost.total_params());
  // encoder and CTAL are shared; the whole difference sits in heads and fusion
  auto count = [](const ParamStore<float>& s, const std::string& prefix) {
    std::int64_t n = 0;
    for (std::size_t i = 0; i < s.count(); ++i) {
      if (starts_with(s.names()[i], prefix)) n += s.values()[i].size();
    }
    return n;
  };
  EXPECT_EQ(count(ss.params(), "encoder."), count(ms.params(), "encoder."));
  EXPECT_EQ(count(ss.params(), "ctal."), count(ms.params(), "ctal."));
  std::int64_t head_diff = 0;
  for (const char* prefix : {"initial.", "csf.", "final."}) head_diff += count(ms.params(), prefix) - count(ss.params(), prefix);
  EXPECT_EQ(head_diff, ms.params().scalar_count() - ss.params().scalar_count());
}

TEST(MultiScale, RequiresDeepSupervision) {
  ModelConfig cfg = small_config(Variant::kMultiScale);
  cfg.deep_supervision = false;
  EXPECT_THROW(EmaNet<float>(cfg, 0), ConfigError);
}

TEST(DistillationScale, CoarserScaleCutsCtalCostOnly) {
  ModelConfig cfg = small_config();
  cfg.input_height = 96;
  cfg.input_width = 96;
  std::int64_t prev_flops = -1, head_params = -1;
  for (Index denom : {4, 6, 8}) {
    cfg.distill_denominator = denom;
    const auto cost = model_cost(cfg);
    std::int64_t ctal = 0, heads = 0;
    for (const auto& comp : cost.components) {
      if (starts_with(comp.name, "ctal.")) ctal += comp.flops;
      if (comp.name == "initial_heads" || comp.name == "final_heads") heads += comp.params;
    }
    if (prev_flops >= 0) {
      EXPECT_LT(ctal, prev_flops) << "1/" << denom;
      EXPECT_EQ(heads, head_params);
    }
    prev_flops = ctal;
    head_params = heads;
    EXPECT_EQ(EmaNet<float>(cfg, 0).params().scalar_count(), cost.total_params());
  }
}

// ---------------------------------------------------------------------------

TEST(TotalLoss, PerfectPredictionsGiveZero) {
  ModelConfig cfg = small_config();
  cfg.tasks = {TaskSpec::depth(), TaskSpec::normals()};
  cfg.deep_supervision = false;
  const Batch batch = scene_batch(3, 2);
  Tape<float> tape;
  Predictions<float> preds;
  preds.final = {tape.constant(batch.targets.depth), tape.constant(batch.targets.normals)};
  EXPECT_NEAR(total_loss(cfg, preds, batch.targets, LossWeights{}, tape).value()[0], 0.0, 1e-6);
}

TEST(TotalLoss, ConfidentCorrectLogitsApproachZero) {
  ModelConfig cfg = small_config();
  cfg.tasks = {TaskSpec::segmentation(3)};
  cfg.deep_supervision = false;
  const Batch batch = scene_batch(4, 1);
  const auto& t = batch.targets;
  Tf logits({1, 3, t.height, t.width});
  for (Index i = 0; i < t.height * t.width; ++i) {
    const std::int32_t label = t.seg[static_cast<std::size_t>(i)];
    if (label >= 0) logits[label * t.height * t.width + i] = 40;
  }
  Tape<float> tape;
  Predictions<float> preds;
  preds.final = {tape.constant(logits)};
  EXPECT_LT(total_loss(cfg, preds, t, LossWeights{}, tape).value()[0], 1e-6);
}

TEST(TotalLoss, ZeroWeightRemovesTaskGradient) {
  const ModelConfig cfg = small_config();
  EmaNet<float> net(cfg, 20);
  const Batch batch = scene_batch(5, 2);
  Tape<float> tape;
  BoundParams<float> p(tape, net.params());
  const auto preds = net.forward(p, tape.constant(batch.images));
  LossWeights w;
  w.task = {0.0, 1.0, 1.0};
  tape.backward(total_loss(cfg, preds, batch.targets, w, tape));
  const auto& names = net.params().names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (starts_with(names[i], "final.segmentation.") || starts_with(names[i], "initial.segmentation.out.")) {
      EXPECT_TRUE(all_zero(p.vars()[i].grad())) << names[i];
    }
  }
  EXPECT_FALSE(all_zero(p["final.depth.out.weight"].grad()));
}

TEST(TotalLoss, WithoutDeepSupervisionIsSumOfFinalLosses) {
  ModelConfig cfg = small_config();
  cfg.deep_supervision = false;
  EmaNet<float> net(cfg, 21);
  const Batch batch = scene_batch(6, 2);
  Tape<float> tape;
  BoundParams<float> p(tape, net.params(), false);
  const auto preds = net.forward(p, tape.constant(batch.images));
  double sum = 0;
  for (std::size_t t = 0; t < cfg.tasks.size(); ++t) {
    sum += task_loss(cfg.tasks[t], preds.final[t], batch.targets).value.value()[0];
  }
  EXPECT_NEAR(total_loss(cfg, preds, batch.targets, LossWeights{}, tape).value()[0], sum, 1e-5 * std::abs(sum));
}

TEST(TotalLoss, DeepSupervisionAddsInitialTerms) {
  const ModelConfig cfg = small_config(Variant::kMultiScale);
  EmaNet<float> net(cfg, 22);
  const Batch batch = scene_batch(7, 1);
  Tape<float> tape;
  BoundParams<float> p(tape, net.params(), false);
  const auto preds = net.forward(p, tape.constant(batch.images));
  double sum = 0;
  for (std::size_t t = 0; t < cfg.tasks.size(); ++t) {
    sum += task_loss(cfg.tasks[t], preds.final[t], batch.targets).value.value()[0];
    for (const auto& level : preds.initial) sum += task_loss(cfg.tasks[t], level[t], batch.targets).value.value()[0];
  }
  EXPECT_NEAR(total_loss(cfg, preds, batch.targets, LossWeights{}, tape).value()[0], sum, 1e-5 * std::abs(sum));
}

TEST(TotalLoss, NegativeWeightRejected) {
  const ModelConfig cfg = small_config();
  EmaNet<float> net(cfg, 23);
  const Batch batch = scene_batch(8, 1);
  Tape<float> tape;
  BoundParams<float> p(tape, net.params(), false);
  const auto preds = net.forward(p, tape.constant(batch.images));
  LossWeights w;
  w.task = {1.0, -1.0, 1.0};
  EXPECT_THROW(total_loss(cfg, preds, batch.targets, w, tape), ConfigError);
}
