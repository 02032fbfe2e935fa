#include <gtest/gtest.h>

#include "emanet/ctal.hpp"
#include "emanet/network.hpp"
#include "emanet/resources.hpp"
#include "support.hpp"

using namespace emanet;
using emanet::testing::Gen;

TEST(FusionParams, ReportedCounts) {
  EXPECT_EQ(grouped_fusion_params(3, 72, 96, 3), 186624);
  EXPECT_EQ(standard_fusion_params(3, 72, 96, 3), 1289945088);
  EXPECT_EQ(grouped_fusion_params(3, 72, 96, 3, true), 186624 + 72 * 96);
}

TEST(FusionParams, Trivial) {
  EXPECT_EQ(grouped_fusion_params(1, 1, 1, 1), 1);
  EXPECT_EQ(standard_fusion_params(1, 1, 1, 1), 1);
}

TEST(FusionParams, RatioIsSpatialArea) {
  Gen g(50);
  for (int trial = 0; trial < 200; ++trial) {
    const std::int64_t n = g.integer(1, 6), h = g.integer(1, 100), w = g.integer(1, 100), f = 2 * g.integer(0, 3) + 1;
    const std::int64_t grouped = grouped_fusion_params(n, h, w, f), standard = standard_fusion_params(n, h, w, f);
    EXPECT_EQ(standard % grouped, 0);
    EXPECT_EQ(standard / grouped, h * w);
    EXPECT_EQ(grouped, h * w * n * f * f);
  }
}

TEST(FusionParams, MatchAllocatedWeights) {
  Gen g(51);
  for (int trial = 0; trial < 10; ++trial) {
    CtalConfig cfg;
    cfg.tasks = g.integer(1, 4);
    cfg.channels = g.integer(1, 5);
    cfg.filter = g.coin() ? 1 : 3;
    cfg.height = g.integer(cfg.filter, 6);
    cfg.width = g.integer(cfg.filter, 6);
    cfg.fusion_bias = g.coin();
    ParamStore<float> store;
    init_ctal_params(store, "ctal", cfg, g.engine());
    std::int64_t fuse = store.at("ctal.fuse.task0.weight").size();
    if (cfg.fusion_bias) fuse += store.at("ctal.fuse.task0.bias").size();
    EXPECT_EQ(fuse, grouped_fusion_params(cfg.tasks, cfg.height, cfg.width, cfg.filter, cfg.fusion_bias));
  }
}

TEST(ConvCost, Formulas) {
  EXPECT_EQ(conv_params(4, 6, 3), 6 * 4 * 9 + 6);
  EXPECT_EQ(conv_params(4, 6, 3, 2, false), 6 * 2 * 9);
  EXPECT_EQ(conv_flops(4, 6, 3, 25), 2 * 6 * 4 * 9 * 25);
  EXPECT_EQ(conv_flops(4, 6, 3, 25, 2), 2 * 6 * 2 * 9 * 25);
}

TEST(CtalFlops, TermFormulas) {
  const std::int64_t n = 3, c = 16, h = 18, w = 24, f = 3, hw = h * w;
  const auto b = ctal_flop_breakdown(n, c, h, w, f);
  EXPECT_EQ(b.affinity, n * 2 * c * hw * hw);
  EXPECT_EQ(b.fusion, n * 2 * n * f * f * hw * hw);
  EXPECT_EQ(b.diffusion, n * 2 * c * hw * hw);
  EXPECT_EQ(b.projection, 2 * c * c * hw * n);
  EXPECT_EQ(b.blend, 3 * n * c * hw);
  EXPECT_EQ(ctal_flops(n, c, h, w, f), b.total());
}

TEST(CtalFlops, HalvingExtentsDividesQuadraticTermsBy16) {
  Gen g(52);
  for (int trial = 0; trial < 20; ++trial) {
    const std::int64_t n = g.integer(1, 4), c = g.integer(1, 32), h = 2 * g.integer(1, 40), w = 2 * g.integer(1, 40);
    const auto big = ctal_flop_breakdown(n, c, h, w, 3), small = ctal_flop_breakdown(n, c, h / 2, w / 2, 3);
    EXPECT_EQ(big.affinity + big.diffusion, 16 * (small.affinity + small.diffusion));
  }
}

TEST(CtalFlops, MonotoneInDistillationScale) {
  Gen g(53);
  for (int trial = 0; trial < 20; ++trial) {
    const std::int64_t n = g.integer(1, 4), c = g.integer(1, 64), h = 24 * g.integer(1, 12), w = 24 * g.integer(1, 12);
    const auto at = [&](std::int64_t d) { return ctal_flops(n, c, h / d, w / d, 3); };
    EXPECT_LT(at(8), at(6));
    EXPECT_LT(at(6), at(4));
  }
}

TEST(CtalFlops, MatchInstrumentedExecution) {
  Gen g(54);
  for (int trial = 0; trial < 10; ++trial) {
    CtalConfig cfg;
    cfg.tasks = g.integer(1, 3);
    cfg.channels = g.integer(1, 4);
    cfg.height = g.integer(3, 5);
    cfg.width = g.integer(3, 5);
    ParamStore<double> store;
    init_ctal_params(store, "ctal", cfg, g.engine());
    Tape<double> tape;
    BoundParams<double> p(tape, store, false);
    std::vector<Var<double>> feats;
    for (Index k = 0; k < cfg.tasks; ++k) feats.push_back(tape.constant(g.tensor({1, cfg.channels, cfg.height, cfg.width})));
    FlopCounter counter;
    ctal_forward(feats, CtalParams<double>::bind(p, "ctal", cfg));
    EXPECT_EQ(counter.count(), ctal_flops(cfg.tasks, cfg.channels, cfg.height, cfg.width, cfg.filter));
  }
}

TEST(ModelCost, TotalsAreComponentSums) {
  ModelConfig cfg;
  cfg.input_height = 288;
  cfg.input_width = 384;
  for (Variant v : {Variant::kSingleScale, Variant::kMultiScale}) {
    cfg.variant = v;
    const CostReport r = model_cost(cfg);
    std::int64_t params = 0, flops = 0;
    for (const auto& c : r.components) {
      params += c.params;
      flops += c.flops;
    }
    EXPECT_EQ(r.total_params(), params);
    EXPECT_EQ(r.total_flops(), flops);
    EXPECT_EQ(r.find("ctal.fusion")->params, 3 * grouped_fusion_params(3, 72, 96, 3, true));
    EXPECT_EQ(r.distill_height, 72);
    EXPECT_EQ(r.distill_width, 96);
    EXPECT_EQ(r.find("missing"), nullptr);
  }
}

TEST(ModelCost, MatchesAllocatedParameters) {
  Gen g(55);
  for (int trial = 0; trial < 12; ++trial) {
    ModelConfig cfg;
    cfg.tasks = {TaskSpec::segmentation(g.integer(2, 6)), TaskSpec::depth()};
    if (g.coin()) cfg.tasks.push_back(TaskSpec::normals());
    cfg.channels = g.integer(1, 8);
    cfg.encoder_widths = {g.integer(1, 8), g.integer(1, 8), g.integer(1, 8), g.integer(1, 8)};
    cfg.input_height = 32 * g.integer(2, 3);
    cfg.input_width = 32 * g.integer(2, 3);
    cfg.variant = g.coin() ? Variant::kSingleScale : Variant::kMultiScale;
    cfg.fusion_bias = g.coin();
    cfg.distill_denominator = cfg.input_height % 3 == 0 && cfg.input_width % 3 == 0 && g.coin() ? 6 : 4;
    EmaNet<float> net(cfg, 0);
    EXPECT_EQ(net.params().scalar_count(), model_cost(cfg).total_params()) << "trial " << trial;
  }
}
