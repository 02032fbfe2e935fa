#include <gtest/gtest.h>

#include <cmath>

#include "emanet/ops.hpp"
#include "emanet/optim.hpp"
#include "emanet/reference.hpp"
#include "support.hpp"

using namespace emanet;
using emanet::testing::Gen;

using Td = Tensor<double>;

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Td m({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(matmul(Td::identity(2), m), m);
}

TEST(Matmul, ProjectorSelectsFirstRow) {
  const Td p({2, 2}, {1, 0, 0, 0});
  const Td m({2, 2}, {5, 6, 7, 8});
  EXPECT_EQ(matmul(p, m), Td({2, 2}, {5, 6, 0, 0}));
}

TEST(Matmul, MatchesTripleLoop) {
  Gen g(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Index p = g.integer(1, 6), q = g.integer(1, 6), r = g.integer(1, 6);
    const Td a = g.tensor({p, q}), b = g.tensor({q, r});
    EXPECT_LT(max_abs_diff(matmul(a, b), reference::matmul_naive(a, b)), 1e-6);
  }
  const Td a = g.tensor({4, 3}), b = g.tensor({3, 5});
  EXPECT_LT(max_abs_diff(matmul(a, b), reference::matmul_naive(a, b)), 1e-6);
}

TEST(Matmul, InnerMismatchNamesBothShapes) {
  try {
    matmul(Td({2, 3}), Td({4, 2}));
    FAIL() << "expected a dimension error";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4,2]"), std::string::npos) << msg;
  }
}

TEST(Matmul, BackwardRule) {
  Gen g(3);
  Tape<double> tape;
  const auto a = tape.leaf(g.tensor({3, 2})), b = tape.leaf(g.tensor({2, 4}));
  const auto w = g.tensor({3, 4});
  tape.backward(sum(mul(matmul(a, b), tape.constant(w))));
  EXPECT_LT(max_abs_diff(a.grad(), matmul(w, transpose(b.value()))), 1e-12);
  EXPECT_LT(max_abs_diff(b.grad(), matmul(transpose(a.value()), w)), 1e-12);
}

TEST(Matmul, CountsTwoFlopsPerMultiplyAdd) {
  FlopCounter c;
  matmul(Td({4, 3}), Td({3, 5}));
  EXPECT_EQ(c.count(), 2 * 4 * 3 * 5);
}

// ---------------------------------------------------------------------------

TEST(Conv2d, OneByOneIdentity) {
  Gen g(5);
  const Td x = g.tensor({2, 3, 4, 5});
  Td w({3, 3, 1, 1});
  for (Index c = 0; c < 3; ++c) w.at({c, c, 0, 0}) = 1;
  EXPECT_EQ(conv2d(x, w, std::nullopt), x);
}

TEST(Conv2d, DepthwiseScaling) {
  Gen g(6);
  const Td x = g.tensor({1, 4, 3, 3});
  const Td w({4, 1, 1, 1}, 2.0);
  const Td y = conv2d(x, w, Td({4}), Conv2dOptions{1, 0, 4});
  for (Index i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y[i], 2 * x[i]);
}

TEST(Conv2d, GroupedEqualsBlockDiagonalDense) {
  Gen g(7);
  const Td x = g.tensor({2, 8, 5, 5});
  const Td w = g.tensor({8, 2, 3, 3});
  const Td b = g.tensor({8});
  const Td grouped = conv2d(x, w, b, Conv2dOptions{1, 1, 4});
  const Td dense = conv2d(x, reference::embed_block_diagonal(w, 4), b, Conv2dOptions{1, 1, 1});
  EXPECT_LT(max_abs_diff(grouped, dense), 1e-6);
}

TEST(Conv2d, GroupedEquivalenceProperty) {
  Gen g(8);
  for (int trial = 0; trial < 40; ++trial) {
    const Index groups = g.integer(1, 4);
    const Index cin = groups * g.integer(1, 3), cout = groups * g.integer(1, 3);
    const Index k = 2 * g.integer(0, 2) + 1;
    const Index h = g.integer(k, 7), w = g.integer(k, 7);
    const Conv2dOptions opt{g.integer(1, 2), g.integer(0, 2), groups};
    const Td x = g.tensor({g.integer(1, 2), cin, h, w});
    const Td wt = g.tensor({cout, cin / groups, k, k});
    const Td bias = g.tensor({cout});
    const Td y = conv2d(x, wt, bias, opt);
    EXPECT_LT(max_abs_diff(y, reference::conv2d_direct(x, wt, &bias, opt)), 1e-6) << "trial " << trial;
    const Conv2dOptions dense_opt{opt.stride, opt.padding, 1};
    EXPECT_LT(max_abs_diff(y, conv2d(x, reference::embed_block_diagonal(wt, groups), bias, dense_opt)), 1e-6);
  }
}

TEST(Conv2d, OutputExtent) {
  const Td y = conv2d(Td({1, 2, 7, 9}), Td({3, 2, 3, 3}), std::nullopt, Conv2dOptions{2, 1, 1});
  EXPECT_EQ(y.shape(), (Shape{1, 3, 4, 5}));
}

TEST(Conv2d, Errors) {
  EXPECT_THROW(conv2d(Td({1, 6, 4, 4}), Td({4, 2, 1, 1}), std::nullopt, Conv2dOptions{1, 0, 4}), GroupingError);
  EXPECT_THROW(conv2d(Td({1, 4, 4, 4}), Td({6, 1, 1, 1}), std::nullopt, Conv2dOptions{1, 0, 4}), GroupingError);
  EXPECT_THROW(conv2d(Td({1, 4, 4, 4}), Td({4, 2, 1, 1}), std::nullopt, Conv2dOptions{1, 0, 4}), GroupingError);
  EXPECT_THROW(conv2d(Td({1, 1, 2, 2}), Td({1, 1, 5, 5}), std::nullopt), ShapeError);
  EXPECT_THROW(conv2d(Td({1, 1, 4, 4}), Td({1, 1, 3, 3}), std::nullopt, Conv2dOptions{1, -1, 1}), ShapeError);
}

TEST(Conv2d, CountsMultiplyAdds) {
  FlopCounter c;
  conv2d(Td({2, 4, 5, 5}), Td({6, 2, 3, 3}), std::nullopt, Conv2dOptions{1, 1, 2});
  EXPECT_EQ(c.count(), 2 * 2 * 6 * 25 * (2 * 9));
}

// ---------------------------------------------------------------------------

TEST(L2NormalizeColumns, ThreeFourFive) {
  const Td y = l2_normalize_columns(Td({2, 1}, {3, 4}));
  EXPECT_NEAR(y[0], 0.6, 1e-15);
  EXPECT_NEAR(y[1], 0.8, 1e-15);
}

TEST(L2NormalizeColumns, ZeroColumnStaysZero) {
  const Td y = l2_normalize_columns(Td({3, 2}, {0, 1, 0, 2, 0, 2}));
  for (Index r = 0; r < 3; ++r) {
    EXPECT_EQ(y.at({r, 0}), 0.0);
    EXPECT_FALSE(std::isnan(y.at({r, 0})));
  }
  EXPECT_NEAR(y.at({0, 1}), 1.0 / 3.0, 1e-15);
}

TEST(L2NormalizeColumns, UnitNormsAndIdempotence) {
  Gen g(9);
  for (int trial = 0; trial < 25; ++trial) {
    const Td m = g.tensor({g.integer(1, 8), g.integer(1, 8)});
    const Td y = l2_normalize_columns(m);
    for (Index c = 0; c < m.dim(1); ++c) {
      double n = 0;
      for (Index r = 0; r < m.dim(0); ++r) n += y.at({r, c}) * y.at({r, c});
      EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
    }
    EXPECT_LT(max_abs_diff(l2_normalize_columns(y), y), 1e-6);
  }
  const Td y = l2_normalize_columns(g.tensor({6, 5}));
  for (Index c = 0; c < 5; ++c) {
    double n = 0;
    for (Index r = 0; r < 6; ++r) n += y.at({r, c}) * y.at({r, c});
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
  }
}

// ---------------------------------------------------------------------------

TEST(Layout, ReshapeRoundTripKeepsBuffer) {
  const Td x({6}, {1, 2, 3, 4, 5, 6});
  const Td y = reshape(x, {2, 3});
  EXPECT_EQ(y.buffer(), x.buffer());
  EXPECT_EQ(reshape(y, {6}), x);
}

TEST(Layout, PermuteTwiceIsIdentity) {
  const Td x({2, 3}, {1, 2, 3, 4, 5, 6});
  const Td t = permute(x, {1, 0});
  EXPECT_EQ(t, Td({3, 2}, {1, 4, 2, 5, 3, 6}));
  EXPECT_EQ(permute(t, {1, 0}), x);
}

TEST(Layout, AffinityReshapeRoundTrip) {
  Gen g(10);
  const Td a = g.tensor({12, 12});
  const Td r = reshape(a, {12, 3, 4});
  EXPECT_EQ(reshape(r, {12, 12}).buffer(), a.buffer());
}

TEST(Layout, PermuteInverseProperty) {
  Gen g(12);
  for (int trial = 0; trial < 20; ++trial) {
    const Td x = g.tensor({g.integer(1, 3), g.integer(1, 3), g.integer(1, 3), g.integer(1, 3)});
    std::vector<int> order{0, 1, 2, 3};
    std::shuffle(order.begin(), order.end(), g.engine());
    EXPECT_EQ(permute(permute(x, order), kernels::inverse_permutation(order)), x);
  }
}

TEST(Layout, Concat) {
  const Td a({1, 2}, {1, 2}), b({2, 2}, {3, 4, 5, 6});
  EXPECT_EQ(concat(std::vector<Td>{a, b}, 0), Td({3, 2}, {1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(concat(std::vector<Td>{b, b}, 1), Td({2, 4}, {3, 4, 3, 4, 5, 6, 5, 6}));
}

TEST(Layout, Errors) {
  EXPECT_THROW(reshape(Td({6}), {4, 2}), ShapeError);
  EXPECT_THROW(permute(Td({2, 3}), {0, 0}), ShapeError);
  EXPECT_THROW(permute(Td({2, 3}), {0}), ShapeError);
  EXPECT_THROW(concat(std::vector<Td>{Td({1, 2}), Td({1, 3})}, 0), ShapeError);
}

// ---------------------------------------------------------------------------

TEST(Upsample, FactorOneIsIdentity) {
  Gen g(13);
  const Td x = g.tensor({1, 2, 3, 4});
  EXPECT_EQ(upsample_bilinear(x, 1), x);
}

TEST(Upsample, ConstantStaysConstant) {
  const Td x({1, 1, 3, 2}, 2.5);
  for (Index f : {2, 3, 5}) {
    const Td y = upsample_bilinear(x, f);
    EXPECT_EQ(y.shape(), (Shape{1, 1, 3 * f, 2 * f}));
    for (double v : y.data()) EXPECT_NEAR(v, 2.5, 1e-12);
  }
}

TEST(Upsample, TwoByTwoCentresUseHalfPixelWeights) {
  const double a = 1, b = 2, c = 3, d = 5;
  const Td y = upsample_bilinear(Td({1, 1, 2, 2}, {a, b, c, d}), 2);
  // output pixel 1 maps to source coordinate (1 + 0.5) / 2 - 0.5 = 0.25
  auto mix = [&](double fy, double fx) {
    return (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d);
  };
  EXPECT_NEAR(y.at({0, 0, 1, 1}), mix(0.25, 0.25), 1e-12);
  EXPECT_NEAR(y.at({0, 0, 1, 2}), mix(0.25, 0.75), 1e-12);
  EXPECT_NEAR(y.at({0, 0, 2, 1}), mix(0.75, 0.25), 1e-12);
  EXPECT_NEAR(y.at({0, 0, 2, 2}), mix(0.75, 0.75), 1e-12);
  // edges clamp to the border pixels
  EXPECT_NEAR(y.at({0, 0, 0, 0}), a, 1e-12);
  EXPECT_NEAR(y.at({0, 0, 3, 3}), d, 1e-12);
}

TEST(Upsample, RejectsFactorBelowOne) { EXPECT_THROW(upsample_bilinear(Td({1, 1, 2, 2}), 0), ConfigError); }

// ---------------------------------------------------------------------------

TEST(Backward, SumGivesOnes) {
  Tape<double> tape;
  const auto x = tape.leaf(Td({2, 3}, 0.7));
  tape.backward(sum(x));
  EXPECT_EQ(x.grad(), Td::ones({2, 3}));
}

TEST(Backward, HalfSquaredNormGivesX) {
  Gen g(14);
  Tape<double> tape;
  const auto x = tape.leaf(g.tensor({4, 2}));
  tape.backward(scale(sum(mul(x, x)), 0.5));
  EXPECT_LT(max_abs_diff(x.grad(), x.value()), 1e-15);
}

TEST(Backward, NonScalarLossIsContractError) {
  Tape<double> tape;
  const auto x = tape.leaf(Td({2, 2}));
  EXPECT_THROW(tape.backward(x), ContractError);
}

TEST(Backward, UnreachableLeafGetsZeros) {
  Tape<double> tape;
  const auto x = tape.leaf(Td({2}, 1.0));
  const auto unused = tape.leaf(Td({3}, 4.0));
  tape.backward(sum(x));
  EXPECT_EQ(unused.grad(), Td({3}));
}

TEST(Backward, SharedInputsAccumulate) {
  Tape<double> tape;
  const auto x = tape.leaf(Td({1}, 3.0));
  tape.backward(add(mul(x, x), scale(x, 2.0)));  // d/dx (x^2 + 2x) = 2x + 2
  EXPECT_DOUBLE_EQ(x.grad()[0], 8.0);
}

TEST(Backward, ForeignTapeInputRejected) {
  Tape<double> a, b;
  const auto x = a.leaf(Td({1}));
  const auto y = b.leaf(Td({1}));
  EXPECT_THROW(add(x, y), ContractError);
}

// ---------------------------------------------------------------------------

TEST(Adam, ZeroGradientZeroDecayLeavesParams) {
  Gen g(15);
  std::vector<Td> params{g.tensor({3, 2}), g.tensor({4})};
  const auto before = params;
  const std::vector<Td> grads{Td({3, 2}), Td({4})};
  AdamOptions o;
  o.weight_decay = 0;
  AdamState<double> state(o, params);
  for (int s = 0; s < 5; ++s) adam_step<double>(params, grads, state);
  EXPECT_EQ(params, before);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<Td> params{Td({2}, {1.0, -1.0})};
  const std::vector<Td> grads{Td({2}, {0.5, -2.0})};
  AdamOptions o;
  o.lr = 0.1;
  o.weight_decay = 0;
  AdamState<double> state(o, params);
  adam_step<double>(params, grads, state);
  // bias-corrected m / sqrt(v) = sign(g) on the first step
  EXPECT_NEAR(params[0][0], 0.9, 1e-7);
  EXPECT_NEAR(params[0][1], -0.9, 1e-7);
}

TEST(Adam, CoupledDecayActsThroughGradient) {
  std::vector<Td> coupled{Td({1}, 2.0)}, decoupled{Td({1}, 2.0)};
  const std::vector<Td> grads{Td({1})};
  AdamOptions o;
  o.lr = 0.01;
  o.weight_decay = 0.1;
  AdamState<double> cs(o, coupled);
  adam_step<double>(coupled, grads, cs);
  EXPECT_NEAR(coupled[0][0], 2.0 - 0.01, 1e-7);  // g = wd * p, normalized to sign
  o.decay_mode = WeightDecayMode::kDecoupled;
  AdamState<double> ds(o, decoupled);
  adam_step<double>(decoupled, grads, ds);
  EXPECT_NEAR(decoupled[0][0], 2.0 * (1 - 0.01 * 0.1), 1e-12);
}

TEST(Adam, ShapeMismatchIsContractError) {
  std::vector<Td> params{Td({2})};
  AdamState<double> state(AdamOptions{}, params);
  const std::vector<Td> wrong{Td({3})};
  EXPECT_THROW(adam_step<double>(params, wrong, state), ContractError);
  const std::vector<Td> none;
  EXPECT_THROW(adam_step<double>(params, none, state), ContractError);
}

TEST(CosineLr, Endpoints) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 0.5), 0.5);
  EXPECT_LE(cosine_lr(100, 100, 0.5), 1e-8 * 0.5);
  EXPECT_NEAR(cosine_lr(50, 100, 0.5), 0.25, 1e-12);
}

TEST(CosineLr, WarmRestartsRepeat) {
  for (std::int64_t p : {1, 7, 25}) {
    EXPECT_DOUBLE_EQ(cosine_lr(p, 1000, 1e-3, p), cosine_lr(0, 1000, 1e-3, p));
    EXPECT_DOUBLE_EQ(cosine_lr(p + 3, 1000, 1e-3, p), cosine_lr(3, 1000, 1e-3, p));
  }
}

TEST(CosineLr, DecreasesWithinPeriod) {
  double prev = cosine_lr(0, 40, 1.0, 20);
  for (int s = 1; s < 20; ++s) {
    const double lr = cosine_lr(s, 40, 1.0, 20);
    EXPECT_LT(lr, prev);
    prev = lr;
  }
}

// ---------------------------------------------------------------------------

TEST(Determinism, SameSeedSameBits) {
  auto run = [] {
    Gen g(99);
    const Tensor<float> x = g.tensor<float>({2, 4, 6, 6});
    const Tensor<float> w = g.tensor<float>({4, 2, 3, 3});
    return upsample_bilinear(conv2d(x, w, std::nullopt, Conv2dOptions{1, 1, 2}), 2);
  };
  EXPECT_EQ(run(), run());
}
