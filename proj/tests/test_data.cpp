#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include "emanet/binary_io.hpp"
#include "emanet/data.hpp"

using namespace emanet;

namespace {

double angle_deg(const double a[3], const double b[3]) {
  const double dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
  const double na = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
  const double nb = std::sqrt(b[0] * b[0] + b[1] * b[1] + b[2] * b[2]);
  return std::acos(std::clamp(dot / (na * nb), -1.0, 1.0)) * 180.0 / std::numbers::pi;
}

void expect_scene_invariants(const Scene& s) {
  const Index area = s.height * s.width;
  ASSERT_EQ(s.image.shape(), (Shape{3, s.height, s.width}));
  ASSERT_EQ(s.depth.shape(), (Shape{s.height, s.width}));
  ASSERT_EQ(s.normals.shape(), (Shape{3, s.height, s.width}));
  ASSERT_EQ(static_cast<Index>(s.seg.size()), area);
  ASSERT_EQ(static_cast<Index>(s.valid.size()), area);
  for (float v : s.image.data()) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
  }
  for (Index i = 0; i < area; ++i) {
    ASSERT_GE(s.seg[static_cast<std::size_t>(i)], 0);
    ASSERT_LT(s.seg[static_cast<std::size_t>(i)], s.classes);
    const double nx = s.normals[i], ny = s.normals[area + i], nz = s.normals[2 * area + i];
    if (s.valid[static_cast<std::size_t>(i)]) {
      ASSERT_GT(s.depth[i], 0.0f);
      ASSERT_NEAR(std::sqrt(nx * nx + ny * ny + nz * nz), 1.0, 1e-6);
    } else {
      // holes are shared by depth and normals
      ASSERT_EQ(s.depth[i], 0.0f);
      ASSERT_EQ(nx * nx + ny * ny + nz * nz, 0.0);
    }
  }
}

}  // namespace

TEST(GenerateScene, Deterministic) {
  const Scene a = generate_scene(17, 64, 96, 5), b = generate_scene(17, 64, 96, 5);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.seg, b.seg);
  EXPECT_EQ(a.depth, b.depth);
  EXPECT_EQ(a.normals, b.normals);
  EXPECT_EQ(a.valid, b.valid);
  EXPECT_NE(generate_scene(18, 64, 96, 5).depth, a.depth);
}

TEST(GenerateScene, RejectsBadDims) {
  EXPECT_THROW(generate_scene(0, 48, 64, 5), ConfigError);
  EXPECT_THROW(generate_scene(0, 64, 0, 5), ConfigError);
  EXPECT_THROW(generate_scene(0, 64, 64, 1), ConfigError);
}

TEST(GenerateScene, FrontParallelPlaneHasFlatNormals) {
  SceneLayout layout;
  layout.background = Plane{7.0, 0.0, 0.0};
  const Scene s = render_scene(layout, 32, 32, 2);
  const Index area = 32 * 32;
  for (Index i = 0; i < area; ++i) {
    EXPECT_EQ(s.normals[i], 0.0f);
    EXPECT_EQ(s.normals[area + i], 0.0f);
    EXPECT_EQ(s.normals[2 * area + i], 1.0f);
    EXPECT_FLOAT_EQ(s.depth[i], 7.0f);
  }
}

TEST(GenerateScene, NormalsMatchDepthGradient) {
  const double slopes[][2] = {{0.4, -0.3}, {-0.5, 0.5}, {0.1, 0.45}};
  const Index h = 64, w = 96;
  for (const auto& sl : slopes) {
    SceneLayout layout;
    layout.background = Plane{10.0, sl[0], sl[1]};
    Primitive p;
    p.cx = 0.5;
    p.cy = 0.5;
    p.rx = 0.3;
    p.ry = 0.3;
    p.plane = Plane{8.0, -sl[1], sl[0]};
    layout.layers.push_back(p);
    const Scene s = render_scene(layout, h, w, 3);
    const Index area = h * w;
    int checked = 0;
    for (Index y = 1; y + 1 < h; ++y) {
      for (Index x = 1; x + 1 < w; ++x) {
        const Index i = y * w + x;
        // interior: same surface on every stencil tap
        const auto label = s.seg[static_cast<std::size_t>(i)];
        if (s.seg[static_cast<std::size_t>(i - 1)] != label || s.seg[static_cast<std::size_t>(i + 1)] != label ||
            s.seg[static_cast<std::size_t>(i - w)] != label || s.seg[static_cast<std::size_t>(i + w)] != label) {
          continue;
        }
        const double ddu = (s.depth[i + 1] - s.depth[i - 1]) / 2.0 * static_cast<double>(w);
        const double ddv = (s.depth[i + w] - s.depth[i - w]) / 2.0 * static_cast<double>(h);
        const double fd[3] = {-ddu, -ddv, 1.0};
        const double n[3] = {s.normals[i], s.normals[area + i], s.normals[2 * area + i]};
        ASSERT_LT(angle_deg(fd, n), 1.0) << "pixel " << x << "," << y;
        ++checked;
      }
    }
    EXPECT_GT(checked, area / 2);
  }
}

TEST(GenerateScene, InvariantsAcrossSeeds) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Scene s = generate_scene(seed, 64, 64, 5);
    expect_scene_invariants(s);
    EXPECT_GE(s.hole_fraction(), 0.05) << "seed " << seed;
    EXPECT_LE(s.hole_fraction(), 0.15) << "seed " << seed;
  }
}

TEST(GenerateScene, SegmentationEdgesAreDepthDiscontinuities) {
  std::int64_t boundary = 0, jumps = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Scene s = generate_scene(seed, 64, 64, 5);
    const Index w = s.width;
    for (Index y = 0; y < s.height; ++y) {
      for (Index x = 0; x < w; ++x) {
        const Index i = y * w + x;
        for (Index j : {x + 1 < w ? i + 1 : Index{-1}, y + 1 < s.height ? i + w : Index{-1}}) {
          if (j < 0 || !s.valid[static_cast<std::size_t>(i)] || !s.valid[static_cast<std::size_t>(j)]) continue;
          if (s.seg[static_cast<std::size_t>(i)] == s.seg[static_cast<std::size_t>(j)]) continue;
          ++boundary;
          if (std::abs(s.depth[i] - s.depth[j]) > 0.5f) ++jumps;
        }
      }
    }
  }
  ASSERT_GT(boundary, 0);
  EXPECT_GE(static_cast<double>(jumps), 0.9 * static_cast<double>(boundary));
}

TEST(GenerateScene, SceneSeedsDiffer) {
  std::set<std::uint64_t> seen;
  for (std::int64_t i = 0; i < 1000; ++i) seen.insert(scene_seed(5, i));
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_NE(scene_seed(5, 0), scene_seed(6, 0));
}

// ---------------------------------------------------------------------------

TEST(Downsample, LabelsStayConsistent) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Scene full = generate_scene(seed, 64, 64, 5);
    const Scene s = downsample_labels(full, 4);
    EXPECT_EQ(s.height, 16);
    EXPECT_EQ(s.width, 16);
    expect_scene_invariants(s);
    // nearest sampling for class ids
    for (Index y = 0; y < 16; ++y) {
      for (Index x = 0; x < 16; ++x) {
        EXPECT_EQ(s.seg[static_cast<std::size_t>(y * 16 + x)], full.seg[static_cast<std::size_t>((4 * y + 2) * 64 + 4 * x + 2)]);
      }
    }
  }
  EXPECT_THROW(downsample_labels(generate_scene(0, 64, 64, 5), 3), ConfigError);
}

TEST(Downsample, FactorOneIsIdentity) {
  const Scene s = generate_scene(3, 32, 32, 4);
  const Scene d = downsample_labels(s, 1);
  EXPECT_EQ(d.seg, s.seg);
  EXPECT_EQ(d.valid, s.valid);
  EXPECT_LT(max_abs_diff(d.depth, s.depth), 1e-6f);
}

// ---------------------------------------------------------------------------

TEST(BatchIterator, SingleFullBatch) {
  DataOptions opts;
  opts.count = 8;
  BatchIterator it(opts, 8);
  EXPECT_EQ(it.batches_per_epoch(), 1);
  const auto b = it.next();
  ASSERT_TRUE(b.has_value());
  EXPECT_EQ(b->images.shape(), (Shape{8, 3, 64, 64}));
  EXPECT_EQ(b->targets.batch, 8);
  EXPECT_EQ(b->targets.height, 16);
  EXPECT_EQ(b->targets.depth.shape(), (Shape{8, 1, 16, 16}));
  EXPECT_EQ(b->targets.normals.shape(), (Shape{8, 3, 16, 16}));
  EXPECT_EQ(b->targets.valid.size(), 8u * 256u);
  EXPECT_FALSE(it.next().has_value());
  EXPECT_EQ(it.position().epoch, 1);
}

TEST(BatchIterator, ShuffledPermutationPerEpoch) {
  DataOptions opts;
  opts.count = 10;
  opts.seed = 4;
  BatchIterator it(opts, 3);
  EXPECT_EQ(it.batches_per_epoch(), 4);
  const auto e0 = it.epoch_order(0), e1 = it.epoch_order(1);
  EXPECT_EQ(std::set<std::int64_t>(e0.begin(), e0.end()).size(), 10u);
  EXPECT_NE(e0, e1);
  std::vector<std::int64_t> seen;
  while (auto b = it.next()) seen.insert(seen.end(), b->indices.begin(), b->indices.end());
  EXPECT_EQ(seen, e0);
}

TEST(BatchIterator, ReproducibleAndResumable) {
  DataOptions opts;
  opts.count = 7;
  opts.seed = 9;
  opts.height = 32;
  opts.width = 32;
  BatchIterator a(opts, 2), b(opts, 2);
  EXPECT_EQ(a.epoch_order(3), b.epoch_order(3));
  a.next();
  a.next();
  const auto saved = a.position();
  const auto expected = a.next();
  BatchIterator c(opts, 2);
  c.seek(saved);
  const auto resumed = c.next();
  ASSERT_TRUE(expected && resumed);
  EXPECT_EQ(expected->indices, resumed->indices);
  EXPECT_EQ(expected->images, resumed->images);
  EXPECT_EQ(expected->targets.depth, resumed->targets.depth);
}

TEST(BatchIterator, DownsampledNormalsUnitLength) {
  DataOptions opts;
  opts.count = 4;
  opts.seed = 2;
  BatchIterator it(opts, 4);
  const auto b = it.next();
  const auto& t = b->targets;
  const Index area = t.height * t.width;
  for (Index n = 0; n < t.batch; ++n) {
    for (Index p = 0; p < area; ++p) {
      if (!t.valid[static_cast<std::size_t>(n * area + p)]) continue;
      double len = 0;
      for (Index c = 0; c < 3; ++c) len += std::pow(t.normals[(n * 3 + c) * area + p], 2);
      EXPECT_NEAR(std::sqrt(len), 1.0, 1e-6);
    }
  }
}

TEST(BatchIterator, RejectsBadArguments) {
  EXPECT_THROW(BatchIterator(DataOptions{}, 0), ConfigError);
  DataOptions empty;
  empty.count = 0;
  EXPECT_THROW(BatchIterator(empty, 1), ConfigError);
}

// ---------------------------------------------------------------------------

TEST(SceneDump, RoundTrip) {
  const Scene s = generate_scene(11, 32, 64, 6);
  std::stringstream ss;
  write_scene(ss, s);
  EXPECT_EQ(ss.str().size(), 20u + 32u * 64u * (3 * 4 + 4 + 4 + 3 * 4 + 1));
  EXPECT_EQ(ss.str().substr(0, 4), "EMSC");
  const Scene back = read_scene(ss);
  EXPECT_EQ(back.height, 32);
  EXPECT_EQ(back.width, 64);
  EXPECT_EQ(back.classes, 6);
  EXPECT_EQ(back.image, s.image);
  EXPECT_EQ(back.seg, s.seg);
  EXPECT_EQ(back.depth, s.depth);
  EXPECT_EQ(back.normals, s.normals);
  EXPECT_EQ(back.valid, s.valid);
}

TEST(SceneDump, RejectsCorruptInput) {
  std::stringstream bad_magic("XXXX");
  EXPECT_THROW(read_scene(bad_magic), binary::FormatError);
  std::stringstream ss;
  write_scene(ss, generate_scene(1, 32, 32, 3));
  std::stringstream truncated(ss.str().substr(0, 100));
  EXPECT_THROW(read_scene(truncated), binary::FormatError);
  std::string versioned = ss.str();
  versioned[4] = 9;
  std::stringstream wrong_version(versioned);
  EXPECT_THROW(read_scene(wrong_version), binary::FormatError);
}
