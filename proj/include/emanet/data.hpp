#pragma once

// Deterministic synthetic multitask scenes: layered planar primitives with
// aligned segmentation, depth and surface normals, plus masked holes.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "emanet/tasks.hpp"
#include "emanet/tensor.hpp"

namespace emanet {

struct Scene {
  Index height = 0;
  Index width = 0;
  Index classes = 0;
  Tensor<float> image;              // 3 x H x W, in [0, 1]
  std::vector<std::int32_t> seg;    // H x W, in [0, K)
  Tensor<float> depth;              // H x W, > 0 where valid, 0 in holes
  Tensor<float> normals;            // 3 x H x W, unit where valid, 0 in holes
  std::vector<std::uint8_t> valid;  // H x W

  double hole_fraction() const;
};

/// Depth plane d(u, v) = base + a (u - 1/2) + b (v - 1/2) over normalized
/// image coordinates u = x / W, v = y / H. Its normal is normalize(-a, -b, 1).
struct Plane {
  double base = 12.0;
  double a = 0.0;
  double b = 0.0;

  double depth(double u, double v) const { return base + a * (u - 0.5) + b * (v - 0.5); }
};

struct Primitive {
  enum class Kind { kRectangle, kEllipse };
  Kind kind = Kind::kRectangle;
  double cx = 0.5, cy = 0.5;  // normalized centre
  double rx = 0.25, ry = 0.25;  // normalized half extents
  std::int32_t label = 1;
  Plane plane;

  bool covers(double u, double v) const;
};

/// Hole rectangle in pixels, [x0, x1) x [y0, y1).
struct Hole {
  Index x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

struct SceneLayout {
  Plane background;              // class 0
  std::vector<Primitive> layers; // back to front
  std::vector<Hole> holes;
};

inline constexpr double kBackgroundDepth = 12.0;
inline constexpr double kLayerStep = 1.5;
inline constexpr double kMaxSlope = 0.5;

/// Rasterizes a layout; later layers occlude earlier ones.
Scene render_scene(const SceneLayout& layout, Index height, Index width, Index classes);

/// Random layout: 2-5 primitives, each `kLayerStep` closer than the last,
/// slopes within +-kMaxSlope, holes covering 5-15% of pixels.
SceneLayout random_layout(std::uint64_t seed, Index height, Index width, Index classes);

/// Throws ConfigError unless K >= 2 and H, W are positive multiples of 32.
Scene generate_scene(std::uint64_t seed, Index height, Index width, Index classes);

/// Seed of scene `index` within a dataset seeded by `seed`.
std::uint64_t scene_seed(std::uint64_t seed, std::int64_t index);

/// Labels at 1/factor resolution: nearest for seg and mask; depth and normals
/// average the valid bilinear taps, normals are re-normalized.
Scene downsample_labels(const Scene& scene, Index factor);

// ---------------------------------------------------------------------------
// Batching

struct DataOptions {
  std::uint64_t seed = 0;
  std::int64_t count = 8;
  Index height = 64;
  Index width = 64;
  Index classes = 5;
  /// Labels are produced at 1/label_factor of the image resolution.
  Index label_factor = 4;
};

struct Batch {
  std::vector<std::int64_t> indices;
  Tensor<float> images;  // B x 3 x H x W
  Targets<float> targets;
};

/// Stacks scenes into a batch, downsampling their labels by `label_factor`.
Batch make_batch(const std::vector<Scene>& scenes, const std::vector<std::int64_t>& indices, Index label_factor);

/// Epoch-wise shuffled iteration over `count` scenes. The order of epoch e is
/// a pure function of (seed, e), so iteration can resume from any position.
class BatchIterator {
 public:
  struct Position {
    std::int64_t epoch = 0;
    std::int64_t cursor = 0;
    bool operator==(const Position&) const = default;
  };

  BatchIterator(DataOptions options, std::int64_t batch);

  /// Next batch of the current epoch; nullopt (and the epoch advances) at the end.
  std::optional<Batch> next();
  std::vector<std::int64_t> epoch_order(std::int64_t epoch) const;
  std::int64_t batches_per_epoch() const;

  Position position() const { return pos_; }
  void seek(Position p) { pos_ = p; }
  const DataOptions& options() const { return opts_; }

 private:
  DataOptions opts_;
  std::int64_t batch_;
  Position pos_;
};

// ---------------------------------------------------------------------------
// Scene dump, little-endian:
//   "EMSC" | u32 version=1 | u32 H | u32 W | u32 K
//   f32 image[3*H*W] | i32 seg[H*W] | f32 depth[H*W] | f32 normals[3*H*W] | u8 mask[H*W]

void write_scene(std::ostream& os, const Scene& scene);
Scene read_scene(std::istream& is);

}  // namespace emanet
