#include "emanet/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>

#include "emanet/binary_io.hpp"
#include "emanet/kernels.hpp"

namespace emanet {

namespace {

// Fixed palette; classes beyond it get a hashed colour.
std::array<float, 3> class_colour(std::int32_t label) {
  static constexpr float kPalette[][3] = {
      {0.55f, 0.55f, 0.60f}, {0.90f, 0.25f, 0.20f}, {0.20f, 0.75f, 0.30f}, {0.25f, 0.35f, 0.90f},
      {0.95f, 0.80f, 0.20f}, {0.70f, 0.30f, 0.80f}, {0.20f, 0.80f, 0.85f}, {0.95f, 0.55f, 0.15f},
  };
  constexpr std::int32_t n = sizeof(kPalette) / sizeof(kPalette[0]);
  if (label < n) return {kPalette[label][0], kPalette[label][1], kPalette[label][2]};
  std::mt19937 g(static_cast<std::uint32_t>(label));
  std::uniform_real_distribution<float> u(0.15f, 0.95f);
  return {u(g), u(g), u(g)};
}

std::array<double, 3> plane_normal(const Plane& p) {
  const double n = std::sqrt(p.a * p.a + p.b * p.b + 1.0);
  return {-p.a / n, -p.b / n, 1.0 / n};
}

void require_dims(Index height, Index width, Index classes) {
  if (classes < 2) throw ConfigError("scenes need at least 2 classes, got " + std::to_string(classes));
  if (height <= 0 || width <= 0 || height % 32 != 0 || width % 32 != 0) {
    throw ConfigError("scene dims must be positive multiples of 32, got " + std::to_string(height) + "x" +
                      std::to_string(width));
  }
}

}  // namespace

bool Primitive::covers(double u, double v) const {
  const double dx = (u - cx) / rx, dy = (v - cy) / ry;
  if (kind == Kind::kRectangle) return std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
  return dx * dx + dy * dy <= 1.0;
}

double Scene::hole_fraction() const {
  const auto holes = std::count(valid.begin(), valid.end(), std::uint8_t{0});
  return static_cast<double>(holes) / static_cast<double>(valid.size());
}

Scene render_scene(const SceneLayout& layout, Index height, Index width, Index classes) {
  const Index area = height * width;
  Scene s;
  s.height = height;
  s.width = width;
  s.classes = classes;
  s.image = Tensor<float>({3, height, width});
  s.seg.assign(static_cast<std::size_t>(area), 0);
  s.depth = Tensor<float>({height, width});
  s.normals = Tensor<float>({3, height, width});
  s.valid.assign(static_cast<std::size_t>(area), 1);

  const std::array<double, 3> light = [] {
    const double n = std::sqrt(0.3 * 0.3 + 0.2 * 0.2 + 1.0);
    return std::array<double, 3>{0.3 / n, 0.2 / n, 1.0 / n};
  }();

  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(width);
      const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(height);
      const Plane* plane = &layout.background;
      std::int32_t label = 0;
      for (const auto& p : layout.layers) {
        if (p.covers(u, v)) {
          plane = &p.plane;
          label = p.label;
        }
      }
      if (label >= classes) throw ConfigError("primitive label out of range");
      const Index i = y * width + x;
      const double d = plane->depth(u, v);
      const auto n = plane_normal(*plane);
      s.seg[static_cast<std::size_t>(i)] = label;
      s.depth[i] = static_cast<float>(d);
      for (int c = 0; c < 3; ++c) s.normals[c * area + i] = static_cast<float>(n[static_cast<std::size_t>(c)]);

      const double lambert = std::max(0.0, n[0] * light[0] + n[1] * light[1] + n[2] * light[2]);
      const double fog = std::clamp(1.15 - d / 16.0, 0.2, 1.0);
      const auto colour = class_colour(label);
      for (int c = 0; c < 3; ++c) {
        const double value = colour[static_cast<std::size_t>(c)] * (0.35 + 0.65 * lambert) * fog;
        s.image[c * area + i] = static_cast<float>(std::clamp(value, 0.0, 1.0));
      }
    }
  }

  for (const Hole& h : layout.holes) {
    for (Index y = std::max<Index>(h.y0, 0); y < std::min(h.y1, height); ++y) {
      for (Index x = std::max<Index>(h.x0, 0); x < std::min(h.x1, width); ++x) {
        const Index i = y * width + x;
        s.valid[static_cast<std::size_t>(i)] = 0;
        s.depth[i] = 0.0f;
        for (int c = 0; c < 3; ++c) s.normals[c * area + i] = 0.0f;
      }
    }
  }
  return s;
}

SceneLayout random_layout(std::uint64_t seed, Index height, Index width, Index classes) {
  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto integer = [&](std::int64_t lo, std::int64_t hi) { return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng); };

  SceneLayout layout;
  layout.background = {kBackgroundDepth, uniform(-kMaxSlope, kMaxSlope), uniform(-kMaxSlope, kMaxSlope)};
  const auto count = integer(2, 5);
  for (std::int64_t k = 0; k < count; ++k) {
    Primitive p;
    p.kind = integer(0, 1) == 0 ? Primitive::Kind::kRectangle : Primitive::Kind::kEllipse;
    p.cx = uniform(0.15, 0.85);
    p.cy = uniform(0.15, 0.85);
    p.rx = uniform(0.1, 0.3);
    p.ry = uniform(0.1, 0.3);
    p.label = static_cast<std::int32_t>(integer(1, classes - 1));
    p.plane = {kBackgroundDepth - kLayerStep * static_cast<double>(k + 1), uniform(-kMaxSlope, kMaxSlope),
               uniform(-kMaxSlope, kMaxSlope)};
    layout.layers.push_back(p);
  }

  // Holes: small rectangles until the covered fraction reaches a target in
  // [5%, 13%]; the last rectangle overshoots by at most (1/8)^2.
  const double target = uniform(0.05, 0.13);
  std::vector<std::uint8_t> covered(static_cast<std::size_t>(height * width), 0);
  std::int64_t holes = 0;
  const Index max_side = std::max<Index>(2, std::min(height, width) / 8);
  while (static_cast<double>(holes) < target * static_cast<double>(height * width)) {
    Hole h;
    const Index hw = integer(2, max_side), hh = integer(2, max_side);
    h.x0 = integer(0, width - hw);
    h.y0 = integer(0, height - hh);
    h.x1 = h.x0 + hw;
    h.y1 = h.y0 + hh;
    for (Index y = h.y0; y < h.y1; ++y) {
      for (Index x = h.x0; x < h.x1; ++x) {
        auto& c = covered[static_cast<std::size_t>(y * width + x)];
        holes += c == 0;
        c = 1;
      }
    }
    layout.holes.push_back(h);
  }
  return layout;
}

Scene generate_scene(std::uint64_t seed, Index height, Index width, Index classes) {
  require_dims(height, width, classes);
  return render_scene(random_layout(seed, height, width, classes), height, width, classes);
}

std::uint64_t scene_seed(std::uint64_t seed, std::int64_t index) {
  // splitmix64 of the combined key
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(index) + 0x632BE59BD9B4E019ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

Scene downsample_labels(const Scene& scene, Index factor) {
  if (factor < 1 || scene.height % factor != 0 || scene.width % factor != 0) {
    throw ConfigError("label factor " + std::to_string(factor) + " does not divide the scene dims");
  }
  if (factor == 1) return scene;
  const Index h = scene.height, w = scene.width, oh = h / factor, ow = w / factor;
  const Index area = h * w, out_area = oh * ow;
  const auto ty = kernels::lerp_taps(h, oh), tx = kernels::lerp_taps(w, ow);

  Scene out;
  out.height = oh;
  out.width = ow;
  out.classes = scene.classes;
  out.image = kernels::resize_bilinear(scene.image.reshaped({1, 3, h, w}), oh, ow).reshaped({3, oh, ow});
  out.seg.resize(static_cast<std::size_t>(out_area));
  out.depth = Tensor<float>({oh, ow});
  out.normals = Tensor<float>({3, oh, ow});
  out.valid.resize(static_cast<std::size_t>(out_area));

  for (Index y = 0; y < oh; ++y) {
    for (Index x = 0; x < ow; ++x) {
      const Index o = y * ow + x;
      // nearest: the source pixel containing the output pixel centre
      const Index ny = y * factor + factor / 2, nx = x * factor + factor / 2;
      const auto ni = static_cast<std::size_t>(ny * w + nx);
      out.seg[static_cast<std::size_t>(o)] = scene.seg[ni];
      const bool valid = scene.valid[ni] != 0;
      out.valid[static_cast<std::size_t>(o)] = valid ? 1 : 0;
      if (!valid) continue;

      const auto& a = ty[static_cast<std::size_t>(y)];
      const auto& b = tx[static_cast<std::size_t>(x)];
      const Index ys[2] = {a.lo, a.hi}, xs[2] = {b.lo, b.hi};
      const double wy[2] = {1 - a.frac, a.frac}, wx[2] = {1 - b.frac, b.frac};
      double weight = 0, d = 0, n[3] = {0, 0, 0};
      for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
          const Index s = ys[i] * w + xs[j];
          const double t = wy[i] * wx[j];
          if (t == 0 || !scene.valid[static_cast<std::size_t>(s)]) continue;
          weight += t;
          d += t * scene.depth[s];
          for (int c = 0; c < 3; ++c) n[c] += t * scene.normals[c * area + s];
        }
      }
      if (weight == 0) {  // only the nearest tap with zero weight; fall back to it
        weight = 1;
        d = scene.depth[static_cast<Index>(ni)];
        for (int c = 0; c < 3; ++c) n[c] = scene.normals[c * area + static_cast<Index>(ni)];
      }
      out.depth[o] = static_cast<float>(d / weight);
      const double norm = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
      for (int c = 0; c < 3; ++c) out.normals[c * out_area + o] = static_cast<float>(n[c] / norm);
    }
  }
  return out;
}

Batch make_batch(const std::vector<Scene>& scenes, const std::vector<std::int64_t>& indices, Index label_factor) {
  if (scenes.empty()) throw ConfigError("empty batch");
  const Index b = static_cast<Index>(scenes.size()), h = scenes[0].height, w = scenes[0].width;
  const Index lh = h / label_factor, lw = w / label_factor, la = lh * lw;
  Batch out;
  out.indices = indices;
  out.images = Tensor<float>({b, 3, h, w});
  auto& t = out.targets;
  t.batch = b;
  t.height = lh;
  t.width = lw;
  t.depth = Tensor<float>({b, 1, lh, lw});
  t.normals = Tensor<float>({b, 3, lh, lw});
  for (Index n = 0; n < b; ++n) {
    const Scene& s = scenes[static_cast<std::size_t>(n)];
    if (s.height != h || s.width != w) throw ShapeError("scenes in a batch must share dims");
    std::copy(s.image.ptr(), s.image.ptr() + 3 * h * w, out.images.ptr() + n * 3 * h * w);
    const Scene small = downsample_labels(s, label_factor);
    t.seg.insert(t.seg.end(), small.seg.begin(), small.seg.end());
    t.valid.insert(t.valid.end(), small.valid.begin(), small.valid.end());
    std::copy(small.depth.ptr(), small.depth.ptr() + la, t.depth.ptr() + n * la);
    std::copy(small.normals.ptr(), small.normals.ptr() + 3 * la, t.normals.ptr() + n * 3 * la);
  }
  t.seg_valid.assign(t.seg.size(), 1);
  return out;
}

BatchIterator::BatchIterator(DataOptions options, std::int64_t batch) : opts_(options), batch_(batch) {
  if (batch < 1) throw ConfigError("batch size must be at least 1");
  if (opts_.count < 1) throw ConfigError("scene count must be at least 1");
  require_dims(opts_.height, opts_.width, opts_.classes);
}

std::vector<std::int64_t> BatchIterator::epoch_order(std::int64_t epoch) const {
  std::vector<std::int64_t> order(static_cast<std::size_t>(opts_.count));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(scene_seed(opts_.seed ^ 0x5EEDF00Dull, epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::int64_t BatchIterator::batches_per_epoch() const { return (opts_.count + batch_ - 1) / batch_; }

std::optional<Batch> BatchIterator::next() {
  if (pos_.cursor >= opts_.count) {
    pos_ = {pos_.epoch + 1, 0};
    return std::nullopt;
  }
  const auto order = epoch_order(pos_.epoch);
  const std::int64_t end = std::min(opts_.count, pos_.cursor + batch_);
  std::vector<std::int64_t> indices(order.begin() + pos_.cursor, order.begin() + end);
  std::vector<Scene> scenes;
  for (auto i : indices) scenes.push_back(generate_scene(scene_seed(opts_.seed, i), opts_.height, opts_.width, opts_.classes));
  pos_.cursor = end;
  return make_batch(scenes, indices, opts_.label_factor);
}

void write_scene(std::ostream& os, const Scene& s) {
  os.write("EMSC", 4);
  binary::write_le<std::uint32_t>(os, 1);
  binary::write_le(os, static_cast<std::uint32_t>(s.height));
  binary::write_le(os, static_cast<std::uint32_t>(s.width));
  binary::write_le(os, static_cast<std::uint32_t>(s.classes));
  binary::write_le(os, s.image.ptr(), static_cast<std::size_t>(s.image.size()));
  binary::write_le(os, s.seg.data(), s.seg.size());
  binary::write_le(os, s.depth.ptr(), static_cast<std::size_t>(s.depth.size()));
  binary::write_le(os, s.normals.ptr(), static_cast<std::size_t>(s.normals.size()));
  binary::write_le(os, s.valid.data(), s.valid.size());
}

Scene read_scene(std::istream& is) {
  binary::expect_magic(is, "EMSC");
  const auto version = binary::read_le<std::uint32_t>(is);
  if (version != 1) throw binary::FormatError("unsupported scene version " + std::to_string(version));
  Scene s;
  s.height = binary::read_le<std::uint32_t>(is);
  s.width = binary::read_le<std::uint32_t>(is);
  s.classes = binary::read_le<std::uint32_t>(is);
  if (s.height == 0 || s.width == 0 || s.height * s.width > (Index{1} << 28)) {
    throw binary::FormatError("implausible scene dims");
  }
  const auto area = static_cast<std::size_t>(s.height * s.width);
  s.image = Tensor<float>({3, s.height, s.width});
  binary::read_le(is, s.image.ptr(), 3 * area);
  s.seg.resize(area);
  binary::read_le(is, s.seg.data(), area);
  s.depth = Tensor<float>({s.height, s.width});
  binary::read_le(is, s.depth.ptr(), area);
  s.normals = Tensor<float>({3, s.height, s.width});
  binary::read_le(is, s.normals.ptr(), 3 * area);
  s.valid.resize(area);
  binary::read_le(is, s.valid.data(), area);
  return s;
}

}  // namespace emanet
