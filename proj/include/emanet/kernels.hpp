#pragma once

// Forward and backward kernels on plain tensors. The differentiable layer in
// ops.hpp records these on a tape; nothing here knows about autodiff.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "emanet/flops.hpp"
#include "emanet/tensor.hpp"

namespace emanet {

struct Conv2dOptions {
  Index stride = 1;
  Index padding = 0;
  Index groups = 1;
};

namespace kernels {

/// Splits `shape` around `axis` into (outer, extent, inner).
struct AxisSplit {
  Index outer = 1;
  Index extent = 1;
  Index inner = 1;
};

inline AxisSplit split_at(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  s.extent = shape[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

inline int normalize_axis(int axis, int rank) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  }
  return a;
}

// ---------------------------------------------------------------------------
// Products

template <typename Scalar>
void check_matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul of " + to_string(a.shape()) + " by " + to_string(b.shape()));
  }
}

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  check_matmul(a, b);
  Tensor<Scalar> c({a.dim(0), b.dim(1)});
  c.matrix().noalias() = a.matrix() * b.matrix();
  FlopCounter::add(2 * a.dim(0) * a.dim(1) * b.dim(1));
  return c;
}

template <typename Scalar>
void check_bmm(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw DimensionError("batched matmul of " + to_string(a.shape()) + " by " + to_string(b.shape()));
  }
}

/// out[i] (+)= op(a[i]) * op(b[i]) for every batch entry.
template <typename Scalar>
void bmm_into(const Tensor<Scalar>& a, bool trans_a, const Tensor<Scalar>& b, bool trans_b, Tensor<Scalar>& out,
              bool accumulate) {
  const Index batch = a.dim(0);
  const Index ar = a.dim(1), ac = a.dim(2), br = b.dim(1), bc = b.dim(2);
  const Index orow = out.dim(1), ocol = out.dim(2);
  for (Index i = 0; i < batch; ++i) {
    ConstMatrixMap<Scalar> am(a.ptr() + i * ar * ac, ar, ac);
    ConstMatrixMap<Scalar> bm(b.ptr() + i * br * bc, br, bc);
    MatrixMap<Scalar> om(out.ptr() + i * orow * ocol, orow, ocol);
    if (!accumulate) om.setZero();
    if (trans_a && trans_b) {
      om.noalias() += am.transpose() * bm.transpose();
    } else if (trans_a) {
      om.noalias() += am.transpose() * bm;
    } else if (trans_b) {
      om.noalias() += am * bm.transpose();
    } else {
      om.noalias() += am * bm;
    }
  }
}

template <typename Scalar>
Tensor<Scalar> bmm(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  check_bmm(a, b);
  Tensor<Scalar> c({a.dim(0), a.dim(1), b.dim(2)});
  bmm_into(a, false, b, false, c, false);
  FlopCounter::add(2 * a.dim(0) * a.dim(1) * a.dim(2) * b.dim(2));
  return c;
}

// ---------------------------------------------------------------------------
// Layout

template <typename Scalar>
Tensor<Scalar> permute(const Tensor<Scalar>& x, const std::vector<int>& order) {
  const int r = x.rank();
  if (static_cast<int>(order.size()) != r) {
    throw ShapeError("permutation of length " + std::to_string(order.size()) + " for shape " + to_string(x.shape()));
  }
  std::vector<bool> seen(static_cast<std::size_t>(r), false);
  for (int o : order) {
    if (o < 0 || o >= r || seen[static_cast<std::size_t>(o)]) {
      throw ShapeError("invalid axis permutation for shape " + to_string(x.shape()));
    }
    seen[static_cast<std::size_t>(o)] = true;
  }
  Shape out_shape(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) out_shape[static_cast<std::size_t>(i)] = x.shape()[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];

  std::vector<Index> in_strides(static_cast<std::size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i) {
    in_strides[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(i + 1)] * x.shape()[static_cast<std::size_t>(i + 1)];
  }
  std::vector<Index> step(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) step[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];

  Tensor<Scalar> out(out_shape);
  std::vector<Index> idx(static_cast<std::size_t>(r), 0);
  Index src = 0;
  const Index n = out.size();
  for (Index dst = 0; dst < n; ++dst) {
    out[dst] = x[src];
    for (int ax = r - 1; ax >= 0; --ax) {
      auto a = static_cast<std::size_t>(ax);
      src += step[a];
      if (++idx[a] < out_shape[a]) break;
      src -= step[a] * out_shape[a];
      idx[a] = 0;
    }
  }
  return out;
}

inline std::vector<int> inverse_permutation(const std::vector<int>& order) {
  std::vector<int> inv(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) inv[static_cast<std::size_t>(order[i])] = static_cast<int>(i);
  return inv;
}

template <typename Scalar>
Tensor<Scalar> concat(const std::vector<const Tensor<Scalar>*>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of an empty tensor list");
  const Shape& ref = parts.front()->shape();
  axis = normalize_axis(axis, static_cast<int>(ref.size()));
  Shape out_shape = ref;
  out_shape[static_cast<std::size_t>(axis)] = 0;
  for (const auto* p : parts) {
    const Shape& s = p->shape();
    bool ok = s.size() == ref.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) {
      if (static_cast<int>(i) != axis && s[i] != ref[i]) ok = false;
    }
    if (!ok) throw ShapeError("concat of " + to_string(s) + " with " + to_string(ref) + " along axis " + std::to_string(axis));
    out_shape[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
  }
  Tensor<Scalar> out(out_shape);
  const AxisSplit os = split_at(out_shape, axis);
  Index col = 0;
  for (const auto* p : parts) {
    const AxisSplit ps = split_at(p->shape(), axis);
    const Index chunk = ps.extent * ps.inner;
    for (Index o = 0; o < ps.outer; ++o) {
      std::copy_n(p->ptr() + o * chunk, chunk, out.ptr() + (o * os.extent + col) * os.inner);
    }
    col += ps.extent;
  }
  return out;
}

/// Slice [begin, begin+length) of `x` along `axis`.
template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& x, int axis, Index begin, Index length) {
  axis = normalize_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), axis);
  if (begin < 0 || length <= 0 || begin + length > s.extent) {
    throw ShapeError("slice [" + std::to_string(begin) + ", +" + std::to_string(length) + ") of " + to_string(x.shape()));
  }
  Shape shape = x.shape();
  shape[static_cast<std::size_t>(axis)] = length;
  Tensor<Scalar> out(shape);
  for (Index o = 0; o < s.outer; ++o) {
    std::copy_n(x.ptr() + (o * s.extent + begin) * s.inner, length * s.inner, out.ptr() + o * length * s.inner);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolution (patch gather + GEMM)

struct ConvGeometry {
  Index batch, in_channels, height, width;
  Index out_channels, kernel_h, kernel_w;
  Index out_h, out_w;
  Index stride, padding, groups;

  Index in_per_group() const { return in_channels / groups; }
  Index out_per_group() const { return out_channels / groups; }
  Index patch() const { return in_per_group() * kernel_h * kernel_w; }
  Index out_area() const { return out_h * out_w; }
};

template <typename Scalar>
ConvGeometry conv_geometry(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Conv2dOptions& opt) {
  if (x.rank() != 4 || w.rank() != 4) {
    throw ShapeError("conv2d expects 4-d input and weight, got " + to_string(x.shape()) + " and " + to_string(w.shape()));
  }
  if (opt.groups < 1 || opt.stride < 1) throw ConfigError("conv2d requires groups >= 1 and stride >= 1");
  if (opt.padding < 0) throw ShapeError("conv2d padding must be non-negative");
  ConvGeometry g{};
  g.batch = x.dim(0);
  g.in_channels = x.dim(1);
  g.height = x.dim(2);
  g.width = x.dim(3);
  g.out_channels = w.dim(0);
  g.kernel_h = w.dim(2);
  g.kernel_w = w.dim(3);
  g.stride = opt.stride;
  g.padding = opt.padding;
  g.groups = opt.groups;
  if (g.in_channels % g.groups != 0 || g.out_channels % g.groups != 0) {
    throw GroupingError("conv2d with " + std::to_string(g.groups) + " groups needs channel counts divisible by it, got in=" +
                        std::to_string(g.in_channels) + " out=" + std::to_string(g.out_channels));
  }
  if (w.dim(1) != g.in_per_group()) {
    throw GroupingError("conv2d weight " + to_string(w.shape()) + " expects " + std::to_string(w.dim(1)) +
                        " input channels per group, input provides " + std::to_string(g.in_per_group()));
  }
  const Index num_h = g.height + 2 * g.padding - g.kernel_h;
  const Index num_w = g.width + 2 * g.padding - g.kernel_w;
  if (num_h < 0 || num_w < 0) {
    throw ShapeError("conv2d output extent is non-positive for input " + to_string(x.shape()) + " and kernel " +
                     to_string(w.shape()));
  }
  g.out_h = num_h / g.stride + 1;
  g.out_w = num_w / g.stride + 1;
  return g;
}

/// Gathers the receptive fields of one image into a (C*kh*kw) x (out_h*out_w) matrix.
template <typename Scalar>
void im2col(const Scalar* image, const ConvGeometry& g, Scalar* cols) {
  const Index area = g.out_area();
  for (Index c = 0; c < g.in_channels; ++c) {
    const Scalar* plane = image + c * g.height * g.width;
    for (Index ky = 0; ky < g.kernel_h; ++ky) {
      for (Index kx = 0; kx < g.kernel_w; ++kx) {
        Scalar* row = cols + ((c * g.kernel_h + ky) * g.kernel_w + kx) * area;
        for (Index oy = 0; oy < g.out_h; ++oy) {
          const Index iy = oy * g.stride - g.padding + ky;
          Scalar* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill_n(dst, g.out_w, Scalar(0));
            continue;
          }
          const Scalar* src = plane + iy * g.width;
          for (Index ox = 0; ox < g.out_w; ++ox) {
            const Index ix = ox * g.stride - g.padding + kx;
            dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : Scalar(0);
          }
        }
      }
    }
  }
}

/// Scatter-adds a column matrix back onto an image (adjoint of im2col).
template <typename Scalar>
void col2im(const Scalar* cols, const ConvGeometry& g, Scalar* image) {
  const Index area = g.out_area();
  for (Index c = 0; c < g.in_channels; ++c) {
    Scalar* plane = image + c * g.height * g.width;
    for (Index ky = 0; ky < g.kernel_h; ++ky) {
      for (Index kx = 0; kx < g.kernel_w; ++kx) {
        const Scalar* row = cols + ((c * g.kernel_h + ky) * g.kernel_w + kx) * area;
        for (Index oy = 0; oy < g.out_h; ++oy) {
          const Index iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= g.height) continue;
          const Scalar* src = row + oy * g.out_w;
          Scalar* dst = plane + iy * g.width;
          for (Index ox = 0; ox < g.out_w; ++ox) {
            const Index ix = ox * g.stride - g.padding + kx;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>* bias,
                      const Conv2dOptions& opt) {
  const ConvGeometry g = conv_geometry(x, w, opt);
  if (bias && (bias->rank() != 1 || bias->dim(0) != g.out_channels)) {
    throw ShapeError("conv2d bias " + to_string(bias->shape()) + " for " + std::to_string(g.out_channels) + " outputs");
  }
  Tensor<Scalar> y({g.batch, g.out_channels, g.out_h, g.out_w});
  const Index area = g.out_area();
  const Index patch = g.patch();
  RowMatrix<Scalar> cols(g.in_channels * g.kernel_h * g.kernel_w, area);
  ConstMatrixMap<Scalar> wm(w.ptr(), g.out_channels, patch);
  for (Index b = 0; b < g.batch; ++b) {
    im2col(x.ptr() + b * g.in_channels * g.height * g.width, g, cols.data());
    MatrixMap<Scalar> ym(y.ptr() + b * g.out_channels * area, g.out_channels, area);
    for (Index grp = 0; grp < g.groups; ++grp) {
      ym.middleRows(grp * g.out_per_group(), g.out_per_group()).noalias() =
          wm.middleRows(grp * g.out_per_group(), g.out_per_group()) * cols.middleRows(grp * patch, patch);
    }
    if (bias) {
      for (Index c = 0; c < g.out_channels; ++c) ym.row(c).array() += (*bias)[c];
    }
  }
  FlopCounter::add(2 * g.batch * g.out_channels * area * patch);
  return y;
}

/// Accumulates gradients of a convolution into whichever of dx / dw / dbias
/// are non-null.
template <typename Scalar>
void conv2d_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Conv2dOptions& opt,
                     const Tensor<Scalar>& dy, Tensor<Scalar>* dx, Tensor<Scalar>* dw, Tensor<Scalar>* dbias) {
  const ConvGeometry g = conv_geometry(x, w, opt);
  const Index area = g.out_area();
  const Index patch = g.patch();
  RowMatrix<Scalar> cols(g.in_channels * g.kernel_h * g.kernel_w, area);
  RowMatrix<Scalar> dcols;
  if (dx) dcols.resize(cols.rows(), area);
  ConstMatrixMap<Scalar> wm(w.ptr(), g.out_channels, patch);
  for (Index b = 0; b < g.batch; ++b) {
    ConstMatrixMap<Scalar> dym(dy.ptr() + b * g.out_channels * area, g.out_channels, area);
    if (dbias) {
      for (Index c = 0; c < g.out_channels; ++c) (*dbias)[c] += dym.row(c).sum();
    }
    if (dw) {
      im2col(x.ptr() + b * g.in_channels * g.height * g.width, g, cols.data());
      MatrixMap<Scalar> dwm(dw->ptr(), g.out_channels, patch);
      for (Index grp = 0; grp < g.groups; ++grp) {
        dwm.middleRows(grp * g.out_per_group(), g.out_per_group()).noalias() +=
            dym.middleRows(grp * g.out_per_group(), g.out_per_group()) * cols.middleRows(grp * patch, patch).transpose();
      }
    }
    if (dx) {
      for (Index grp = 0; grp < g.groups; ++grp) {
        dcols.middleRows(grp * patch, patch).noalias() =
            wm.middleRows(grp * g.out_per_group(), g.out_per_group()).transpose() *
            dym.middleRows(grp * g.out_per_group(), g.out_per_group());
      }
      col2im(dcols.data(), g, dx->ptr() + b * g.in_channels * g.height * g.width);
    }
  }
}

// ---------------------------------------------------------------------------
// Bilinear resampling, half-pixel centres, edge-clamped

struct LerpTap {
  Index lo = 0;
  Index hi = 0;
  double frac = 0.0;  // weight of `hi`
};

inline std::vector<LerpTap> lerp_taps(Index in_extent, Index out_extent) {
  std::vector<LerpTap> taps(static_cast<std::size_t>(out_extent));
  const double ratio = static_cast<double>(in_extent) / static_cast<double>(out_extent);
  for (Index o = 0; o < out_extent; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in_extent - 1));
    LerpTap t;
    t.lo = static_cast<Index>(std::floor(src));
    t.hi = std::min(t.lo + 1, in_extent - 1);
    t.frac = src - static_cast<double>(t.lo);
    taps[static_cast<std::size_t>(o)] = t;
  }
  return taps;
}

template <typename Scalar>
Tensor<Scalar> resize_bilinear(const Tensor<Scalar>& x, Index out_h, Index out_w) {
  if (x.rank() != 4) throw ShapeError("resize_bilinear expects B x C x H x W, got " + to_string(x.shape()));
  if (out_h <= 0 || out_w <= 0) throw ShapeError("resize_bilinear target extent must be positive");
  const Index planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto ty = lerp_taps(h, out_h);
  const auto tx = lerp_taps(w, out_w);
  Tensor<Scalar> y({x.dim(0), x.dim(1), out_h, out_w});
  for (Index p = 0; p < planes; ++p) {
    const Scalar* src = x.ptr() + p * h * w;
    Scalar* dst = y.ptr() + p * out_h * out_w;
    for (Index oy = 0; oy < out_h; ++oy) {
      const LerpTap& a = ty[static_cast<std::size_t>(oy)];
      const auto fy = static_cast<Scalar>(a.frac);
      for (Index ox = 0; ox < out_w; ++ox) {
        const LerpTap& b = tx[static_cast<std::size_t>(ox)];
        const auto fx = static_cast<Scalar>(b.frac);
        const Scalar top = src[a.lo * w + b.lo] * (1 - fx) + src[a.lo * w + b.hi] * fx;
        const Scalar bot = src[a.hi * w + b.lo] * (1 - fx) + src[a.hi * w + b.hi] * fx;
        dst[oy * out_w + ox] = top * (1 - fy) + bot * fy;
      }
    }
  }
  return y;
}

template <typename Scalar>
void resize_bilinear_backward(const Tensor<Scalar>& dy, Tensor<Scalar>& dx) {
  const Index planes = dx.dim(0) * dx.dim(1), h = dx.dim(2), w = dx.dim(3);
  const Index out_h = dy.dim(2), out_w = dy.dim(3);
  const auto ty = lerp_taps(h, out_h);
  const auto tx = lerp_taps(w, out_w);
  for (Index p = 0; p < planes; ++p) {
    const Scalar* src = dy.ptr() + p * out_h * out_w;
    Scalar* dst = dx.ptr() + p * h * w;
    for (Index oy = 0; oy < out_h; ++oy) {
      const LerpTap& a = ty[static_cast<std::size_t>(oy)];
      const auto fy = static_cast<Scalar>(a.frac);
      for (Index ox = 0; ox < out_w; ++ox) {
        const LerpTap& b = tx[static_cast<std::size_t>(ox)];
        const auto fx = static_cast<Scalar>(b.frac);
        const Scalar g = src[oy * out_w + ox];
        dst[a.lo * w + b.lo] += g * (1 - fy) * (1 - fx);
        dst[a.lo * w + b.hi] += g * (1 - fy) * fx;
        dst[a.hi * w + b.lo] += g * fy * (1 - fx);
        dst[a.hi * w + b.hi] += g * fy * fx;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// L2 normalization along one axis

template <typename Scalar>
Tensor<Scalar> l2_normalize(const Tensor<Scalar>& x, int axis, Scalar eps, Tensor<Scalar>* norms_out = nullptr) {
  axis = normalize_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), axis);
  Tensor<Scalar> y(x.shape());
  Tensor<Scalar> norms({s.outer * s.inner});
  for (Index o = 0; o < s.outer; ++o) {
    for (Index i = 0; i < s.inner; ++i) {
      const Scalar* src = x.ptr() + o * s.extent * s.inner + i;
      Scalar sq = 0;
      for (Index k = 0; k < s.extent; ++k) sq += src[k * s.inner] * src[k * s.inner];
      const Scalar denom = std::max(std::sqrt(sq), eps);
      norms[o * s.inner + i] = denom;
      Scalar* dst = y.ptr() + o * s.extent * s.inner + i;
      for (Index k = 0; k < s.extent; ++k) dst[k * s.inner] = src[k * s.inner] / denom;
    }
  }
  if (norms_out) *norms_out = std::move(norms);
  return y;
}

/// Gradient of y = x / max(|x|, eps) along `axis`. Where the eps floor is
/// active the map is linear (y = x / eps).
template <typename Scalar>
void l2_normalize_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& norms, int axis, Scalar eps,
                           const Tensor<Scalar>& dy, Tensor<Scalar>& dx) {
  const AxisSplit s = split_at(x.shape(), axis);
  for (Index o = 0; o < s.outer; ++o) {
    for (Index i = 0; i < s.inner; ++i) {
      const Index base = o * s.extent * s.inner + i;
      const Scalar n = norms[o * s.inner + i];
      if (n <= eps) {
        for (Index k = 0; k < s.extent; ++k) dx[base + k * s.inner] += dy[base + k * s.inner] / eps;
        continue;
      }
      Scalar dot = 0;
      for (Index k = 0; k < s.extent; ++k) dot += dy[base + k * s.inner] * x[base + k * s.inner];
      dot /= n;
      for (Index k = 0; k < s.extent; ++k) {
        const Index at = base + k * s.inner;
        dx[at] += (dy[at] - x[at] / n * dot) / n;
      }
    }
  }
}

}  // namespace kernels
}  // namespace emanet
