#pragma once

// Slow, obviously-correct kernels kept as cross-checks for the GEMM paths.

#include "emanet/tensor.hpp"
#include "emanet/kernels.hpp"

namespace emanet::reference {

/// Seven-loop grouped convolution.
template <typename Scalar>
Tensor<Scalar> conv2d_direct(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>* bias,
                             const Conv2dOptions& opt) {
  const kernels::ConvGeometry g = kernels::conv_geometry(x, w, opt);
  Tensor<Scalar> y({g.batch, g.out_channels, g.out_h, g.out_w});
  const Index cin_g = g.in_per_group(), cout_g = g.out_per_group();
  for (Index b = 0; b < g.batch; ++b) {
    for (Index oc = 0; oc < g.out_channels; ++oc) {
      const Index grp = oc / cout_g;
      for (Index oy = 0; oy < g.out_h; ++oy) {
        for (Index ox = 0; ox < g.out_w; ++ox) {
          double acc = bias ? static_cast<double>((*bias)[oc]) : 0.0;
          for (Index ic = 0; ic < cin_g; ++ic) {
            const Index c = grp * cin_g + ic;
            for (Index ky = 0; ky < g.kernel_h; ++ky) {
              const Index iy = oy * g.stride - g.padding + ky;
              if (iy < 0 || iy >= g.height) continue;
              for (Index kx = 0; kx < g.kernel_w; ++kx) {
                const Index ix = ox * g.stride - g.padding + kx;
                if (ix < 0 || ix >= g.width) continue;
                acc += static_cast<double>(x.at({b, c, iy, ix})) * static_cast<double>(w.at({oc, ic, ky, kx}));
              }
            }
          }
          y.at({b, oc, oy, ox}) = static_cast<Scalar>(acc);
        }
      }
    }
  }
  return y;
}

/// Expands grouped weights (Cout x Cin/g x kh x kw) into the equivalent dense
/// weight (Cout x Cin x kh x kw) that is zero outside each group's block.
template <typename Scalar>
Tensor<Scalar> embed_block_diagonal(const Tensor<Scalar>& grouped, Index groups) {
  const Index cout = grouped.dim(0), cin_g = grouped.dim(1), kh = grouped.dim(2), kw = grouped.dim(3);
  if (cout % groups != 0) throw GroupingError("output channels not divisible by group count");
  const Index cout_g = cout / groups;
  Tensor<Scalar> dense({cout, cin_g * groups, kh, kw});
  for (Index oc = 0; oc < cout; ++oc) {
    const Index grp = oc / cout_g;
    for (Index ic = 0; ic < cin_g; ++ic) {
      for (Index ky = 0; ky < kh; ++ky) {
        for (Index kx = 0; kx < kw; ++kx) dense.at({oc, grp * cin_g + ic, ky, kx}) = grouped.at({oc, ic, ky, kx});
      }
    }
  }
  return dense;
}

/// Naive triple-loop matrix product.
template <typename Scalar>
Tensor<Scalar> matmul_naive(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  kernels::check_matmul(a, b);
  Tensor<Scalar> c({a.dim(0), b.dim(1)});
  for (Index i = 0; i < a.dim(0); ++i) {
    for (Index j = 0; j < b.dim(1); ++j) {
      double acc = 0;
      for (Index k = 0; k < a.dim(1); ++k) acc += static_cast<double>(a.at({i, k})) * static_cast<double>(b.at({k, j}));
      c.at({i, j}) = static_cast<Scalar>(acc);
    }
  }
  return c;
}

}  // namespace emanet::reference
