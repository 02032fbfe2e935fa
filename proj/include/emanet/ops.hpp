#pragma once

// Differentiable operations on tape variables, plus the matching plain-tensor
// overloads. Every Var op computes its value with a kernel and records the
// adjoint rule on the tape of its first input.

#include <cmath>
#include <numeric>
#include <optional>
#include <type_traits>
#include <vector>

#include "emanet/autodiff.hpp"
#include "emanet/kernels.hpp"

namespace emanet {

inline constexpr double kNormalizeEps = 1e-12;

// ---------------------------------------------------------------------------
// Plain tensors

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return kernels::matmul(a, b);
}

template <typename Scalar>
Tensor<Scalar> bmm(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return kernels::bmm(a, b);
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape) {
  return x.reshaped(std::move(shape));
}

template <typename Scalar>
Tensor<Scalar> permute(const Tensor<Scalar>& x, const std::vector<int>& order) {
  return kernels::permute(x, order);
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& x) {
  std::vector<int> order(static_cast<std::size_t>(x.rank()));
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[order.size() - 1], order[order.size() - 2]);
  return kernels::permute(x, order);
}

template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts, int axis) {
  std::vector<const Tensor<Scalar>*> ptrs;
  for (const auto& p : parts) ptrs.push_back(&p);
  return kernels::concat(ptrs, axis);
}

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w,
                      const std::optional<std::type_identity_t<Tensor<Scalar>>>& bias, const Conv2dOptions& opt = {}) {
  return kernels::conv2d(x, w, bias ? &*bias : nullptr, opt);
}

template <typename Scalar>
Tensor<Scalar> l2_normalize(const Tensor<Scalar>& x, int axis, Scalar eps = Scalar(kNormalizeEps)) {
  return kernels::l2_normalize(x, axis, eps);
}

/// Each column divided by max(|column|, eps).
template <typename Scalar>
Tensor<Scalar> l2_normalize_columns(const Tensor<Scalar>& m, Scalar eps = Scalar(kNormalizeEps)) {
  if (m.rank() != 2) throw ShapeError("l2_normalize_columns expects a matrix, got " + to_string(m.shape()));
  return kernels::l2_normalize(m, 0, eps);
}

template <typename Scalar>
Tensor<Scalar> resize_bilinear(const Tensor<Scalar>& x, Index out_h, Index out_w) {
  return kernels::resize_bilinear(x, out_h, out_w);
}

template <typename Scalar>
Tensor<Scalar> upsample_bilinear(const Tensor<Scalar>& x, Index factor) {
  if (factor < 1) throw ConfigError("upsample factor must be >= 1");
  if (factor == 1) return x;
  return kernels::resize_bilinear(x, x.dim(2) * factor, x.dim(3) * factor);
}

// ---------------------------------------------------------------------------
// Element-wise

namespace detail {
template <typename Scalar>
void require_same_shape(const char* op, const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + " of " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
}
}  // namespace detail

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape("add", a, b);
  Tensor<Scalar> out(a.shape());
  out.array() = a.value().array() + b.value().array();
  FlopCounter::add(out.size());
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape("sub", a, b);
  Tensor<Scalar> out(a.shape());
  out.array() = a.value().array() - b.value().array();
  FlopCounter::add(out.size());
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    t.accumulate(a, g);
    if (auto* sink = t.grad_sink(b)) sink->array() -= g.array();
  });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape("mul", a, b);
  Tensor<Scalar> out(a.shape());
  out.array() = a.value().array() * b.value().array();
  FlopCounter::add(out.size());
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* sink = t.grad_sink(a)) sink->array() += g.array() * b.value().array();
    if (auto* sink = t.grad_sink(b)) sink->array() += g.array() * a.value().array();
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  Tensor<Scalar> out(a.shape());
  out.array() = a.value().array() * s;
  FlopCounter::add(out.size());
  return a.tape().record(std::move(out), {a}, [a, s](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* sink = t.grad_sink(a)) sink->array() += g.array() * s;
  });
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Var<Scalar> operator*(const Var<Scalar>& a, const Var<Scalar>& b) { return mul(a, b); }
template <typename Scalar>
Var<Scalar> operator*(Scalar s, const Var<Scalar>& a) { return scale(a, s); }

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x) {
  Tensor<Scalar> out(x.shape());
  out.array() = x.value().array().max(Scalar(0));
  return x.tape().record(std::move(out), {x}, [x](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* sink = t.grad_sink(x)) {
      sink->array() += (x.value().array() > Scalar(0)).select(g.array(), Scalar(0));
    }
  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x) {
  Tensor<Scalar> out = Tensor<Scalar>::scalar(x.value().array().sum());
  return x.tape().record(std::move(out), {x}, [x](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* sink = t.grad_sink(x)) sink->array() += g[0];
  });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& x) {
  const auto n = static_cast<Scalar>(x.value().size());
  Tensor<Scalar> out = Tensor<Scalar>::scalar(x.value().array().sum() / n);
  return x.tape().record(std::move(out), {x}, [x, n](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* sink = t.grad_sink(x)) sink->array() += g[0] / n;
  });
}

/// Sum of scalar variables.
template <typename Scalar>
Var<Scalar> add_n(const std::vector<Var<Scalar>>& terms) {
  if (terms.empty()) throw ContractError("add_n of no terms");
  Scalar total = 0;
  for (const auto& v : terms) {
    if (v.value().size() != 1) throw ShapeError("add_n expects scalars, got " + to_string(v.shape()));
    total += v.value()[0];
  }
  return terms.front().tape().record(Tensor<Scalar>::scalar(total), terms,
                                     [terms](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                                       for (const auto& v : terms) t.accumulate(v, g);
                                     });
}

// ---------------------------------------------------------------------------
// Products

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  return a.tape().record(kernels::matmul(a.value(), b.value()), {a, b},
                         [a, b](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                           // dA = dC B^T, dB = A^T dC
                           if (auto* sink = t.grad_sink(a)) sink->matrix().noalias() += g.matrix() * b.value().matrix().transpose();
                           if (auto* sink = t.grad_sink(b)) sink->matrix().noalias() += a.value().matrix().transpose() * g.matrix();
                         });
}

template <typename Scalar>
Var<Scalar> bmm(const Var<Scalar>& a, const Var<Scalar>& b) {
  return a.tape().record(kernels::bmm(a.value(), b.value()), {a, b},
                         [a, b](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                           if (auto* sink = t.grad_sink(a)) kernels::bmm_into(g, false, b.value(), true, *sink, true);
                           if (auto* sink = t.grad_sink(b)) kernels::bmm_into(a.value(), true, g, false, *sink, true);
                         });
}

// ---------------------------------------------------------------------------
// Layout

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& x, Shape shape) {
  return x.tape().record(x.value().reshaped(std::move(shape)), {x}, [x](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* sink = t.grad_sink(x)) sink->array() += g.array();
  });
}

template <typename Scalar>
Var<Scalar> permute(const Var<Scalar>& x, const std::vector<int>& order) {
  return x.tape().record(kernels::permute(x.value(), order), {x}, [x, order](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* sink = t.grad_sink(x)) sink->array() += kernels::permute(g, kernels::inverse_permutation(order)).array();
  });
}

/// Swaps the last two axes.
template <typename Scalar>
Var<Scalar> transpose(const Var<Scalar>& x) {
  std::vector<int> order(static_cast<std::size_t>(x.rank()));
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[order.size() - 1], order[order.size() - 2]);
  return permute(x, order);
}

template <typename Scalar>
Var<Scalar> concat(const std::vector<Var<Scalar>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of an empty tensor list");
  std::vector<const Tensor<Scalar>*> ptrs;
  for (const auto& p : parts) ptrs.push_back(&p.value());
  Tensor<Scalar> out = kernels::concat(ptrs, axis);
  axis = kernels::normalize_axis(axis, out.rank());
  return parts.front().tape().record(std::move(out), parts, [parts, axis](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    Index begin = 0;
    for (const auto& p : parts) {
      const Index len = p.dim(axis);
      if (auto* sink = t.grad_sink(p)) sink->array() += kernels::slice(g, axis, begin, len).array();
      begin += len;
    }
  });
}

/// Joins equally shaped tensors along a new axis.
template <typename Scalar>
Var<Scalar> stack(const std::vector<Var<Scalar>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("stack of an empty tensor list");
  const int rank = parts.front().rank();
  axis = kernels::normalize_axis(axis, rank + 1);
  std::vector<Var<Scalar>> expanded;
  for (const auto& p : parts) {
    if (p.shape() != parts.front().shape()) {
      throw ShapeError("stack of " + to_string(p.shape()) + " with " + to_string(parts.front().shape()));
    }
    Shape s = p.shape();
    s.insert(s.begin() + axis, 1);
    expanded.push_back(reshape(p, s));
  }
  return concat(expanded, axis);
}

template <typename Scalar>
Var<Scalar> slice(const Var<Scalar>& x, int axis, Index begin, Index length) {
  axis = kernels::normalize_axis(axis, x.rank());
  return x.tape().record(kernels::slice(x.value(), axis, begin, length), {x},
                         [x, axis, begin](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                           auto* sink = t.grad_sink(x);
                           if (!sink) return;
                           const auto s = kernels::split_at(x.shape(), axis);
                           const Index len = g.dim(axis);
                           for (Index o = 0; o < s.outer; ++o) {
                             const Scalar* src = g.ptr() + o * len * s.inner;
                             Scalar* dst = sink->ptr() + (o * s.extent + begin) * s.inner;
                             for (Index i = 0; i < len * s.inner; ++i) dst[i] += src[i];
                           }
                         });
}

// ---------------------------------------------------------------------------
// Convolution, resampling, normalization

template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& w, const std::optional<std::type_identity_t<Var<Scalar>>>& bias,
                   const Conv2dOptions& opt = {}) {
  Tensor<Scalar> out = kernels::conv2d(x.value(), w.value(), bias ? &bias->value() : nullptr, opt);
  std::vector<Var<Scalar>> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  return x.tape().record(std::move(out), inputs, [x, w, bias, opt](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    kernels::conv2d_backward(x.value(), w.value(), opt, g, t.grad_sink(x), t.grad_sink(w),
                             bias ? t.grad_sink(*bias) : nullptr);
  });
}

template <typename Scalar>
Var<Scalar> resize_bilinear(const Var<Scalar>& x, Index out_h, Index out_w) {
  if (x.dim(2) == out_h && x.dim(3) == out_w) return x;
  return x.tape().record(kernels::resize_bilinear(x.value(), out_h, out_w), {x},
                         [x](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                           if (auto* sink = t.grad_sink(x)) kernels::resize_bilinear_backward(g, *sink);
                         });
}

template <typename Scalar>
Var<Scalar> upsample_bilinear(const Var<Scalar>& x, Index factor) {
  if (factor < 1) throw ConfigError("upsample factor must be >= 1");
  return resize_bilinear(x, x.dim(2) * factor, x.dim(3) * factor);
}

template <typename Scalar>
Var<Scalar> l2_normalize(const Var<Scalar>& x, int axis, Scalar eps = Scalar(kNormalizeEps)) {
  axis = kernels::normalize_axis(axis, x.rank());
  Tensor<Scalar> norms;
  Tensor<Scalar> out = kernels::l2_normalize(x.value(), axis, eps, &norms);
  return x.tape().record(std::move(out), {x},
                         [x, axis, eps, norms = std::move(norms)](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                           if (auto* sink = t.grad_sink(x)) {
                             kernels::l2_normalize_backward(x.value(), norms, axis, eps, g, *sink);
                           }
                         });
}

template <typename Scalar>
Var<Scalar> l2_normalize_columns(const Var<Scalar>& m, Scalar eps = Scalar(kNormalizeEps)) {
  if (m.rank() != 2) throw ShapeError("l2_normalize_columns expects a matrix, got " + to_string(m.shape()));
  return l2_normalize(m, 0, eps);
}

}  // namespace emanet
