#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "emanet/errors.hpp"

namespace emanet {

using Index = std::ptrdiff_t;
using Shape = std::vector<Index>;

inline Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

/// Dense row-major n-dimensional array. Value semantics; copying copies the
/// buffer. Extents are strictly positive.
template <typename Scalar>
class Tensor {
 public:
  using value_type = Scalar;

  Tensor() = default;

  explicit Tensor(Shape shape, Scalar fill = Scalar(0)) : shape_(std::move(shape)) {
    check_extents(shape_);
    data_.assign(static_cast<std::size_t>(numel(shape_)), fill);
  }

  Tensor(Shape shape, std::vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents(shape_);
    if (static_cast<Index>(data_.size()) != numel(shape_)) {
      throw ShapeError("tensor buffer of " + std::to_string(data_.size()) +
                       " elements does not fill shape " + to_string(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), Scalar(1)); }
  static Tensor scalar(Scalar v) { return Tensor(Shape{1}, v); }

  static Tensor identity(Index n) {
    Tensor t({n, n});
    for (Index i = 0; i < n; ++i) t.data_[static_cast<std::size_t>(i * n + i)] = Scalar(1);
    return t;
  }

  /// Fills with `gen()` in buffer order.
  template <typename Generator>
  static Tensor generate(Shape shape, Generator&& gen) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = static_cast<Scalar>(gen());
    return t;
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  Index dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis < 0 ? axis + rank() : axis)); }
  Index size() const { return static_cast<Index>(data_.size()); }
  bool empty() const { return data_.empty(); }

  std::span<Scalar> data() { return data_; }
  std::span<const Scalar> data() const { return data_; }
  Scalar* ptr() { return data_.data(); }
  const Scalar* ptr() const { return data_.data(); }
  std::vector<Scalar>& buffer() { return data_; }
  const std::vector<Scalar>& buffer() const { return data_; }

  Scalar& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  Scalar operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  Index offset(std::initializer_list<Index> idx) const {
    if (static_cast<int>(idx.size()) != rank()) {
      throw ShapeError("index of rank " + std::to_string(idx.size()) + " into tensor " + to_string(shape_));
    }
    Index off = 0;
    std::size_t a = 0;
    for (Index i : idx) off = off * shape_[a++] + i;
    return off;
  }
  Scalar& at(std::initializer_list<Index> idx) { return data_[static_cast<std::size_t>(offset(idx))]; }
  Scalar at(std::initializer_list<Index> idx) const { return data_[static_cast<std::size_t>(offset(idx))]; }

  /// Same buffer, new extents.
  Tensor reshaped(Shape shape) const& {
    Tensor t(*this);
    t.reshape_in_place(std::move(shape));
    return t;
  }
  Tensor reshaped(Shape shape) && {
    reshape_in_place(std::move(shape));
    return std::move(*this);
  }

  void reshape_in_place(Shape shape) {
    check_extents(shape);
    if (numel(shape) != size()) {
      throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    shape_ = std::move(shape);
  }

  MatrixMap<Scalar> matrix() {
    require_rank(2);
    return MatrixMap<Scalar>(ptr(), shape_[0], shape_[1]);
  }
  ConstMatrixMap<Scalar> matrix() const {
    require_rank(2);
    return ConstMatrixMap<Scalar>(ptr(), shape_[0], shape_[1]);
  }

  auto array() { return Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>(ptr(), size()); }
  auto array() const { return Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(ptr(), size()); }

  template <typename Other>
  Tensor<Other> cast() const {
    std::vector<Other> out(data_.begin(), data_.end());
    return Tensor<Other>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  static void check_extents(const Shape& shape) {
    for (Index e : shape) {
      if (e <= 0) throw ShapeError("non-positive extent in shape " + to_string(shape));
    }
  }
  void require_rank(int r) const {
    if (rank() != r) throw ShapeError("expected rank " + std::to_string(r) + ", got " + to_string(shape_));
  }

  Shape shape_;
  std::vector<Scalar> data_;
};

template <typename Scalar>
Scalar max_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff between " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  return (a.array() - b.array()).abs().maxCoeff();
}

}  // namespace emanet
