#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mgan/errors.hpp"

namespace mgan {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

Index shape_product(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major n-dimensional array with an optional gradient buffer.
///
/// The invariant `product(shape) == size()` holds for every constructed
/// tensor; `grad`, when present, has exactly `size()` entries.
template <typename Scalar>
class BasicTensor {
 public:
  using value_type = Scalar;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)), data_(static_cast<std::size_t>(checked_size(shape_)), fill) {}
  BasicTensor(Shape shape, std::vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<Index>(data_.size()) != checked_size(shape_))
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
  }

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  Index dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return static_cast<Index>(data_.size()); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return data_; }
  std::span<const Scalar> values() const { return data_; }
  std::vector<Scalar>& storage() { return data_; }
  const std::vector<Scalar>& storage() const { return data_; }

  Scalar& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  Scalar operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  template <typename... Ix>
  Scalar& at(Ix... ix) { return data_[static_cast<std::size_t>(offset({static_cast<Index>(ix)...}))]; }
  template <typename... Ix>
  Scalar at(Ix... ix) const { return data_[static_cast<std::size_t>(offset({static_cast<Index>(ix)...}))]; }

  /// Row-major matrix view over the flat storage.
  Eigen::Map<RowMatrix<Scalar>> matrix(Index rows, Index cols) {
    check_view(rows, cols);
    return {data_.data(), rows, cols};
  }
  Eigen::Map<const RowMatrix<Scalar>> matrix(Index rows, Index cols) const {
    check_view(rows, cols);
    return {data_.data(), rows, cols};
  }
  Eigen::Map<Vector<Scalar>> vector() { return {data_.data(), size()}; }
  Eigen::Map<const Vector<Scalar>> vector() const { return {data_.data(), size()}; }

  BasicTensor reshaped(Shape shape) const { return BasicTensor(std::move(shape), data_); }

  template <typename Other>
  BasicTensor<Other> cast() const {
    std::vector<Other> out(data_.begin(), data_.end());
    return BasicTensor<Other>(shape_, std::move(out));
  }

  bool requires_grad = false;
  /// Gradient bookkeeping; mutable so const parameters can accumulate into it.
  mutable std::optional<std::vector<Scalar>> grad;

  /// Zero-initialised gradient buffer, created on first use.
  std::vector<Scalar>& grad_buffer() const {
    if (!grad) grad.emplace(data_.size(), Scalar(0));
    return *grad;
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static Index checked_size(const Shape& shape) {
    for (Index d : shape)
      if (d <= 0) throw DimensionError("tensor shape " + shape_string(shape) + " has a non-positive axis");
    return shape_product(shape);
  }
  Index offset(std::initializer_list<Index> ix) const {
    if (static_cast<int>(ix.size()) != rank())
      throw DimensionError("index rank " + std::to_string(ix.size()) + " vs tensor rank " + std::to_string(rank()));
    Index off = 0;
    std::size_t axis = 0;
    for (Index i : ix) {
      off = off * shape_[axis] + i;
      ++axis;
    }
    return off;
  }
  void check_view(Index rows, Index cols) const {
    if (rows * cols != size())
      throw DimensionError("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
                           " over tensor of shape " + shape_string(shape_));
  }

  Shape shape_;
  std::vector<Scalar> data_;
};

using Tensor = BasicTensor<double>;
using Tensor32 = BasicTensor<float>;

/// Named, mutable references to trainable tensors; order is stable.
using ParamRefs = std::vector<std::pair<std::string, Tensor*>>;

bool all_finite(std::span<const double> values);

}  // namespace mgan
