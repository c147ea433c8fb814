#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mtl/dual.hpp"
#include "mtl/errors.hpp"

namespace mtl {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Dense row-major array. Rank 0 is a scalar.
///
/// Every tensor has a matrix view: the last dimension is the column count and
/// all leading dimensions fold into rows (rank 0 and 1 view as a single row).
template <typename Scalar>
class Tensor {
 public:
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  Tensor() : data_(VectorX<Scalar>::Zero(1)) {}

  explicit Tensor(Shape shape, Scalar fill = Scalar(0)) : shape_(std::move(shape)) {
    check_shape();
    data_ = VectorX<Scalar>::Constant(shape_size(shape_), fill);
  }

  Tensor(Shape shape, VectorX<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (shape_size(shape_) != data_.size()) {
      throw DimensionError("tensor: shape " + shape_string(shape_) + " does not match " +
                           std::to_string(data_.size()) + " values");
    }
  }

  Tensor(Shape shape, std::initializer_list<Scalar> values)
      : Tensor(std::move(shape), VectorX<Scalar>(Eigen::Map<const VectorX<Scalar>>(
                                     values.begin(), static_cast<Index>(values.size())))) {}

  static Tensor scalar(Scalar value) { return Tensor(Shape{}, value); }

  template <typename Derived>
  static Tensor from_matrix(const Eigen::MatrixBase<Derived>& m) {
    Tensor t(Shape{m.rows(), m.cols()});
    t.matrix() = m;
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return data_.size(); }
  Index cols() const { return shape_.empty() ? 1 : shape_.back(); }
  Index rows() const { return size() / cols(); }

  const VectorX<Scalar>& data() const { return data_; }
  VectorX<Scalar>& data() { return data_; }

  MatrixMap matrix() { return MatrixMap(data_.data(), rows(), cols()); }
  ConstMatrixMap matrix() const { return ConstMatrixMap(data_.data(), rows(), cols()); }

  Scalar& operator[](Index i) { return data_[i]; }
  const Scalar& operator[](Index i) const { return data_[i]; }
  Scalar& operator()(Index r, Index c) { return data_[r * cols() + c]; }
  const Scalar& operator()(Index r, Index c) const { return data_[r * cols() + c]; }

  Scalar item() const {
    if (size() != 1) throw ContractError("tensor: item() on " + shape_string(shape_));
    return data_[0];
  }

  bool all_finite() const {
    for (Index i = 0; i < data_.size(); ++i) {
      if (!is_finite(data_[i])) return false;
    }
    return true;
  }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_shape() const {
    for (Index d : shape_) {
      if (d <= 0) throw DimensionError("tensor: non-positive dimension in " + shape_string(shape_));
    }
  }

  Shape shape_;
  VectorX<Scalar> data_;
};

using TensorD = Tensor<double>;

/// Lifts a real tensor to duals with the given tangent (zero when omitted).
inline Tensor<Dual> to_dual(const TensorD& value, const TensorD* tangent = nullptr) {
  Tensor<Dual> out(value.shape());
  for (Index i = 0; i < value.size(); ++i) {
    out[i] = Dual(value[i], tangent ? (*tangent)[i] : 0.0);
  }
  return out;
}

inline TensorD primal_part(const Tensor<Dual>& t) {
  TensorD out(t.shape());
  for (Index i = 0; i < t.size(); ++i) out[i] = t[i].v;
  return out;
}

inline TensorD tangent_part(const Tensor<Dual>& t) {
  TensorD out(t.shape());
  for (Index i = 0; i < t.size(); ++i) out[i] = t[i].d;
  return out;
}

}  // namespace mtl
