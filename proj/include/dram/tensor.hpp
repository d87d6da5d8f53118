#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dram/scalar.hpp"

namespace dram {

using Shape = std::vector<std::size_t>;

/// Shape or index arguments that do not fit together.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// NaN/Inf produced where finite values are required.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_str(const Shape& s);
std::size_t shape_size(const Shape& s);

/// Dense row-major array. Rank-2 tensors are used as [batch x features]
/// throughout; a scalar is shape {1}.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = 0);
  Tensor(Shape shape, std::vector<Scalar> data);
  Tensor(Shape shape, std::initializer_list<Scalar> data)
      : Tensor(std::move(shape), std::vector<Scalar>(data)) {}

  static Tensor scalar(Scalar v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<Scalar> data() { return data_; }
  std::span<const Scalar> data() const { return data_; }
  Scalar* ptr() { return data_.data(); }
  const Scalar* ptr() const { return data_.data(); }
  const std::vector<Scalar>& vec() const { return data_; }

  Scalar& operator[](std::size_t i) { return data_[i]; }
  Scalar operator[](std::size_t i) const { return data_[i]; }
  Scalar& at(std::size_t r, std::size_t c) { return data_[r * shape_.back() + c]; }
  Scalar at(std::size_t r, std::size_t c) const { return data_[r * shape_.back() + c]; }

  /// Same data, different shape; element count must match.
  Tensor reshaped(Shape s) const;
  /// Row `r` of a rank-2 tensor as a [1 x n] tensor.
  Tensor row(std::size_t r) const;

  void fill(Scalar v);
  bool all_finite() const;
  Scalar sum() const;

  bool operator==(const Tensor& o) const = default;

 private:
  Shape shape_;
  std::vector<Scalar> data_;
};

/// Throws NumericalError naming `what` if t holds a NaN or Inf.
void require_finite(const Tensor& t, const char* what);

}  // namespace dram
