#include "dram/tensor.hpp"

#include <cmath>
#include <numeric>

namespace dram {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, Scalar fill) : shape_(std::move(shape)) {
  for (auto d : shape_)
    if (d == 0) throw DimensionError("tensor extent must be positive: " + shape_str(shape_));
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_)
    if (d == 0) throw DimensionError("tensor extent must be positive: " + shape_str(shape_));
  if (shape_size(shape_) != data_.size())
    throw DimensionError("shape " + shape_str(shape_) + " does not match " +
                         std::to_string(data_.size()) + " elements");
}

Tensor Tensor::reshaped(Shape s) const {
  if (shape_size(s) != size())
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
  return Tensor(std::move(s), data_);
}

Tensor Tensor::row(std::size_t r) const {
  if (rank() != 2 || r >= shape_[0]) throw DimensionError("row index out of range");
  const std::size_t n = shape_[1];
  return Tensor({1, n}, std::vector<Scalar>(data_.begin() + r * n, data_.begin() + (r + 1) * n));
}

void Tensor::fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  for (Scalar v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Scalar Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), Scalar(0)); }

void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw NumericalError(std::string("non-finite values in ") + what);
}

}  // namespace dram
