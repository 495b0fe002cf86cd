#include "wrtsam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace wrtsam {

std::string Shape::str() const {
  return "[" + std::to_string(n) + "," + std::to_string(c) + "," +
         std::to_string(h) + "," + std::to_string(w) + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0)
    throw Error("negative tensor dimension " + shape.str());
  data_.assign(shape.numel(), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(shape), data_(data.begin(), data.end()) {
  if (data_.size() != shape.numel())
    throw Error("tensor data length " + std::to_string(data_.size()) +
                " does not match shape " + shape.str());
}

MatrixMap Tensor::as_matrix() {
  if (!is_matrix()) throw Error("tensor " + shape_.str() + " is not a matrix");
  return MatrixMap(data_.data(), shape_.h, shape_.w);
}

ConstMatrixMap Tensor::as_matrix() const {
  if (!is_matrix()) throw Error("tensor " + shape_.str() + " is not a matrix");
  return ConstMatrixMap(data_.data(), shape_.h, shape_.w);
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.numel() != size())
    throw Error("cannot reshape " + shape_.str() + " to " + shape.str());
  Tensor out = *this;
  out.shape_ = shape;
  return out;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

Tensor operator+(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape()))
    throw Error("shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

Tensor operator*(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape()))
    throw Error("shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape()))
    throw Error("shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double sum(const Tensor& t) {
  return std::accumulate(t.values().begin(), t.values().end(), 0.0);
}

}  // namespace wrtsam
