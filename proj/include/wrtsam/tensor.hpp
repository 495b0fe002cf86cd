#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace wrtsam {

/// Runtime failure inside the library (bad shapes, I/O, non-finite values).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid user configuration (unknown keys, out-of-range settings).
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
// Aligned so Eigen's vectorised reductions split work the same way every run.
using Storage = std::vector<double, Eigen::aligned_allocator<double>>;

/// Dense N x C x H x W array of doubles in row-major order.
///
/// A 2-D matrix is stored as a tensor of shape [1, 1, rows, cols], so token
/// sequences and weight matrices share the same carrier as images.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor matrix(int rows, int cols, double fill = 0.0) {
    return Tensor(Shape{1, 1, rows, cols}, fill);
  }
  static Tensor vector(int len, double fill = 0.0) {
    return Tensor(Shape{1, 1, 1, len}, fill);
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  const Storage& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) *
               shape_.w +
           w;
  }
  double& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  const double& at(int n, int c, int h, int w) const {
    return data_[offset(n, c, h, w)];
  }

  bool is_matrix() const { return shape_.n == 1 && shape_.c == 1; }
  int rows() const { return shape_.h; }
  int cols() const { return shape_.w; }
  MatrixMap as_matrix();
  ConstMatrixMap as_matrix() const;

  Tensor reshaped(Shape shape) const;
  void fill(double v);
  bool all_finite() const;

 private:
  Shape shape_{1, 1, 1, 1};
  Storage data_ = Storage(1, 0.0);
};

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);
double sum(const Tensor& t);

/// Learned weight with its gradient accumulator.
struct Parameter {
  std::string id;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string id_, Tensor v, bool trainable_ = true)
      : id(std::move(id_)), value(std::move(v)), grad(value.shape()),
        trainable(trainable_) {}

  void zero_grad() { grad = Tensor(value.shape()); }
};

}  // namespace wrtsam
