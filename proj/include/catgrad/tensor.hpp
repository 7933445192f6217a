#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace catgrad {

/// Library-wide error type. Everything that violates a documented
/// precondition throws this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense n-dimensional array of doubles, row-major.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor full(Shape shape, double v);
  static Tensor zeros_like(const Tensor& t);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // 2-D accessors; rows/cols only valid for rank 2.
  std::size_t rows() const { return extent(0); }
  std::size_t cols() const { return extent(1); }
  double& at(std::size_t i, std::size_t j);
  double at(std::size_t i, std::size_t j) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool is_scalar() const { return numel() == 1; }
  double scalar_value() const;

  bool all_finite() const;
  Tensor reshaped(Shape shape) const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Elementwise helpers used outside the graph (estimator math, data prep).
Tensor& add_inplace(Tensor& a, const Tensor& b);
Tensor& sub_inplace(Tensor& a, const Tensor& b);
Tensor& scale_inplace(Tensor& a, double s);
Tensor& axpy_inplace(Tensor& a, double s, const Tensor& b);  // a += s*b
double dot(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

// Numerically careful softmax / log-sum-exp over a flat span.
void softmax_span(std::span<const double> in, std::span<double> out);
double log_sum_exp_span(std::span<const double> in);

std::size_t argmax_span(std::span<const double> v);  // ties -> lowest index

}  // namespace catgrad
