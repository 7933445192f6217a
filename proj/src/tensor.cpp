#include "catgrad/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace catgrad {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw Error("tensor: shape " + shape_to_string(shape_) + " does not match data length " +
                std::to_string(data_.size()));
  }
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), v);
  return t;
}

Tensor Tensor::zeros_like(const Tensor& t) { return Tensor(t.shape_); }

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= shape_.size()) throw Error("tensor: axis out of range");
  return shape_[axis];
}

double& Tensor::at(std::size_t i, std::size_t j) {
  if (rank() != 2) throw Error("tensor: at(i,j) requires rank 2");
  return data_[i * shape_[1] + j];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  return const_cast<Tensor*>(this)->at(i, j);
}

double Tensor::scalar_value() const {
  if (numel() != 1) throw Error("tensor: scalar_value on non-scalar " + shape_to_string(shape_));
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw Error("tensor: cannot reshape " + shape_to_string(shape_) + " to " +
                shape_to_string(shape));
  }
  return Tensor(std::move(shape), std::vector<double>(data_.begin(), data_.end()));
}

namespace {
void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw Error(std::string(what) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                shape_to_string(b.shape()));
  }
}
}  // namespace

Tensor& add_inplace(Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  for (std::size_t i = 0; i < a.numel(); ++i) a[i] += b[i];
  return a;
}

Tensor& sub_inplace(Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  for (std::size_t i = 0; i < a.numel(); ++i) a[i] -= b[i];
  return a;
}

Tensor& scale_inplace(Tensor& a, double s) {
  for (std::size_t i = 0; i < a.numel(); ++i) a[i] *= s;
  return a;
}

Tensor& axpy_inplace(Tensor& a, double s, const Tensor& b) {
  require_same_shape(a, b, "axpy");
  for (std::size_t i = 0; i < a.numel(); ++i) a[i] += s * b[i];
  return a;
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double log_sum_exp_span(std::span<const double> in) {
  if (in.empty()) throw Error("log_sum_exp: empty input");
  double m = *std::max_element(in.begin(), in.end());
  if (!std::isfinite(m)) {
    // All -inf means zero total mass; +inf or nan is a caller bug.
    if (m == -std::numeric_limits<double>::infinity()) return m;
    throw Error("log_sum_exp: non-finite input");
  }
  double s = 0;
  for (double v : in) s += std::exp(v - m);
  return m + std::log(s);
}

void softmax_span(std::span<const double> in, std::span<double> out) {
  double lse = log_sum_exp_span(in);
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::exp(in[i] - lse);
}

std::size_t argmax_span(std::span<const double> v) {
  if (v.empty()) throw Error("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

}  // namespace catgrad
