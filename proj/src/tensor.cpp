#include "cstn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "cstn/errors.hpp"

namespace cstn {

namespace {
std::size_t checked_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("tensor dimension must be nonnegative, got " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  data_.assign(checked_numel(shape_), 0.0);
}

Tensor::Tensor(std::vector<int> shape, AlignedBuffer data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (checked_numel(shape_) != data_.size()) {
    throw ShapeError("tensor data size does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return t;
}

Tensor Tensor::scalar(double value) {
  Tensor t({1});
  t[0] = value;
  return t;
}

double Tensor::scalar_value() const {
  if (data_.size() != 1) throw ShapeError("scalar_value on tensor of shape " + shape_string(shape_));
  return data_[0];
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor::min_value() const {
  double m = std::numeric_limits<double>::infinity();
  for (double v : data_) m = std::min(m, v);
  return m;
}

double Tensor::max_value() const {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : data_) m = std::max(m, v);
  return m;
}

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::string shape_string(const Tensor& t) { return shape_string(t.shape()); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* context) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(context) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
  }
}

}  // namespace cstn
