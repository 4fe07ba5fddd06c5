#pragma once

#include <cstddef>
#include <new>
#include <string>
#include <vector>

namespace cstn {

// 64-byte aligned storage keeps vectorized kernels on one code path, so
// repeated evaluations are bit-identical regardless of where buffers land.
template <typename T, std::size_t Alignment>
struct AlignedAllocator {
  using value_type = T;
  template <typename U>
  struct rebind {
    using other = AlignedAllocator<U, Alignment>;
  };
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U, Alignment>&) {}
  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(Alignment)));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t(Alignment)); }
  template <typename U>
  bool operator==(const AlignedAllocator<U, Alignment>&) const {
    return true;
  }
};

using AlignedBuffer = std::vector<double, AlignedAllocator<double, 64>>;

// Dense row-major tensor of doubles. Images and feature maps use
// channel-last (h, w, c) layout; vectors use a single dimension.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, AlignedBuffer data);

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double value);
  static Tensor scalar(double value);

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // (row, col, channel) access for 3-d tensors.
  double& at(int i, int j, int c) {
    return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + c];
  }
  double at(int i, int j, int c) const {
    return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + c];
  }
  // (row, col) access for 2-d tensors.
  double& at(int i, int j) {
    return data_[static_cast<std::size_t>(i) * shape_[1] + j];
  }
  double at(int i, int j) const {
    return data_[static_cast<std::size_t>(i) * shape_[1] + j];
  }

  double scalar_value() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  void fill(double value);
  bool all_finite() const;
  double min_value() const;
  double max_value() const;

 private:
  std::vector<int> shape_;
  AlignedBuffer data_;
};

std::string shape_string(const std::vector<int>& shape);
std::string shape_string(const Tensor& t);

// Throws ShapeError when shapes differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* context);

}  // namespace cstn
