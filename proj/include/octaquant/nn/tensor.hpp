#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "octaquant/error.hpp"

namespace octaquant::nn {

using Shape = std::vector<int>;

/// 64-byte aligned storage. Vectorized GEMM kernels pick their code path
/// from pointer alignment, so fixed alignment keeps results bitwise stable.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

inline std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

inline std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (int extent : shape) {
    if (extent <= 0) throw ShapeError("non-positive extent in shape " + to_string(shape));
    n *= static_cast<std::size_t>(extent);
  }
  return n;
}

/// Row-major N-dimensional array. The engine runs in float; the gradient
/// verification path instantiates the same code in double.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), values_(element_count(shape_), fill) {}
  BasicTensor(Shape shape, const std::vector<T>& values)
      : BasicTensor(std::move(shape), AlignedVector<T>(values.begin(), values.end())) {}
  BasicTensor(Shape shape, AlignedVector<T> values) : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != element_count(shape_)) {
      throw ShapeError("shape " + to_string(shape_) + " needs " + std::to_string(element_count(shape_)) +
                       " values, got " + std::to_string(values_.size()));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }
  T* data() noexcept { return values_.data(); }
  const T* data() const noexcept { return values_.data(); }

  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

  /// Same data, new shape with an identical element count.
  BasicTensor reshaped(Shape shape) const {
    if (element_count(shape) != values_.size()) {
      throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    return BasicTensor(std::move(shape), values_);
  }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  BasicTensor<U> cast() const {
    AlignedVector<U> out(values_.begin(), values_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  Shape shape_;
  AlignedVector<T> values_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Parameter or buffer tensor with a stable name.
template <typename T>
struct BasicNamedTensor {
  std::string name;
  BasicTensor<T> value;
  friend bool operator==(const BasicNamedTensor&, const BasicNamedTensor&) = default;
};

using NamedTensor = BasicNamedTensor<float>;

enum class Mode { train, infer };

}  // namespace octaquant::nn
