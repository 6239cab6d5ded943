#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "octaquant/error.hpp"

namespace octaquant {

/// Row/column pixel coordinate.
struct Pixel {
  int row = 0;
  int col = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

/// Dense row-major 2-D raster. `Tag` keeps semantically different rasters
/// (grayscale images, vessel masks, probability maps) from mixing.
template <typename T, typename Tag>
class Raster {
 public:
  using value_type = T;

  Raster() = default;
  Raster(int rows, int cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(checked_size(rows, cols), fill) {}
  Raster(int rows, int cols, std::vector<T> values) : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (data_.size() != checked_size(rows, cols)) {
      throw ShapeError("raster " + std::to_string(rows) + "x" + std::to_string(cols) + " given " +
                       std::to_string(data_.size()) + " values");
    }
  }

  int rows() const noexcept { return rows_; }
  int cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  const T& operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  bool contains(int r, int c) const noexcept { return r >= 0 && c >= 0 && r < rows_ && c < cols_; }

  std::span<T> pixels() noexcept { return data_; }
  std::span<const T> pixels() const noexcept { return data_; }

  template <typename OtherTag>
  bool same_extents(const Raster<T, OtherTag>& other) const noexcept {
    return rows_ == other.rows() && cols_ == other.cols();
  }

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  static std::size_t checked_size(int rows, int cols) {
    if (rows < 0 || cols < 0) throw ShapeError("negative raster extent");
    return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  }

  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> data_;
};

struct GrayTag {};
struct MaskTag {};
struct ProbabilityTag {};
struct DistanceTag {};
struct LabelTag {};

/// 8-bit grayscale image.
using GrayImage = Raster<std::uint8_t, GrayTag>;
/// Vessel mask; 1 marks vessel pixels, 0 background.
using BinaryMask = Raster<std::uint8_t, MaskTag>;
/// Per-pixel vessel probability in [0,1].
using ProbabilityMap = Raster<float, ProbabilityTag>;
/// Per-pixel Euclidean distance in pixels.
using DistanceMap = Raster<double, DistanceTag>;
/// Connected-component labels, 0 = not part of any component.
using LabelMap = Raster<int, LabelTag>;

template <typename A, typename TA, typename B, typename TB>
void require_same_extents(const Raster<A, TA>& a, const Raster<B, TB>& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": extents differ (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
  }
}

inline std::size_t count_true(const BinaryMask& mask) {
  return static_cast<std::size_t>(std::count_if(mask.pixels().begin(), mask.pixels().end(),
                                                [](std::uint8_t v) { return v != 0; }));
}

}  // namespace octaquant
