#pragma once

#include <cstdint>

#include "octaquant/raster.hpp"

namespace octaquant::eval {

/// Pixel-wise confusion counts; vessel is the positive class.
struct EvalCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  EvalCounts& operator+=(const EvalCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend bool operator==(const EvalCounts&, const EvalCounts&) = default;
};

EvalCounts confusion(const BinaryMask& predicted, const BinaryMask& reference);

/// (TP + TN) / (TP + TN + FP + FN). Throws ComputeError on empty counts.
double accuracy(const EvalCounts& c);

/// 2TP / (2TP + FP + FN). Two empty masks agree perfectly: 1.0.
double dice(const EvalCounts& c);

struct RaterComparison {
  double accuracy = 0.0;
  double dice = 0.0;
  /// Same metrics with the roles of A and B swapped.
  double accuracy_swapped = 0.0;
  double dice_swapped = 0.0;
};

/// Agreement of two segmentations of the same image; A is scored against B.
RaterComparison compare_raters(const BinaryMask& a, const BinaryMask& b);

}  // namespace octaquant::eval
