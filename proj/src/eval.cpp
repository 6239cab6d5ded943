#include "octaquant/eval.hpp"

namespace octaquant::eval {

EvalCounts confusion(const BinaryMask& predicted, const BinaryMask& reference) {
  require_same_extents(predicted, reference, "confusion");
  EvalCounts c;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool p = predicted[i] != 0;
    const bool r = reference[i] != 0;
    if (p && r) {
      ++c.tp;
    } else if (p) {
      ++c.fp;
    } else if (r) {
      ++c.fn;
    } else {
      ++c.tn;
    }
  }
  return c;
}

double accuracy(const EvalCounts& c) {
  if (c.total() == 0) throw ComputeError("accuracy of an empty comparison");
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

double dice(const EvalCounts& c) {
  const std::uint64_t denom = 2 * c.tp + c.fp + c.fn;
  if (denom == 0) return 1.0;
  return static_cast<double>(2 * c.tp) / static_cast<double>(denom);
}

RaterComparison compare_raters(const BinaryMask& a, const BinaryMask& b) {
  const EvalCounts ab = confusion(a, b);
  const EvalCounts ba = confusion(b, a);
  return {accuracy(ab), dice(ab), accuracy(ba), dice(ba)};
}

}  // namespace octaquant::eval
