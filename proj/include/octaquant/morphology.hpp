#pragma once

#include <cstdint>
#include <vector>

#include "octaquant/raster.hpp"

namespace octaquant::morph {

enum class Connectivity { four = 4, eight = 8 };

struct Components {
  /// 0 for pixels outside every component; labels are dense from 1 in
  /// order of each component's first pixel in row-major scan.
  LabelMap labels;
  int count = 0;
  /// areas[label - 1] = pixel count.
  std::vector<std::size_t> areas;
};

/// Connected components of the pixels whose mask value equals
/// `foreground` (true = vessel pixels, false = background pixels).
Components label_components(const BinaryMask& mask, bool foreground, Connectivity connectivity);

/// Sentinel for "no target pixel anywhere".
inline constexpr std::int64_t kUnreachable = INT64_MAX;

/// Exact squared Euclidean distance from every pixel to the nearest pixel
/// whose value equals `target`. With `outside_is_target`, the ring of
/// pixels just outside the raster counts as target as well.
std::vector<std::int64_t> squared_distance(const BinaryMask& mask, bool target, bool outside_is_target = false);

/// Binary erosion by the disk {dx^2 + dy^2 <= r^2}; pixels outside the
/// raster count as background.
BinaryMask erode_disk(const BinaryMask& mask, int radius);
/// Binary dilation by the same disk.
BinaryMask dilate_disk(const BinaryMask& mask, int radius);
/// Erosion followed by dilation.
BinaryMask open_disk(const BinaryMask& mask, int radius);

}  // namespace octaquant::morph
