#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "octaquant/error.hpp"
#include "octaquant/raster.hpp"

namespace octaquant::augment {

/// An image with its vessel mask; geometric ops move both together.
struct ImagePair {
  GrayImage image;
  BinaryMask mask;
  friend bool operator==(const ImagePair&, const ImagePair&) = default;
};

enum class ContrastOp { clahe, percentile_remap };
std::string to_string(ContrastOp op);
ContrastOp parse_contrast_op(const std::string& text);

struct ClaheOptions {
  int tiles_x = 8;
  int tiles_y = 8;
  /// Multiple of the uniform bin height; larger values clip less.
  double clip_limit = 2.0;
};

struct AugmentPlan {
  std::uint64_t seed = 0;
  int plain_rotations = 3;
  int contrast_rotations = 5;
  int strip_min = 4;
  int strip_max = 12;
  std::vector<ContrastOp> contrast_ops{ContrastOp::clahe, ContrastOp::percentile_remap};
  /// Also emit a strip-shuffled copy of every contrast variant.
  bool shuffle_contrast_variants = false;
  ClaheOptions clahe;
  double low_percentile = 1.0;
  double high_percentile = 99.0;

  void validate() const;
  /// Pairs emitted per input by expand().
  std::size_t expansion_factor() const;
};

/// Clockwise rotation by k quarter turns: for k = 1, pixel (r, c) of an
/// H x W raster lands at (c, H - 1 - r).
template <typename T, typename Tag>
Raster<T, Tag> rotate90(const Raster<T, Tag>& in, int k) {
  k = ((k % 4) + 4) % 4;
  const int h = in.rows();
  const int w = in.cols();
  if (k == 0) return in;
  Raster<T, Tag> out = (k == 2) ? Raster<T, Tag>(h, w) : Raster<T, Tag>(w, h);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      switch (k) {
        case 1: out(c, h - 1 - r) = in(r, c); break;
        case 2: out(h - 1 - r, w - 1 - c) = in(r, c); break;
        default: out(w - 1 - c, r) = in(r, c); break;
      }
    }
  }
  return out;
}

ImagePair rotate90(const ImagePair& pair, int k);

/// Contrast-limited adaptive histogram equalization. Images not divisible
/// by the tile grid are reflect-padded and cropped back.
GrayImage clahe(const GrayImage& image, const ClaheOptions& options = {});

/// Linear stretch of the [low, high] percentiles onto [0, 255], clamped.
/// Images whose percentiles coincide are returned unchanged.
GrayImage percentile_remap(const GrayImage& image, double low = 1.0, double high = 99.0);

/// Row-strip boundaries drawn under `seed`: sorted, starting at 0 and ending
/// at `rows`, with a strip count uniform in [min_strips, min(max_strips, rows)].
std::vector<int> strip_boundaries(int rows, std::uint64_t seed, int min_strips, int max_strips);

/// Cuts the rows into random strips and reorders them; the mask receives the
/// identical permutation.
ImagePair strip_shuffle(const ImagePair& pair, std::uint64_t seed, int min_strips = 4, int max_strips = 12);

struct AugmentedPair {
  ImagePair pair;
  /// Human-readable variant name, e.g. "rot1", "clahe-rot2", "shuffle-rot0".
  std::string tag;
};

/// Original, plain rotations, contrast rotations (orientations 1,2,3,0,1,...
/// cycling through contrast_ops), then strip-shuffled copies.
std::vector<AugmentedPair> expand(const ImagePair& pair, const AugmentPlan& plan);

/// expand() over a list; pair i uses seed mix_seed(plan.seed, i).
std::vector<AugmentedPair> expand_all(const std::vector<ImagePair>& pairs, const AugmentPlan& plan);

}  // namespace octaquant::augment
