#include "octaquant/segment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "octaquant/error.hpp"

namespace octaquant::segment {

void PostProcessConfig::validate() const {
  if (!(binarize_threshold > 0.0f && binarize_threshold < 1.0f)) {
    throw ConfigError("binarize threshold must lie in (0,1), got " + std::to_string(binarize_threshold));
  }
  if (min_cluster_px < 1) throw ConfigError("min cluster size must be >= 1");
  if (artifact_radius_px < 1) throw ConfigError("artifact radius must be >= 1");
}

std::vector<int> tile_origins(int extent, int tile) {
  if (extent <= 0 || tile <= 0) throw ShapeError("tile and image extents must be positive");
  std::vector<int> out;
  if (extent <= tile) return {0};
  for (int o = 0; o + tile <= extent; o += tile) out.push_back(o);
  if (out.back() + tile < extent) out.push_back(extent - tile);
  return out;
}

ProbabilityMap infer_tiled(const unet::ModelWeights& weights, const GrayImage& image, TileExtents tile) {
  unet::check_extents(weights.config, tile.rows, tile.cols);
  const int rows = image.rows();
  const int cols = image.cols();
  const std::vector<int> row_origins = tile_origins(rows, tile.rows);
  const std::vector<int> col_origins = tile_origins(cols, tile.cols);

  std::vector<GrayImage> tiles;
  for (int r0 : row_origins) {
    for (int c0 : col_origins) {
      GrayImage t(tile.rows, tile.cols);
      for (int r = 0; r < tile.rows; ++r) {
        const int sr = std::min(r0 + r, rows - 1);
        for (int c = 0; c < tile.cols; ++c) t(r, c) = image(sr, std::min(c0 + c, cols - 1));
      }
      tiles.push_back(std::move(t));
    }
  }

  ProbabilityMap out(rows, cols, 0.0f);
  std::size_t index = 0;
  for (int r0 : row_origins) {
    for (int c0 : col_origins) {
      const ProbabilityMap p = unet::forward(weights, tiles[index++]);
      for (int r = 0; r < tile.rows && r0 + r < rows; ++r) {
        for (int c = 0; c < tile.cols && c0 + c < cols; ++c) out(r0 + r, c0 + c) = p(r, c);
      }
    }
  }
  return out;
}

SeamStats seam_statistics(const ProbabilityMap& map, TileExtents tile) {
  if (tile.rows <= 0 || tile.cols <= 0) throw ShapeError("tile extents must be positive");
  const std::vector<int> ro = tile_origins(map.rows(), tile.rows);
  const std::vector<int> co = tile_origins(map.cols(), tile.cols);
  std::vector<char> row_seam(static_cast<std::size_t>(map.rows()), 0);
  std::vector<char> col_seam(static_cast<std::size_t>(map.cols()), 0);
  for (std::size_t i = 1; i < ro.size(); ++i) row_seam[static_cast<std::size_t>(ro[i])] = 1;
  for (std::size_t i = 1; i < co.size(); ++i) col_seam[static_cast<std::size_t>(co[i])] = 1;

  double seam_sum = 0.0;
  double interior_sum = 0.0;
  std::size_t seam_n = 0;
  std::size_t interior_n = 0;
  auto add = [&](bool seam, float a, float b) {
    const double d = std::abs(static_cast<double>(a) - b);
    if (seam) {
      seam_sum += d;
      ++seam_n;
    } else {
      interior_sum += d;
      ++interior_n;
    }
  };
  for (int r = 0; r < map.rows(); ++r) {
    for (int c = 0; c < map.cols(); ++c) {
      if (c > 0) add(col_seam[static_cast<std::size_t>(c)], map(r, c - 1), map(r, c));
      if (r > 0) add(row_seam[static_cast<std::size_t>(r)], map(r - 1, c), map(r, c));
    }
  }
  SeamStats s;
  s.seam_pairs = seam_n;
  s.seam_mean = seam_n ? seam_sum / static_cast<double>(seam_n) : 0.0;
  s.interior_mean = interior_n ? interior_sum / static_cast<double>(interior_n) : 0.0;
  return s;
}

BinaryMask binarize(const ProbabilityMap& map, float threshold) {
  BinaryMask out(map.rows(), map.cols());
  for (std::size_t i = 0; i < map.size(); ++i) {
    const float p = map[i];
    if (!(p >= 0.0f && p <= 1.0f)) {
      throw ComputeError("probability " + std::to_string(p) + " outside [0,1] at pixel " + std::to_string(i));
    }
    out[i] = p >= threshold ? 1 : 0;
  }
  return out;
}

BinaryMask remove_small_components(const BinaryMask& mask, int min_px, Connectivity connectivity) {
  if (min_px < 1) throw ConfigError("min cluster size must be >= 1");
  const morph::Components comp = morph::label_components(mask, true, connectivity);
  BinaryMask out(mask.rows(), mask.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const int l = comp.labels[i];
    out[i] = (l && comp.areas[static_cast<std::size_t>(l - 1)] >= static_cast<std::size_t>(min_px)) ? 1 : 0;
  }
  return out;
}

BinaryMask postprocess(const ProbabilityMap& map, const PostProcessConfig& config) {
  config.validate();
  return remove_small_components(binarize(map, config.binarize_threshold), config.min_cluster_px,
                                 config.connectivity);
}

int otsu_threshold(const GrayImage& image) {
  if (image.size() == 0) throw ShapeError("otsu on empty image");
  std::array<std::int64_t, 256> hist{};
  for (std::uint8_t v : image.pixels()) ++hist[v];
  const std::int64_t n = static_cast<std::int64_t>(image.size());
  std::int64_t total_sum = 0;
  for (int v = 0; v < 256; ++v) total_sum += hist[static_cast<std::size_t>(v)] * v;

  // Between-class variance for split {< t} / {>= t} is
  //   (n*S0 - n0*S)^2 / (n^2 * n0 * n1),
  // so comparing num/den = (n*S0 - n0*S)^2 / (n0*n1) suffices. Products are
  // kept in 128-bit integers for an exact comparison.
  using i128 = __int128;
  int best_t = -1;
  i128 best_num = 0;
  i128 best_den = 1;
  std::int64_t n0 = 0;
  std::int64_t s0 = 0;
  for (int t = 1; t < 256; ++t) {
    n0 += hist[static_cast<std::size_t>(t - 1)];
    s0 += hist[static_cast<std::size_t>(t - 1)] * (t - 1);
    const std::int64_t n1 = n - n0;
    if (n0 == 0 || n1 == 0) continue;
    const i128 diff = static_cast<i128>(n) * s0 - static_cast<i128>(n0) * total_sum;
    const i128 num = diff * diff;
    const i128 den = static_cast<i128>(n0) * n1;
    // num/den > best_num/best_den. The cross products stay below 2^127 for
    // images up to 2^18 pixels (512x512); larger ones use long double.
    bool better;
    if (n <= (std::int64_t{1} << 18)) {
      better = best_t < 0 || num * best_den > best_num * den;
    } else {
      better = best_t < 0 || static_cast<long double>(num) / static_cast<long double>(den) >
                                 static_cast<long double>(best_num) / static_cast<long double>(best_den);
    }
    if (better) {
      best_t = t;
      best_num = num;
      best_den = den;
    }
  }
  if (best_t < 0) return image[0];  // single intensity
  return best_t;
}

BinaryMask otsu(const GrayImage& image) {
  const int t = otsu_threshold(image);
  BinaryMask out(image.rows(), image.cols());
  for (std::size_t i = 0; i < image.size(); ++i) out[i] = image[i] >= t ? 1 : 0;
  return out;
}

ArtifactSplit remove_projection_artifacts(const BinaryMask& mask, int radius) {
  if (radius < 1) throw ConfigError("artifact radius must be >= 1");
  ArtifactSplit s{BinaryMask(mask.rows(), mask.cols()), morph::open_disk(mask, radius)};
  for (std::size_t i = 0; i < mask.size(); ++i) s.cleaned[i] = (mask[i] && !s.artifacts[i]) ? 1 : 0;
  return s;
}

}  // namespace octaquant::segment
