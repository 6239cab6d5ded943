#pragma once

#include <cstdint>
#include <vector>

#include "octaquant/morphology.hpp"
#include "octaquant/raster.hpp"
#include "octaquant/unet.hpp"

namespace octaquant::segment {

using morph::Connectivity;

struct PostProcessConfig {
  /// p >= threshold is vessel (inclusive).
  float binarize_threshold = 0.5f;
  int min_cluster_px = 30;
  Connectivity connectivity = Connectivity::eight;
  int artifact_radius_px = 6;

  void validate() const;
};

struct TileExtents {
  int rows = 256;
  int cols = 256;
};

/// Tile origins along one axis: a regular grid, with the final tile pulled
/// back so it ends at the border when `extent` is not a multiple of `tile`.
std::vector<int> tile_origins(int extent, int tile);

/// Runs the network on independent tiles and stitches the results. Images
/// smaller than a tile are edge-padded up to the tile and cropped back.
ProbabilityMap infer_tiled(const unet::ModelWeights& weights, const GrayImage& image, TileExtents tile);

struct SeamStats {
  /// Mean |p(a) - p(b)| over 4-adjacent pixel pairs straddling a tile seam.
  double seam_mean = 0.0;
  /// The same statistic over all other 4-adjacent pairs.
  double interior_mean = 0.0;
  std::size_t seam_pairs = 0;
};

SeamStats seam_statistics(const ProbabilityMap& map, TileExtents tile);

BinaryMask binarize(const ProbabilityMap& map, float threshold = 0.5f);

/// Clears every connected component smaller than `min_px` pixels.
BinaryMask remove_small_components(const BinaryMask& mask, int min_px = 30,
                                   Connectivity connectivity = Connectivity::eight);

/// binarize followed by small-component removal.
BinaryMask postprocess(const ProbabilityMap& map, const PostProcessConfig& config);

/// Otsu threshold t in [0,255]: pixels >= t are vessel. The between-class
/// variance is compared exactly; ties pick the smallest t. For a constant
/// image the threshold is that value and the whole image is vessel.
int otsu_threshold(const GrayImage& image);
BinaryMask otsu(const GrayImage& image);

struct ArtifactSplit {
  BinaryMask cleaned;
  BinaryMask artifacts;
};

/// Artifacts = opening of the mask by a disk of `radius`; cleaned = mask
/// minus artifacts.
ArtifactSplit remove_projection_artifacts(const BinaryMask& mask, int radius = 6);

}  // namespace octaquant::segment
