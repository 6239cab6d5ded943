#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "octaquant/raster.hpp"

namespace octaquant::phantom {

enum class Style { scp, dvc };
std::string to_string(Style s);
Style parse_style(const std::string& text);

struct Lesion {
  double row = 0.0;
  double col = 0.0;
  double radius = 0.0;
  friend bool operator==(const Lesion&, const Lesion&) = default;
};

struct PhantomSpec {
  Style style = Style::scp;
  int rows = 256;
  int cols = 256;
  std::uint64_t seed = 0;
  /// Fraction of vessel pixels in the clean mask.
  double vessel_density_target = 0.35;
  /// Mean / standard deviation of the per-frame speckle factor.
  double speckle_snr = 1.5;
  int frames_to_average = 10;
  /// Radius of the central vessel-free disk; 0 for none.
  double faz_radius_px = 0.0;
  /// Thick horizontal artifact bands (DVC only).
  int projection_band_count = 0;
  double projection_band_width_px = 16.0;
  std::vector<Lesion> lesions;

  /// Widths of root vessels and of the finest branches (SCP) or the
  /// capillary mesh (DVC), in pixels.
  double trunk_width_px = 5.0;
  double capillary_width_px = 2.0;
  /// Log-SD of a smooth random field scaling the local capillary spacing
  /// (SCP). 0 gives a uniform mesh.
  double spacing_variation = 0.0;
  /// Clean intensities in [0,1].
  double vessel_level = 0.8;
  double background_level = 0.15;
  /// Peak-to-peak amplitude of a smooth multiplicative illumination field.
  double illumination_variation = 0.3;

  void validate() const;
};

struct Truth {
  /// Vessels including projection bands.
  BinaryMask mask;
  /// Projection-band pixels only.
  BinaryMask bands;
};

Truth generate_truth(const PhantomSpec& spec);

struct Frames {
  GrayImage single;
  GrayImage averaged;
};

/// Multiplicative unit-mean Gamma speckle with shape snr^2 (exponential at
/// snr 1) on a smooth illumination field. `single` is the first of the
/// averaged frames.
Frames render_frames(const BinaryMask& truth, const PhantomSpec& spec);

struct PhantomItem {
  PhantomSpec spec;
  Truth truth;
  Frames frames;
  /// "control" or "lesion".
  std::string tag;
};

PhantomItem generate(const PhantomSpec& spec);

struct CohortOptions {
  int count = 12;
  std::uint64_t seed = 0;
  /// Items with index < lesion_count carry lesions.
  int lesion_count = 0;
  int lesions_per_item = 1;
  double lesion_radius_px = 20.0;
};

/// Item i uses seed mix_seed(options.seed, i). Lesion placement draws from
/// a separate stream, so a lesioned item's vessels match the unlesioned
/// item with the same seed.
std::vector<PhantomItem> generate_dataset(const PhantomSpec& base, const CohortOptions& options);

/// Lesions for an item, placed inside the image, apart from each other and
/// outside the central 20% window used for FAZ detection.
std::vector<Lesion> place_lesions(const PhantomSpec& spec, int count, double radius, std::uint64_t seed);

}  // namespace octaquant::phantom
