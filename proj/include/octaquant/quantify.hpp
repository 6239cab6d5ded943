#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "octaquant/io.hpp"
#include "octaquant/morphology.hpp"
#include "octaquant/raster.hpp"

namespace octaquant::quantify {

enum class Plexus { scp, dvc };
std::string_view to_string(Plexus p);
/// Accepts "scp"/"dvc" in any case.
Plexus parse_plexus(std::string_view text);

/// The nine ETDRS sectors plus everything beyond the 6 mm disk.
enum class EtdrsRegion : std::uint8_t {
  center,
  inner_s,
  inner_n,
  inner_i,
  inner_t,
  outer_s,
  outer_n,
  outer_i,
  outer_t,
  outside,
};
inline constexpr int kRegionCount = 10;
std::string_view to_string(EtdrsRegion r);
EtdrsRegion parse_region(std::string_view text);

/// Decides which side of the grid is nasal: OD puts nasal at +col.
enum class Laterality { od, os };

struct RegionTag {};
using RegionMap = Raster<EtdrsRegion, RegionTag>;

struct PointD {
  double row = 0.0;
  double col = 0.0;
};

/// Connected non-vessel regions, 4-connectivity, labels dense from 1.
morph::Components label_icas(const BinaryMask& mask);

struct Faz {
  /// Label in the ICA map passed to detect_faz.
  int label = 0;
  /// FAZ pixels after hole filling.
  BinaryMask region;
  std::size_t area = 0;
  PointD centroid;
  /// Input mask with vessel pixels enclosed by the FAZ set to background.
  BinaryMask corrected_mask;
};

/// Largest ICA touching the central square window (side =
/// window_fraction * image side). Throws ComputeError when no ICA reaches
/// the window.
Faz detect_faz(const BinaryMask& mask, const morph::Components& icas, double window_fraction = 0.2);

/// Euclidean distance to the nearest vessel pixel. Throws ComputeError for a
/// mask with no vessel pixel.
DistanceMap distance_transform(const BinaryMask& mask);

struct Mip {
  double value = 0.0;
  Pixel location;
};

/// Per-region maximum of the distance map; index = label - 1; ties go to
/// the first pixel in row-major order.
std::vector<Mip> compute_mips(const morph::Components& icas, const DistanceMap& distance);

struct EtdrsGrid {
  PointD center;
  double px_per_mm = 512.0 / 6.0;
  Laterality laterality = Laterality::od;
  static constexpr double kCenterDiameterMm = 1.0;
  static constexpr double kInnerDiameterMm = 3.0;
  static constexpr double kOuterDiameterMm = 6.0;

  /// Region of a point in pixel coordinates. Quadrants are split by the
  /// diagonals; points exactly on a diagonal go to nasal/temporal.
  EtdrsRegion region_at(double row, double col) const;
};

EtdrsGrid place_etdrs(PointD center, double px_per_mm, Laterality laterality = Laterality::od);
RegionMap region_map(const EtdrsGrid& grid, int rows, int cols);

struct RegionDensity {
  std::size_t vessel_px = 0;
  std::size_t measured_px = 0;
  /// vessel_px / measured_px; 0 when nothing was measured.
  double density = 0.0;
};
using DensityTable = std::array<RegionDensity, kRegionCount>;

/// Artifact pixels are removed from both numerator and denominator.
DensityTable vessel_density(const BinaryMask& mask, const BinaryMask& artifacts, const RegionMap& regions);

struct IcaRegion {
  int label = 0;
  std::size_t pixel_count = 0;
  double mip_value = 0.0;
  Pixel mip_location;
  /// Region containing the MIP.
  EtdrsRegion etdrs_region = EtdrsRegion::outside;
};

struct QuantifyConfig {
  /// 0 means "image columns / 6 mm".
  double px_per_mm = 0.0;
  double faz_window_fraction = 0.2;
  Laterality laterality = Laterality::od;
  /// Disk radius for projection-artifact detection on DVC masks; 0 disables.
  int artifact_radius_px = 6;

  double resolve_px_per_mm(int cols) const;
};

struct IcaReport {
  std::string image_id;
  Plexus plexus = Plexus::scp;
  std::vector<IcaRegion> icas;
  int faz_label = 0;
  PointD faz_centroid;
  DensityTable densities{};
  EtdrsGrid grid;
  /// Mask after FAZ correction, its ICA labels and the artifact mask.
  BinaryMask mask;
  LabelMap labels;
  BinaryMask artifacts;

  const IcaRegion& faz() const;
};

/// Full pipeline on a binary vessel mask: FAZ detection and correction,
/// ICA labeling, MIPs, ETDRS placement, densities.
IcaReport analyze(const BinaryMask& mask, Plexus plexus, const QuantifyConfig& config = {},
                  std::string image_id = {});

enum class Metric { area, mip };
std::string_view to_string(Metric m);

struct NormStats {
  double mean = 0.0;
  double sd = 0.0;
  std::size_t n = 0;
  friend bool operator==(const NormStats&, const NormStats&) = default;
};

/// Per (plexus, region, metric) statistics of non-FAZ ICAs in pixel units.
/// Entries exist only where at least two samples were seen.
class NormativeDb {
 public:
  using Key = std::tuple<Plexus, EtdrsRegion, Metric>;

  void set(Plexus p, EtdrsRegion r, Metric m, NormStats s);
  std::optional<NormStats> find(Plexus p, EtdrsRegion r, Metric m) const;
  const std::map<Key, NormStats>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }

  std::string str() const;
  static NormativeDb parse(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static NormativeDb load(const std::filesystem::path& path);

  friend bool operator==(const NormativeDb&, const NormativeDb&) = default;

 private:
  std::map<Key, NormStats> entries_;
};

inline constexpr std::string_view kNormDbHeader = "octaquant-normdb v1";

/// Pools ICAs of all reports by plexus and region; sample SD (n - 1).
NormativeDb build_normative_db(std::span<const IcaReport> controls);

enum class SdBin { below_1, from_1_to_2, from_2_to_3, above_3, faz, unavailable };
std::string_view to_string(SdBin b);
/// z < 1, 1 <= z < 2, 2 <= z <= 3, z > 3.
SdBin bin_for(double z);

struct IcaScore {
  IcaRegion ica;
  double area_mm2 = 0.0;
  double mip_um = 0.0;
  /// NaN when the database has no entry.
  double z_area = 0.0;
  double z_mip = 0.0;
  SdBin bin = SdBin::unavailable;
};

struct SdMap {
  std::vector<IcaScore> scores;
  /// Per-pixel bin; FAZ and vessels are left as background.
  io::RgbImage overlay;
  io::CsvTable csv() const;
};

/// Scores every ICA against the database and renders the colour-coded
/// overlay on `background` (the mask is used when none is given).
SdMap sd_map(const IcaReport& report, const NormativeDb& db, const GrayImage* background = nullptr);

}  // namespace octaquant::quantify
