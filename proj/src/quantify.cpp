#include "octaquant/quantify.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>

#include "octaquant/error.hpp"
#include "octaquant/segment.hpp"

namespace octaquant::quantify {
namespace {

constexpr std::array<std::string_view, kRegionCount> kRegionNames = {
    "center", "inner-S", "inner-N", "inner-I", "inner-T", "outer-S", "outer-N", "outer-I", "outer-T", "outside"};

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

double z_score(double x, const NormStats& s) {
  if (s.sd > 0.0) return (x - s.mean) / s.sd;
  if (x == s.mean) return 0.0;
  return x > s.mean ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
}

double parse_double(std::string_view field, std::size_t line) {
  double v = 0.0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc{} || res.ptr != field.data() + field.size()) {
    throw FormatError("normdb line " + std::to_string(line) + ": bad number '" + std::string(field) + "'");
  }
  return v;
}

}  // namespace

std::string_view to_string(Plexus p) { return p == Plexus::scp ? "scp" : "dvc"; }

Plexus parse_plexus(std::string_view text) {
  const std::string l = lower(text);
  if (l == "scp") return Plexus::scp;
  if (l == "dvc") return Plexus::dvc;
  throw ConfigError("unknown plexus '" + std::string(text) + "' (expected scp or dvc)");
}

std::string_view to_string(EtdrsRegion r) { return kRegionNames[static_cast<std::size_t>(r)]; }

EtdrsRegion parse_region(std::string_view text) {
  for (std::size_t i = 0; i < kRegionNames.size(); ++i) {
    if (kRegionNames[i] == text) return static_cast<EtdrsRegion>(i);
  }
  throw FormatError("unknown ETDRS region '" + std::string(text) + "'");
}

std::string_view to_string(Metric m) { return m == Metric::area ? "area" : "mip"; }

morph::Components label_icas(const BinaryMask& mask) {
  return morph::label_components(mask, false, morph::Connectivity::four);
}

Faz detect_faz(const BinaryMask& mask, const morph::Components& icas, double window_fraction) {
  require_same_extents(mask, icas.labels, "detect_faz");
  if (!(window_fraction > 0.0 && window_fraction <= 1.0)) {
    throw ConfigError("FAZ window fraction must lie in (0,1]");
  }
  const int rows = mask.rows();
  const int cols = mask.cols();
  const int wh = std::max(1, static_cast<int>(std::lround(rows * window_fraction)));
  const int ww = std::max(1, static_cast<int>(std::lround(cols * window_fraction)));
  const int r0 = (rows - wh) / 2;
  const int c0 = (cols - ww) / 2;

  int best = 0;
  for (int r = r0; r < r0 + wh; ++r) {
    for (int c = c0; c < c0 + ww; ++c) {
      const int l = icas.labels(r, c);
      if (!l) continue;
      if (!best || icas.areas[static_cast<std::size_t>(l - 1)] > icas.areas[static_cast<std::size_t>(best - 1)] ||
          (icas.areas[static_cast<std::size_t>(l - 1)] == icas.areas[static_cast<std::size_t>(best - 1)] && l < best)) {
        best = l;
      }
    }
  }
  if (!best) {
    throw ComputeError("no inter-capillary area reaches the central " + std::to_string(wh) + "x" +
                       std::to_string(ww) + " window; widen the FAZ window");
  }

  Faz faz;
  faz.label = best;
  faz.region = BinaryMask(rows, cols, 0);
  for (std::size_t i = 0; i < mask.size(); ++i) faz.region[i] = icas.labels[i] == best ? 1 : 0;

  // Holes: components of the complement (8-connected, the dual of the
  // 4-connected FAZ) that never reach the border.
  const morph::Components outside = morph::label_components(faz.region, false, morph::Connectivity::eight);
  std::vector<char> touches(static_cast<std::size_t>(outside.count) + 1, 0);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (r == 0 || c == 0 || r == rows - 1 || c == cols - 1) touches[static_cast<std::size_t>(outside.labels(r, c))] = 1;
    }
  }
  faz.corrected_mask = mask;
  double sr = 0.0;
  double sc = 0.0;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int l = outside.labels(r, c);
      if (l && !touches[static_cast<std::size_t>(l)]) {
        faz.region(r, c) = 1;
        faz.corrected_mask(r, c) = 0;
      }
      if (faz.region(r, c)) {
        ++faz.area;
        sr += r;
        sc += c;
      }
    }
  }
  faz.centroid = {sr / static_cast<double>(faz.area), sc / static_cast<double>(faz.area)};
  return faz;
}

DistanceMap distance_transform(const BinaryMask& mask) {
  if (count_true(mask) == 0) throw ComputeError("distance transform needs at least one vessel pixel");
  const auto sq = morph::squared_distance(mask, true);
  DistanceMap out(mask.rows(), mask.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(static_cast<double>(sq[i]));
  return out;
}

std::vector<Mip> compute_mips(const morph::Components& icas, const DistanceMap& distance) {
  require_same_extents(icas.labels, distance, "compute_mips");
  std::vector<Mip> mips(static_cast<std::size_t>(icas.count), Mip{-1.0, {}});
  for (int r = 0; r < distance.rows(); ++r) {
    for (int c = 0; c < distance.cols(); ++c) {
      const int l = icas.labels(r, c);
      if (!l) continue;
      Mip& m = mips[static_cast<std::size_t>(l - 1)];
      if (distance(r, c) > m.value) m = {distance(r, c), {r, c}};
    }
  }
  return mips;
}

EtdrsRegion EtdrsGrid::region_at(double row, double col) const {
  const double dy = row - center.row;
  const double dx = col - center.col;
  const double d_mm = std::hypot(dy, dx) / px_per_mm;
  if (d_mm <= kCenterDiameterMm / 2) return EtdrsRegion::center;
  const bool inner = d_mm <= kInnerDiameterMm / 2;
  if (!inner && d_mm > kOuterDiameterMm / 2) return EtdrsRegion::outside;
  int quadrant;  // 0 S, 1 N, 2 I, 3 T
  if (std::abs(dy) > std::abs(dx)) {
    quadrant = dy < 0 ? 0 : 2;
  } else {
    const bool plus_col_nasal = laterality == Laterality::od;
    quadrant = ((dx >= 0) == plus_col_nasal) ? 1 : 3;
  }
  return static_cast<EtdrsRegion>((inner ? 1 : 5) + quadrant);
}

EtdrsGrid place_etdrs(PointD center, double px_per_mm, Laterality laterality) {
  if (!(px_per_mm > 0.0) || !std::isfinite(px_per_mm)) throw ConfigError("px_per_mm must be positive");
  return EtdrsGrid{center, px_per_mm, laterality};
}

RegionMap region_map(const EtdrsGrid& grid, int rows, int cols) {
  RegionMap map(rows, cols, EtdrsRegion::outside);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) map(r, c) = grid.region_at(r, c);
  }
  return map;
}

DensityTable vessel_density(const BinaryMask& mask, const BinaryMask& artifacts, const RegionMap& regions) {
  require_same_extents(mask, artifacts, "vessel_density");
  require_same_extents(mask, regions, "vessel_density");
  DensityTable t{};
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (artifacts[i]) continue;
    RegionDensity& d = t[static_cast<std::size_t>(regions[i])];
    ++d.measured_px;
    if (mask[i]) ++d.vessel_px;
  }
  for (auto& d : t) d.density = d.measured_px ? static_cast<double>(d.vessel_px) / d.measured_px : 0.0;
  return t;
}

double QuantifyConfig::resolve_px_per_mm(int cols) const {
  if (px_per_mm < 0.0) throw ConfigError("px_per_mm must be >= 0 (0 = derive from width)");
  return px_per_mm > 0.0 ? px_per_mm : cols / EtdrsGrid::kOuterDiameterMm;
}

const IcaRegion& IcaReport::faz() const {
  for (const auto& ica : icas) {
    if (ica.label == faz_label) return ica;
  }
  throw ComputeError("report has no FAZ region");
}

IcaReport analyze(const BinaryMask& mask, Plexus plexus, const QuantifyConfig& config, std::string image_id) {
  if (config.artifact_radius_px < 0) throw ConfigError("artifact radius must be >= 0");
  IcaReport rep;
  rep.image_id = std::move(image_id);
  rep.plexus = plexus;

  const morph::Components raw = label_icas(mask);
  const Faz faz = detect_faz(mask, raw, config.faz_window_fraction);
  rep.mask = faz.corrected_mask;
  rep.faz_centroid = faz.centroid;

  if (plexus == Plexus::dvc && config.artifact_radius_px > 0) {
    rep.artifacts = segment::remove_projection_artifacts(rep.mask, config.artifact_radius_px).artifacts;
  } else {
    rep.artifacts = BinaryMask(mask.rows(), mask.cols(), 0);
  }

  const morph::Components icas = label_icas(rep.mask);
  rep.labels = icas.labels;
  for (std::size_t i = 0; i < faz.region.size(); ++i) {
    if (faz.region[i]) {
      rep.faz_label = icas.labels[i];
      break;
    }
  }

  const DistanceMap dist = distance_transform(rep.mask);
  const std::vector<Mip> mips = compute_mips(icas, dist);
  rep.grid = place_etdrs(faz.centroid, config.resolve_px_per_mm(mask.cols()), config.laterality);
  const RegionMap regions = region_map(rep.grid, mask.rows(), mask.cols());
  rep.densities = vessel_density(rep.mask, rep.artifacts, regions);

  rep.icas.reserve(static_cast<std::size_t>(icas.count));
  for (int l = 1; l <= icas.count; ++l) {
    const Mip& m = mips[static_cast<std::size_t>(l - 1)];
    rep.icas.push_back(IcaRegion{l, icas.areas[static_cast<std::size_t>(l - 1)], m.value, m.location,
                                 regions(m.location.row, m.location.col)});
  }
  return rep;
}

void NormativeDb::set(Plexus p, EtdrsRegion r, Metric m, NormStats s) {
  if (!(s.sd >= 0.0) || s.n < 2) throw ConfigError("normative entries need sd >= 0 and n >= 2");
  entries_[{p, r, m}] = s;
}

std::optional<NormStats> NormativeDb::find(Plexus p, EtdrsRegion r, Metric m) const {
  const auto it = entries_.find({p, r, m});
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::string NormativeDb::str() const {
  std::string out(kNormDbHeader);
  out += '\n';
  for (const auto& [key, s] : entries_) {
    const auto& [p, r, m] = key;
    out += std::string(to_string(p)) + ',' + std::string(to_string(r)) + ',' + std::string(to_string(m)) + ',' +
           io::format_number(s.mean) + ',' + io::format_number(s.sd) + ',' + std::to_string(s.n) + '\n';
  }
  return out;
}

NormativeDb NormativeDb::parse(std::string_view text) {
  NormativeDb db;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!header_seen) {
      if (line != kNormDbHeader) {
        throw FormatError("normdb line 1: expected header '" + std::string(kNormDbHeader) + "'");
      }
      header_seen = true;
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string_view> f;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      f.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (f.size() != 6) {
      throw FormatError("normdb line " + std::to_string(line_no) + ": expected 6 fields, got " +
                        std::to_string(f.size()));
    }
    Metric metric;
    if (f[2] == "area") {
      metric = Metric::area;
    } else if (f[2] == "mip") {
      metric = Metric::mip;
    } else {
      throw FormatError("normdb line " + std::to_string(line_no) + ": unknown metric '" + std::string(f[2]) + "'");
    }
    std::size_t n = 0;
    const auto res = std::from_chars(f[5].data(), f[5].data() + f[5].size(), n);
    if (res.ec != std::errc{} || res.ptr != f[5].data() + f[5].size()) {
      throw FormatError("normdb line " + std::to_string(line_no) + ": bad count");
    }
    NormStats s{parse_double(f[3], line_no), parse_double(f[4], line_no), n};
    try {
      db.set(parse_plexus(f[0]), parse_region(f[1]), metric, s);
    } catch (const Error& e) {
      throw FormatError("normdb line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!header_seen) throw FormatError("normdb: empty file");
  return db;
}

void NormativeDb::save(const std::filesystem::path& path) const { io::write_text_atomic(path, str()); }

NormativeDb NormativeDb::load(const std::filesystem::path& path) {
  const std::vector<char> bytes = io::read_file(path);
  try {
    return parse(std::string_view(bytes.data(), bytes.size()));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

NormativeDb build_normative_db(std::span<const IcaReport> controls) {
  std::map<NormativeDb::Key, std::vector<double>> samples;
  for (const IcaReport& rep : controls) {
    for (const IcaRegion& ica : rep.icas) {
      if (ica.label == rep.faz_label) continue;
      samples[{rep.plexus, ica.etdrs_region, Metric::area}].push_back(static_cast<double>(ica.pixel_count));
      samples[{rep.plexus, ica.etdrs_region, Metric::mip}].push_back(ica.mip_value);
    }
  }
  NormativeDb db;
  for (const auto& [key, xs] : samples) {
    if (xs.size() < 2) continue;
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    const auto& [p, r, m] = key;
    db.set(p, r, m, NormStats{mean, std::sqrt(ss / static_cast<double>(xs.size() - 1)), xs.size()});
  }
  return db;
}

std::string_view to_string(SdBin b) {
  switch (b) {
    case SdBin::below_1: return "<1";
    case SdBin::from_1_to_2: return "1-2";
    case SdBin::from_2_to_3: return "2-3";
    case SdBin::above_3: return ">3";
    case SdBin::faz: return "faz";
    case SdBin::unavailable: return "n/a";
  }
  return "n/a";
}

SdBin bin_for(double z) {
  if (std::isnan(z)) return SdBin::unavailable;
  if (z < 1.0) return SdBin::below_1;
  if (z < 2.0) return SdBin::from_1_to_2;
  if (z <= 3.0) return SdBin::from_2_to_3;
  return SdBin::above_3;
}

io::CsvTable SdMap::csv() const {
  io::CsvTable t({"ica_id", "region", "area_px", "area_mm2", "mip_px", "mip_um", "z_area", "z_mip", "bin"});
  for (const IcaScore& s : scores) {
    t.add_row({std::to_string(s.ica.label), std::string(to_string(s.ica.etdrs_region)),
               std::to_string(s.ica.pixel_count), io::format_number(s.area_mm2), io::format_number(s.ica.mip_value),
               io::format_number(s.mip_um), io::format_number(s.z_area), io::format_number(s.z_mip),
               std::string(to_string(s.bin))});
  }
  return t;
}

SdMap sd_map(const IcaReport& report, const NormativeDb& db, const GrayImage* background) {
  const double ppm = report.grid.px_per_mm;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  SdMap out;
  out.scores.reserve(report.icas.size());
  for (const IcaRegion& ica : report.icas) {
    IcaScore s;
    s.ica = ica;
    s.area_mm2 = static_cast<double>(ica.pixel_count) / (ppm * ppm);
    s.mip_um = ica.mip_value * 1000.0 / ppm;
    s.z_area = nan;
    s.z_mip = nan;
    if (ica.label == report.faz_label) {
      s.bin = SdBin::faz;
    } else {
      const auto a = db.find(report.plexus, ica.etdrs_region, Metric::area);
      const auto m = db.find(report.plexus, ica.etdrs_region, Metric::mip);
      if (a && m) {
        s.z_area = z_score(static_cast<double>(ica.pixel_count), *a);
        s.z_mip = z_score(ica.mip_value, *m);
        s.bin = bin_for(std::max(s.z_area, s.z_mip));
      }
    }
    out.scores.push_back(s);
  }

  const int rows = report.labels.rows();
  const int cols = report.labels.cols();
  GrayImage base = background ? *background : io::mask_to_image(report.mask);
  require_same_extents(base, report.labels, "sd_map background");
  out.overlay = io::RgbImage(rows, cols);
  auto tint = [](SdBin b) -> const std::uint8_t* {
    static constexpr std::uint8_t yellow[3] = {255, 220, 0};
    static constexpr std::uint8_t orange[3] = {255, 128, 0};
    static constexpr std::uint8_t red[3] = {220, 0, 0};
    static constexpr std::uint8_t blue[3] = {0, 90, 255};
    switch (b) {
      case SdBin::from_1_to_2: return yellow;
      case SdBin::from_2_to_3: return orange;
      case SdBin::above_3: return red;
      case SdBin::faz: return blue;
      default: return nullptr;
    }
  };
  constexpr double alpha = 0.55;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      std::uint8_t* px = out.overlay.at(r, c);
      const std::uint8_t g = base(r, c);
      px[0] = px[1] = px[2] = g;
      const int l = report.labels(r, c);
      if (!l) continue;
      const std::uint8_t* color = tint(out.scores[static_cast<std::size_t>(l - 1)].bin);
      if (!color) continue;
      for (int k = 0; k < 3; ++k) {
        px[k] = static_cast<std::uint8_t>(std::lround((1 - alpha) * g + alpha * color[k]));
      }
    }
  }
  return out;
}

}  // namespace octaquant::quantify
