#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "octaquant/error.hpp"
#include "octaquant/quantify.hpp"

using namespace octaquant;
using namespace octaquant::quantify;

namespace {

BinaryMask random_mask(int rows, int cols, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution bit(p);
  BinaryMask m(rows, cols);
  for (auto& v : m.pixels()) v = bit(rng) ? 1 : 0;
  return m;
}

double brute_distance(const BinaryMask& m, int r, int c) {
  double best = INFINITY;
  for (int y = 0; y < m.rows(); ++y)
    for (int x = 0; x < m.cols(); ++x)
      if (m(y, x)) best = std::min(best, std::sqrt(double((y - r) * (y - r) + (x - c) * (x - c))));
  return best;
}

// Vessel grid of lines every `step` pixels, with a square FAZ hole.
BinaryMask lattice(int n, int step, int faz_half) {
  BinaryMask m(n, n, 0);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c)
      if (r % step == 0 || c % step == 0) m(r, c) = 1;
  const int mid = n / 2;
  for (int r = mid - faz_half; r < mid + faz_half; ++r)
    for (int c = mid - faz_half; c < mid + faz_half; ++c) m(r, c) = 0;
  return m;
}

}  // namespace

TEST(LabelIcas, AllVesselHasNoRegions) { EXPECT_EQ(label_icas(BinaryMask(8, 8, 1)).count, 0); }

TEST(LabelIcas, RingGivesInsideAndOutside) {
  BinaryMask m(11, 11, 0);
  for (int i = 2; i <= 8; ++i) m(2, i) = m(8, i) = m(i, 2) = m(i, 8) = 1;
  const auto icas = label_icas(m);
  EXPECT_EQ(icas.count, 2);
  EXPECT_EQ(icas.areas[0] + icas.areas[1], 121u - 24u);
}

TEST(LabelIcas, DiagonalVesselSeparatesAreas) {
  BinaryMask m(6, 6, 0);
  for (int i = 0; i < 6; ++i) m(i, i) = 1;
  EXPECT_EQ(label_icas(m).count, 2);
}

TEST(DistanceTransform, AnalyticCases) {
  BinaryMask m(3, 3, 0);
  m(0, 0) = 1;
  EXPECT_NEAR(distance_transform(m)(2, 2), 2.0 * std::sqrt(2.0), 1e-12);
  BinaryMask b(5, 5, 0);
  for (int i = 0; i < 5; ++i) b(0, i) = b(4, i) = b(i, 0) = b(i, 4) = 1;
  EXPECT_EQ(distance_transform(b)(2, 2), 2.0);
}

TEST(DistanceTransform, EmptyVesselSetThrows) { EXPECT_THROW(distance_transform(BinaryMask(4, 4, 0)), ComputeError); }

TEST(DistanceTransform, MatchesAllPairsOracle) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    BinaryMask m = random_mask(32, 32, trial % 3 == 0 ? 0.01 : 0.15, rng);
    m(trial % 32, (trial * 5) % 32) = 1;
    const DistanceMap d = distance_transform(m);
    for (int r = 0; r < 32; ++r)
      for (int c = 0; c < 32; ++c) ASSERT_EQ(d(r, c), brute_distance(m, r, c)) << trial;
  }
}

TEST(Mips, MatchRegionScanOracle) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    BinaryMask m = random_mask(24, 24, 0.3, rng);
    m(0, 0) = 1;
    const auto icas = label_icas(m);
    const DistanceMap d = distance_transform(m);
    const auto mips = compute_mips(icas, d);
    ASSERT_EQ(static_cast<int>(mips.size()), icas.count);
    for (int l = 1; l <= icas.count; ++l) {
      double best = -1;
      Pixel at{};
      for (int r = 0; r < 24; ++r)
        for (int c = 0; c < 24; ++c)
          if (icas.labels(r, c) == l && d(r, c) > best) {
            best = d(r, c);
            at = {r, c};
          }
      const Mip& m2 = mips[std::size_t(l - 1)];
      EXPECT_EQ(m2.value, best);
      EXPECT_EQ(m2.location.row, at.row);
      EXPECT_EQ(m2.location.col, at.col);
      EXPECT_EQ(icas.labels(m2.location.row, m2.location.col), l);
      EXPECT_GE(m2.value, 1.0);
    }
  }
}

TEST(Mips, SinglePixelRegionAndBorderCase) {
  BinaryMask m(3, 3, 1);
  m(1, 1) = 0;
  const auto icas = label_icas(m);
  EXPECT_EQ(compute_mips(icas, distance_transform(m))[0].value, 1.0);
  BinaryMask b(5, 5, 0);
  for (int i = 0; i < 5; ++i) b(0, i) = b(4, i) = b(i, 0) = b(i, 4) = 1;
  const auto mip = compute_mips(label_icas(b), distance_transform(b))[0];
  EXPECT_EQ(mip.value, 2.0);
  EXPECT_EQ(mip.location.row, 2);
  EXPECT_EQ(mip.location.col, 2);
}

TEST(Faz, SingleCentralHole) {
  BinaryMask m(21, 21, 1);
  for (int r = 8; r <= 12; ++r)
    for (int c = 8; c <= 12; ++c) m(r, c) = 0;
  const auto faz = detect_faz(m, label_icas(m));
  EXPECT_EQ(faz.area, 25u);
  EXPECT_DOUBLE_EQ(faz.centroid.row, 10.0);
  EXPECT_DOUBLE_EQ(faz.centroid.col, 10.0);
}

TEST(Faz, LargestCandidateWins) {
  BinaryMask m(50, 50, 1);
  // 100-px region touching the window from the left, 200-px from the right.
  for (int r = 20; r < 30; ++r)
    for (int c = 14; c < 24; ++c) m(r, c) = 0;
  for (int r = 15; r < 35; ++r)
    for (int c = 26; c < 36; ++c) m(r, c) = 0;
  const auto icas = label_icas(m);
  const auto faz = detect_faz(m, icas);
  EXPECT_EQ(faz.area, 200u);
  EXPECT_EQ(icas.areas[std::size_t(faz.label - 1)], 200u);
}

TEST(Faz, NoCandidateThrows) {
  BinaryMask m(40, 40, 1);
  m(0, 0) = 0;
  try {
    detect_faz(m, label_icas(m));
    FAIL();
  } catch (const ComputeError& e) {
    EXPECT_NE(std::string(e.what()).find("widen"), std::string::npos);
  }
}

TEST(Faz, EnclosedVesselPixelsReclassified) {
  BinaryMask m(31, 31, 1);
  for (int r = 10; r <= 20; ++r)
    for (int c = 10; c <= 20; ++c) m(r, c) = 0;
  m(15, 15) = 1;  // speck inside the FAZ
  m(12, 13) = m(12, 14) = 1;
  const auto faz = detect_faz(m, label_icas(m));
  EXPECT_EQ(faz.area, 121u);
  EXPECT_EQ(faz.corrected_mask(15, 15), 0);
  EXPECT_EQ(faz.corrected_mask(12, 13), 0);
  EXPECT_EQ(faz.corrected_mask(0, 0), 1);
}

TEST(Faz, CentroidIsCoordinateMean) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    BinaryMask m(40, 40, 1);
    // Random blob grown from the centre.
    int r = 20, c = 20;
    for (int s = 0; s < 150; ++s) {
      m(r, c) = 0;
      const int dir = rng() % 4;
      r = std::clamp(r + (dir == 0) - (dir == 1), 5, 34);
      c = std::clamp(c + (dir == 2) - (dir == 3), 5, 34);
    }
    const auto faz = detect_faz(m, label_icas(m));
    double sr = 0, sc = 0;
    std::size_t n = 0;
    for (int y = 0; y < 40; ++y)
      for (int x = 0; x < 40; ++x)
        if (faz.region(y, x)) {
          sr += y;
          sc += x;
          ++n;
        }
    EXPECT_EQ(n, faz.area);
    EXPECT_NEAR(faz.centroid.row, sr / n, 1e-12);
    EXPECT_NEAR(faz.centroid.col, sc / n, 1e-12);
  }
}

TEST(Etdrs, AreasMatchAnalyticAt512) {
  const double ppm = 512.0 / 6.0;
  const auto grid = place_etdrs({255.5, 255.5}, ppm);
  const RegionMap map = region_map(grid, 512, 512);
  std::array<std::size_t, kRegionCount> counts{};
  for (auto r : map.pixels()) ++counts[std::size_t(r)];
  std::size_t total = 0;
  for (auto c : counts) total += c;
  EXPECT_EQ(total, 512u * 512u);
  const double pi = std::numbers::pi;
  const double r1 = 0.5 * ppm, r3 = 1.5 * ppm, r6 = 3.0 * ppm;
  EXPECT_NEAR(counts[0], pi * r1 * r1, 0.02 * pi * r1 * r1);
  for (int q = 0; q < 4; ++q) {
    const double inner = pi * (r3 * r3 - r1 * r1) / 4, outer = pi * (r6 * r6 - r3 * r3) / 4;
    EXPECT_NEAR(counts[1 + q], inner, 0.02 * inner) << q;
    EXPECT_NEAR(counts[5 + q], outer, 0.02 * outer) << q;
  }
  EXPECT_NEAR(counts[9], 512.0 * 512.0 - pi * r6 * r6, 0.02 * (512.0 * 512.0 - pi * r6 * r6));
}

TEST(Etdrs, QuadrantOrientation) {
  const auto od = place_etdrs({100, 100}, 20, Laterality::od);
  EXPECT_EQ(od.region_at(100, 100), EtdrsRegion::center);
  EXPECT_EQ(od.region_at(80, 100), EtdrsRegion::inner_s);
  EXPECT_EQ(od.region_at(120, 100), EtdrsRegion::inner_i);
  EXPECT_EQ(od.region_at(100, 120), EtdrsRegion::inner_n);
  EXPECT_EQ(od.region_at(100, 80), EtdrsRegion::inner_t);
  EXPECT_EQ(od.region_at(100, 150), EtdrsRegion::outer_n);
  EXPECT_EQ(od.region_at(100, 170), EtdrsRegion::outside);
  const auto os = place_etdrs({100, 100}, 20, Laterality::os);
  EXPECT_EQ(os.region_at(100, 120), EtdrsRegion::inner_t);
  // Diagonal ties go to nasal/temporal.
  EXPECT_EQ(od.region_at(80, 120), EtdrsRegion::inner_n);
}

TEST(Density, MatchesCountingOracle) {
  std::mt19937_64 rng(77);
  const BinaryMask m = random_mask(64, 64, 0.4, rng);
  const BinaryMask a = random_mask(64, 64, 0.1, rng);
  const RegionMap map = region_map(place_etdrs({31.5, 31.5}, 64.0 / 6.0), 64, 64);
  const auto t = vessel_density(m, a, map);
  for (int reg = 0; reg < kRegionCount; ++reg) {
    std::size_t v = 0, n = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (int(map[i]) != reg || a[i]) continue;
      ++n;
      v += m[i];
    }
    EXPECT_EQ(t[std::size_t(reg)].measured_px, n);
    EXPECT_EQ(t[std::size_t(reg)].vessel_px, v);
    EXPECT_DOUBLE_EQ(t[std::size_t(reg)].density, n ? double(v) / n : 0.0);
  }
}

TEST(Density, AllAndNone) {
  const RegionMap map = region_map(place_etdrs({15.5, 15.5}, 32.0 / 6.0), 32, 32);
  const BinaryMask none(32, 32, 0);
  for (const auto& d : vessel_density(BinaryMask(32, 32, 1), none, map)) EXPECT_EQ(d.density, 1.0);
  for (const auto& d : vessel_density(none, none, map)) EXPECT_EQ(d.density, 0.0);
}

TEST(Analyze, LatticeReport) {
  const BinaryMask m = lattice(96, 8, 10);
  const IcaReport rep = analyze(m, Plexus::scp);
  // The hole joins the lattice cells it cuts into: the 31x31 block between
  // lines 32 and 64, minus 6 line stubs of 11 px that survive outside it.
  EXPECT_EQ(rep.faz().pixel_count, 31u * 31u - 6u * 11u);
  EXPECT_NEAR(rep.faz_centroid.row, 47.5, 1.0);
  std::size_t total = 0;
  for (const auto& ica : rep.icas) {
    EXPECT_GE(ica.pixel_count, 1u);
    EXPECT_EQ(rep.labels(ica.mip_location.row, ica.mip_location.col), ica.label);
    total += ica.pixel_count;
  }
  EXPECT_EQ(total, m.size() - count_true(rep.mask));
  for (const auto& d : rep.densities) {
    EXPECT_GE(d.density, 0.0);
    EXPECT_LE(d.density, 1.0);
  }
}

TEST(NormDb, HandStatistics) {
  IcaReport a, b;
  a.faz_label = b.faz_label = 99;
  a.icas = {IcaRegion{1, 2, 1.0, {}, EtdrsRegion::inner_s}};
  b.icas = {IcaRegion{1, 4, 3.0, {}, EtdrsRegion::inner_s}};
  const std::vector<IcaReport> reps{a, b};
  const auto db = build_normative_db(reps);
  const auto s = db.find(Plexus::scp, EtdrsRegion::inner_s, Metric::area);
  ASSERT_TRUE(s);
  EXPECT_DOUBLE_EQ(s->mean, 3.0);
  EXPECT_DOUBLE_EQ(s->sd, std::sqrt(2.0));
  EXPECT_EQ(s->n, 2u);
  EXPECT_FALSE(db.find(Plexus::dvc, EtdrsRegion::inner_s, Metric::area));
  const std::vector<IcaReport> same{a, a};
  EXPECT_EQ(build_normative_db(same).find(Plexus::scp, EtdrsRegion::inner_s, Metric::mip)->sd, 0.0);
}

TEST(NormDb, FazExcluded) {
  IcaReport a;
  a.faz_label = 1;
  a.icas = {IcaRegion{1, 500, 10.0, {}, EtdrsRegion::center}, IcaRegion{2, 5, 1.0, {}, EtdrsRegion::center},
            IcaRegion{3, 7, 1.0, {}, EtdrsRegion::center}};
  const std::vector<IcaReport> reps{a};
  EXPECT_DOUBLE_EQ(build_normative_db(reps).find(Plexus::scp, EtdrsRegion::center, Metric::area)->mean, 6.0);
}

TEST(NormDb, TextRoundTrip) {
  NormativeDb db;
  db.set(Plexus::scp, EtdrsRegion::outer_t, Metric::area, {123.456789012345, 0.1, 17});
  db.set(Plexus::dvc, EtdrsRegion::center, Metric::mip, {1.0 / 3.0, 2.0 / 7.0, 2});
  const std::string text = db.str();
  EXPECT_EQ(text.substr(0, kNormDbHeader.size()), kNormDbHeader);
  EXPECT_EQ(NormativeDb::parse(text), db);
}

TEST(NormDb, ParseErrorsNameLine) {
  EXPECT_THROW(NormativeDb::parse("bogus\n"), FormatError);
  try {
    NormativeDb::parse("octaquant-normdb v1\nscp,center,area,1,2,3\nscp,middle,area,1,2,3\n");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  EXPECT_THROW(NormativeDb::parse("octaquant-normdb v1\nscp,center,area,1,x,3\n"), FormatError);
  EXPECT_THROW(NormativeDb::parse("octaquant-normdb v1\nscp,center,area,1,-2,3\n"), FormatError);
}

TEST(SdMap, BinRules) {
  EXPECT_EQ(bin_for(0.0), SdBin::below_1);
  EXPECT_EQ(bin_for(-5.0), SdBin::below_1);
  EXPECT_EQ(bin_for(1.0), SdBin::from_1_to_2);
  EXPECT_EQ(bin_for(2.5), SdBin::from_2_to_3);
  EXPECT_EQ(bin_for(3.0), SdBin::from_2_to_3);
  EXPECT_EQ(bin_for(3.01), SdBin::above_3);
  EXPECT_EQ(bin_for(NAN), SdBin::unavailable);
}

TEST(SdMap, MaxOfTwoZ) {
  IcaReport rep;
  rep.faz_label = 1;
  rep.grid = place_etdrs({2, 2}, 1.0);
  rep.labels = LabelMap(1, 3, 0);
  rep.mask = BinaryMask(1, 3, 0);
  rep.labels(0, 0) = 1;
  rep.labels(0, 1) = 2;
  rep.labels(0, 2) = 3;
  rep.icas = {IcaRegion{1, 100, 5.0, {}, EtdrsRegion::center}, IcaRegion{2, 35, 2.1, {}, EtdrsRegion::inner_n},
              IcaRegion{3, 10, 2.0, {}, EtdrsRegion::inner_n}};
  NormativeDb db;
  db.set(Plexus::scp, EtdrsRegion::inner_n, Metric::area, {10.0, 10.0, 5});
  db.set(Plexus::scp, EtdrsRegion::inner_n, Metric::mip, {2.0, 1.0, 5});
  const SdMap map = sd_map(rep, db);
  ASSERT_EQ(map.scores.size(), 3u);
  EXPECT_EQ(map.scores[0].bin, SdBin::faz);
  EXPECT_DOUBLE_EQ(map.scores[1].z_area, 2.5);
  EXPECT_NEAR(map.scores[1].z_mip, 0.1, 1e-12);
  EXPECT_EQ(map.scores[1].bin, SdBin::from_2_to_3);
  EXPECT_EQ(map.scores[2].bin, SdBin::below_1);
  const auto csv = map.csv();
  EXPECT_EQ(csv.header(), (std::vector<std::string>{"ica_id", "region", "area_px", "area_mm2", "mip_px", "mip_um",
                                                     "z_area", "z_mip", "bin"}));
  EXPECT_EQ(csv.rows()[1][8], "2-3");
  EXPECT_EQ(csv.rows()[1][1], "inner-N");
  // Overlay pixel of the 2-3 ICA is tinted orange.
  EXPECT_GT(map.overlay.at(0, 1)[0], map.overlay.at(0, 1)[2]);
}

TEST(SdMap, CohortZMeanIsZero) {
  std::mt19937_64 rng(9);
  std::vector<IcaReport> cohort;
  for (int k = 0; k < 6; ++k) {
    BinaryMask m = lattice(96, 6 + k % 3, 10);
    for (int i = 0; i < 150; ++i) m(rng() % 96, rng() % 96) = 1;
    for (int r = 38; r < 58; ++r)
      for (int c = 38; c < 58; ++c) m(r, c) = 0;
    cohort.push_back(analyze(m, Plexus::scp));
  }
  const auto db = build_normative_db(cohort);
  std::map<std::pair<int, int>, std::pair<double, int>> sums;
  for (const auto& rep : cohort) {
    for (const auto& s : sd_map(rep, db).scores) {
      if (s.bin == SdBin::faz || s.bin == SdBin::unavailable) continue;
      auto& e = sums[{int(s.ica.etdrs_region), 0}];
      e.first += s.z_area;
      e.second += 1;
    }
  }
  ASSERT_FALSE(sums.empty());
  for (const auto& [k, v] : sums) EXPECT_NEAR(v.first / v.second, 0.0, 1e-6);
}
