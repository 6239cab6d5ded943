#include <gtest/gtest.h>

#include <queue>
#include <random>

#include "octaquant/error.hpp"
#include "octaquant/segment.hpp"

using namespace octaquant;

namespace {

BinaryMask random_mask(int rows, int cols, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution bit(p);
  BinaryMask m(rows, cols);
  for (auto& v : m.pixels()) v = bit(rng) ? 1 : 0;
  return m;
}

// Brute-force removal: flood each pixel's component and keep it when large.
BinaryMask flood_remove(const BinaryMask& m, int min_px) {
  BinaryMask out(m.rows(), m.cols(), 0);
  std::vector<char> seen(m.size(), 0);
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) {
      if (!m(r, c) || seen[std::size_t(r) * m.cols() + c]) continue;
      std::vector<Pixel> comp;
      std::queue<Pixel> q;
      q.push({r, c});
      seen[std::size_t(r) * m.cols() + c] = 1;
      while (!q.empty()) {
        const Pixel p = q.front();
        q.pop();
        comp.push_back(p);
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            const int y = p.row + dr, x = p.col + dc;
            if (y < 0 || x < 0 || y >= m.rows() || x >= m.cols() || !m(y, x)) continue;
            char& s = seen[std::size_t(y) * m.cols() + x];
            if (s) continue;
            s = 1;
            q.push({y, x});
          }
        }
      }
      if (static_cast<int>(comp.size()) >= min_px) {
        for (const Pixel& p : comp) out(p.row, p.col) = 1;
      }
    }
  }
  return out;
}

// Exhaustive Otsu in the class-mean form: sigma_B^2 * n^2 =
// (S0*n1 - S1*n0)^2 / (n0*n1), compared as exact fractions.
int otsu_oracle(const GrayImage& img) {
  long long hist[256] = {};
  for (auto v : img.pixels()) ++hist[v];
  long long n = 0, s = 0;
  for (int v = 0; v < 256; ++v) {
    n += hist[v];
    s += hist[v] * v;
  }
  int best = -1;
  __int128 bn = 0, bd = 1;
  for (int t = 0; t < 256; ++t) {
    long long n0 = 0, s0 = 0;
    for (int v = 0; v < t; ++v) {
      n0 += hist[v];
      s0 += hist[v] * v;
    }
    const long long n1 = n - n0, s1 = s - s0;
    if (!n0 || !n1) continue;
    const __int128 diff = (__int128)s0 * n1 - (__int128)s1 * n0;
    const __int128 num = diff * diff, den = (__int128)n0 * n1;
    if (best < 0 || num * bd > bn * den) {
      best = t;
      bn = num;
      bd = den;
    }
  }
  return best < 0 ? img[0] : best;
}

ProbabilityMap constant_map(int rows, int cols, float v) { return ProbabilityMap(rows, cols, v); }

}  // namespace

TEST(Binarize, ThresholdCases) {
  EXPECT_EQ(count_true(segment::binarize(constant_map(4, 4, 0.6f))), 16u);
  EXPECT_EQ(count_true(segment::binarize(constant_map(4, 4, 0.4f))), 0u);
  EXPECT_EQ(count_true(segment::binarize(constant_map(4, 4, 0.5f))), 16u);
}

TEST(Binarize, RejectsOutOfRange) {
  EXPECT_THROW(segment::binarize(constant_map(2, 2, 1.5f)), ComputeError);
  EXPECT_THROW(segment::binarize(constant_map(2, 2, std::nanf(""))), ComputeError);
}

TEST(PostProcessConfig, Validation) {
  segment::PostProcessConfig c;
  EXPECT_NO_THROW(c.validate());
  c.binarize_threshold = 1.0f;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.min_cluster_px = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(SmallComponents, BlobBoundary) {
  BinaryMask m29(20, 20, 0), m30(20, 20, 0);
  for (int i = 0; i < 29; ++i) m29(5 + i / 6, 5 + i % 6) = 1;
  for (int i = 0; i < 30; ++i) m30(5 + i / 6, 5 + i % 6) = 1;
  EXPECT_EQ(count_true(segment::remove_small_components(m29)), 0u);
  EXPECT_EQ(segment::remove_small_components(m30), m30);
}

TEST(SmallComponents, MatchesFloodFillOracle) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 120; ++trial) {
    const BinaryMask m = random_mask(64, 64, 0.15 + 0.3 * (trial % 4) / 3.0, rng);
    const int min_px = 1 + trial % 40;
    ASSERT_EQ(segment::remove_small_components(m, min_px), flood_remove(m, min_px)) << "trial " << trial;
  }
}

TEST(SmallComponents, FourConnectivitySplitsDiagonal) {
  BinaryMask m(10, 10, 0);
  for (int i = 0; i < 10; ++i) m(i, i) = 1;
  EXPECT_EQ(segment::remove_small_components(m, 10, segment::Connectivity::eight), m);
  EXPECT_EQ(count_true(segment::remove_small_components(m, 2, segment::Connectivity::four)), 0u);
}

TEST(Otsu, Bimodal) {
  GrayImage img(8, 8, 50);
  for (int i = 32; i < 64; ++i) img[std::size_t(i)] = 200;
  const int t = segment::otsu_threshold(img);
  EXPECT_GT(t, 50);
  EXPECT_LE(t, 200);
  const BinaryMask m = segment::otsu(img);
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_EQ(m[i], img[i] == 200 ? 1 : 0);
}

TEST(Otsu, ConstantImage) {
  const GrayImage img(5, 5, 77);
  EXPECT_EQ(segment::otsu_threshold(img), 77);
  EXPECT_EQ(count_true(segment::otsu(img)), 25u);
}

TEST(Otsu, MatchesExhaustiveOracle) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    GrayImage img(32 + trial % 33, 40);
    // Mixtures of narrow and uniform distributions, including sparse ones
    // with many equal-variance candidates.
    const int mode = trial % 4;
    std::uniform_int_distribution<int> u(0, 255), few(0, 3);
    std::normal_distribution<double> g1(60, 15), g2(170, 25);
    for (auto& v : img.pixels()) {
      int x;
      if (mode == 0) x = u(rng);
      else if (mode == 1) x = few(rng) * 80;
      else x = static_cast<int>(std::lround(rng() & 1 ? g1(rng) : g2(rng)));
      v = static_cast<std::uint8_t>(std::clamp(x, 0, 255));
    }
    ASSERT_EQ(segment::otsu_threshold(img), otsu_oracle(img)) << "trial " << trial;
  }
}

TEST(Artifacts, ThinLinesSurvive) {
  BinaryMask m(40, 40, 0);
  for (int i = 0; i < 40; ++i) {
    m(10, i) = 1;
    m(i, 25) = 1;
  }
  const auto split = segment::remove_projection_artifacts(m, 6);
  EXPECT_EQ(count_true(split.artifacts), 0u);
  EXPECT_EQ(split.cleaned, m);
}

TEST(Artifacts, WideBandCaptured) {
  BinaryMask m(64, 64, 0);
  for (int r = 20; r < 40; ++r)
    for (int c = 0; c < 64; ++c) m(r, c) = 1;
  for (int i = 0; i < 64; ++i) m(i, 5) = 1;  // a thin vessel crossing the band
  const auto split = segment::remove_projection_artifacts(m, 6);

  // Oracle: erosion then dilation with explicit disk loops.
  BinaryMask er(64, 64, 0), op(64, 64, 0);
  for (int r = 0; r < 64; ++r) {
    for (int c = 0; c < 64; ++c) {
      bool keep = true;
      for (int dy = -6; dy <= 6; ++dy)
        for (int dx = -6; dx <= 6; ++dx) {
          if (dy * dy + dx * dx > 36) continue;
          const int y = r + dy, x = c + dx;
          if (y < 0 || x < 0 || y >= 64 || x >= 64 || !m(y, x)) keep = false;
        }
      er(r, c) = keep;
    }
  }
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c) {
      if (!er(r, c)) continue;
      for (int dy = -6; dy <= 6; ++dy)
        for (int dx = -6; dx <= 6; ++dx) {
          if (dy * dy + dx * dx > 36) continue;
          const int y = r + dy, x = c + dx;
          if (y >= 0 && x >= 0 && y < 64 && x < 64) op(y, x) = 1;
        }
    }
  EXPECT_EQ(split.artifacts, op);
  std::size_t band = 0, hit = 0;
  for (int r = 20; r < 40; ++r)
    for (int c = 0; c < 64; ++c) {
      ++band;
      hit += split.artifacts(r, c);
    }
  EXPECT_GE(static_cast<double>(hit) / band, 0.9);
  for (std::size_t i = 0; i < m.size(); ++i) {
    EXPECT_EQ(split.cleaned[i] + split.artifacts[i], m[i]);
  }
}

TEST(Artifacts, RadiusValidated) { EXPECT_THROW(segment::remove_projection_artifacts(BinaryMask(4, 4), 0), ConfigError); }

TEST(Tiling, Origins) {
  EXPECT_EQ(segment::tile_origins(512, 256), (std::vector<int>{0, 256}));
  EXPECT_EQ(segment::tile_origins(300, 128), (std::vector<int>{0, 128, 172}));
  EXPECT_EQ(segment::tile_origins(64, 128), (std::vector<int>{0}));
}

class TiledInference : public ::testing::Test {
 protected:
  void SetUp() override {
    unet::UnetConfig cfg;
    cfg.depth = 3;
    cfg.base_channels = 4;
    weights = unet::build(cfg, 17);
    std::mt19937_64 rng(1);
    image = GrayImage(64, 96);
    for (auto& v : image.pixels()) v = static_cast<std::uint8_t>(rng() % 256);
  }
  unet::ModelWeights weights;
  GrayImage image;
};

TEST_F(TiledInference, SingleTileEqualsDirectForward) {
  EXPECT_EQ(segment::infer_tiled(weights, image, {64, 96}), unet::forward(weights, image));
}

TEST_F(TiledInference, TilesMatchIndependentForwards) {
  const ProbabilityMap stitched = segment::infer_tiled(weights, image, {32, 32});
  ASSERT_EQ(stitched.rows(), 64);
  ASSERT_EQ(stitched.cols(), 96);
  for (int tr = 0; tr < 2; ++tr) {
    for (int tc = 0; tc < 3; ++tc) {
      GrayImage t(32, 32);
      for (int r = 0; r < 32; ++r)
        for (int c = 0; c < 32; ++c) t(r, c) = image(tr * 32 + r, tc * 32 + c);
      const ProbabilityMap p = unet::forward(weights, t);
      for (int r = 0; r < 32; ++r)
        for (int c = 0; c < 32; ++c) ASSERT_EQ(stitched(tr * 32 + r, tc * 32 + c), p(r, c));
    }
  }
  for (float v : stitched.pixels()) EXPECT_TRUE(v >= 0.0f && v <= 1.0f);
}

TEST_F(TiledInference, DeterministicBinarization) {
  const auto a = segment::binarize(segment::infer_tiled(weights, image, {32, 32}));
  const auto b = segment::binarize(segment::infer_tiled(weights, image, {32, 32}));
  EXPECT_EQ(a, b);
}

TEST_F(TiledInference, NonMultipleExtentsCovered) {
  GrayImage odd(50, 70);
  for (std::size_t i = 0; i < odd.size(); ++i) odd[i] = static_cast<std::uint8_t>(i * 37 % 256);
  const ProbabilityMap p = segment::infer_tiled(weights, odd, {32, 32});
  EXPECT_EQ(p.rows(), 50);
  EXPECT_EQ(p.cols(), 70);
}

TEST_F(TiledInference, IndivisibleTileRejected) {
  EXPECT_THROW(segment::infer_tiled(weights, image, {30, 32}), ShapeError);
}

TEST(SeamStatistics, KnownStep) {
  ProbabilityMap m(4, 8, 0.0f);
  for (int r = 0; r < 4; ++r)
    for (int c = 4; c < 8; ++c) m(r, c) = 1.0f;
  const auto s = segment::seam_statistics(m, {4, 4});
  EXPECT_EQ(s.seam_pairs, 4u);
  EXPECT_DOUBLE_EQ(s.seam_mean, 1.0);
  EXPECT_DOUBLE_EQ(s.interior_mean, 0.0);
}
