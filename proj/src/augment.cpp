#include "octaquant/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "octaquant/random.hpp"

namespace octaquant::augment {
namespace {

int reflect(int i, int n) {
  if (n == 1) return 0;
  // Mirror without repeating the edge pixel: -1 -> 1, n -> n - 2.
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

std::array<int, 256> tile_lut(const GrayImage& img, int r0, int c0, int th, int tw, double clip_limit) {
  std::array<int, 256> hist{};
  for (int r = r0; r < r0 + th; ++r) {
    for (int c = c0; c < c0 + tw; ++c) ++hist[img(r, c)];
  }
  const int area = th * tw;
  const int clip = static_cast<int>(std::clamp(clip_limit * area / 256.0, 1.0, static_cast<double>(area)));
  int excess = 0;
  for (int& h : hist) {
    if (h > clip) {
      excess += h - clip;
      h = clip;
    }
  }
  // Uniform redistribution; the remainder goes to evenly spaced bins.
  const int each = excess / 256;
  const int rest = excess % 256;
  for (int& h : hist) h += each;
  if (rest) {
    const int step = std::max(1, 256 / rest);
    for (int v = 0, left = rest; v < 256 && left > 0; v += step, --left) ++hist[static_cast<std::size_t>(v)];
  }
  std::array<int, 256> lut{};
  long long cdf = 0;
  for (int v = 0; v < 256; ++v) {
    cdf += hist[static_cast<std::size_t>(v)];
    lut[static_cast<std::size_t>(v)] = static_cast<int>(std::lround(static_cast<double>(cdf) * 255.0 / area));
  }
  return lut;
}

}  // namespace

std::string to_string(ContrastOp op) { return op == ContrastOp::clahe ? "clahe" : "percentile"; }

ContrastOp parse_contrast_op(const std::string& text) {
  if (text == "clahe") return ContrastOp::clahe;
  if (text == "percentile" || text == "percentile_remap") return ContrastOp::percentile_remap;
  throw ConfigError("unknown contrast op '" + text + "' (expected clahe or percentile)");
}

void AugmentPlan::validate() const {
  if (plain_rotations < 0 || plain_rotations > 3) throw ConfigError("plain rotations must lie in 0..3");
  if (contrast_rotations < 0) throw ConfigError("contrast rotations must be >= 0");
  if (contrast_rotations > 0 && contrast_ops.empty()) throw ConfigError("contrast rotations need at least one op");
  if (strip_min < 1 || strip_max < strip_min) throw ConfigError("strip count range must satisfy 1 <= min <= max");
  if (clahe.tiles_x < 1 || clahe.tiles_y < 1) throw ConfigError("CLAHE tile grid must be positive");
  if (!(clahe.clip_limit >= 1.0)) throw ConfigError("CLAHE clip limit must be >= 1");
  if (!(low_percentile >= 0.0 && low_percentile < high_percentile && high_percentile <= 100.0)) {
    throw ConfigError("percentiles must satisfy 0 <= low < high <= 100");
  }
}

std::size_t AugmentPlan::expansion_factor() const {
  const std::size_t orientations = 1 + static_cast<std::size_t>(plain_rotations);
  const std::size_t contrast = static_cast<std::size_t>(contrast_rotations);
  return orientations + contrast + orientations + (shuffle_contrast_variants ? contrast : 0);
}

ImagePair rotate90(const ImagePair& pair, int k) { return {rotate90(pair.image, k), rotate90(pair.mask, k)}; }

GrayImage clahe(const GrayImage& image, const ClaheOptions& options) {
  if (options.tiles_x < 1 || options.tiles_y < 1) throw ConfigError("CLAHE tile grid must be positive");
  if (!(options.clip_limit >= 1.0)) throw ConfigError("CLAHE clip limit must be >= 1");
  const int rows = image.rows();
  const int cols = image.cols();
  const int ty = std::min(options.tiles_y, rows);
  const int tx = std::min(options.tiles_x, cols);
  const int th = (rows + ty - 1) / ty;
  const int tw = (cols + tx - 1) / tx;

  GrayImage padded(th * ty, tw * tx);
  for (int r = 0; r < padded.rows(); ++r) {
    for (int c = 0; c < padded.cols(); ++c) padded(r, c) = image(reflect(r, rows), reflect(c, cols));
  }
  std::vector<std::array<int, 256>> luts;
  luts.reserve(static_cast<std::size_t>(tx * ty));
  for (int j = 0; j < ty; ++j) {
    for (int i = 0; i < tx; ++i) luts.push_back(tile_lut(padded, j * th, i * tw, th, tw, options.clip_limit));
  }

  GrayImage out(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const double yf = (r + 0.5) / th - 0.5;
    int y1 = static_cast<int>(std::floor(yf));
    const double ya = yf - y1;
    int y2 = y1 + 1;
    y1 = std::clamp(y1, 0, ty - 1);
    y2 = std::clamp(y2, 0, ty - 1);
    for (int c = 0; c < cols; ++c) {
      const double xf = (c + 0.5) / tw - 0.5;
      int x1 = static_cast<int>(std::floor(xf));
      const double xa = xf - x1;
      int x2 = x1 + 1;
      x1 = std::clamp(x1, 0, tx - 1);
      x2 = std::clamp(x2, 0, tx - 1);
      const std::size_t v = image(r, c);
      const auto& a = luts[static_cast<std::size_t>(y1 * tx + x1)];
      const auto& b = luts[static_cast<std::size_t>(y1 * tx + x2)];
      const auto& cc = luts[static_cast<std::size_t>(y2 * tx + x1)];
      const auto& d = luts[static_cast<std::size_t>(y2 * tx + x2)];
      const double top = (1 - xa) * a[v] + xa * b[v];
      const double bottom = (1 - xa) * cc[v] + xa * d[v];
      const double val = (1 - ya) * top + ya * bottom;
      out(r, c) = static_cast<std::uint8_t>(std::clamp(std::lround(val), 0L, 255L));
    }
  }
  return out;
}

GrayImage percentile_remap(const GrayImage& image, double low, double high) {
  if (!(low >= 0.0 && low < high && high <= 100.0)) {
    throw ConfigError("percentiles must satisfy 0 <= low < high <= 100");
  }
  if (image.size() == 0) return image;
  std::array<std::size_t, 256> hist{};
  for (auto v : image.pixels()) ++hist[v];
  const double n = static_cast<double>(image.size());
  // Nearest-rank percentile: smallest value whose CDF reaches p% of pixels.
  auto percentile = [&](double p) {
    const double need = std::max(1.0, std::ceil(p / 100.0 * n));
    double cdf = 0.0;
    for (int v = 0; v < 256; ++v) {
      cdf += static_cast<double>(hist[static_cast<std::size_t>(v)]);
      if (cdf >= need) return v;
    }
    return 255;
  };
  const int lo = percentile(low);
  const int hi = percentile(high);
  if (hi <= lo) return image;
  GrayImage out(image.rows(), image.cols());
  const double scale = 255.0 / (hi - lo);
  for (std::size_t i = 0; i < image.size(); ++i) {
    const long v = std::lround((image[i] - lo) * scale);
    out[i] = static_cast<std::uint8_t>(std::clamp(v, 0L, 255L));
  }
  return out;
}

std::vector<int> strip_boundaries(int rows, std::uint64_t seed, int min_strips, int max_strips) {
  if (rows < 1) throw ShapeError("strip shuffle needs at least one row");
  if (min_strips < 1 || max_strips < min_strips) throw ConfigError("strip count range must satisfy 1 <= min <= max");
  Rng rng(seed);
  const int hi = std::min(max_strips, rows);
  const int lo = std::min(min_strips, hi);
  const int count = static_cast<int>(rng.uniform_int(lo, hi));
  std::vector<int> cuts(static_cast<std::size_t>(rows - 1));
  std::iota(cuts.begin(), cuts.end(), 1);
  rng.shuffle(cuts.begin(), cuts.end());
  cuts.resize(static_cast<std::size_t>(count - 1));
  cuts.push_back(0);
  cuts.push_back(rows);
  std::sort(cuts.begin(), cuts.end());
  return cuts;
}

ImagePair strip_shuffle(const ImagePair& pair, std::uint64_t seed, int min_strips, int max_strips) {
  require_same_extents(pair.image, pair.mask, "strip_shuffle");
  const std::vector<int> bounds = strip_boundaries(pair.image.rows(), seed, min_strips, max_strips);
  std::vector<int> order(bounds.size() - 1);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, 1));
  rng.shuffle(order.begin(), order.end());

  const int cols = pair.image.cols();
  ImagePair out{GrayImage(pair.image.rows(), cols), BinaryMask(pair.mask.rows(), cols)};
  int dst = 0;
  for (int s : order) {
    for (int r = bounds[static_cast<std::size_t>(s)]; r < bounds[static_cast<std::size_t>(s) + 1]; ++r, ++dst) {
      for (int c = 0; c < cols; ++c) {
        out.image(dst, c) = pair.image(r, c);
        out.mask(dst, c) = pair.mask(r, c);
      }
    }
  }
  return out;
}

std::vector<AugmentedPair> expand(const ImagePair& pair, const AugmentPlan& plan) {
  plan.validate();
  require_same_extents(pair.image, pair.mask, "expand");
  std::vector<AugmentedPair> out;
  out.reserve(plan.expansion_factor());
  std::uint64_t stream = 0;
  auto shuffled = [&](const AugmentedPair& src) {
    return AugmentedPair{strip_shuffle(src.pair, mix_seed(plan.seed, stream++), plan.strip_min, plan.strip_max),
                         "shuffle-" + src.tag};
  };

  std::vector<AugmentedPair> plain;
  for (int k = 0; k <= plan.plain_rotations; ++k) {
    plain.push_back({rotate90(pair, k), k == 0 ? "original" : "rot" + std::to_string(k)});
  }
  std::vector<AugmentedPair> contrast;
  for (int i = 0; i < plan.contrast_rotations; ++i) {
    const int k = (i + 1) % 4;
    const ContrastOp op = plan.contrast_ops[static_cast<std::size_t>(i) % plan.contrast_ops.size()];
    const ImagePair rotated = rotate90(pair, k);
    GrayImage adjusted = op == ContrastOp::clahe
                             ? clahe(rotated.image, plan.clahe)
                             : percentile_remap(rotated.image, plan.low_percentile, plan.high_percentile);
    contrast.push_back({{std::move(adjusted), rotated.mask}, to_string(op) + "-rot" + std::to_string(k)});
  }
  for (const auto& p : plain) out.push_back(p);
  for (const auto& p : contrast) out.push_back(p);
  for (const auto& p : plain) out.push_back(shuffled(p));
  if (plan.shuffle_contrast_variants) {
    for (const auto& p : contrast) out.push_back(shuffled(p));
  }
  return out;
}

std::vector<AugmentedPair> expand_all(const std::vector<ImagePair>& pairs, const AugmentPlan& plan) {
  std::vector<AugmentedPair> out;
  out.reserve(pairs.size() * plan.expansion_factor());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    AugmentPlan p = plan;
    p.seed = mix_seed(plan.seed, i);
    for (auto& a : expand(pairs[i], p)) out.push_back(std::move(a));
  }
  return out;
}

}  // namespace octaquant::augment
