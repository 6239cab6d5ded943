#include "octaquant/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "octaquant/error.hpp"
#include "octaquant/morphology.hpp"
#include "octaquant/random.hpp"

namespace octaquant::phantom {
namespace {

constexpr double kPi = std::numbers::pi;

// Stream ids under the item seed.
enum Stream : std::uint64_t { kVessels = 1, kBands = 2, kNoise = 3, kIllumination = 4, kLesions = 5, kSpacingField = 6 };

bool in_disk(double r, double c, double cr, double cc, double radius) {
  return (r - cr) * (r - cr) + (c - cc) * (c - cc) <= radius * radius;
}

class Canvas {
 public:
  explicit Canvas(const PhantomSpec& spec)
      : spec_(spec), mask_(spec.rows, spec.cols, 0), cr_((spec.rows - 1) / 2.0), cc_((spec.cols - 1) / 2.0) {}

  bool forbidden(int r, int c) const {
    return spec_.faz_radius_px > 0.0 && in_disk(r, c, cr_, cc_, spec_.faz_radius_px);
  }

  // Disk brush of diameter `width` centred at a sub-pixel position.
  void brush(double y, double x, double width) {
    const double rad = std::max(0.5, width / 2.0);
    const int r0 = static_cast<int>(std::floor(y - rad));
    const int r1 = static_cast<int>(std::ceil(y + rad));
    const int c0 = static_cast<int>(std::floor(x - rad));
    const int c1 = static_cast<int>(std::ceil(x + rad));
    for (int r = std::max(0, r0); r <= std::min(spec_.rows - 1, r1); ++r) {
      for (int c = std::max(0, c0); c <= std::min(spec_.cols - 1, c1); ++c) {
        if (!in_disk(r, c, y, x, rad) || forbidden(r, c) || mask_(r, c)) continue;
        mask_(r, c) = 1;
        ++count_;
      }
    }
  }

  std::size_t count() const { return count_; }
  BinaryMask& mask() { return mask_; }
  double center_row() const { return cr_; }
  double center_col() const { return cc_; }

 private:
  const PhantomSpec& spec_;
  BinaryMask mask_;
  std::size_t count_ = 0;
  double cr_;
  double cc_;
};

// Uniform bucket grid over the image for radius queries on points.
class PointGrid {
 public:
  PointGrid(int rows, int cols, double cell)
      : cell_(cell),
        gr_(std::max(1, static_cast<int>(std::ceil(rows / cell)) + 1)),
        gc_(std::max(1, static_cast<int>(std::ceil(cols / cell)) + 1)),
        buckets_(static_cast<std::size_t>(gr_) * gc_) {}

  void insert(int id, double y, double x) { buckets_[index(y, x)].push_back(id); }

  template <typename F>
  void visit(double y, double x, double radius, F&& f) const {
    const int r0 = std::max(0, static_cast<int>(std::floor((y - radius) / cell_)));
    const int r1 = std::min(gr_ - 1, static_cast<int>(std::floor((y + radius) / cell_)));
    const int c0 = std::max(0, static_cast<int>(std::floor((x - radius) / cell_)));
    const int c1 = std::min(gc_ - 1, static_cast<int>(std::floor((x + radius) / cell_)));
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        for (int id : buckets_[static_cast<std::size_t>(r) * gc_ + c]) f(id);
      }
    }
  }

 private:
  std::size_t index(double y, double x) const {
    const int r = std::clamp(static_cast<int>(std::floor(y / cell_)), 0, gr_ - 1);
    const int c = std::clamp(static_cast<int>(std::floor(x / cell_)), 0, gc_ - 1);
    return static_cast<std::size_t>(r) * gc_ + c;
  }
  double cell_;
  int gr_;
  int gc_;
  std::vector<std::vector<int>> buckets_;
};

// Zero-mean, roughly unit-variance Gaussian field, bilinear over a coarse
// lattice with cells of a few capillary spacings.
class SmoothField {
 public:
  SmoothField(const PhantomSpec& spec, double spacing) : cell_(6.0 * spacing) {
    if (!(spec.spacing_variation > 0.0)) return;
    gr_ = static_cast<int>(std::ceil(spec.rows / cell_)) + 2;
    gc_ = static_cast<int>(std::ceil(spec.cols / cell_)) + 2;
    Rng rng(mix_seed(spec.seed, kSpacingField));
    values_.resize(static_cast<std::size_t>(gr_) * gc_);
    for (double& v : values_) v = rng.normal();
  }

  double operator()(double y, double x) const {
    if (values_.empty()) return 0.0;
    const double fy = y / cell_;
    const double fx = x / cell_;
    const int r = std::min(gr_ - 2, static_cast<int>(fy));
    const int c = std::min(gc_ - 2, static_cast<int>(fx));
    const double ty = fy - r;
    const double tx = fx - c;
    auto at = [&](int i, int j) { return values_[static_cast<std::size_t>(i) * gc_ + j]; };
    const double v = (1 - ty) * ((1 - tx) * at(r, c) + tx * at(r, c + 1)) +
                     ty * ((1 - tx) * at(r + 1, c) + tx * at(r + 1, c + 1));
    // Bilinear blending shrinks the variance; 1.5 restores it on average.
    return 1.5 * v;
  }

 private:
  double cell_;
  int gr_ = 0;
  int gc_ = 0;
  std::vector<double> values_;
};

struct Node {
  double y;
  double x;
  int parent;
  int depth;
};

// Space colonization from border roots toward jittered attraction points,
// closed into a network by short anastomoses between nearby branch tips.
// Widths follow a pipe law on the number of downstream tips.
BinaryMask colonize(const PhantomSpec& spec, double spacing) {
  Rng rng(mix_seed(spec.seed, kVessels));
  const int rows = spec.rows;
  const int cols = spec.cols;
  const double cr = (rows - 1) / 2.0;
  const double cc = (cols - 1) / 2.0;
  const double influence = 4.0 * spacing;
  const double kill = 0.9 * spacing;
  const double step = 1.5;

  struct Attractor {
    double y;
    double x;
    bool alive;
  };
  std::vector<Attractor> attractors;
  PointGrid agrid(rows, cols, influence);
  // Jittered candidates on a grid fine enough for the densest patch, thinned
  // so the local spacing follows spacing * exp(sigma * g).
  const double sigma = spec.spacing_variation;
  const double fine = spacing * std::exp(-2.0 * sigma);
  const SmoothField field(spec, spacing);
  for (double y0 = 0; y0 < rows; y0 += fine) {
    for (double x0 = 0; x0 < cols; x0 += fine) {
      const double y = std::min(rows - 1.0, y0 + rng.uniform(0, fine));
      const double x = std::min(cols - 1.0, x0 + rng.uniform(0, fine));
      if (sigma > 0.0) {
        const double local = spacing * std::exp(sigma * field(y, x));
        if (rng.uniform() >= (fine / local) * (fine / local)) continue;
      }
      if (spec.faz_radius_px > 0.0 && in_disk(y, x, cr, cc, spec.faz_radius_px + spacing / 2)) continue;
      agrid.insert(static_cast<int>(attractors.size()), y, x);
      attractors.push_back({y, x, true});
    }
  }

  std::vector<Node> nodes;
  PointGrid ngrid(rows, cols, influence);
  auto add_node = [&](double y, double x, int parent) {
    const int id = static_cast<int>(nodes.size());
    nodes.push_back({y, x, parent, parent < 0 ? 0 : nodes[static_cast<std::size_t>(parent)].depth + 1});
    ngrid.insert(id, y, x);
    agrid.visit(y, x, kill, [&](int a) {
      Attractor& at = attractors[static_cast<std::size_t>(a)];
      if (at.alive && in_disk(at.y, at.x, y, x, kill)) at.alive = false;
    });
    return id;
  };

  const int roots = 4 + std::max(rows, cols) / 96;
  const double perimeter = 2.0 * (rows + cols - 2);
  const double offset = rng.uniform(0, perimeter);
  for (int k = 0; k < roots; ++k) {
    double t = std::fmod(offset + (k + rng.uniform(-0.3, 0.3)) * perimeter / roots + perimeter, perimeter);
    double y, x;
    if (t < cols - 1) {
      y = 0, x = t;
    } else if ((t -= cols - 1) < rows - 1) {
      y = t, x = cols - 1;
    } else if ((t -= rows - 1) < cols - 1) {
      y = rows - 1, x = cols - 1 - t;
    } else {
      t -= cols - 1;
      y = rows - 1 - t, x = 0;
    }
    add_node(y, x, -1);
  }

  std::vector<double> dir_y, dir_x;
  std::vector<int> pulls;
  for (int iter = 0; iter < 20000; ++iter) {
    dir_y.assign(nodes.size(), 0.0);
    dir_x.assign(nodes.size(), 0.0);
    pulls.assign(nodes.size(), 0);
    bool any_alive = false;
    bool any_pull = false;
    for (const Attractor& at : attractors) {
      if (!at.alive) continue;
      any_alive = true;
      int best = -1;
      double best_d = influence * influence;
      ngrid.visit(at.y, at.x, influence, [&](int n) {
        const Node& nd = nodes[static_cast<std::size_t>(n)];
        const double d = (nd.y - at.y) * (nd.y - at.y) + (nd.x - at.x) * (nd.x - at.x);
        if (d < best_d) {
          best_d = d;
          best = n;
        }
      });
      if (best < 0) continue;
      const double len = std::sqrt(best_d);
      if (len <= 0.0) continue;
      dir_y[static_cast<std::size_t>(best)] += (at.y - nodes[static_cast<std::size_t>(best)].y) / len;
      dir_x[static_cast<std::size_t>(best)] += (at.x - nodes[static_cast<std::size_t>(best)].x) / len;
      ++pulls[static_cast<std::size_t>(best)];
      any_pull = true;
    }
    if (!any_alive) break;
    if (!any_pull) {
      // Nothing in reach: extend the node closest to any live attractor.
      double best_d = 1e300;
      int best_n = -1;
      std::size_t best_a = 0;
      for (std::size_t a = 0; a < attractors.size(); ++a) {
        if (!attractors[a].alive) continue;
        for (std::size_t n = 0; n < nodes.size(); ++n) {
          const double d = (nodes[n].y - attractors[a].y) * (nodes[n].y - attractors[a].y) +
                           (nodes[n].x - attractors[a].x) * (nodes[n].x - attractors[a].x);
          if (d < best_d) {
            best_d = d;
            best_n = static_cast<int>(n);
            best_a = a;
          }
        }
      }
      const double len = std::sqrt(best_d);
      dir_y[static_cast<std::size_t>(best_n)] = (attractors[best_a].y - nodes[static_cast<std::size_t>(best_n)].y) / len;
      dir_x[static_cast<std::size_t>(best_n)] = (attractors[best_a].x - nodes[static_cast<std::size_t>(best_n)].x) / len;
      pulls[static_cast<std::size_t>(best_n)] = 1;
    }
    const std::size_t existing = nodes.size();
    for (std::size_t n = 0; n < existing; ++n) {
      if (!pulls[n]) continue;
      double dy = dir_y[n] + 0.3 * rng.normal();
      double dx = dir_x[n] + 0.3 * rng.normal();
      const double len = std::hypot(dy, dx);
      if (len < 1e-9) continue;
      dy /= len;
      dx /= len;
      const double ny = std::clamp(nodes[n].y + step * dy, 0.0, rows - 1.0);
      const double nx = std::clamp(nodes[n].x + step * dx, 0.0, cols - 1.0);
      add_node(ny, nx, static_cast<int>(n));
    }
  }

  // Tips per subtree; nodes are stored after their parents.
  std::vector<int> children(nodes.size(), 0);
  for (const Node& nd : nodes) {
    if (nd.parent >= 0) ++children[static_cast<std::size_t>(nd.parent)];
  }
  std::vector<double> tips(nodes.size(), 0.0);
  for (std::size_t n = nodes.size(); n-- > 0;) {
    if (!children[n]) tips[n] = 1.0;
    if (nodes[n].parent >= 0) tips[static_cast<std::size_t>(nodes[n].parent)] += tips[n];
  }

  Canvas canvas(spec);
  auto segment = [&](double y0, double x0, double y1, double x1, double width) {
    const double len = std::hypot(y1 - y0, x1 - x0);
    const int steps = std::max(1, static_cast<int>(std::ceil(len / 0.5)));
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / steps;
      canvas.brush(y0 + t * (y1 - y0), x0 + t * (x1 - x0), width);
    }
  };
  for (std::size_t n = 0; n < nodes.size(); ++n) {
    const Node& nd = nodes[n];
    if (nd.parent < 0) continue;
    const Node& p = nodes[static_cast<std::size_t>(nd.parent)];
    const double width =
        std::min(spec.trunk_width_px, spec.capillary_width_px * std::cbrt(std::max(1.0, tips[n] / 8.0)));
    segment(p.y, p.x, nd.y, nd.x, width);
  }

  // Perifoveal capillary ring closing off the FAZ.
  if (spec.faz_radius_px > 0.0) {
    const double ring = spec.faz_radius_px + spec.capillary_width_px / 2.0 + 0.5;
    const int steps = std::max(16, static_cast<int>(std::ceil(4 * kPi * ring)));
    for (int i = 0; i < steps; ++i) {
      const double a = 2 * kPi * i / steps;
      canvas.brush(cr + ring * std::sin(a), cc + ring * std::cos(a), spec.capillary_width_px);
    }
  }

  // Anastomoses: join every tip, and a fraction of interior nodes, to the
  // nearest node of a distant branch.
  // Two nodes are on the same local branch when their common ancestor is
  // within `hops` steps of both.
  std::vector<int> trail;
  auto nearby_in_tree = [&](int a, int b, int hops) {
    trail.clear();
    for (int h = 0; h < hops && a >= 0; ++h, a = nodes[static_cast<std::size_t>(a)].parent) trail.push_back(a);
    for (int h = 0; h < hops && b >= 0; ++h, b = nodes[static_cast<std::size_t>(b)].parent) {
      if (std::find(trail.begin(), trail.end(), b) != trail.end()) return true;
    }
    return false;
  };
  for (std::size_t n = 0; n < nodes.size(); ++n) {
    if (nodes[n].parent < 0) continue;
    const bool bridge = rng.uniform() < 0.12;
    if (children[n] && !bridge) continue;
    int best = -1;
    double best_d = (2.0 * spacing) * (2.0 * spacing);
    ngrid.visit(nodes[n].y, nodes[n].x, 2.0 * spacing, [&](int m) {
      if (static_cast<std::size_t>(m) == n) return;
      const Node& o = nodes[static_cast<std::size_t>(m)];
      const double d = (o.y - nodes[n].y) * (o.y - nodes[n].y) + (o.x - nodes[n].x) * (o.x - nodes[n].x);
      if (d >= best_d) return;
      // Skip the node's own branch.
      if (nearby_in_tree(static_cast<int>(n), m, 20)) return;
      best_d = d;
      best = m;
    });
    if (best >= 0) {
      const Node& o = nodes[static_cast<std::size_t>(best)];
      segment(nodes[n].y, nodes[n].x, o.y, o.x, spec.capillary_width_px);
    }
  }
  return canvas.mask();
}

BinaryMask grow_trees(const PhantomSpec& spec) {
  // Vessel density scales roughly as width / spacing; a few secant steps
  // on the spacing hit the target.
  const double target = spec.vessel_density_target;
  double spacing = std::max(2.0, 1.2 * spec.capillary_width_px / target);
  BinaryMask best;
  double best_err = 1e300;
  for (int attempt = 0; attempt < 4; ++attempt) {
    BinaryMask m = colonize(spec, spacing);
    const double got = static_cast<double>(count_true(m)) / static_cast<double>(m.size());
    const double err = std::abs(got - target);
    if (err < best_err) {
      best_err = err;
      best = std::move(m);
    }
    if (err < 0.03 * target || got <= 0.0) break;
    spacing = std::max(1.5, spacing * got / target);
  }
  return best;
}

// Lloyd-relaxed Voronoi edges; the number of cells is searched so the mesh
// hits the density target.
BinaryMask voronoi_mesh(const PhantomSpec& spec, const BinaryMask& base) {
  const int rows = spec.rows;
  const int cols = spec.cols;
  Rng rng(mix_seed(spec.seed, kVessels));
  const double area = static_cast<double>(rows) * cols;
  const double w = std::max(1.0, spec.capillary_width_px);
  // Hexagonal estimate: edge length ~ 1.86 sqrt(n A), density ~ length * w / A.
  const double guess = std::pow(spec.vessel_density_target * area / (1.86 * w), 2) / area;
  const int max_cells = std::max(8, static_cast<int>(guess * 4));
  std::vector<std::pair<double, double>> pool(static_cast<std::size_t>(max_cells));
  for (auto& p : pool) p = {rng.uniform(0, rows), rng.uniform(0, cols)};
  const double cr = (rows - 1) / 2.0;
  const double cc = (cols - 1) / 2.0;
  const int extra = static_cast<int>(std::lround(std::max(0.0, (w - 2.0) / 2.0)));

  LabelMap owner(rows, cols, 0);
  auto assign = [&](const std::vector<std::pair<double, double>>& seeds) {
    const double cell = std::max(2.0, std::sqrt(area / static_cast<double>(seeds.size())));
    PointGrid grid(rows, cols, cell);
    for (std::size_t k = 0; k < seeds.size(); ++k) grid.insert(static_cast<int>(k), seeds[k].first, seeds[k].second);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        // Every seed within `radius` is visited, so a hit at distance
        // <= radius is the true nearest.
        for (double radius = 1.5 * cell;; radius *= 2.0) {
          double best = 1e300;
          int who = -1;
          grid.visit(r, c, radius, [&](int k) {
            const auto& sd = seeds[static_cast<std::size_t>(k)];
            const double d = (sd.first - r) * (sd.first - r) + (sd.second - c) * (sd.second - c);
            if (d < best || (d == best && k < who)) {
              best = d;
              who = k;
            }
          });
          if (who >= 0 && best <= radius * radius) {
            owner(r, c) = who;
            break;
          }
        }
      }
    }
  };

  auto render = [&](int n) {
    std::vector<std::pair<double, double>> seeds(pool.begin(), pool.begin() + n);
    for (int iter = 0; iter < 3; ++iter) {
      assign(seeds);
      std::vector<double> sr(seeds.size(), 0.0), sc(seeds.size(), 0.0), cnt(seeds.size(), 0.0);
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
          const auto k = static_cast<std::size_t>(owner(r, c));
          sr[k] += r;
          sc[k] += c;
          cnt[k] += 1;
        }
      }
      for (std::size_t k = 0; k < seeds.size(); ++k) {
        if (cnt[k] > 0) seeds[k] = {sr[k] / cnt[k], sc[k] / cnt[k]};
      }
    }
    assign(seeds);
    BinaryMask edges(rows, cols, 0);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        const int o = owner(r, c);
        const bool edge = (r > 0 && owner(r - 1, c) != o) || (c > 0 && owner(r, c - 1) != o) ||
                          (r + 1 < rows && owner(r + 1, c) != o) || (c + 1 < cols && owner(r, c + 1) != o);
        edges(r, c) = edge ? 1 : 0;
      }
    }
    if (extra > 0) edges = morph::dilate_disk(edges, extra);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        if (base(r, c)) edges(r, c) = 1;
        if (spec.faz_radius_px > 0.0 && in_disk(r, c, cr, cc, spec.faz_radius_px)) edges(r, c) = 0;
      }
    }
    return edges;
  };

  // Mesh density grows like sqrt(cells): secant steps on that model.
  const double want = spec.vessel_density_target * area;
  int n = std::clamp(static_cast<int>(std::lround(guess)), 1, max_cells);
  BinaryMask best_mask;
  double best_err = 1e300;
  for (int iter = 0; iter < 5; ++iter) {
    BinaryMask m = render(n);
    const double got = static_cast<double>(count_true(m));
    const double err = std::abs(got - want);
    if (err < best_err) {
      best_err = err;
      best_mask = std::move(m);
    }
    if (err < 0.02 * want || got <= 0.0) break;
    const int next = std::clamp(static_cast<int>(std::lround(n * (want / got) * (want / got))), 1, max_cells);
    if (next == n) break;
    n = next;
  }
  return best_mask;
}

BinaryMask draw_bands(const PhantomSpec& spec) {
  BinaryMask bands(spec.rows, spec.cols, 0);
  if (spec.style != Style::dvc || spec.projection_band_count <= 0) return bands;
  Rng rng(mix_seed(spec.seed, kBands));
  const double half = spec.projection_band_width_px / 2.0;
  for (int b = 0; b < spec.projection_band_count; ++b) {
    const double center = rng.uniform(half, std::max(half, spec.rows - half));
    const double slope = rng.uniform(-0.05, 0.05);
    const double amp = rng.uniform(0.0, 3.0);
    const double phase = rng.uniform(0.0, 2 * kPi);
    for (int c = 0; c < spec.cols; ++c) {
      const double mid = center + slope * (c - spec.cols / 2.0) + amp * std::sin(phase + c * 2 * kPi / spec.cols);
      for (int r = 0; r < spec.rows; ++r) {
        if (std::abs(r - mid) <= half) bands(r, c) = 1;
      }
    }
  }
  return bands;
}

}  // namespace

std::string to_string(Style s) { return s == Style::scp ? "scp" : "dvc"; }

Style parse_style(const std::string& text) {
  if (text == "scp" || text == "SCP") return Style::scp;
  if (text == "dvc" || text == "DVC") return Style::dvc;
  throw ConfigError("unknown phantom style '" + text + "' (expected scp or dvc)");
}

void PhantomSpec::validate() const {
  if (rows < 8 || cols < 8) throw ConfigError("phantom extents must be at least 8x8");
  if (!(vessel_density_target > 0.0 && vessel_density_target < 1.0)) {
    throw ConfigError("vessel density target must lie in (0,1)");
  }
  if (!(speckle_snr > 0.0)) throw ConfigError("speckle SNR must be positive");
  if (frames_to_average < 1) throw ConfigError("frames to average must be >= 1");
  if (faz_radius_px < 0.0) throw ConfigError("FAZ radius must be >= 0");
  if (projection_band_count < 0) throw ConfigError("projection band count must be >= 0");
  if (!(projection_band_width_px > 0.0)) throw ConfigError("projection band width must be positive");
  if (!(capillary_width_px >= 1.0 && trunk_width_px >= capillary_width_px)) {
    throw ConfigError("vessel widths must satisfy 1 <= capillary <= trunk");
  }
  if (!(spacing_variation >= 0.0 && spacing_variation <= 1.5)) {
    throw ConfigError("spacing variation must lie in [0,1.5]");
  }
  if (!(vessel_level > background_level && background_level > 0.0 && vessel_level <= 1.0)) {
    throw ConfigError("intensity levels must satisfy 0 < background < vessel <= 1");
  }
  if (!(illumination_variation >= 0.0 && illumination_variation < 1.0)) {
    throw ConfigError("illumination variation must lie in [0,1)");
  }
  for (const Lesion& l : lesions) {
    if (!(l.radius > 0.0)) throw ConfigError("lesion radius must be positive");
  }
}

Truth generate_truth(const PhantomSpec& spec) {
  spec.validate();
  Truth t;
  t.bands = draw_bands(spec);
  t.mask = spec.style == Style::scp ? grow_trees(spec) : voronoi_mesh(spec, t.bands);
  for (std::size_t i = 0; i < t.bands.size(); ++i) t.bands[i] = t.bands[i] && t.mask[i];
  for (const Lesion& l : spec.lesions) {
    for (int r = 0; r < spec.rows; ++r) {
      for (int c = 0; c < spec.cols; ++c) {
        if (in_disk(r, c, l.row, l.col, l.radius)) {
          t.mask(r, c) = 0;
          t.bands(r, c) = 0;
        }
      }
    }
  }
  return t;
}

Frames render_frames(const BinaryMask& truth, const PhantomSpec& spec) {
  spec.validate();
  const int rows = truth.rows();
  const int cols = truth.cols();
  Rng light(mix_seed(spec.seed, kIllumination));
  const double theta = light.uniform(0.0, 2 * kPi);
  const double ct = std::cos(theta);
  const double st = std::sin(theta);
  std::vector<double> clean(truth.size());
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      // Linear falloff across the field in a random direction.
      const double u = std::clamp(0.5 + ct * (r / double(rows) - 0.5) + st * (c / double(cols) - 0.5), 0.0, 1.0);
      const double gain = 1.0 - spec.illumination_variation * u;
      clean[static_cast<std::size_t>(r) * cols + c] =
          255.0 * gain * (truth(r, c) ? spec.vessel_level : spec.background_level);
    }
  }
  Rng noise(mix_seed(spec.seed, kNoise));
  const double shape = spec.speckle_snr * spec.speckle_snr;
  std::vector<double> sum(truth.size(), 0.0);
  Frames f{GrayImage(rows, cols), GrayImage(rows, cols)};
  for (int k = 0; k < spec.frames_to_average; ++k) {
    for (std::size_t i = 0; i < clean.size(); ++i) {
      const double v = std::min(255.0, clean[i] * noise.unit_gamma(shape));
      sum[i] += v;
      if (k == 0) f.single[i] = static_cast<std::uint8_t>(std::lround(v));
    }
  }
  for (std::size_t i = 0; i < sum.size(); ++i) {
    f.averaged[i] = static_cast<std::uint8_t>(std::lround(sum[i] / spec.frames_to_average));
  }
  return f;
}

PhantomItem generate(const PhantomSpec& spec) {
  PhantomItem item;
  item.spec = spec;
  item.truth = generate_truth(spec);
  item.frames = render_frames(item.truth.mask, spec);
  item.tag = spec.lesions.empty() ? "control" : "lesion";
  return item;
}

std::vector<Lesion> place_lesions(const PhantomSpec& spec, int count, double radius, std::uint64_t seed) {
  if (count < 0 || !(radius > 0.0)) throw ConfigError("lesions need count >= 0 and positive radius");
  Rng rng(mix_seed(seed, kLesions));
  const double cr = (spec.rows - 1) / 2.0;
  const double cc = (spec.cols - 1) / 2.0;
  std::vector<Lesion> out;
  for (int attempt = 0; attempt < 10000 && static_cast<int>(out.size()) < count; ++attempt) {
    const Lesion l{rng.uniform(radius, spec.rows - radius), rng.uniform(radius, spec.cols - radius), radius};
    // Stay clear of the FAZ and of the central window searched for it.
    const double keep_out = std::max(spec.faz_radius_px, 0.1 * std::sqrt(2.0) * std::min(spec.rows, spec.cols));
    const double margin = std::max(4.0, 0.08 * std::min(spec.rows, spec.cols));
    if (std::hypot(l.row - cr, l.col - cc) < keep_out + radius + margin) continue;
    bool overlaps = false;
    for (const Lesion& o : out) overlaps |= std::hypot(l.row - o.row, l.col - o.col) < l.radius + o.radius;
    if (!overlaps) out.push_back(l);
  }
  if (static_cast<int>(out.size()) < count) throw ConfigError("cannot place lesions: image too small");
  return out;
}

std::vector<PhantomItem> generate_dataset(const PhantomSpec& base, const CohortOptions& options) {
  if (options.count < 1) throw ConfigError("cohort count must be >= 1");
  if (options.lesion_count < 0 || options.lesion_count > options.count) {
    throw ConfigError("lesion count must lie in [0, count]");
  }
  std::vector<PhantomItem> items;
  items.reserve(static_cast<std::size_t>(options.count));
  for (int i = 0; i < options.count; ++i) {
    PhantomSpec spec = base;
    spec.seed = mix_seed(options.seed, static_cast<std::uint64_t>(i));
    spec.lesions.clear();
    if (i < options.lesion_count) {
      spec.lesions = place_lesions(spec, options.lesions_per_item, options.lesion_radius_px, spec.seed);
    }
    items.push_back(generate(spec));
  }
  return items;
}

}  // namespace octaquant::phantom
