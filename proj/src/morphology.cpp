#include "octaquant/morphology.hpp"

#include <numeric>
#include <string>

namespace octaquant::morph {
namespace {

int find_root(std::vector<int>& parent, int x) {
  while (parent[static_cast<std::size_t>(x)] != x) {
    parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
    x = parent[static_cast<std::size_t>(x)];
  }
  return x;
}

void unite(std::vector<int>& parent, int a, int b) {
  a = find_root(parent, a);
  b = find_root(parent, b);
  if (a == b) return;
  // Smaller provisional label wins so roots follow scan order.
  if (a < b) {
    parent[static_cast<std::size_t>(b)] = a;
  } else {
    parent[static_cast<std::size_t>(a)] = b;
  }
}

// Lower envelope of parabolas over the finite entries of f (Felzenszwalb &
// Huttenlocher). Integer inputs give exact integer outputs.
void distance_1d(const std::vector<std::int64_t>& f, std::vector<std::int64_t>& out, std::vector<int>& sites,
                 std::vector<double>& bounds) {
  const int n = static_cast<int>(f.size());
  sites.clear();
  bounds.clear();
  auto intersect = [&f](int a, int b) {
    const double fa = static_cast<double>(f[static_cast<std::size_t>(a)]) + static_cast<double>(a) * a;
    const double fb = static_cast<double>(f[static_cast<std::size_t>(b)]) + static_cast<double>(b) * b;
    return (fb - fa) / (2.0 * (b - a));
  };
  for (int q = 0; q < n; ++q) {
    if (f[static_cast<std::size_t>(q)] == kUnreachable) continue;
    while (sites.size() > 1 && intersect(sites.back(), q) <= bounds.back()) {
      sites.pop_back();
      bounds.pop_back();
    }
    if (!sites.empty()) bounds.push_back(intersect(sites.back(), q));
    sites.push_back(q);
  }
  if (sites.empty()) {
    std::fill(out.begin(), out.end(), kUnreachable);
    return;
  }
  std::size_t k = 0;
  for (int q = 0; q < n; ++q) {
    while (k < bounds.size() && bounds[k] < q) ++k;
    const std::int64_t d = q - sites[k];
    std::int64_t best = d * d + f[static_cast<std::size_t>(sites[k])];
    // Guard against rounding in the breakpoints: the neighbouring parabola
    // may tie or win by an integer margin.
    if (k + 1 < sites.size()) {
      const std::int64_t d2 = q - sites[k + 1];
      best = std::min(best, d2 * d2 + f[static_cast<std::size_t>(sites[k + 1])]);
    }
    if (k > 0) {
      const std::int64_t d0 = q - sites[k - 1];
      best = std::min(best, d0 * d0 + f[static_cast<std::size_t>(sites[k - 1])]);
    }
    out[static_cast<std::size_t>(q)] = best;
  }
}

}  // namespace

Components label_components(const BinaryMask& mask, bool foreground, Connectivity connectivity) {
  const int rows = mask.rows();
  const int cols = mask.cols();
  Components result{LabelMap(rows, cols, 0), 0, {}};
  LabelMap& labels = result.labels;
  std::vector<int> parent{0};
  auto member = [&](int r, int c) { return (mask(r, c) != 0) == foreground; };

  // First pass: provisional labels from already visited neighbours.
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (!member(r, c)) continue;
      int neighbours[4];
      int count = 0;
      if (c > 0 && labels(r, c - 1)) neighbours[count++] = labels(r, c - 1);
      if (r > 0 && labels(r - 1, c)) neighbours[count++] = labels(r - 1, c);
      if (connectivity == Connectivity::eight && r > 0) {
        if (c > 0 && labels(r - 1, c - 1)) neighbours[count++] = labels(r - 1, c - 1);
        if (c + 1 < cols && labels(r - 1, c + 1)) neighbours[count++] = labels(r - 1, c + 1);
      }
      if (count == 0) {
        const int fresh = static_cast<int>(parent.size());
        parent.push_back(fresh);
        labels(r, c) = fresh;
        continue;
      }
      int smallest = neighbours[0];
      for (int i = 1; i < count; ++i) smallest = std::min(smallest, neighbours[i]);
      labels(r, c) = smallest;
      for (int i = 0; i < count; ++i) unite(parent, smallest, neighbours[i]);
    }
  }

  // Second pass: resolve roots and renumber densely in scan order.
  std::vector<int> dense(parent.size(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int l = labels[i];
    if (!l) continue;
    const int root = find_root(parent, l);
    int& d = dense[static_cast<std::size_t>(root)];
    if (!d) {
      d = ++result.count;
      result.areas.push_back(0);
    }
    labels[i] = d;
    result.areas[static_cast<std::size_t>(d - 1)] += 1;
  }
  return result;
}

std::vector<std::int64_t> squared_distance(const BinaryMask& mask, bool target, bool outside_is_target) {
  const int pad = outside_is_target ? 1 : 0;
  const int rows = mask.rows() + 2 * pad;
  const int cols = mask.cols() + 2 * pad;
  std::vector<std::int64_t> grid(static_cast<std::size_t>(rows) * cols, kUnreachable);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int mr = r - pad;
      const int mc = c - pad;
      const bool inside = mr >= 0 && mc >= 0 && mr < mask.rows() && mc < mask.cols();
      const bool is_target = inside ? ((mask(mr, mc) != 0) == target) : true;
      if (is_target) grid[static_cast<std::size_t>(r) * cols + c] = 0;
    }
  }
  std::vector<int> sites;
  std::vector<double> bounds;
  std::vector<std::int64_t> line(static_cast<std::size_t>(rows));
  std::vector<std::int64_t> out(static_cast<std::size_t>(std::max(rows, cols)));
  for (int c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) line[static_cast<std::size_t>(r)] = grid[static_cast<std::size_t>(r) * cols + c];
    out.resize(static_cast<std::size_t>(rows));
    distance_1d(line, out, sites, bounds);
    for (int r = 0; r < rows; ++r) grid[static_cast<std::size_t>(r) * cols + c] = out[static_cast<std::size_t>(r)];
  }
  line.resize(static_cast<std::size_t>(cols));
  for (int r = 0; r < rows; ++r) {
    std::copy_n(grid.begin() + static_cast<std::ptrdiff_t>(r) * cols, cols, line.begin());
    out.resize(static_cast<std::size_t>(cols));
    distance_1d(line, out, sites, bounds);
    std::copy_n(out.begin(), cols, grid.begin() + static_cast<std::ptrdiff_t>(r) * cols);
  }
  if (!pad) return grid;
  std::vector<std::int64_t> cropped(mask.size());
  for (int r = 0; r < mask.rows(); ++r) {
    for (int c = 0; c < mask.cols(); ++c) {
      cropped[static_cast<std::size_t>(r) * mask.cols() + c] = grid[static_cast<std::size_t>(r + 1) * cols + c + 1];
    }
  }
  return cropped;
}

BinaryMask erode_disk(const BinaryMask& mask, int radius) {
  if (radius < 0) throw ConfigError("erosion radius must be >= 0");
  const auto dist = squared_distance(mask, false, true);
  const std::int64_t r2 = static_cast<std::int64_t>(radius) * radius;
  BinaryMask out(mask.rows(), mask.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dist[i] > r2 ? 1 : 0;
  return out;
}

BinaryMask dilate_disk(const BinaryMask& mask, int radius) {
  if (radius < 0) throw ConfigError("dilation radius must be >= 0");
  const auto dist = squared_distance(mask, true, false);
  const std::int64_t r2 = static_cast<std::int64_t>(radius) * radius;
  BinaryMask out(mask.rows(), mask.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dist[i] <= r2 ? 1 : 0;
  return out;
}

BinaryMask open_disk(const BinaryMask& mask, int radius) { return dilate_disk(erode_disk(mask, radius), radius); }

}  // namespace octaquant::morph
