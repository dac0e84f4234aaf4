#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cellcount/errors.hpp"
#include "cellcount/grid.hpp"

namespace cellcount {

// Integer pixel centroid. x is the column, y is the row, origin top-left.
struct Centroid {
  std::int64_t x = 0;
  std::int64_t y = 0;
  friend bool operator==(const Centroid&, const Centroid&) = default;
};

using CentroidSet = std::vector<Centroid>;

// Density maps are non-negative grids whose sum is the cell count.
using DensityMap = Grid<double>;

struct KernelConfig {
  double sigma = 3.0;   // isotropic standard deviation, pixels
  int half_width = 10;  // kernel side is 2 * half_width + 1
  // Rescale each cell's in-bounds kernel mass to 1 at image borders.
  bool renormalize_border = true;

  int side() const { return 2 * half_width + 1; }

  void validate() const {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
      throw ConfigError("kernel sigma must be > 0");
    }
    if (half_width < 1) throw ConfigError("kernel half_width must be a positive integer");
  }
};

// Normalized discrete Gaussian of side 2K+1; entry (K + n_y, K + n_x) holds
// C * exp(-(n_x^2 + n_y^2) / (2 sigma^2)).
inline Grid<double> make_kernel(const KernelConfig& cfg) {
  cfg.validate();
  const int k = cfg.half_width;
  const auto side = static_cast<std::size_t>(cfg.side());
  Grid<double> kernel(side, side);
  const double denom = 2.0 * cfg.sigma * cfg.sigma;
  double total = 0.0;
  for (int ny = -k; ny <= k; ++ny) {
    for (int nx = -k; nx <= k; ++nx) {
      const double r2 = static_cast<double>(nx * nx) + static_cast<double>(ny * ny);
      const double v = std::exp(-r2 / denom);
      kernel(static_cast<std::size_t>(ny + k), static_cast<std::size_t>(nx + k)) = v;
      total += v;
    }
  }
  for (auto& v : kernel.values()) v /= total;
  return kernel;
}

// Superposition of one kernel per centroid over a rows x cols grid.
inline DensityMap build_density_map(std::size_t rows, std::size_t cols,
                                    const CentroidSet& centroids, const KernelConfig& cfg) {
  const Grid<double> kernel = make_kernel(cfg);
  const std::int64_t k = cfg.half_width;
  const auto m = static_cast<std::int64_t>(rows);
  const auto n = static_cast<std::int64_t>(cols);
  DensityMap map(rows, cols, 0.0);

  for (std::size_t idx = 0; idx < centroids.size(); ++idx) {
    const Centroid c = centroids[idx];
    if (c.y < 0 || c.y >= m || c.x < 0 || c.x >= n) {
      throw AnnotationError("centroid " + std::to_string(idx) + " at (x=" +
                            std::to_string(c.x) + ", y=" + std::to_string(c.y) +
                            ") lies outside the " + std::to_string(rows) + "x" +
                            std::to_string(cols) + " image");
    }
    const std::int64_t i0 = std::max<std::int64_t>(c.y - k, 0);
    const std::int64_t i1 = std::min<std::int64_t>(c.y + k, m - 1);
    const std::int64_t j0 = std::max<std::int64_t>(c.x - k, 0);
    const std::int64_t j1 = std::min<std::int64_t>(c.x + k, n - 1);

    double scale = 1.0;
    if (cfg.renormalize_border) {
      double mass = 0.0;
      for (std::int64_t i = i0; i <= i1; ++i)
        for (std::int64_t j = j0; j <= j1; ++j)
          mass += kernel(static_cast<std::size_t>(i - c.y + k), static_cast<std::size_t>(j - c.x + k));
      scale = 1.0 / mass;
    }
    for (std::int64_t i = i0; i <= i1; ++i) {
      for (std::int64_t j = j0; j <= j1; ++j) {
        map(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) +=
            scale * kernel(static_cast<std::size_t>(i - c.y + k), static_cast<std::size_t>(j - c.x + k));
      }
    }
  }
  return map;
}

// Sum of all entries, accumulated in double.
template <typename T>
double integrate_count(const Grid<T>& map) {
  double total = 0.0;
  for (const T v : map.values()) total += static_cast<double>(v);
  return total;
}

// Integer report, rounding half away from zero.
inline std::int64_t rounded_count(double estimate) { return std::llround(estimate); }

}  // namespace cellcount
