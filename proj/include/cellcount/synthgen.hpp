#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "cellcount/density.hpp"
#include "cellcount/errors.hpp"
#include "cellcount/grid.hpp"
#include "cellcount/rng.hpp"

namespace cellcount {

template <typename T>
struct Range {
  T low{};
  T high{};
  bool valid() const { return low <= high; }
  bool contains(T v) const { return low <= v && v <= high; }
};

enum class Domain { source, target };

inline const char* to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

struct SynthConfig {
  std::size_t image_height = 256;
  std::size_t image_width = 256;
  Range<int> cell_count_range{60, 120};
  Range<double> cell_radius_range{3.0, 8.0};
  Range<double> cell_eccentricity_range{0.0, 0.6};
  Range<double> peak_intensity_range{0.5, 1.0};
  double psf_sigma = 1.0;
  double noise_std = 0.02;
  double background_level = 0.05;
  double min_centroid_margin = 4.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (image_height < 2 || image_width < 2) throw ConfigError("synth image must be at least 2x2");
    if (!cell_count_range.valid() || cell_count_range.low < 0)
      throw ConfigError("synth cell_count_range must satisfy 0 <= low <= high");
    if (!cell_radius_range.valid() || cell_radius_range.low <= 0.0)
      throw ConfigError("synth cell_radius_range must satisfy 0 < low <= high");
    if (!cell_eccentricity_range.valid() || cell_eccentricity_range.low < 0.0 ||
        cell_eccentricity_range.high >= 1.0)
      throw ConfigError("synth cell_eccentricity_range must lie in [0, 1)");
    if (!peak_intensity_range.valid() || peak_intensity_range.low <= 0.0 ||
        peak_intensity_range.high > 1.0)
      throw ConfigError("synth peak_intensity_range must lie in (0, 1]");
    if (psf_sigma < 0.0) throw ConfigError("synth psf_sigma must be >= 0");
    if (noise_std < 0.0) throw ConfigError("synth noise_std must be >= 0");
    if (background_level < 0.0 || background_level >= 1.0)
      throw ConfigError("synth background_level must lie in [0, 1)");
    if (min_centroid_margin < 0.0) throw ConfigError("synth min_centroid_margin must be >= 0");
  }

  // Images must hold at least one full density kernel.
  void validate_for(const KernelConfig& kernel) const {
    validate();
    const auto side = static_cast<std::size_t>(kernel.side());
    if (image_height < side || image_width < side) {
      throw ConfigError("synth image dimensions must be >= 2*K_G+1 = " + std::to_string(side));
    }
  }
};

struct ShiftConfig {
  double gamma = 1.8;
  bool intensity_invert = false;
  double extra_blur_sigma = 1.0;
  double extra_noise_std = 0.03;
  double contrast_scale = 0.7;
  std::uint64_t seed = 0;

  static ShiftConfig identity() { return {1.0, false, 0.0, 0.0, 1.0, 0}; }

  void validate() const {
    if (!(gamma > 0.0)) throw ConfigError("shift gamma must be > 0");
    if (extra_blur_sigma < 0.0) throw ConfigError("shift extra_blur_sigma must be >= 0");
    if (extra_noise_std < 0.0) throw ConfigError("shift extra_noise_std must be >= 0");
    if (!(contrast_scale > 0.0)) throw ConfigError("shift contrast_scale must be > 0");
  }
};

struct AnnotatedImage {
  Image image;
  CentroidSet centroids;
  Domain domain_tag = Domain::source;
};

namespace detail {

// Separable Gaussian blur with clamp-to-edge borders. sigma <= 0 is a no-op.
inline void gaussian_blur(Image& img, double sigma) {
  if (sigma <= 0.0) return;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> taps(2 * radius + 1);
  double total = 0.0;
  for (int t = -radius; t <= radius; ++t) {
    taps[t + radius] = std::exp(-(t * t) / (2.0 * sigma * sigma));
    total += taps[t + radius];
  }
  for (auto& t : taps) t /= total;

  const auto rows = static_cast<int>(img.rows());
  const auto cols = static_cast<int>(img.cols());
  std::vector<double> tmp(img.size());
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t) {
        const int jj = std::clamp(j + t, 0, cols - 1);
        acc += taps[t + radius] * img(i, jj);
      }
      tmp[i * cols + j] = acc;
    }
  }
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t) {
        const int ii = std::clamp(i + t, 0, rows - 1);
        acc += taps[t + radius] * tmp[ii * cols + j];
      }
      img(i, j) = static_cast<float>(acc);
    }
  }
}

inline void add_noise(Image& img, double stddev, Rng& rng) {
  if (stddev <= 0.0) return;
  for (auto& v : img.values()) v = static_cast<float>(v + rng.normal(0.0, stddev));
}

inline void clip_unit(Image& img) {
  for (auto& v : img.values()) v = std::clamp(v, 0.0f, 1.0f);
}

// Rejection sampling of integer centroids with pairwise spacing >= margin.
// Centroids are kept at least the minimum cell radius away from the border.
inline CentroidSet place_centroids(const SynthConfig& cfg, int count, Rng& rng) {
  const auto inset = static_cast<std::int64_t>(std::floor(cfg.cell_radius_range.low));
  const auto h = static_cast<std::int64_t>(cfg.image_height);
  const auto w = static_cast<std::int64_t>(cfg.image_width);
  const std::int64_t y0 = std::min(inset, (h - 1) / 2), y1 = h - 1 - y0;
  const std::int64_t x0 = std::min(inset, (w - 1) / 2), x1 = w - 1 - x0;
  const double margin2 = cfg.min_centroid_margin * cfg.min_centroid_margin;

  CentroidSet placed;
  placed.reserve(static_cast<std::size_t>(count));
  const std::int64_t max_attempts = 2000LL * std::max(count, 1);
  std::int64_t attempts = 0;
  while (static_cast<int>(placed.size()) < count) {
    if (++attempts > max_attempts) {
      throw PlacementError("cannot place " + std::to_string(count) + " cells in a " +
                           std::to_string(h) + "x" + std::to_string(w) +
                           " image with min_centroid_margin = " +
                           std::to_string(cfg.min_centroid_margin) + " px");
    }
    const Centroid c{rng.uniform_int(x0, x1), rng.uniform_int(y0, y1)};
    bool ok = true;
    if (cfg.min_centroid_margin > 0.0) {
      for (const auto& p : placed) {
        const double dx = static_cast<double>(p.x - c.x);
        const double dy = static_cast<double>(p.y - c.y);
        if (dx * dx + dy * dy < margin2) {
          ok = false;
          break;
        }
      }
    }
    if (ok) placed.push_back(c);
  }
  return placed;
}

// Elliptical Gaussian-profile blob; overlapping cells combine by maximum.
inline void render_cell(Grid<double>& canvas, const Centroid& c, double radius,
                        double eccentricity, double angle, double peak) {
  const double a = radius;
  const double b = radius * std::sqrt(1.0 - eccentricity * eccentricity);
  const double ca = std::cos(angle), sa = std::sin(angle);
  const auto reach = static_cast<std::int64_t>(std::ceil(2.0 * a));
  const auto rows = static_cast<std::int64_t>(canvas.rows());
  const auto cols = static_cast<std::int64_t>(canvas.cols());
  for (std::int64_t i = std::max<std::int64_t>(0, c.y - reach);
       i <= std::min(rows - 1, c.y + reach); ++i) {
    for (std::int64_t j = std::max<std::int64_t>(0, c.x - reach);
         j <= std::min(cols - 1, c.x + reach); ++j) {
      const double dx = static_cast<double>(j - c.x);
      const double dy = static_cast<double>(i - c.y);
      const double u = (ca * dx + sa * dy) / a;
      const double v = (-sa * dx + ca * dy) / b;
      const double q2 = u * u + v * v;
      if (q2 > 4.0) continue;
      const double value = peak * std::exp(-2.0 * q2);
      auto& px = canvas(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
      px = std::max(px, value);
    }
  }
}

}  // namespace detail

// One annotated image; `index` selects the per-image stream seed + index.
inline AnnotatedImage generate_one(const SynthConfig& cfg, std::size_t index) {
  Rng rng(cfg.seed + index);
  const int count =
      static_cast<int>(rng.uniform_int(cfg.cell_count_range.low, cfg.cell_count_range.high));
  AnnotatedImage out;
  out.centroids = detail::place_centroids(cfg, count, rng);
  out.domain_tag = Domain::source;

  Grid<double> canvas(cfg.image_height, cfg.image_width, 0.0);
  for (const auto& c : out.centroids) {
    const double radius = rng.uniform(cfg.cell_radius_range.low, cfg.cell_radius_range.high);
    const double ecc =
        rng.uniform(cfg.cell_eccentricity_range.low, cfg.cell_eccentricity_range.high);
    const double angle = rng.uniform(0.0, std::numbers::pi);
    const double peak = rng.uniform(cfg.peak_intensity_range.low, cfg.peak_intensity_range.high);
    detail::render_cell(canvas, c, radius, ecc, angle, peak);
  }

  out.image = Image(cfg.image_height, cfg.image_width);
  for (std::size_t k = 0; k < canvas.size(); ++k) {
    out.image.values()[k] = static_cast<float>(cfg.background_level + canvas.values()[k]);
  }
  detail::gaussian_blur(out.image, cfg.psf_sigma);
  detail::add_noise(out.image, cfg.noise_std, rng);
  detail::clip_unit(out.image);
  return out;
}

inline std::vector<AnnotatedImage> generate_annotated(const SynthConfig& cfg, std::size_t count) {
  cfg.validate();
  std::vector<AnnotatedImage> images;
  images.reserve(count);
  for (std::size_t k = 0; k < count; ++k) images.push_back(generate_one(cfg, k));
  return images;
}

// Pixelwise invert -> gamma -> contrast scale, then blur, noise and clip.
// Centroids are carried over untouched. Noise uses the stream shift.seed + index.
inline AnnotatedImage apply_shift(const AnnotatedImage& img, const ShiftConfig& shift,
                                  std::size_t index = 0) {
  shift.validate();
  AnnotatedImage out = img;
  out.domain_tag = Domain::target;
  for (auto& v : out.image.values()) {
    double x = v;
    if (shift.intensity_invert) x = 1.0 - x;
    if (shift.gamma != 1.0) x = std::pow(x, shift.gamma);
    if (shift.contrast_scale != 1.0) x *= shift.contrast_scale;
    v = static_cast<float>(x);
  }
  detail::gaussian_blur(out.image, shift.extra_blur_sigma);
  if (shift.extra_noise_std > 0.0) {
    Rng rng(shift.seed + index);
    detail::add_noise(out.image, shift.extra_noise_std, rng);
  }
  detail::clip_unit(out.image);
  return out;
}

inline std::vector<AnnotatedImage> apply_shift(const std::vector<AnnotatedImage>& imgs,
                                               const ShiftConfig& shift) {
  std::vector<AnnotatedImage> out;
  out.reserve(imgs.size());
  for (std::size_t k = 0; k < imgs.size(); ++k) out.push_back(apply_shift(imgs[k], shift, k));
  return out;
}

}  // namespace cellcount
