#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cellcount/density.hpp"
#include "cellcount/errors.hpp"
#include "cellcount/io.hpp"
#include "cellcount/synthgen.hpp"

namespace cellcount {

// Dataset directory layout:
//   manifest.txt            key = value (config, seed, count, domain)
//   images/<id>.png         16-bit grayscale
//   centroids/<id>.csv      header x,y
//   density/<id>.dmap       ground-truth density map
struct DatasetSample {
  std::string id;
  Image image;
  std::optional<CentroidSet> centroids;
  std::optional<DensityMap> density;
};

struct Dataset {
  io::KeyValues manifest;
  std::vector<DatasetSample> samples;
};

inline std::string sample_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img_%05zu", index);
  return buf;
}

inline void write_dataset(const std::filesystem::path& dir, const std::vector<AnnotatedImage>& images,
                          const KernelConfig& kernel, io::KeyValues manifest) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "centroids");
  fs::create_directories(dir / "density");
  for (std::size_t k = 0; k < images.size(); ++k) {
    const std::string id = sample_id(k);
    const auto& a = images[k];
    io::write_png16(dir / "images" / (id + ".png"), a.image);
    io::write_centroids_csv(dir / "centroids" / (id + ".csv"), a.centroids);
    io::write_density_map(dir / "density" / (id + ".dmap"),
                          build_density_map(a.image.rows(), a.image.cols(), a.centroids, kernel));
  }
  manifest["count"] = std::to_string(images.size());
  if (!images.empty()) manifest["domain"] = to_string(images.front().domain_tag);
  io::write_manifest(dir / "manifest.txt", manifest);
}

// Sorted PNG files of a directory, or the single file itself.
inline std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  std::vector<fs::path> out;
  if (fs::is_regular_file(path)) {
    out.push_back(path);
    return out;
  }
  if (!fs::is_directory(path)) throw UsageError("no such image or directory: " + path.string());
  for (const auto& e : fs::directory_iterator(path)) {
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir) || !fs::exists(dir / "manifest.txt")) {
    throw UsageError("not a dataset directory (missing manifest.txt): " + dir.string());
  }
  Dataset ds;
  ds.manifest = io::read_manifest(dir / "manifest.txt");
  if (!fs::is_directory(dir / "images")) return ds;
  for (const auto& png : list_pngs(dir / "images")) {
    DatasetSample s;
    s.id = png.stem().string();
    s.image = io::read_png(png);
    const fs::path csv = dir / "centroids" / (s.id + ".csv");
    if (fs::exists(csv)) s.centroids = io::read_centroids_csv(csv);
    const fs::path dmap = dir / "density" / (s.id + ".dmap");
    if (fs::exists(dmap)) s.density = io::read_density_map(dmap);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace cellcount
