#pragma once

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "cellcount/density.hpp"
#include "cellcount/errors.hpp"
#include "cellcount/grid.hpp"

namespace cellcount::io {

namespace fs = std::filesystem;

// Little-endian primitives.
inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("unexpected end of file");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

inline void put_f32(std::ostream& os, float v) { put_u32(os, std::bit_cast<std::uint32_t>(v)); }
inline float get_f32(std::istream& is) { return std::bit_cast<float>(get_u32(is)); }

inline void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is) {
  const std::uint32_t n = get_u32(is);
  if (n > (1u << 24)) throw FormatError("string field too long");
  std::string s(n, '\0');
  if (!is.read(s.data(), n)) throw FormatError("unexpected end of file");
  return s;
}

inline std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
}

inline std::ifstream open_in(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return is;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream is = open_in(path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------- PNG

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

// 16-bit grayscale; value v in [0,1] is stored as round(v * 65535).
inline void write_png16(const fs::path& path, const Image& img) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng initialization failed");
  }
  std::vector<png_byte> row(img.cols() * 2);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.cols()), static_cast<png_uint_32>(img.rows()),
               16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t i = 0; i < img.rows(); ++i) {
    for (std::size_t j = 0; j < img.cols(); ++j) {
      const double v = std::clamp(static_cast<double>(img(i, j)), 0.0, 1.0);
      const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
      row[2 * j] = static_cast<png_byte>(q >> 8);  // PNG is big-endian
      row[2 * j + 1] = static_cast<png_byte>(q & 0xff);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Reads 8/16-bit gray (or RGB, converted to gray) into [0,1].
inline Image read_png(const fs::path& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot read " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng initialization failed");
  }
  Image img;
  std::vector<png_byte> row;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("invalid PNG file " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE)
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  png_read_update_info(png, info);
  const auto width = png_get_image_width(png, info);
  const auto height = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  img = Image(height, width);
  row.resize(png_get_rowbytes(png, info));
  const double scale = depth == 16 ? 65535.0 : 255.0;
  for (png_uint_32 i = 0; i < height; ++i) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 j = 0; j < width; ++j) {
      const double q = depth == 16 ? (row[2 * j] << 8 | row[2 * j + 1]) : row[j];
      img(i, j) = static_cast<float>(q / scale);
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

// Panels placed side by side, each min-max normalized independently.
template <typename T>
Image tile_panels(const std::vector<Grid<T>>& panels, std::size_t gap = 2) {
  if (panels.empty()) return {};
  const std::size_t h = panels.front().rows();
  std::size_t w = 0;
  for (const auto& p : panels) w += p.cols() + gap;
  Image out(h, w - gap, 1.0f);
  std::size_t x0 = 0;
  for (const auto& p : panels) {
    double lo = 0.0, hi = 0.0;
    if (!p.empty()) {
      const auto [mn, mx] = std::minmax_element(p.values().begin(), p.values().end());
      lo = static_cast<double>(*mn);
      hi = static_cast<double>(*mx);
    }
    const double span = hi > lo ? hi - lo : 1.0;
    for (std::size_t i = 0; i < std::min(h, p.rows()); ++i)
      for (std::size_t j = 0; j < p.cols(); ++j)
        out(i, x0 + j) = static_cast<float>((static_cast<double>(p(i, j)) - lo) / span);
    x0 += p.cols() + gap;
  }
  return out;
}

// ---------------------------------------------------------------- CSV

inline void write_centroids_csv(const fs::path& path, const CentroidSet& centroids) {
  std::ofstream os = open_out(path);
  os << "x,y\n";
  for (const auto& c : centroids) os << c.x << ',' << c.y << '\n';
}

inline CentroidSet read_centroids_csv(const fs::path& path) {
  std::ifstream is = open_in(path);
  std::string line;
  if (!std::getline(is, line) || line.rfind("x,y", 0) != 0) {
    throw FormatError(path.string() + ": expected header 'x,y'");
  }
  CentroidSet out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::istringstream ls(line);
    Centroid c;
    char comma = 0;
    if (!(ls >> c.x >> comma >> c.y) || comma != ',') {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": malformed centroid row");
    }
    out.push_back(c);
  }
  return out;
}

// ---------------------------------------------------------------- density maps

// "DMAP", u32 rows, u32 cols, rows*cols float32 row-major, little-endian.
inline void write_density_map(const fs::path& path, const DensityMap& map) {
  std::ofstream os = open_out(path);
  os.write("DMAP", 4);
  put_u32(os, static_cast<std::uint32_t>(map.rows()));
  put_u32(os, static_cast<std::uint32_t>(map.cols()));
  for (const double v : map.values()) put_f32(os, static_cast<float>(v));
}

inline DensityMap read_density_map(const fs::path& path) {
  std::ifstream is = open_in(path);
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "DMAP") {
    throw FormatError(path.string() + ": missing DMAP magic");
  }
  const std::uint32_t rows = get_u32(is), cols = get_u32(is);
  DensityMap map(rows, cols);
  for (auto& v : map.values()) v = get_f32(is);
  return map;
}

inline void write_density_csv(const fs::path& path, const DensityMap& map) {
  std::ofstream os = open_out(path);
  os.precision(9);
  for (std::size_t i = 0; i < map.rows(); ++i) {
    for (std::size_t j = 0; j < map.cols(); ++j) os << (j ? "," : "") << map(i, j);
    os << '\n';
  }
}

// ---------------------------------------------------------------- manifest

using KeyValues = std::map<std::string, std::string>;

// "key = value" per line, sorted by key.
inline void write_manifest(const fs::path& path, const KeyValues& kv) {
  std::ofstream os = open_out(path);
  for (const auto& [k, v] : kv) os << k << " = " << v << '\n';
}

inline KeyValues read_manifest(const fs::path& path) {
  std::ifstream is = open_in(path);
  KeyValues kv;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(path.string() + ": malformed line '" + line + "'");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

}  // namespace cellcount::io
