#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "cellcount/errors.hpp"

namespace cellcount {

// Dense row-major 2-D array.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  bool same_shape(const Grid& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

// Grayscale image, intensities nominally in [0, 1].
using Image = Grid<float>;

// Copy of the `height` x `width` window whose top-left corner is (top, left).
template <typename T>
Grid<T> crop(const Grid<T>& src, std::size_t top, std::size_t left, std::size_t height,
             std::size_t width) {
  if (top + height > src.rows() || left + width > src.cols()) {
    throw ShapeError("crop window exceeds image bounds");
  }
  Grid<T> out(height, width);
  for (std::size_t i = 0; i < height; ++i) {
    std::copy_n(&src(top + i, left), width, &out(i, 0));
  }
  return out;
}

}  // namespace cellcount
