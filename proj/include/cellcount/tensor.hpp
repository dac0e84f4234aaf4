#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <vector>

#include "cellcount/errors.hpp"
#include "cellcount/grid.hpp"

namespace cellcount {

// Storage for everything that reaches Eigen kernels. A fixed base alignment
// keeps vectorized reductions (which peel to the first aligned element) in
// the same summation order from run to run.
template <typename S>
using AlignedVector = std::vector<S, Eigen::aligned_allocator<S>>;

// Activation tensor in channel-major [channel][batch][row][col] layout, so a
// convolution over a whole batch is a single (C_out x C_in*k*k) GEMM.
template <typename S>
struct Tensor {
  std::size_t channels = 0;
  std::size_t batch = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  AlignedVector<S> data;

  Tensor() = default;
  Tensor(std::size_t c, std::size_t b, std::size_t h, std::size_t w, S fill = S{})
      : channels(c), batch(b), height(h), width(w), data(c * b * h * w, fill) {}

  std::size_t plane_size() const { return height * width; }
  std::size_t columns() const { return batch * height * width; }
  std::size_t size() const { return data.size(); }

  S* plane(std::size_t c, std::size_t b) { return data.data() + (c * batch + b) * plane_size(); }
  const S* plane(std::size_t c, std::size_t b) const {
    return data.data() + (c * batch + b) * plane_size();
  }

  S& at(std::size_t c, std::size_t b, std::size_t i, std::size_t j) {
    return plane(c, b)[i * width + j];
  }
  const S& at(std::size_t c, std::size_t b, std::size_t i, std::size_t j) const {
    return plane(c, b)[i * width + j];
  }

  bool same_shape(const Tensor& o) const {
    return channels == o.channels && batch == o.batch && height == o.height && width == o.width;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

// FeatureMap: encoder output, (512 channels) x batch x (M/8) x (N/8).
template <typename S>
using FeatureMap = Tensor<S>;

// Stacks equally sized single-channel images into a 1 x B x M x N tensor.
template <typename S, typename T>
Tensor<S> stack_images(const std::vector<const Grid<T>*>& images) {
  if (images.empty()) throw UsageError("cannot stack an empty image list");
  const std::size_t h = images.front()->rows(), w = images.front()->cols();
  Tensor<S> out(1, images.size(), h, w);
  for (std::size_t b = 0; b < images.size(); ++b) {
    if (images[b]->rows() != h || images[b]->cols() != w) {
      throw DataError("images in a batch must share one shape");
    }
    S* dst = out.plane(0, b);
    const auto& src = images[b]->values();
    for (std::size_t k = 0; k < src.size(); ++k) dst[k] = static_cast<S>(src[k]);
  }
  return out;
}

template <typename S, typename T>
Tensor<S> stack_images(const std::vector<Grid<T>>& images) {
  std::vector<const Grid<T>*> ptrs;
  ptrs.reserve(images.size());
  for (const auto& im : images) ptrs.push_back(&im);
  return stack_images<S>(ptrs);
}

// Extracts sample b of a single-channel tensor as a grid.
template <typename T, typename S>
Grid<T> unstack(const Tensor<S>& t, std::size_t b) {
  Grid<T> g(t.height, t.width);
  const S* src = t.plane(0, b);
  for (std::size_t k = 0; k < g.size(); ++k) g.values()[k] = static_cast<T>(src[k]);
  return g;
}

}  // namespace cellcount
