#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <type_traits>
#include <vector>

#include "cellcount/errors.hpp"
#include "cellcount/rng.hpp"
#include "cellcount/tensor.hpp"

namespace cellcount {

enum class LayerKind { conv, maxpool, upsample, avgpool_global, fully_connected, dropout };
enum class Activation { relu, linear };

// One stage of a sequential network. Convolutions use same-padding; pooling
// and upsampling use factor 2.
struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  std::string name;
  int kernels = 0;      // conv kernels or fully-connected neurons
  int kernel_size = 1;  // conv only
  int stride = 1;
  Activation activation = Activation::linear;
  double rate = 0.0;  // dropout only

  bool has_params() const {
    return kind == LayerKind::conv || kind == LayerKind::fully_connected;
  }

  static LayerSpec conv(std::string name, int kernels, int size, Activation act) {
    return {LayerKind::conv, std::move(name), kernels, size, 1, act, 0.0};
  }
  static LayerSpec maxpool(std::string name) {
    return {LayerKind::maxpool, std::move(name), 0, 2, 2, Activation::linear, 0.0};
  }
  static LayerSpec upsample(std::string name) {
    return {LayerKind::upsample, std::move(name), 0, 2, 2, Activation::linear, 0.0};
  }
  static LayerSpec global_avgpool(std::string name) {
    return {LayerKind::avgpool_global, std::move(name), 0, 0, 1, Activation::linear, 0.0};
  }
  static LayerSpec fully_connected(std::string name, int neurons, Activation act) {
    return {LayerKind::fully_connected, std::move(name), neurons, 1, 1, act, 0.0};
  }
  static LayerSpec dropout(std::string name, double rate) {
    return {LayerKind::dropout, std::move(name), 0, 0, 1, Activation::linear, rate};
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// Weight is (out, in, k, k) for conv and (out, in) for fully connected,
// stored row-major as an (out x in*k*k) matrix.
template <typename S>
struct LayerParams {
  std::vector<std::size_t> weight_shape;
  AlignedVector<S> weight;
  AlignedVector<S> bias;

  std::size_t out_features() const { return weight_shape.empty() ? 0 : weight_shape[0]; }
  std::size_t fan_in() const {
    std::size_t f = 1;
    for (std::size_t d = 1; d < weight_shape.size(); ++d) f *= weight_shape[d];
    return f;
  }
  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

template <typename S>
using ParamSet = std::vector<LayerParams<S>>;

template <typename S>
struct Network {
  std::string name;  // tensor-name prefix, e.g. "encoder"
  std::size_t in_channels = 1;
  std::vector<LayerSpec> plan;
  ParamSet<S> params;  // one entry per layer; empty for parameter-free layers

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.weight.size() + p.bias.size();
    return n;
  }

  friend bool operator==(const Network&, const Network&) = default;
};

// Parameter-free layout of a network's weights, zero-filled.
template <typename S>
ParamSet<S> zeros_like(const ParamSet<S>& params) {
  ParamSet<S> out(params.size());
  for (std::size_t l = 0; l < params.size(); ++l) {
    out[l].weight_shape = params[l].weight_shape;
    out[l].weight.assign(params[l].weight.size(), S{0});
    out[l].bias.assign(params[l].bias.size(), S{0});
  }
  return out;
}

// Allocates parameters for `plan`, He-uniform weights (bound sqrt(6/fan_in))
// and zero biases.
template <typename S>
Network<S> build_network(std::string name, std::size_t in_channels, std::vector<LayerSpec> plan,
                         std::uint64_t seed) {
  Network<S> net{std::move(name), in_channels, std::move(plan), {}};
  net.params.resize(net.plan.size());
  Rng rng(seed);
  std::size_t channels = in_channels;
  for (std::size_t l = 0; l < net.plan.size(); ++l) {
    const auto& spec = net.plan[l];
    if (!spec.has_params()) continue;
    auto& p = net.params[l];
    const auto out = static_cast<std::size_t>(spec.kernels);
    if (spec.kind == LayerKind::conv) {
      const auto k = static_cast<std::size_t>(spec.kernel_size);
      p.weight_shape = {out, channels, k, k};
    } else {
      p.weight_shape = {out, channels};
    }
    p.weight.resize(out * p.fan_in());
    p.bias.assign(out, S{0});
    const double bound = std::sqrt(6.0 / static_cast<double>(p.fan_in()));
    for (auto& w : p.weight) w = static_cast<S>(rng.uniform(-bound, bound));
    channels = out;
  }
  return net;
}

template <typename To, typename From>
Network<To> cast_network(const Network<From>& net) {
  Network<To> out{net.name, net.in_channels, net.plan, {}};
  out.params.resize(net.params.size());
  for (std::size_t l = 0; l < net.params.size(); ++l) {
    out.params[l].weight_shape = net.params[l].weight_shape;
    out.params[l].weight.assign(net.params[l].weight.begin(), net.params[l].weight.end());
    out.params[l].bias.assign(net.params[l].bias.begin(), net.params[l].bias.end());
  }
  return out;
}

// Intermediate state kept by a training-mode forward pass.
template <typename S>
struct Trace {
  std::vector<Tensor<S>> acts;  // acts[0] is the input, acts[l + 1] the output of layer l
  std::vector<std::vector<std::uint8_t>> pool_argmax;
  std::vector<std::vector<S>> dropout_mask;
};

namespace detail {

template <typename S>
using RowMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<RowMatrix<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const RowMatrix<S>>;

template <typename S>
using StridedMap = Eigen::Map<RowMatrix<S>, 0, Eigen::OuterStride<>>;
template <typename S>
using ConstStridedMap = Eigen::Map<const RowMatrix<S>, 0, Eigen::OuterStride<>>;

// (C*k*k) x (nb*H*W) patch matrix of samples [b0, b0 + nb) for a same-padded
// k x k convolution.
template <typename S>
void im2col(const Tensor<S>& in, int k, std::size_t b0, std::size_t nb, AlignedVector<S>& col) {
  const std::size_t h = in.height, w = in.width, cols = nb * h * w;
  const int pad = k / 2;
  col.resize(in.channels * k * k * cols);
  for (std::size_t c = 0; c < in.channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        S* row = col.data() + ((c * k + ky) * k + kx) * cols;
        const int dy = ky - pad, dx = kx - pad;
        const std::size_t x_lo = static_cast<std::size_t>(std::max(0, -dx));
        const std::size_t x_hi = static_cast<std::size_t>(
            std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(w), static_cast<std::ptrdiff_t>(w) - dx));
        for (std::size_t b = 0; b < nb; ++b) {
          const S* src = in.plane(c, b0 + b);
          S* dst = row + b * h * w;
          for (std::size_t y = 0; y < h; ++y) {
            S* d = dst + y * w;
            const auto sy = static_cast<std::ptrdiff_t>(y) + dy;
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
              std::fill(d, d + w, S{0});
              continue;
            }
            const S* s = src + sy * static_cast<std::ptrdiff_t>(w) + dx;
            std::fill(d, d + x_lo, S{0});
            std::copy(s + x_lo, s + x_hi, d + x_lo);
            std::fill(d + x_hi, d + w, S{0});
          }
        }
      }
    }
  }
}

// Adjoint of im2col: adds patch gradients of samples [b0, b0 + nb) onto `out`.
template <typename S>
void col2im(const AlignedVector<S>& col, int k, std::size_t b0, std::size_t nb, Tensor<S>& out) {
  const std::size_t h = out.height, w = out.width, cols = nb * h * w;
  const int pad = k / 2;
  for (std::size_t c = 0; c < out.channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const S* row = col.data() + ((c * k + ky) * k + kx) * cols;
        const int dy = ky - pad, dx = kx - pad;
        const std::size_t x_lo = static_cast<std::size_t>(std::max(0, -dx));
        const std::size_t x_hi = static_cast<std::size_t>(
            std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(w), static_cast<std::ptrdiff_t>(w) - dx));
        for (std::size_t b = 0; b < nb; ++b) {
          S* dst = out.plane(c, b0 + b);
          const S* src = row + b * h * w;
          for (std::size_t y = 0; y < h; ++y) {
            const auto sy = static_cast<std::ptrdiff_t>(y) + dy;
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
            S* d = dst + sy * static_cast<std::ptrdiff_t>(w) + dx;
            const S* s = src + y * w;
            for (std::size_t x = x_lo; x < x_hi; ++x) d[x] += s[x];
          }
        }
      }
    }
  }
}

// Samples per im2col chunk, keeping the patch matrix around 4 MB so it stays
// cache resident between im2col and the GEMM.
template <typename S>
std::size_t im2col_chunk(std::size_t fan_in, std::size_t plane, std::size_t batch) {
  const std::size_t per_sample = fan_in * plane * sizeof(S);
  return std::clamp<std::size_t>((std::size_t{4} << 20) / std::max<std::size_t>(per_sample, 1), 1, batch);
}

// Linear map shared by conv (k x k patches) and fully connected (1x1 inputs).
template <typename S>
Tensor<S> affine_forward(const LayerSpec& spec, const LayerParams<S>& p, const Tensor<S>& in,
                         AlignedVector<S>& scratch) {
  const auto out_c = p.out_features();
  const int k = spec.kind == LayerKind::conv ? spec.kernel_size : 1;
  if (spec.kind == LayerKind::fully_connected && in.plane_size() != 1) {
    throw ShapeError("fully connected layer '" + spec.name + "' expects 1x1 spatial input");
  }
  if (p.weight_shape.size() < 2 || p.weight_shape[1] != in.channels) {
    throw ShapeError("layer '" + spec.name + "' expects " +
                     std::to_string(p.weight_shape.size() < 2 ? 0 : p.weight_shape[1]) +
                     " input channels, got " + std::to_string(in.channels));
  }
  const auto cols = static_cast<Eigen::Index>(in.columns());
  const auto fan_in = static_cast<Eigen::Index>(p.fan_in());
  Tensor<S> out(out_c, in.batch, in.height, in.width);
  ConstMatMap<S> weight(p.weight.data(), static_cast<Eigen::Index>(out_c), fan_in);
  if (k == 1) {
    ConstMatMap<S> x(in.data.data(), static_cast<Eigen::Index>(in.channels), cols);
    MatMap<S> y(out.data.data(), static_cast<Eigen::Index>(out_c), cols);
    y.noalias() = weight * x;
  } else {
    const std::size_t plane = in.plane_size();
    const std::size_t chunk = im2col_chunk<S>(p.fan_in(), plane, in.batch);
    for (std::size_t b0 = 0; b0 < in.batch; b0 += chunk) {
      const std::size_t nb = std::min(chunk, in.batch - b0);
      const auto ncols = static_cast<Eigen::Index>(nb * plane);
      im2col(in, k, b0, nb, scratch);
      ConstMatMap<S> x(scratch.data(), fan_in, ncols);
      StridedMap<S> y(out.data.data() + b0 * plane, static_cast<Eigen::Index>(out_c), ncols,
                      Eigen::OuterStride<>(cols));
      y.noalias() = weight * x;
    }
  }
  for (std::size_t o = 0; o < out_c; ++o) {
    S* row = out.data.data() + o * out.columns();
    const S b = p.bias[o];
    if (spec.activation == Activation::relu) {
      for (std::size_t j = 0; j < out.columns(); ++j) row[j] = std::max(row[j] + b, S{0});
    } else if (b != S{0}) {
      for (std::size_t j = 0; j < out.columns(); ++j) row[j] += b;
    }
  }
  return out;
}

// Accumulates weight/bias gradients; returns the input gradient when asked.
template <typename S>
Tensor<S> affine_backward(const LayerSpec& spec, const LayerParams<S>& p, const Tensor<S>& in,
                          const Tensor<S>& out, Tensor<S> grad, LayerParams<S>& g,
                          bool need_input_grad, AlignedVector<S>& scratch) {
  const auto out_c = static_cast<Eigen::Index>(p.out_features());
  const int k = spec.kind == LayerKind::conv ? spec.kernel_size : 1;
  const auto cols = static_cast<Eigen::Index>(in.columns());
  const auto fan_in = static_cast<Eigen::Index>(p.fan_in());
  if (spec.activation == Activation::relu) {
    for (std::size_t j = 0; j < grad.size(); ++j) {
      if (!(out.data[j] > S{0})) grad.data[j] = S{0};
    }
  }
  ConstMatMap<S> dy(grad.data.data(), out_c, cols);
  MatMap<S> dw(g.weight.data(), out_c, fan_in);
  Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> db(g.bias.data(), out_c);
  db += dy.rowwise().sum();
  ConstMatMap<S> weight(p.weight.data(), out_c, fan_in);

  if (k == 1) {
    ConstMatMap<S> x(in.data.data(), static_cast<Eigen::Index>(in.channels), cols);
    dw.noalias() += dy * x.transpose();
    if (!need_input_grad) return {};
    Tensor<S> dx(in.channels, in.batch, in.height, in.width);
    MatMap<S> dxm(dx.data.data(), static_cast<Eigen::Index>(in.channels), cols);
    dxm.noalias() = weight.transpose() * dy;
    return dx;
  }

  Tensor<S> dx;
  if (need_input_grad) dx = Tensor<S>(in.channels, in.batch, in.height, in.width);
  const std::size_t plane = in.plane_size();
  const std::size_t chunk = im2col_chunk<S>(p.fan_in(), plane, in.batch);
  for (std::size_t b0 = 0; b0 < in.batch; b0 += chunk) {
    const std::size_t nb = std::min(chunk, in.batch - b0);
    const auto ncols = static_cast<Eigen::Index>(nb * plane);
    ConstStridedMap<S> dy_chunk(grad.data.data() + b0 * plane, out_c, ncols, Eigen::OuterStride<>(cols));
    im2col(in, k, b0, nb, scratch);
    {
      ConstMatMap<S> x(scratch.data(), fan_in, ncols);
      dw.noalias() += dy_chunk * x.transpose();
    }
    if (need_input_grad) {
      MatMap<S> dcol(scratch.data(), fan_in, ncols);
      dcol.noalias() = weight.transpose() * dy_chunk;
      col2im(scratch, k, b0, nb, dx);
    }
  }
  return dx;
}

template <typename S>
Tensor<S> maxpool_forward(const LayerSpec& spec, const Tensor<S>& in,
                          std::vector<std::uint8_t>* argmax) {
  if (in.height % 2 != 0 || in.width % 2 != 0) {
    throw ShapeError("max-pool layer '" + spec.name + "' needs even spatial dimensions, got " +
                     std::to_string(in.height) + "x" + std::to_string(in.width));
  }
  const std::size_t oh = in.height / 2, ow = in.width / 2;
  Tensor<S> out(in.channels, in.batch, oh, ow);
  if (argmax) argmax->assign(out.size(), 0);
  for (std::size_t c = 0; c < in.channels; ++c) {
    for (std::size_t b = 0; b < in.batch; ++b) {
      const S* src = in.plane(c, b);
      S* dst = out.plane(c, b);
      const std::size_t base = (c * in.batch + b) * oh * ow;
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
          const S* p0 = src + (2 * y) * in.width + 2 * x;
          const S* p1 = p0 + in.width;
          const S cand[4] = {p0[0], p0[1], p1[0], p1[1]};
          std::uint8_t best = 0;
          for (std::uint8_t q = 1; q < 4; ++q)
            if (cand[q] > cand[best]) best = q;
          dst[y * ow + x] = cand[best];
          if (argmax) (*argmax)[base + y * ow + x] = best;
        }
      }
    }
  }
  return out;
}

template <typename S>
Tensor<S> maxpool_backward(const Tensor<S>& in, const std::vector<std::uint8_t>& argmax,
                           const Tensor<S>& grad) {
  Tensor<S> dx(in.channels, in.batch, in.height, in.width);
  const std::size_t oh = grad.height, ow = grad.width;
  for (std::size_t c = 0; c < in.channels; ++c) {
    for (std::size_t b = 0; b < in.batch; ++b) {
      const S* g = grad.plane(c, b);
      S* d = dx.plane(c, b);
      const std::size_t base = (c * in.batch + b) * oh * ow;
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
          const std::uint8_t q = argmax[base + y * ow + x];
          d[(2 * y + q / 2) * in.width + 2 * x + q % 2] += g[y * ow + x];
        }
      }
    }
  }
  return dx;
}

// Nearest-neighbour x2.
template <typename S>
Tensor<S> upsample_forward(const Tensor<S>& in) {
  Tensor<S> out(in.channels, in.batch, in.height * 2, in.width * 2);
  for (std::size_t c = 0; c < in.channels; ++c) {
    for (std::size_t b = 0; b < in.batch; ++b) {
      const S* src = in.plane(c, b);
      S* dst = out.plane(c, b);
      for (std::size_t y = 0; y < out.height; ++y) {
        const S* s = src + (y / 2) * in.width;
        S* d = dst + y * out.width;
        for (std::size_t x = 0; x < out.width; ++x) d[x] = s[x / 2];
      }
    }
  }
  return out;
}

template <typename S>
Tensor<S> upsample_backward(const Tensor<S>& in, const Tensor<S>& grad) {
  Tensor<S> dx(in.channels, in.batch, in.height, in.width);
  for (std::size_t c = 0; c < in.channels; ++c) {
    for (std::size_t b = 0; b < in.batch; ++b) {
      const S* g = grad.plane(c, b);
      S* d = dx.plane(c, b);
      for (std::size_t y = 0; y < grad.height; ++y) {
        for (std::size_t x = 0; x < grad.width; ++x) d[(y / 2) * in.width + x / 2] += g[y * grad.width + x];
      }
    }
  }
  return dx;
}

template <typename S>
Tensor<S> avgpool_forward(const Tensor<S>& in) {
  Tensor<S> out(in.channels, in.batch, 1, 1);
  const S inv = S{1} / static_cast<S>(in.plane_size());
  for (std::size_t c = 0; c < in.channels; ++c) {
    for (std::size_t b = 0; b < in.batch; ++b) {
      const S* p = in.plane(c, b);
      S acc{0};
      for (std::size_t k = 0; k < in.plane_size(); ++k) acc += p[k];
      out.at(c, b, 0, 0) = acc * inv;
    }
  }
  return out;
}

template <typename S>
Tensor<S> avgpool_backward(const Tensor<S>& in, const Tensor<S>& grad) {
  Tensor<S> dx(in.channels, in.batch, in.height, in.width);
  const S inv = S{1} / static_cast<S>(in.plane_size());
  for (std::size_t c = 0; c < in.channels; ++c) {
    for (std::size_t b = 0; b < in.batch; ++b) {
      const S g = grad.at(c, b, 0, 0) * inv;
      S* d = dx.plane(c, b);
      for (std::size_t k = 0; k < in.plane_size(); ++k) d[k] = g;
    }
  }
  return dx;
}

}  // namespace detail

// Runs `net` on `input`. In train mode dropout draws its mask from
// `dropout_rng`; in eval mode dropout is the identity. When `trace` is given,
// every intermediate activation is kept for backward().
template <typename S>
Tensor<S> forward(const Network<S>& net, std::type_identity_t<Tensor<S>> input, bool train_mode,
                  Rng* dropout_rng,
                  std::type_identity_t<Trace<S>>* trace) {
  if (input.channels != net.in_channels) {
    throw ShapeError(net.name + " expects " + std::to_string(net.in_channels) +
                     " input channels, got " + std::to_string(input.channels));
  }
  static thread_local AlignedVector<S> scratch;
  if (trace) {
    trace->acts.clear();
    trace->acts.reserve(net.plan.size() + 1);
    trace->pool_argmax.assign(net.plan.size(), {});
    trace->dropout_mask.assign(net.plan.size(), {});
  }
  Tensor<S> x = std::move(input);
  for (std::size_t l = 0; l < net.plan.size(); ++l) {
    const auto& spec = net.plan[l];
    Tensor<S> y;
    switch (spec.kind) {
      case LayerKind::conv:
      case LayerKind::fully_connected:
        y = detail::affine_forward(spec, net.params[l], x, scratch);
        break;
      case LayerKind::maxpool:
        y = detail::maxpool_forward(spec, x, trace ? &trace->pool_argmax[l] : nullptr);
        break;
      case LayerKind::upsample:
        y = detail::upsample_forward(x);
        break;
      case LayerKind::avgpool_global:
        y = detail::avgpool_forward(x);
        break;
      case LayerKind::dropout:
        if (train_mode && spec.rate > 0.0) {
          if (!dropout_rng) throw UsageError("train-mode dropout needs an RNG");
          const S keep_scale = static_cast<S>(1.0 / (1.0 - spec.rate));
          std::vector<S> mask(x.size());
          for (auto& m : mask) m = dropout_rng->uniform() < spec.rate ? S{0} : keep_scale;
          y = x;
          for (std::size_t j = 0; j < y.size(); ++j) y.data[j] *= mask[j];
          if (trace) trace->dropout_mask[l] = std::move(mask);
        } else {
          y = x;
        }
        break;
    }
    if (trace) {
      trace->acts.push_back(std::move(x));
    }
    x = std::move(y);
  }
  if (trace) trace->acts.push_back(x);
  return x;
}

// Back-propagates `grad_out` (dLoss/dOutput) through a traced forward pass.
// Parameter gradients are added into `grads`. Returns dLoss/dInput when
// `need_input_grad` is set, otherwise an empty tensor.
template <typename S>
Tensor<S> backward(const Network<S>& net, const Trace<S>& trace, Tensor<S> grad_out,
                   ParamSet<S>& grads, bool need_input_grad) {
  if (trace.acts.size() != net.plan.size() + 1) throw UsageError("backward() needs a full trace");
  static thread_local AlignedVector<S> scratch;
  Tensor<S> g = std::move(grad_out);
  for (std::size_t l = net.plan.size(); l-- > 0;) {
    const auto& spec = net.plan[l];
    const Tensor<S>& in = trace.acts[l];
    const bool want_dx = need_input_grad || l > 0;
    switch (spec.kind) {
      case LayerKind::conv:
      case LayerKind::fully_connected:
        g = detail::affine_backward(spec, net.params[l], in, trace.acts[l + 1], std::move(g),
                                    grads[l], want_dx, scratch);
        break;
      case LayerKind::maxpool:
        g = detail::maxpool_backward(in, trace.pool_argmax[l], g);
        break;
      case LayerKind::upsample:
        g = detail::upsample_backward(in, g);
        break;
      case LayerKind::avgpool_global:
        g = detail::avgpool_backward(in, g);
        break;
      case LayerKind::dropout:
        if (!trace.dropout_mask[l].empty()) {
          for (std::size_t j = 0; j < g.size(); ++j) g.data[j] *= trace.dropout_mask[l][j];
        }
        break;
    }
    if (!want_dx) return {};
  }
  return g;
}

}  // namespace cellcount
