#pragma once

#include <array>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "cellcount/density.hpp"
#include "cellcount/errors.hpp"
#include "cellcount/network.hpp"
#include "cellcount/tensor.hpp"

namespace cellcount {

// Kernel counts of the density regression model. The defaults are the full
// architecture; tests shrink them for finite-difference checks.
struct DrmWidths {
  std::array<int, 4> encoder{32, 64, 128, 512};
  std::array<int, 4> decoder{128, 64, 32, 1};
  friend bool operator==(const DrmWidths&, const DrmWidths&) = default;
};

struct DcmWidths {
  std::array<int, 2> conv{128, 256};
  int fc = 256;
  double dropout = 0.5;
  friend bool operator==(const DcmWidths&, const DcmWidths&) = default;
};

// Spatial reduction of the encoder: three 2x2 pools.
inline constexpr std::size_t kEncoderStride = 8;

inline std::vector<LayerSpec> encoder_plan(const std::array<int, 4>& w) {
  using A = Activation;
  return {LayerSpec::conv("conv1", w[0], 3, A::relu), LayerSpec::maxpool("pool1"),
          LayerSpec::conv("conv2", w[1], 3, A::relu), LayerSpec::maxpool("pool2"),
          LayerSpec::conv("conv3", w[2], 3, A::relu), LayerSpec::maxpool("pool3"),
          LayerSpec::conv("conv4", w[3], 3, A::relu)};
}

inline std::vector<LayerSpec> decoder_plan(const std::array<int, 4>& w) {
  using A = Activation;
  return {LayerSpec::upsample("up1"), LayerSpec::conv("conv5", w[0], 3, A::relu),
          LayerSpec::upsample("up2"), LayerSpec::conv("conv6", w[1], 3, A::relu),
          LayerSpec::upsample("up3"), LayerSpec::conv("conv7", w[2], 3, A::relu),
          LayerSpec::conv("conv8", w[3], 1, A::linear)};
}

inline std::vector<LayerSpec> critic_plan(const DcmWidths& w) {
  using A = Activation;
  return {LayerSpec::conv("conv1", w.conv[0], 3, A::relu),
          LayerSpec::conv("conv2", w.conv[1], 3, A::relu),
          LayerSpec::global_avgpool("avg"),
          LayerSpec::fully_connected("fc1", w.fc, A::relu),
          LayerSpec::dropout("drop", w.dropout),
          LayerSpec::fully_connected("head", 1, A::linear)};
}

// Source density regression model: encoder (ECNN) + decoder (DCNN).
template <typename S = float>
struct DrmParams {
  Network<S> encoder;
  Network<S> decoder;
  friend bool operator==(const DrmParams&, const DrmParams&) = default;
};

// Target-domain encoder; layerwise congruent with DrmParams::encoder.
template <typename S = float>
struct DamParams {
  Network<S> encoder;
  friend bool operator==(const DamParams&, const DamParams&) = default;
};

// Domain critic: scalar Wasserstein surrogate over feature maps.
template <typename S = float>
struct DcmParams {
  Network<S> critic;
  friend bool operator==(const DcmParams&, const DcmParams&) = default;
};

template <typename S = float>
DrmParams<S> make_drm(std::uint64_t seed, const DrmWidths& widths = {}) {
  return {build_network<S>("encoder", 1, encoder_plan(widths.encoder), seed),
          build_network<S>("decoder", static_cast<std::size_t>(widths.encoder[3]),
                           decoder_plan(widths.decoder), seed + 1)};
}

// DAM initialized as an exact copy of a trained encoder.
template <typename S>
DamParams<S> make_dam_from(const Network<S>& ecnn) {
  return {ecnn};
}

template <typename S = float>
DcmParams<S> make_dcm(std::uint64_t seed, std::size_t feature_channels = 512,
                      const DcmWidths& widths = {}) {
  return {build_network<S>("critic", feature_channels, critic_plan(widths), seed)};
}

inline void check_encoder_input(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0 || rows % kEncoderStride != 0 || cols % kEncoderStride != 0) {
    throw ShapeError("image shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                     " must have both dimensions divisible by " + std::to_string(kEncoderStride));
  }
}

// Batched encoder pass over a 1 x B x M x N tensor.
template <typename S>
FeatureMap<S> encode(const Network<S>& encoder, Tensor<S> images, Trace<S>* trace = nullptr) {
  check_encoder_input(images.height, images.width);
  return forward(encoder, std::move(images), false, nullptr, trace);
}

template <typename S>
FeatureMap<S> encode(const Network<S>& encoder, const Image& img) {
  return encode(encoder, stack_images<S>(std::vector<const Image*>{&img}));
}

template <typename S>
Tensor<S> decode(const Network<S>& decoder, FeatureMap<S> features, Trace<S>* trace = nullptr) {
  return forward(decoder, std::move(features), false, nullptr, trace);
}

// Raw density estimate (may contain negatives) for one image.
template <typename S>
Grid<S> drm_forward(const DrmParams<S>& params, const Image& img) {
  return unstack<S>(decode(params.decoder, encode(params.encoder, img)), 0);
}

template <typename S>
Tensor<S> drm_forward(const DrmParams<S>& params, Tensor<S> images) {
  return decode(params.decoder, encode(params.encoder, std::move(images)));
}

// One scalar per batch sample.
template <typename S>
std::vector<S> critic_forward(const DcmParams<S>& params, const FeatureMap<S>& features,
                              bool train_mode, Rng* dropout_rng = nullptr,
                              Trace<S>* trace = nullptr) {
  const Tensor<S> out = forward(params.critic, features, train_mode, dropout_rng, trace);
  return std::vector<S>(out.data.begin(), out.data.end());
}

// Deterministic description of a plan; hashed into checkpoint metadata.
template <typename S>
std::string describe_architecture(const Network<S>& net) {
  std::ostringstream os;
  os << net.name << ":in=" << net.in_channels;
  for (const auto& l : net.plan) {
    os << ';' << l.name << ',' << static_cast<int>(l.kind) << ',' << l.kernels << ','
       << l.kernel_size << ',' << static_cast<int>(l.activation) << ',' << l.rate;
  }
  return os.str();
}

// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (const unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace cellcount
