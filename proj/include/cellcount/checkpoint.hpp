#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cellcount/errors.hpp"
#include "cellcount/io.hpp"
#include "cellcount/model.hpp"

namespace cellcount {

// Checkpoint container, little-endian:
//   "CCKP" u32 version
//   u32 n_meta,    n_meta x (string key, string value)
//   u32 n_tensors, n_tensors x (string name, u32 rank, rank x u32 dim, float32 data...)
// where string = u32 length + bytes. DRM, DAM and DCM share the container;
// tensor names are "<network>.<layer>.weight|bias".
struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<float> data;
};

struct Checkpoint {
  std::map<std::string, std::string> metadata;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os = io::open_out(path);
  os.write("CCKP", 4);
  io::put_u32(os, kCheckpointVersion);
  io::put_u32(os, static_cast<std::uint32_t>(ckpt.metadata.size()));
  for (const auto& [k, v] : ckpt.metadata) {
    io::put_string(os, k);
    io::put_string(os, v);
  }
  io::put_u32(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    io::put_string(os, t.name);
    io::put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) io::put_u32(os, d);
    for (float v : t.data) io::put_f32(os, v);
  }
  if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is = io::open_in(path);
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "CCKP") {
    throw FormatError(path.string() + ": not a checkpoint (bad magic)");
  }
  if (io::get_u32(is) != kCheckpointVersion) throw FormatError(path.string() + ": unsupported version");
  Checkpoint ckpt;
  const std::uint32_t n_meta = io::get_u32(is);
  for (std::uint32_t k = 0; k < n_meta; ++k) {
    std::string key = io::get_string(is);
    ckpt.metadata[key] = io::get_string(is);
  }
  const std::uint32_t n_tensors = io::get_u32(is);
  for (std::uint32_t k = 0; k < n_tensors; ++k) {
    NamedTensor t;
    t.name = io::get_string(is);
    const std::uint32_t rank = io::get_u32(is);
    if (rank > 8) throw FormatError(path.string() + ": tensor rank too large");
    std::size_t count = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      t.shape.push_back(io::get_u32(is));
      count *= t.shape.back();
    }
    t.data.resize(count);
    for (auto& v : t.data) v = io::get_f32(is);
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

namespace detail {

template <typename S>
void append_network(Checkpoint& ckpt, const Network<S>& net) {
  ckpt.metadata["architecture." + net.name] = describe_architecture(net);
  for (std::size_t l = 0; l < net.plan.size(); ++l) {
    if (!net.plan[l].has_params()) continue;
    const auto& p = net.params[l];
    const std::string prefix = net.name + "." + net.plan[l].name;
    NamedTensor w{prefix + ".weight", {}, {p.weight.begin(), p.weight.end()}};
    for (auto d : p.weight_shape) w.shape.push_back(static_cast<std::uint32_t>(d));
    NamedTensor b{prefix + ".bias", {static_cast<std::uint32_t>(p.bias.size())},
                  {p.bias.begin(), p.bias.end()}};
    ckpt.tensors.push_back(std::move(w));
    ckpt.tensors.push_back(std::move(b));
  }
}

inline const NamedTensor& require(const Checkpoint& ckpt, const std::string& name) {
  const NamedTensor* t = ckpt.find(name);
  if (!t) throw FormatError("checkpoint is missing tensor '" + name + "'");
  return *t;
}

// Output width of each parameterized layer, read from the weight shapes.
inline std::vector<int> widths_of(const Checkpoint& ckpt, const std::string& net,
                                  const std::vector<std::string>& layers) {
  std::vector<int> out;
  for (const auto& l : layers) out.push_back(static_cast<int>(require(ckpt, net + "." + l + ".weight").shape.at(0)));
  return out;
}

template <typename S>
void fill_network(const Checkpoint& ckpt, Network<S>& net) {
  const auto it = ckpt.metadata.find("architecture." + net.name);
  if (it != ckpt.metadata.end() && it->second != describe_architecture(net)) {
    throw FormatError("checkpoint architecture for '" + net.name + "' does not match");
  }
  for (std::size_t l = 0; l < net.plan.size(); ++l) {
    if (!net.plan[l].has_params()) continue;
    auto& p = net.params[l];
    const std::string prefix = net.name + "." + net.plan[l].name;
    const NamedTensor& w = require(ckpt, prefix + ".weight");
    const NamedTensor& b = require(ckpt, prefix + ".bias");
    std::vector<std::size_t> shape(w.shape.begin(), w.shape.end());
    if (shape != p.weight_shape || b.data.size() != p.bias.size()) {
      throw FormatError("tensor '" + prefix + "' has an unexpected shape");
    }
    p.weight.assign(w.data.begin(), w.data.end());
    p.bias.assign(b.data.begin(), b.data.end());
  }
}

template <typename S>
Network<S> load_encoder_net(const Checkpoint& ckpt) {
  const auto w = widths_of(ckpt, "encoder", {"conv1", "conv2", "conv3", "conv4"});
  Network<S> net = build_network<S>("encoder", 1, encoder_plan({w[0], w[1], w[2], w[3]}), 0);
  fill_network(ckpt, net);
  return net;
}

}  // namespace detail

// Shared metadata: kind, seed, epoch/step and an FNV-1a hash of the architectures.
inline void stamp(Checkpoint& ckpt, const std::string& kind, std::uint64_t seed, std::size_t epoch) {
  ckpt.metadata["kind"] = kind;
  ckpt.metadata["seed"] = std::to_string(seed);
  ckpt.metadata["epoch"] = std::to_string(epoch);
  std::string arch;
  for (const auto& [k, v] : ckpt.metadata)
    if (k.rfind("architecture.", 0) == 0) arch += v + "\n";
  std::ostringstream hex;
  hex << std::hex << fnv1a(arch);
  ckpt.metadata["architecture_hash"] = hex.str();
}

template <typename S>
Checkpoint to_checkpoint(const DrmParams<S>& p, std::uint64_t seed, std::size_t epoch) {
  Checkpoint c;
  detail::append_network(c, p.encoder);
  detail::append_network(c, p.decoder);
  stamp(c, "drm", seed, epoch);
  return c;
}

template <typename S>
Checkpoint to_checkpoint(const DamParams<S>& p, std::uint64_t seed, std::size_t step) {
  Checkpoint c;
  detail::append_network(c, p.encoder);
  stamp(c, "dam", seed, step);
  return c;
}

template <typename S>
Checkpoint to_checkpoint(const DcmParams<S>& p, std::uint64_t seed, std::size_t step) {
  Checkpoint c;
  detail::append_network(c, p.critic);
  c.metadata["critic.dropout"] = std::to_string(p.critic.plan.at(4).rate);
  stamp(c, "dcm", seed, step);
  return c;
}

template <typename S = float>
DrmParams<S> drm_from_checkpoint(const Checkpoint& ckpt) {
  DrmParams<S> p;
  p.encoder = detail::load_encoder_net<S>(ckpt);
  const auto d = detail::widths_of(ckpt, "decoder", {"conv5", "conv6", "conv7", "conv8"});
  p.decoder = build_network<S>("decoder", p.encoder.params.back().out_features(),
                               decoder_plan({d[0], d[1], d[2], d[3]}), 0);
  detail::fill_network(ckpt, p.decoder);
  return p;
}

// Encoder tensors from either a DRM or a DAM checkpoint.
template <typename S = float>
Network<S> encoder_from_checkpoint(const Checkpoint& ckpt) {
  return detail::load_encoder_net<S>(ckpt);
}

template <typename S = float>
DcmParams<S> dcm_from_checkpoint(const Checkpoint& ckpt) {
  const auto w = detail::widths_of(ckpt, "critic", {"conv1", "conv2", "fc1"});
  const auto& first = detail::require(ckpt, "critic.conv1.weight");
  DcmWidths widths{{w[0], w[1]}, w[2], 0.5};
  if (auto it = ckpt.metadata.find("critic.dropout"); it != ckpt.metadata.end()) {
    widths.dropout = std::stod(it->second);
  }
  DcmParams<S> p{build_network<S>("critic", first.shape.at(1), critic_plan(widths), 0)};
  detail::fill_network(ckpt, p.critic);
  return p;
}

}  // namespace cellcount
