#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "cellcount/adaptation.hpp"
#include "cellcount/density.hpp"
#include "cellcount/errors.hpp"
#include "cellcount/io.hpp"
#include "cellcount/synthgen.hpp"
#include "cellcount/training.hpp"

namespace cellcount {

struct PathsConfig {
  std::string dataset_dir;
  std::string checkpoint_dir;
  std::string report_dir;
};

// Sectioned key-value run configuration:
//
//   seed = 7
//   [synth]   image_height, image_width, cell_count_range = lo, hi, ...
//   [shift]   gamma, intensity_invert, extra_blur_sigma, ...
//   [kernel]  sigma, half_width, renormalize_border
//   [train]   learning_rate, momentum, batch_size, epochs, ...
//   [adapt]   dam_learning_rate, dcm_learning_rate, batch_size, crop_size, ...
//   [paths]   dataset_dir, checkpoint_dir, report_dir
//
// Section seeds default to the global seed plus a fixed per-section offset.
struct RunConfig {
  std::uint64_t seed = 0;
  SynthConfig synth;
  ShiftConfig shift;
  KernelConfig kernel;
  TrainConfig train;
  AdaptConfig adapt;
  PathsConfig paths;
  std::optional<std::uint64_t> synth_seed, shift_seed, train_seed, adapt_seed;

  // Applies the global seed to every section without an explicit one.
  void resolve_seeds() {
    synth.seed = synth_seed.value_or(seed);
    shift.seed = shift_seed.value_or(seed + 101);
    train.seed = train_seed.value_or(seed + 202);
    adapt.seed = adapt_seed.value_or(seed + 303);
  }

  void validate() const {
    synth.validate_for(kernel);
    shift.validate();
    kernel.validate();
    train.validate();
    adapt.validate();
  }
};

namespace detail {

template <typename T>
T parse_value(const std::string& key, const std::string& text);

template <>
inline double parse_value<double>(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + text + "'");
  }
  if (used != text.size()) throw ConfigError("config key '" + key + "': trailing characters in '" + text + "'");
  return v;
}

template <>
inline std::uint64_t parse_value<std::uint64_t>(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    if (!text.empty() && text[0] == '-') throw std::invalid_argument("negative");
    v = std::stoull(text, &used);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + text + "'");
  }
  if (used != text.size()) throw ConfigError("config key '" + key + "': trailing characters in '" + text + "'");
  return v;
}

template <>
inline bool parse_value<bool>(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + text + "'");
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

template <typename T>
Range<T> parse_range(const std::string& key, const std::string& text) {
  const auto comma = text.find(',');
  if (comma == std::string::npos) throw ConfigError("config key '" + key + "': expected 'low, high'");
  const std::string lo = trim(text.substr(0, comma)), hi = trim(text.substr(comma + 1));
  if constexpr (std::is_same_v<T, int>) {
    const double a = parse_value<double>(key, lo), b = parse_value<double>(key, hi);
    if (a != std::floor(a) || b != std::floor(b)) throw ConfigError("config key '" + key + "': expected integers");
    return {static_cast<int>(a), static_cast<int>(b)};
  } else {
    return {parse_value<double>(key, lo), parse_value<double>(key, hi)};
  }
}

template <typename T>
std::string format_range(const Range<T>& r) {
  std::ostringstream os;
  os.precision(17);
  os << r.low << ", " << r.high;
  return os.str();
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// Key table: name -> (setter from text, getter to text).
struct Binding {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(RunConfig)> get;  // by value: accessors need a mutable config
};

template <typename T, typename Field>
Binding bind_number(Field field) {
  return {[field](RunConfig& c, const std::string& v) {
            if constexpr (std::is_same_v<T, double>) {
              field(c) = parse_value<double>("", v);
            } else {
              field(c) = static_cast<T>(parse_value<std::uint64_t>("", v));
            }
          },
          [field](RunConfig c) {
            if constexpr (std::is_same_v<T, double>) return fmt(field(c));
            else return std::to_string(field(c));
          }};
}

inline const std::map<std::string, Binding>& bindings() {
  static const std::map<std::string, Binding> table = [] {
    std::map<std::string, Binding> t;
    auto dbl = [&](const std::string& k, auto f) { t[k] = bind_number<double>(f); };
    auto size = [&](const std::string& k, auto f) { t[k] = bind_number<std::size_t>(f); };
    auto flag = [&](const std::string& k, auto f) {
      t[k] = {[f](RunConfig& c, const std::string& v) { f(c) = parse_value<bool>("", v); },
              [f](RunConfig c) { return std::string(f(c) ? "true" : "false"); }};
    };
    auto seed = [&](const std::string& k, auto f) {
      t[k] = {[f](RunConfig& c, const std::string& v) { f(c) = parse_value<std::uint64_t>("", v); },
              [f](RunConfig c) {
                const auto& o = f(c);
                return o ? std::to_string(*o) : std::string{};
              }};
    };
    auto irange = [&](const std::string& k, auto f) {
      t[k] = {[f](RunConfig& c, const std::string& v) { f(c) = parse_range<int>("", v); },
              [f](RunConfig c) { return format_range(f(c)); }};
    };
    auto drange = [&](const std::string& k, auto f) {
      t[k] = {[f](RunConfig& c, const std::string& v) { f(c) = parse_range<double>("", v); },
              [f](RunConfig c) { return format_range(f(c)); }};
    };
    auto path = [&](const std::string& k, auto f) {
      t[k] = {[f](RunConfig& c, const std::string& v) { f(c) = v; },
              [f](RunConfig c) { return f(c); }};
    };

    t["seed"] = {[](RunConfig& c, const std::string& v) { c.seed = parse_value<std::uint64_t>("seed", v); },
                 [](const RunConfig& c) { return std::to_string(c.seed); }};

    size("synth.image_height", [](RunConfig& c) -> auto& { return c.synth.image_height; });
    size("synth.image_width", [](RunConfig& c) -> auto& { return c.synth.image_width; });
    irange("synth.cell_count_range", [](RunConfig& c) -> auto& { return c.synth.cell_count_range; });
    drange("synth.cell_radius_range", [](RunConfig& c) -> auto& { return c.synth.cell_radius_range; });
    drange("synth.cell_eccentricity_range", [](RunConfig& c) -> auto& { return c.synth.cell_eccentricity_range; });
    drange("synth.peak_intensity_range", [](RunConfig& c) -> auto& { return c.synth.peak_intensity_range; });
    dbl("synth.psf_sigma", [](RunConfig& c) -> auto& { return c.synth.psf_sigma; });
    dbl("synth.noise_std", [](RunConfig& c) -> auto& { return c.synth.noise_std; });
    dbl("synth.background_level", [](RunConfig& c) -> auto& { return c.synth.background_level; });
    dbl("synth.min_centroid_margin", [](RunConfig& c) -> auto& { return c.synth.min_centroid_margin; });
    seed("synth.seed", [](RunConfig& c) -> auto& { return c.synth_seed; });

    dbl("shift.gamma", [](RunConfig& c) -> auto& { return c.shift.gamma; });
    flag("shift.intensity_invert", [](RunConfig& c) -> auto& { return c.shift.intensity_invert; });
    dbl("shift.extra_blur_sigma", [](RunConfig& c) -> auto& { return c.shift.extra_blur_sigma; });
    dbl("shift.extra_noise_std", [](RunConfig& c) -> auto& { return c.shift.extra_noise_std; });
    dbl("shift.contrast_scale", [](RunConfig& c) -> auto& { return c.shift.contrast_scale; });
    seed("shift.seed", [](RunConfig& c) -> auto& { return c.shift_seed; });

    dbl("kernel.sigma", [](RunConfig& c) -> auto& { return c.kernel.sigma; });
    t["kernel.half_width"] = {
        [](RunConfig& c, const std::string& v) {
          c.kernel.half_width = static_cast<int>(parse_value<std::uint64_t>("kernel.half_width", v));
        },
        [](const RunConfig& c) { return std::to_string(c.kernel.half_width); }};
    flag("kernel.renormalize_border", [](RunConfig& c) -> auto& { return c.kernel.renormalize_border; });

    dbl("train.learning_rate", [](RunConfig& c) -> auto& { return c.train.learning_rate; });
    dbl("train.momentum", [](RunConfig& c) -> auto& { return c.train.momentum; });
    size("train.batch_size", [](RunConfig& c) -> auto& { return c.train.batch_size; });
    size("train.epochs", [](RunConfig& c) -> auto& { return c.train.epochs; });
    dbl("train.validation_fraction", [](RunConfig& c) -> auto& { return c.train.validation_fraction; });
    dbl("train.target_scale", [](RunConfig& c) -> auto& { return c.train.target_scale; });
    size("train.micro_batch", [](RunConfig& c) -> auto& { return c.train.micro_batch; });
    seed("train.seed", [](RunConfig& c) -> auto& { return c.train_seed; });

    dbl("adapt.dam_learning_rate", [](RunConfig& c) -> auto& { return c.adapt.dam_learning_rate; });
    dbl("adapt.dcm_learning_rate", [](RunConfig& c) -> auto& { return c.adapt.dcm_learning_rate; });
    dbl("adapt.dam_momentum", [](RunConfig& c) -> auto& { return c.adapt.dam_momentum; });
    dbl("adapt.dcm_momentum", [](RunConfig& c) -> auto& { return c.adapt.dcm_momentum; });
    t["adapt.optimizer"] = {
        [](RunConfig& c, const std::string& v) { c.adapt.optimizer = parse_optimizer(v); },
        [](const RunConfig& c) { return std::string(to_string(c.adapt.optimizer)); }};
    dbl("adapt.rmsprop_decay", [](RunConfig& c) -> auto& { return c.adapt.rmsprop_decay; });
    size("adapt.batch_size", [](RunConfig& c) -> auto& { return c.adapt.batch_size; });
    size("adapt.crop_size", [](RunConfig& c) -> auto& { return c.adapt.crop_size; });
    size("adapt.critic_iters", [](RunConfig& c) -> auto& { return c.adapt.critic_iters_per_dam_step; });
    size("adapt.critic_warmup_iters", [](RunConfig& c) -> auto& { return c.adapt.critic_warmup_iters; });
    dbl("adapt.weight_clip", [](RunConfig& c) -> auto& { return c.adapt.weight_clip; });
    size("adapt.total_dam_steps", [](RunConfig& c) -> auto& { return c.adapt.total_dam_steps; });
    size("adapt.monitor_size", [](RunConfig& c) -> auto& { return c.adapt.monitor_size; });
    flag("adapt.cache_source_features", [](RunConfig& c) -> auto& { return c.adapt.cache_source_features; });
    size("adapt.micro_batch", [](RunConfig& c) -> auto& { return c.adapt.micro_batch; });
    seed("adapt.seed", [](RunConfig& c) -> auto& { return c.adapt_seed; });

    path("paths.dataset_dir", [](RunConfig& c) -> auto& { return c.paths.dataset_dir; });
    path("paths.checkpoint_dir", [](RunConfig& c) -> auto& { return c.paths.checkpoint_dir; });
    path("paths.report_dir", [](RunConfig& c) -> auto& { return c.paths.report_dir; });
    return t;
  }();
  return table;
}

}  // namespace detail

// Sets one "section.key" (or "seed"); unknown keys are rejected.
inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& table = detail::bindings();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  try {
    it->second.set(cfg, detail::trim(value));
  } catch (const ConfigError& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

inline RunConfig parse_run_config(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream is(text);
  try {
    boost::property_tree::ini_parser::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  RunConfig cfg;
  for (const auto& [name, node] : tree) {
    if (node.empty()) {
      set_config_value(cfg, name, node.data());
      continue;
    }
    for (const auto& [key, leaf] : node) {
      if (!leaf.empty()) throw ConfigError("nested sections are not supported ('" + name + "')");
      set_config_value(cfg, name + "." + key, leaf.data());
    }
  }
  cfg.resolve_seeds();
  return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse_run_config(io::read_text(path));
}

// Every key with its current value, e.g. for manifests. Seeds are resolved.
inline std::map<std::string, std::string> config_key_values(const RunConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const auto& [key, b] : detail::bindings()) out[key] = b.get(cfg);
  out["synth.seed"] = std::to_string(cfg.synth.seed);
  out["shift.seed"] = std::to_string(cfg.shift.seed);
  out["train.seed"] = std::to_string(cfg.train.seed);
  out["adapt.seed"] = std::to_string(cfg.adapt.seed);
  return out;
}

}  // namespace cellcount
