#pragma once

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "cellcount/adaptation.hpp"
#include "cellcount/checkpoint.hpp"
#include "cellcount/config.hpp"
#include "cellcount/dataset.hpp"
#include "cellcount/evalcount.hpp"
#include "cellcount/reports.hpp"
#include "cellcount/synthgen.hpp"
#include "cellcount/training.hpp"

namespace cellcount::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kRuntime = 1, kUsage = 2 };

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;  // section.key=value

  RunConfig resolve() const {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + kv + "'");
      set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (seed) cfg.seed = *seed;
    cfg.resolve_seeds();
    return cfg;
  }
};

inline void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "Run configuration file");
  cmd->add_option("--seed", o.seed, "Global seed (overrides the config)");
  cmd->add_option("--set", o.overrides, "Override a config key: section.key=value");
}

inline void require_path(const std::string& path, const std::string& what) {
  if (path.empty()) throw UsageError(what + " is required");
  if (!fs::exists(path)) throw UsageError(what + " not found: " + path);
}

// Images with density targets; maps are rebuilt from centroids when absent.
inline std::vector<TrainingSample> training_samples(const Dataset& ds, const KernelConfig& kernel) {
  std::vector<TrainingSample> out;
  for (const auto& s : ds.samples) {
    if (s.density) {
      out.push_back({s.image, *s.density});
    } else if (s.centroids) {
      out.push_back({s.image, build_density_map(s.image.rows(), s.image.cols(), *s.centroids, kernel)});
    } else {
      throw DataError("sample " + s.id + " has neither a density map nor centroids");
    }
  }
  return out;
}

inline std::vector<Image> images_of(const Dataset& ds) {
  std::vector<Image> out;
  for (const auto& s : ds.samples) out.push_back(s.image);
  return out;
}

inline std::optional<std::int64_t> truth_of(const DatasetSample& s) {
  if (!s.centroids) return std::nullopt;
  return static_cast<std::int64_t>(s.centroids->size());
}

// --- synth -----------------------------------------------------------------

inline void cmd_synth(const RunConfig& cfg, std::size_t count, const fs::path& out) {
  cfg.synth.validate_for(cfg.kernel);
  const auto images = generate_annotated(cfg.synth, count);
  io::KeyValues manifest = config_key_values(cfg);
  manifest["command"] = "synth";
  manifest["domain"] = "source";
  write_dataset(out, images, cfg.kernel, manifest);
}

// --- shift -----------------------------------------------------------------

inline void cmd_shift(const RunConfig& cfg, const fs::path& in, const fs::path& out) {
  cfg.shift.validate();
  const Dataset ds = load_dataset(in);
  std::vector<AnnotatedImage> shifted;
  for (std::size_t k = 0; k < ds.samples.size(); ++k) {
    AnnotatedImage a{ds.samples[k].image, ds.samples[k].centroids.value_or(CentroidSet{}), Domain::source};
    shifted.push_back(apply_shift(a, cfg.shift, k));
  }
  io::KeyValues manifest = config_key_values(cfg);
  for (const auto& [k, v] : ds.manifest) manifest["source." + k] = v;
  manifest["command"] = "shift";
  manifest["domain"] = "target";
  write_dataset(out, shifted, cfg.kernel, manifest);
}

// --- train-drm -------------------------------------------------------------

inline TrainResult<float> cmd_train_drm(const RunConfig& cfg, const fs::path& dataset,
                                        const fs::path& out, std::ostream& log) {
  cfg.train.validate();
  const Dataset ds = load_dataset(dataset);
  if (ds.samples.empty()) throw UsageError("dataset " + dataset.string() + " has no images");
  const auto samples = training_samples(ds, cfg.kernel);
  auto result = train_source_drm<float>(samples, cfg.train, make_drm<float>(cfg.train.seed),
                                        [&](const EpochStats& e) {
                                          log << "epoch " << e.epoch << " train_loss=" << e.train_loss
                                              << " val_mse=" << e.val_mse << " val_mae=" << e.val_mae << '\n';
                                        });
  fs::create_directories(out);
  save_checkpoint(out / "drm.ckpt", to_checkpoint(result.params, cfg.train.seed, result.report.best_epoch));
  reports::write_train_report(out / "train_report.csv", result.report);
  log << "best_epoch=" << result.report.best_epoch
      << " best_validation_mse=" << result.report.best_validation_mse << '\n';
  return result;
}

// --- adapt -----------------------------------------------------------------

inline AdaptResult<float> cmd_adapt(const RunConfig& cfg, const fs::path& drm_ckpt,
                                    const fs::path& source, const fs::path& target,
                                    const fs::path& out, std::ostream& log) {
  cfg.adapt.validate();
  const Network<float> ecnn = encoder_from_checkpoint<float>(load_checkpoint(drm_ckpt));
  const std::vector<Image> src = images_of(load_dataset(source));
  const std::vector<Image> tgt = images_of(load_dataset(target));
  auto result = train_dam<float>(ecnn, src, tgt, cfg.adapt, [&](const AdaptStepStats& s) {
    log << "step " << s.step << " critic_loss=" << s.critic_loss << " dam_loss=" << s.dam_loss
        << " gap=" << s.gap << '\n';
  });
  fs::create_directories(out);
  save_checkpoint(out / "dam.ckpt", to_checkpoint(result.dam, cfg.adapt.seed, result.report.best_step));
  save_checkpoint(out / "dcm.ckpt", to_checkpoint(result.dcm, cfg.adapt.seed, result.report.best_step));
  reports::write_adapt_report(out / "adapt_report.csv", result.report);
  log << "initial_gap=" << result.report.initial_gap << " best_step=" << result.report.best_step << '\n';
  return result;
}

// --- count -----------------------------------------------------------------

inline std::vector<CountResult> count_inputs(const Network<float>& encoder, const Network<float>& decoder,
                                             const fs::path& input) {
  std::vector<CountResult> results;
  if (fs::is_directory(input) && fs::exists(input / "manifest.txt")) {
    const Dataset ds = load_dataset(input);
    for (const auto& s : ds.samples) results.push_back(count_image(encoder, decoder, s.image, s.id, truth_of(s)));
    return results;
  }
  for (const auto& png : list_pngs(input)) {
    results.push_back(count_image(encoder, decoder, io::read_png(png), png.stem().string()));
  }
  return results;
}

inline std::vector<CountResult> cmd_count(const fs::path& encoder_ckpt, const fs::path& decoder_ckpt,
                                          const fs::path& input, const fs::path& out) {
  const Network<float> encoder = encoder_from_checkpoint<float>(load_checkpoint(encoder_ckpt));
  const Network<float> decoder = drm_from_checkpoint<float>(load_checkpoint(decoder_ckpt)).decoder;
  const auto results = count_inputs(encoder, decoder, input);
  if (out.empty()) {
    reports::write_counts(std::cout, results);
  } else {
    reports::write_counts_csv(out, results);
  }
  return results;
}

// --- eval ------------------------------------------------------------------

struct EvalPaths {
  std::string adaptation_encoder;  // DAM checkpoint
  std::string source_drm;          // source DRM checkpoint (decoder shared with adaptation)
  std::string annotated_drm;       // DRM trained on annotated target images
};

inline ComparisonTable cmd_eval(const EvalPaths& paths, const RunConfig& cfg, const fs::path& dataset,
                                const fs::path& out, std::ostream& log) {
  const Dataset ds = load_dataset(dataset);
  std::vector<EvalSample> eval_set;
  for (const auto& s : ds.samples) {
    if (!s.centroids) throw DataError("evaluation sample " + s.id + " has no centroid annotation");
    eval_set.push_back({s.id, s.image, *s.centroids});
  }

  std::optional<DrmParams<float>> source, annotated;
  std::optional<Network<float>> dam;
  if (!paths.source_drm.empty()) source = drm_from_checkpoint<float>(load_checkpoint(paths.source_drm));
  if (!paths.annotated_drm.empty()) annotated = drm_from_checkpoint<float>(load_checkpoint(paths.annotated_drm));
  if (!paths.adaptation_encoder.empty()) {
    if (!source) throw UsageError("the adaptation arm needs --source-drm for its decoder");
    dam = encoder_from_checkpoint<float>(load_checkpoint(paths.adaptation_encoder));
  }

  std::vector<ArmModel<float>> models;
  if (dam) models.push_back({Arm::adaptation, &*dam, &source->decoder});
  if (source) models.push_back({Arm::source_only, &source->encoder, &source->decoder});
  if (annotated) models.push_back({Arm::annotated_train, &annotated->encoder, &annotated->decoder});
  const ComparisonTable table = run_comparison(models, eval_set);

  fs::create_directories(out / "panels");
  reports::write_comparison_csv(out / "comparison.csv", table);
  for (const auto& row : table.arms) {
    if (row.scores) reports::write_counts_csv(out / ("counts_" + std::string(to_string(row.arm)) + ".csv"), row.per_image);
  }
  // Panels: input | ground truth | estimate per present arm.
  for (const auto& s : eval_set) {
    std::vector<Grid<float>> panels;
    panels.push_back(s.image);
    const DensityMap truth = build_density_map(s.image.rows(), s.image.cols(), s.centroids, cfg.kernel);
    Grid<float> truth_f(truth.rows(), truth.cols());
    for (std::size_t k = 0; k < truth.size(); ++k) truth_f.values()[k] = static_cast<float>(truth.values()[k]);
    panels.push_back(std::move(truth_f));
    for (const auto& m : models) panels.push_back(estimate_density(*m.encoder, *m.decoder, s.image));
    io::write_png16(out / "panels" / (s.id + ".png"), io::tile_panels(panels));
  }
  log << reports::format_comparison(table);
  return table;
}

// --- entry point -----------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& log = std::cout) {
  CLI::App app{"Cell counting by density regression with adversarial domain adaptation"};
  app.require_subcommand(1);

  CommonOptions synth_o, shift_o, train_o, adapt_o, eval_o;

  auto* synth = app.add_subcommand("synth", "Generate an annotated synthetic dataset");
  add_common(synth, synth_o);
  std::size_t synth_count = 200;
  std::string synth_out;
  synth->add_option("--count", synth_count, "Number of images")->capture_default_str();
  synth->add_option("--out", synth_out, "Output dataset directory")->required();

  auto* shift = app.add_subcommand("shift", "Apply the domain shift to a dataset (pseudo-target)");
  add_common(shift, shift_o);
  std::string shift_in, shift_out;
  shift->add_option("--in", shift_in, "Input dataset directory")->required();
  shift->add_option("--out", shift_out, "Output dataset directory")->required();

  auto* train = app.add_subcommand("train-drm", "Train the source density regression model");
  add_common(train, train_o);
  std::string train_dataset, train_out;
  std::optional<std::size_t> epochs, train_batch;
  std::optional<double> lr;
  train->add_option("--dataset", train_dataset, "Annotated dataset directory");
  train->add_option("--out", train_out, "Output directory")->required();
  train->add_option("--epochs", epochs);
  train->add_option("--lr", lr);
  train->add_option("--batch-size", train_batch);

  auto* adapt = app.add_subcommand("adapt", "Adversarially train the domain adaptation model");
  add_common(adapt, adapt_o);
  std::string adapt_drm, adapt_src, adapt_tgt, adapt_out;
  std::optional<std::size_t> steps, crop, adapt_batch;
  adapt->add_option("--drm", adapt_drm, "Source DRM checkpoint")->required();
  adapt->add_option("--source", adapt_src, "Source dataset directory")->required();
  adapt->add_option("--target", adapt_tgt, "Target dataset directory")->required();
  adapt->add_option("--out", adapt_out, "Output directory")->required();
  adapt->add_option("--steps", steps);
  adapt->add_option("--crop-size", crop);
  adapt->add_option("--batch-size", adapt_batch);

  auto* count = app.add_subcommand("count", "Count cells in an image or directory");
  std::string count_enc, count_dec, count_in, count_out;
  count->add_option("--encoder", count_enc, "Encoder checkpoint (DRM or DAM)")->required();
  count->add_option("--decoder", count_dec, "DRM checkpoint providing the decoder")->required();
  count->add_option("--input", count_in, "PNG image, directory of PNGs or dataset directory")->required();
  count->add_option("--out", count_out, "Counts CSV (stdout when omitted)");

  auto* eval = app.add_subcommand("eval", "Score the comparison arms on an annotated dataset");
  add_common(eval, eval_o);
  EvalPaths eval_paths;
  std::string eval_dataset, eval_out;
  eval->add_option("--adaptation-encoder", eval_paths.adaptation_encoder, "DAM checkpoint");
  eval->add_option("--source-drm", eval_paths.source_drm, "Source DRM checkpoint");
  eval->add_option("--annotated-drm", eval_paths.annotated_drm, "DRM trained on annotated target images");
  eval->add_option("--dataset", eval_dataset, "Annotated evaluation dataset")->required();
  eval->add_option("--out", eval_out, "Report directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) {
      cmd_synth(synth_o.resolve(), synth_count, synth_out);
    } else if (*shift) {
      const RunConfig cfg = shift_o.resolve();
      require_path(shift_in, "--in");
      cmd_shift(cfg, shift_in, shift_out);
    } else if (*train) {
      RunConfig cfg = train_o.resolve();
      if (epochs) cfg.train.epochs = *epochs;
      if (lr) cfg.train.learning_rate = *lr;
      if (train_batch) cfg.train.batch_size = *train_batch;
      const std::string dataset = train_dataset.empty() ? cfg.paths.dataset_dir : train_dataset;
      require_path(dataset, "--dataset");
      cmd_train_drm(cfg, dataset, train_out, log);
    } else if (*adapt) {
      RunConfig cfg = adapt_o.resolve();
      if (steps) cfg.adapt.total_dam_steps = *steps;
      if (crop) cfg.adapt.crop_size = *crop;
      if (adapt_batch) cfg.adapt.batch_size = *adapt_batch;
      cfg.adapt.validate();
      require_path(adapt_drm, "--drm");
      require_path(adapt_src, "--source");
      require_path(adapt_tgt, "--target");
      cmd_adapt(cfg, adapt_drm, adapt_src, adapt_tgt, adapt_out, log);
    } else if (*count) {
      require_path(count_enc, "--encoder");
      require_path(count_dec, "--decoder");
      require_path(count_in, "--input");
      cmd_count(count_enc, count_dec, count_in, count_out);
    } else if (*eval) {
      const RunConfig cfg = eval_o.resolve();
      require_path(eval_dataset, "--dataset");
      for (const auto* p : {&eval_paths.adaptation_encoder, &eval_paths.source_drm, &eval_paths.annotated_drm}) {
        if (!p->empty()) require_path(*p, "checkpoint");
      }
      cmd_eval(eval_paths, cfg, eval_dataset, eval_out, log);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kOk;
}

}  // namespace cellcount::cli
