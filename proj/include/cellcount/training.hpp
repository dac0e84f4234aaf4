#pragma once

#include <algorithm>
#include <cmath>
#include <tuple>
#include <cstdint>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "cellcount/density.hpp"
#include "cellcount/errors.hpp"
#include "cellcount/model.hpp"
#include "cellcount/optim.hpp"
#include "cellcount/rng.hpp"

namespace cellcount {

struct TrainingSample {
  Image image;
  DensityMap density;
};

struct TrainConfig {
  double learning_rate = 0.001;
  double momentum = 0.9;
  std::size_t batch_size = 100;
  std::size_t epochs = 3000;
  std::uint64_t seed = 0;
  double validation_fraction = 0.2;
  // Targets are multiplied by this during optimization; the factor is folded
  // back into the final 1x1 conv so the returned model predicts raw density.
  double target_scale = 1.0;
  // Samples per forward/backward chunk; gradients are accumulated across
  // chunks, so this only bounds memory.
  std::size_t micro_batch = 8;

  void validate() const {
    if (!(learning_rate >= 0.0)) throw ConfigError("train learning_rate must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train momentum must lie in [0, 1)");
    if (batch_size < 1) throw ConfigError("train batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("train epochs must be >= 1");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
      throw ConfigError("train validation_fraction must lie in [0, 1)");
    if (!(target_scale > 0.0)) throw ConfigError("train target_scale must be > 0");
    if (micro_batch < 1) throw ConfigError("train micro_batch must be >= 1");
  }
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_mse = 0.0;
  double val_mae = 0.0;
};

struct TrainReport {
  std::vector<double> train_loss;  // per epoch, raw density units
  std::vector<double> val_mse;     // per epoch
  std::vector<double> val_mae;     // per epoch, clamped-count MAE
  std::size_t best_epoch = 0;      // 1-based; 0 when nothing was evaluated
  double best_validation_mse = std::numeric_limits<double>::infinity();
  std::size_t train_size = 0;
  std::size_t validation_size = 0;
  friend bool operator==(const TrainReport&, const TrainReport&) = default;
};

template <typename S = float>
struct TrainResult {
  DrmParams<S> params;
  TrainReport report;
};

namespace detail {

template <typename S>
void check_pair(const Image& img, const DensityMap& map) {
  if (img.rows() != map.rows() || img.cols() != map.cols()) {
    throw DataError("image " + std::to_string(img.rows()) + "x" + std::to_string(img.cols()) +
                    " does not match density map " + std::to_string(map.rows()) + "x" +
                    std::to_string(map.cols()));
  }
}

template <typename S>
Tensor<S> stack_targets(const std::vector<const DensityMap*>& maps, double scale) {
  Tensor<S> out = stack_images<S>(maps);
  if (scale != 1.0) {
    for (auto& v : out.data) v = static_cast<S>(v * scale);
  }
  return out;
}

}  // namespace detail

// Squared-error sum between prediction and target, per sample, in double.
template <typename S>
std::vector<double> per_sample_sse(const Tensor<S>& pred, const Tensor<S>& target) {
  std::vector<double> sse(pred.batch, 0.0);
  for (std::size_t b = 0; b < pred.batch; ++b) {
    const S* p = pred.plane(0, b);
    const S* t = target.plane(0, b);
    double acc = 0.0;
    for (std::size_t k = 0; k < pred.plane_size(); ++k) {
      const double d = static_cast<double>(t[k]) - static_cast<double>(p[k]);
      acc += d * d;
    }
    sse[b] = acc;
  }
  return sse;
}

// (1/B) * sum_i ||Y_i - P_i||^2 over already computed predictions.
template <typename S>
double batch_mse(const std::vector<Grid<S>>& preds, const std::vector<DensityMap>& targets) {
  if (preds.empty() || preds.size() != targets.size()) {
    throw UsageError("batch_mse needs equally many predictions and targets");
  }
  double total = 0.0;
  for (std::size_t b = 0; b < preds.size(); ++b) {
    if (preds[b].rows() != targets[b].rows() || preds[b].cols() != targets[b].cols()) {
      throw DataError("prediction and target shapes differ");
    }
    for (std::size_t k = 0; k < preds[b].size(); ++k) {
      const double d = targets[b].values()[k] - static_cast<double>(preds[b].values()[k]);
      total += d * d;
    }
  }
  return total / static_cast<double>(preds.size());
}

// L = (1/B) * sum_i ||Y_i - F(X_i)||^2 with ||.||^2 the per-map sum of squares.
template <typename S>
double mse_loss(const DrmParams<S>& params, const std::vector<TrainingSample>& batch) {
  if (batch.empty()) throw UsageError("mse_loss needs a nonempty batch");
  double total = 0.0;
  for (const auto& s : batch) {
    detail::check_pair<S>(s.image, s.density);
    const Tensor<S> pred = drm_forward(params, stack_images<S>(std::vector<const Image*>{&s.image}));
    const Tensor<S> target = stack_images<S>(std::vector<const DensityMap*>{&s.density});
    total += per_sample_sse(pred, target)[0];
  }
  return total / static_cast<double>(batch.size());
}

// Adds the gradient of sum_i ||Y_i - F(X_i)||^2 * (1 / normalizer) over this
// chunk into the gradient sets and returns the chunk's summed squared error.
template <typename S>
double accumulate_drm_gradient(const DrmParams<S>& params, Tensor<S> images,
                               const Tensor<S>& targets, double normalizer,
                               ParamSet<S>& enc_grads, ParamSet<S>& dec_grads) {
  Trace<S> enc_trace, dec_trace;
  FeatureMap<S> feat = encode(params.encoder, std::move(images), &enc_trace);
  Tensor<S> pred = decode(params.decoder, std::move(feat), &dec_trace);
  if (!pred.same_shape(targets)) throw DataError("prediction and target shapes differ");
  const std::vector<double> sse = per_sample_sse(pred, targets);
  const S factor = static_cast<S>(2.0 / normalizer);
  Tensor<S> grad = pred;
  for (std::size_t k = 0; k < grad.size(); ++k) grad.data[k] = factor * (pred.data[k] - targets.data[k]);
  Tensor<S> dfeat = backward(params.decoder, dec_trace, std::move(grad), dec_grads, true);
  backward(params.encoder, enc_trace, std::move(dfeat), enc_grads, false);
  double total = 0.0;
  for (double v : sse) total += v;
  return total;
}

// Full-batch loss and gradient of the loss above; used by gradient checks.
template <typename S>
double drm_loss_and_gradient(const DrmParams<S>& params, const std::vector<TrainingSample>& batch,
                             ParamSet<S>& enc_grads, ParamSet<S>& dec_grads) {
  if (batch.empty()) throw UsageError("loss needs a nonempty batch");
  enc_grads = zeros_like(params.encoder.params);
  dec_grads = zeros_like(params.decoder.params);
  std::vector<const Image*> imgs;
  std::vector<const DensityMap*> maps;
  for (const auto& s : batch) {
    detail::check_pair<S>(s.image, s.density);
    imgs.push_back(&s.image);
    maps.push_back(&s.density);
  }
  const double n = static_cast<double>(batch.size());
  return accumulate_drm_gradient(params, stack_images<S>(imgs), detail::stack_targets<S>(maps, 1.0),
                                 n, enc_grads, dec_grads) / n;
}

// Divides the final layer of the decoder by `scale`.
template <typename S>
void fold_output_scale(DrmParams<S>& params, double scale) {
  if (scale == 1.0) return;
  for (std::size_t l = params.decoder.plan.size(); l-- > 0;) {
    if (!params.decoder.plan[l].has_params()) continue;
    for (auto& w : params.decoder.params[l].weight) w = static_cast<S>(w / scale);
    for (auto& w : params.decoder.params[l].bias) w = static_cast<S>(w / scale);
    return;
  }
}

// Validation metrics of `params` on `samples`: (mean SSE, clamped-count MAE).
template <typename S>
std::pair<double, double> evaluate_drm(const DrmParams<S>& params,
                                       const std::vector<const TrainingSample*>& samples,
                                       std::size_t chunk, double target_scale = 1.0) {
  double sse = 0.0, mae = 0.0;
  for (std::size_t start = 0; start < samples.size(); start += chunk) {
    const std::size_t end = std::min(samples.size(), start + chunk);
    std::vector<const Image*> imgs;
    std::vector<const DensityMap*> maps;
    for (std::size_t k = start; k < end; ++k) {
      imgs.push_back(&samples[k]->image);
      maps.push_back(&samples[k]->density);
    }
    Tensor<S> pred = drm_forward(params, stack_images<S>(imgs));
    if (target_scale != 1.0)
      for (auto& v : pred.data) v = static_cast<S>(v / target_scale);
    const Tensor<S> target = detail::stack_targets<S>(maps, 1.0);
    for (double v : per_sample_sse(pred, target)) sse += v;
    for (std::size_t b = 0; b < pred.batch; ++b) {
      double est = 0.0;
      const S* p = pred.plane(0, b);
      for (std::size_t k = 0; k < pred.plane_size(); ++k) est += std::max(0.0, static_cast<double>(p[k]));
      mae += std::abs(est - integrate_count(*maps[b]));
    }
  }
  const double n = static_cast<double>(samples.size());
  return {sse / n, mae / n};
}

// Deterministic train/validation split: a seeded permutation, the last
// round(fraction * n) indices held out.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t n, double validation_fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed ^ 0x5eed5eedULL);
  rng.shuffle(idx);
  const auto n_val = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(n)));
  std::vector<std::size_t> train(idx.begin(), idx.end() - static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> val(idx.end() - static_cast<std::ptrdiff_t>(n_val), idx.end());
  return {train, val};
}

// Momentum-SGD training of encoder + decoder. Returns the parameters of the
// epoch with the lowest validation MSE (the last epoch when there is no
// validation split).
template <typename S = float>
TrainResult<S> train_source_drm(const std::vector<TrainingSample>& data, const TrainConfig& cfg,
                                DrmParams<S> init,
                                const std::function<void(const EpochStats&)>& on_epoch = {}) {
  cfg.validate();
  if (data.empty()) throw UsageError("training data is empty");
  for (const auto& s : data) {
    detail::check_pair<S>(s.image, s.density);
    if (!s.image.same_shape(data.front().image)) throw DataError("all training images must share one shape");
  }
  check_encoder_input(data.front().image.rows(), data.front().image.cols());

  auto [train_idx, val_idx] = split_indices(data.size(), cfg.validation_fraction, cfg.seed);
  if (cfg.batch_size > train_idx.size()) {
    throw ConfigError("train batch_size " + std::to_string(cfg.batch_size) +
                      " exceeds the training split of " + std::to_string(train_idx.size()) + " images");
  }
  std::vector<const TrainingSample*> val_samples;
  for (auto i : val_idx) val_samples.push_back(&data[i]);

  TrainResult<S> result{std::move(init), {}};
  TrainReport& report = result.report;
  report.train_size = train_idx.size();
  report.validation_size = val_idx.size();
  DrmParams<S>& params = result.params;
  DrmParams<S> best = params;

  MomentumSgd<S> enc_opt(cfg.learning_rate, cfg.momentum), dec_opt(cfg.learning_rate, cfg.momentum);
  Rng shuffle_rng(cfg.seed);
  const double inv_scale2 = 1.0 / (cfg.target_scale * cfg.target_scale);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(train_idx);
    double epoch_sse = 0.0;
    for (std::size_t start = 0; start < train_idx.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(train_idx.size(), start + cfg.batch_size);
      const double batch_n = static_cast<double>(end - start);
      ParamSet<S> enc_grads = zeros_like(params.encoder.params);
      ParamSet<S> dec_grads = zeros_like(params.decoder.params);
      double batch_sse = 0.0;
      for (std::size_t c0 = start; c0 < end; c0 += cfg.micro_batch) {
        const std::size_t c1 = std::min(end, c0 + cfg.micro_batch);
        std::vector<const Image*> imgs;
        std::vector<const DensityMap*> maps;
        for (std::size_t k = c0; k < c1; ++k) {
          imgs.push_back(&data[train_idx[k]].image);
          maps.push_back(&data[train_idx[k]].density);
        }
        batch_sse += accumulate_drm_gradient(params, stack_images<S>(imgs),
                                             detail::stack_targets<S>(maps, cfg.target_scale),
                                             batch_n, enc_grads, dec_grads);
      }
      if (!std::isfinite(batch_sse) || !all_finite(enc_grads) || !all_finite(dec_grads)) {
        std::ostringstream os;
        os << "training loss became non-finite at epoch " << epoch
           << " (learning_rate=" << cfg.learning_rate << ")";
        throw DivergenceError(os.str());
      }
      enc_opt.step(params.encoder, enc_grads);
      dec_opt.step(params.decoder, dec_grads);
      epoch_sse += batch_sse;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = epoch_sse * inv_scale2 / static_cast<double>(train_idx.size());
    if (!val_samples.empty()) {
      std::tie(stats.val_mse, stats.val_mae) =
          evaluate_drm(params, val_samples, cfg.micro_batch, cfg.target_scale);
    } else {
      stats.val_mse = stats.train_loss;
    }
    if (!std::isfinite(stats.val_mse)) {
      std::ostringstream os;
      os << "validation loss became non-finite at epoch " << epoch
         << " (learning_rate=" << cfg.learning_rate << ")";
      throw DivergenceError(os.str());
    }
    report.train_loss.push_back(stats.train_loss);
    report.val_mse.push_back(stats.val_mse);
    report.val_mae.push_back(stats.val_mae);
    if (val_samples.empty() || stats.val_mse < report.best_validation_mse) {
      report.best_validation_mse = stats.val_mse;
      report.best_epoch = epoch;
      best = params;
    }
    if (on_epoch) on_epoch(stats);
  }

  params = std::move(best);
  fold_output_scale(params, cfg.target_scale);
  return result;
}

}  // namespace cellcount
