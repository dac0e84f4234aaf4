#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "cellcount/errors.hpp"
#include "cellcount/model.hpp"
#include "cellcount/optim.hpp"
#include "cellcount/rng.hpp"

namespace cellcount {

struct AdaptConfig {
  double dam_learning_rate = 1e-8;
  double dcm_learning_rate = 1e-8;
  double dam_momentum = 0.0;
  double dcm_momentum = 0.0;
  // Both networks use this optimizer; momentum applies to sgd only.
  OptimizerKind optimizer = OptimizerKind::sgd;
  double rmsprop_decay = 0.99;
  std::size_t batch_size = 100;
  std::size_t crop_size = 256;
  std::size_t critic_iters_per_dam_step = 5;
  // Critic-only iterations run once before the first DAM step.
  std::size_t critic_warmup_iters = 0;
  double weight_clip = 0.01;
  std::size_t total_dam_steps = 500;
  // Images per set reserved for measuring the domain gap; never trained on.
  std::size_t monitor_size = 16;
  bool cache_source_features = false;
  std::size_t micro_batch = 8;
  std::uint64_t seed = 0;
  DcmWidths critic_widths{};

  void validate() const {
    if (crop_size == 0 || crop_size % kEncoderStride != 0)
      throw ConfigError("adapt crop_size must be a positive multiple of " + std::to_string(kEncoderStride));
    if (!(weight_clip > 0.0)) throw ConfigError("adapt weight_clip must be > 0");
    if (critic_iters_per_dam_step < 1) throw ConfigError("adapt critic_iters must be >= 1");
    if (batch_size < 1) throw ConfigError("adapt batch_size must be >= 1");
    if (micro_batch < 1) throw ConfigError("adapt micro_batch must be >= 1");
    if (!(dam_learning_rate >= 0.0) || !(dcm_learning_rate >= 0.0))
      throw ConfigError("adapt learning rates must be >= 0");
    if (!(dam_momentum >= 0.0 && dam_momentum < 1.0) || !(dcm_momentum >= 0.0 && dcm_momentum < 1.0))
      throw ConfigError("adapt momentum must lie in [0, 1)");
    if (!(rmsprop_decay > 0.0 && rmsprop_decay < 1.0))
      throw ConfigError("adapt rmsprop_decay must lie in (0, 1)");
  }
};

struct AdaptReport {
  std::vector<double> critic_loss;  // last critic iteration of each step
  std::vector<double> dam_loss;
  std::vector<double> gap;  // mean critic(source) - mean critic(target), monitor batch
  double initial_gap = 0.0;
  std::size_t best_step = 0;  // 1-based step whose parameters were returned; 0 = initial
  friend bool operator==(const AdaptReport&, const AdaptReport&) = default;
};

template <typename S = float>
struct AdaptResult {
  DamParams<S> dam;
  DcmParams<S> dcm;
  AdaptReport report;
};

struct CriticLosses {
  double critic_loss = 0.0;  // -(mean critic(src) - mean critic(tgt))
  double dam_loss = 0.0;     // -mean critic(tgt)
  double source_mean = 0.0;
  double target_mean = 0.0;
};

template <typename S>
double mean_of(const std::vector<S>& v) {
  double acc = 0.0;
  for (const S x : v) acc += static_cast<double>(x);
  return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

// Wasserstein critic objective and the encoder's adversarial objective.
template <typename S>
CriticLosses critic_losses(const DcmParams<S>& dcm, const FeatureMap<S>& src_feats,
                           const FeatureMap<S>& tgt_feats, bool train_mode = false,
                           Rng* dropout_rng = nullptr) {
  if (src_feats.batch == 0 || tgt_feats.batch == 0) {
    throw UsageError("critic_losses needs nonempty source and target batches");
  }
  CriticLosses out;
  out.source_mean = mean_of(critic_forward(dcm, src_feats, train_mode, dropout_rng));
  out.target_mean = mean_of(critic_forward(dcm, tgt_feats, train_mode, dropout_rng));
  out.critic_loss = -(out.source_mean - out.target_mean);
  out.dam_loss = -out.target_mean;
  return out;
}

// Alternating critic / encoder optimization state. train_dam() drives it;
// tests step it directly.
template <typename S = float>
class AdaptationSession {
 public:
  AdaptationSession(const Network<S>& ecnn, const std::vector<Image>& source,
                    const std::vector<Image>& target, const AdaptConfig& cfg)
      : ecnn_(ecnn),
        source_(source),
        target_(target),
        cfg_(cfg),
        dam_(make_dam_from(ecnn)),
        dcm_(make_dcm<S>(cfg.seed + 1, ecnn.params.back().out_features(), cfg.critic_widths)),
        dam_opt_(cfg.optimizer, cfg.dam_learning_rate, cfg.dam_momentum, cfg.rmsprop_decay),
        dcm_opt_(cfg.optimizer, cfg.dcm_learning_rate, cfg.dcm_momentum, cfg.rmsprop_decay),
        rng_(cfg.seed),
        dropout_rng_(cfg.seed + 2) {
    cfg_.validate();
    check_images(source_, "source");
    check_images(target_, "target");
    clip_parameters(dcm_.critic, cfg_.weight_clip);

    std::vector<std::size_t> src_perm = rng_.sample_without_replacement(source_.size(), source_.size());
    std::vector<std::size_t> tgt_perm = rng_.sample_without_replacement(target_.size(), target_.size());
    const std::size_t m_src = std::min(cfg_.monitor_size, source_.size() > cfg_.batch_size ? source_.size() - cfg_.batch_size : 0);
    const std::size_t m_tgt = std::min(cfg_.monitor_size, target_.size() > cfg_.batch_size ? target_.size() - cfg_.batch_size : 0);
    const std::size_t m = std::min(m_src, m_tgt);
    src_pool_.assign(src_perm.begin() + static_cast<std::ptrdiff_t>(m), src_perm.end());
    tgt_pool_.assign(tgt_perm.begin() + static_cast<std::ptrdiff_t>(m), tgt_perm.end());
    if (cfg_.batch_size > src_pool_.size() || cfg_.batch_size > tgt_pool_.size()) {
      throw ConfigError("adapt batch_size " + std::to_string(cfg_.batch_size) +
                        " exceeds the available source/target images");
    }
    if (m > 0) {
      std::vector<Image> src_mon, tgt_mon;
      for (std::size_t k = 0; k < m; ++k) {
        src_mon.push_back(random_crop(source_[src_perm[k]]));
        tgt_mon.push_back(random_crop(target_[tgt_perm[k]]));
      }
      monitor_src_feats_ = encode_chunked(ecnn_, src_mon);
      monitor_target_ = std::move(tgt_mon);
    }
    if (cfg_.cache_source_features && source_.front().rows() == cfg_.crop_size &&
        source_.front().cols() == cfg_.crop_size) {
      std::vector<const Image*> ptrs;
      for (const auto& im : source_) ptrs.push_back(&im);
      source_cache_ = encode_chunked(ecnn_, ptrs);
    }
  }

  const DamParams<S>& dam() const { return dam_; }
  const DcmParams<S>& dcm() const { return dcm_; }
  DamParams<S>& dam() { return dam_; }
  DcmParams<S>& dcm() { return dcm_; }
  bool has_monitor() const { return !monitor_target_.empty(); }

  // One critic update with the DAM held fixed, followed by weight clipping.
  // Returns the critic loss of the sampled batches.
  double critic_step() {
    const auto src_idx = sample(src_pool_);
    const auto tgt_idx = sample(tgt_pool_);
    const double n_src = static_cast<double>(src_idx.size());
    const double n_tgt = static_cast<double>(tgt_idx.size());
    ParamSet<S> grads = zeros_like(dcm_.critic.params);
    double src_sum = 0.0, tgt_sum = 0.0;

    for (std::size_t c0 = 0; c0 < src_idx.size(); c0 += cfg_.micro_batch) {
      const std::size_t c1 = std::min(src_idx.size(), c0 + cfg_.micro_batch);
      FeatureMap<S> feats = source_features(src_idx, c0, c1);
      src_sum += critic_chunk(feats, static_cast<S>(-1.0 / n_src), grads, nullptr);
    }
    for (std::size_t c0 = 0; c0 < tgt_idx.size(); c0 += cfg_.micro_batch) {
      const std::size_t c1 = std::min(tgt_idx.size(), c0 + cfg_.micro_batch);
      std::vector<Image> crops = crops_of(target_, tgt_idx, c0, c1);
      FeatureMap<S> feats = encode(dam_.encoder, stack_images<S>(crops));
      tgt_sum += critic_chunk(feats, static_cast<S>(1.0 / n_tgt), grads, nullptr);
    }
    const double loss = -(src_sum / n_src - tgt_sum / n_tgt);
    if (!std::isfinite(loss) || !all_finite(grads)) {
      throw DivergenceError("critic loss became non-finite (dcm_learning_rate=" +
                            std::to_string(cfg_.dcm_learning_rate) + ")");
    }
    dcm_opt_.step(dcm_.critic, grads);
    clip_parameters(dcm_.critic, cfg_.weight_clip);
    return loss;
  }

  // One DAM update with the critic held fixed. Returns -mean critic(target).
  double dam_step() {
    const auto tgt_idx = sample(tgt_pool_);
    const double n_tgt = static_cast<double>(tgt_idx.size());
    ParamSet<S> dam_grads = zeros_like(dam_.encoder.params);
    ParamSet<S> unused = zeros_like(dcm_.critic.params);
    double tgt_sum = 0.0;
    for (std::size_t c0 = 0; c0 < tgt_idx.size(); c0 += cfg_.micro_batch) {
      const std::size_t c1 = std::min(tgt_idx.size(), c0 + cfg_.micro_batch);
      std::vector<Image> crops = crops_of(target_, tgt_idx, c0, c1);
      Trace<S> enc_trace;
      FeatureMap<S> feats = encode(dam_.encoder, stack_images<S>(crops), &enc_trace);
      Tensor<S> dfeat;
      tgt_sum += critic_chunk(feats, static_cast<S>(-1.0 / n_tgt), unused, &dfeat);
      backward(dam_.encoder, enc_trace, std::move(dfeat), dam_grads, false);
    }
    const double loss = -tgt_sum / n_tgt;
    if (!std::isfinite(loss) || !all_finite(dam_grads)) {
      throw DivergenceError("DAM loss became non-finite (dam_learning_rate=" +
                            std::to_string(cfg_.dam_learning_rate) + ")");
    }
    dam_opt_.step(dam_.encoder, dam_grads);
    return loss;
  }

  // Eval-mode critic gap on the reserved monitor batch.
  double gap() const {
    if (!has_monitor()) return 0.0;
    const double src = mean_of(critic_forward(dcm_, monitor_src_feats_, false));
    const FeatureMap<S> tgt = encode_chunked(dam_.encoder, monitor_target_);
    return src - mean_of(critic_forward(dcm_, tgt, false));
  }

 private:
  void check_images(const std::vector<Image>& imgs, const char* what) const {
    if (imgs.empty()) throw UsageError(std::string(what) + " image set is empty");
    for (const auto& im : imgs) {
      if (im.rows() < cfg_.crop_size || im.cols() < cfg_.crop_size) {
        throw ShapeError(std::string(what) + " image " + std::to_string(im.rows()) + "x" +
                         std::to_string(im.cols()) + " is smaller than crop_size " +
                         std::to_string(cfg_.crop_size));
      }
    }
  }

  std::vector<std::size_t> sample(const std::vector<std::size_t>& pool) {
    auto picks = rng_.sample_without_replacement(pool.size(), cfg_.batch_size);
    for (auto& p : picks) p = pool[p];
    return picks;
  }

  // Uniform over valid top-left corners.
  Image random_crop(const Image& img) {
    const auto top = static_cast<std::size_t>(
        rng_.uniform_int(0, static_cast<std::int64_t>(img.rows() - cfg_.crop_size)));
    const auto left = static_cast<std::size_t>(
        rng_.uniform_int(0, static_cast<std::int64_t>(img.cols() - cfg_.crop_size)));
    return crop(img, top, left, cfg_.crop_size, cfg_.crop_size);
  }

  std::vector<Image> crops_of(const std::vector<Image>& set, const std::vector<std::size_t>& idx,
                              std::size_t c0, std::size_t c1) {
    std::vector<Image> out;
    for (std::size_t k = c0; k < c1; ++k) out.push_back(random_crop(set[idx[k]]));
    return out;
  }

  FeatureMap<S> source_features(const std::vector<std::size_t>& idx, std::size_t c0,
                                std::size_t c1) {
    if (source_cache_.size() == 0) {
      return encode(ecnn_, stack_images<S>(crops_of(source_, idx, c0, c1)));
    }
    const auto& c = source_cache_;
    FeatureMap<S> out(c.channels, c1 - c0, c.height, c.width);
    for (std::size_t ch = 0; ch < c.channels; ++ch) {
      for (std::size_t k = c0; k < c1; ++k) {
        std::copy_n(c.plane(ch, idx[k]), c.plane_size(), out.plane(ch, k - c0));
      }
    }
    return out;
  }

  // Train-mode critic pass whose per-sample output gradient is `weight`;
  // returns the sum of critic scores.
  double critic_chunk(const FeatureMap<S>& feats, S weight, ParamSet<S>& grads,
                      Tensor<S>* input_grad) {
    Trace<S> trace;
    const std::vector<S> scores = critic_forward(dcm_, feats, true, &dropout_rng_, &trace);
    Tensor<S> g(1, feats.batch, 1, 1, weight);
    Tensor<S> dx = backward(dcm_.critic, trace, std::move(g), grads, input_grad != nullptr);
    if (input_grad) *input_grad = std::move(dx);
    double acc = 0.0;
    for (const S v : scores) acc += static_cast<double>(v);
    return acc;
  }

  FeatureMap<S> encode_chunked(const Network<S>& enc, const std::vector<Image>& imgs) const {
    std::vector<const Image*> ptrs;
    for (const auto& im : imgs) ptrs.push_back(&im);
    return encode_chunked(enc, ptrs);
  }

  FeatureMap<S> encode_chunked(const Network<S>& enc, const std::vector<const Image*>& imgs) const {
    FeatureMap<S> out;
    for (std::size_t c0 = 0; c0 < imgs.size(); c0 += cfg_.micro_batch) {
      const std::size_t c1 = std::min(imgs.size(), c0 + cfg_.micro_batch);
      std::vector<const Image*> part(imgs.begin() + static_cast<std::ptrdiff_t>(c0),
                                     imgs.begin() + static_cast<std::ptrdiff_t>(c1));
      FeatureMap<S> f = encode(enc, stack_images<S>(part));
      if (c0 == 0) out = FeatureMap<S>(f.channels, imgs.size(), f.height, f.width);
      for (std::size_t ch = 0; ch < f.channels; ++ch)
        for (std::size_t b = 0; b < f.batch; ++b)
          std::copy_n(f.plane(ch, b), f.plane_size(), out.plane(ch, c0 + b));
    }
    return out;
  }

  const Network<S>& ecnn_;
  const std::vector<Image>& source_;
  const std::vector<Image>& target_;
  AdaptConfig cfg_;
  DamParams<S> dam_;
  DcmParams<S> dcm_;
  Optimizer<S> dam_opt_;
  Optimizer<S> dcm_opt_;
  Rng rng_;
  Rng dropout_rng_;
  std::vector<std::size_t> src_pool_, tgt_pool_;
  FeatureMap<S> monitor_src_feats_;
  std::vector<Image> monitor_target_;
  FeatureMap<S> source_cache_;
};

struct AdaptStepStats {
  std::size_t step = 0;
  double critic_loss = 0.0;
  double dam_loss = 0.0;
  double gap = 0.0;
};

// Adversarial adaptation of a DAM (initialized from `ecnn`) against a critic.
// The parameters at the step with the smallest |gap| are returned.
template <typename S = float>
AdaptResult<S> train_dam(const Network<S>& ecnn, const std::vector<Image>& source_imgs,
                         const std::vector<Image>& target_imgs, const AdaptConfig& cfg,
                         const std::function<void(const AdaptStepStats&)>& on_step = {}) {
  AdaptationSession<S> session(ecnn, source_imgs, target_imgs, cfg);
  AdaptResult<S> result{session.dam(), session.dcm(), {}};
  if (cfg.total_dam_steps == 0) return result;

  for (std::size_t k = 0; k < cfg.critic_warmup_iters; ++k) session.critic_step();
  AdaptReport& report = result.report;
  report.initial_gap = session.gap();
  double best_abs = std::numeric_limits<double>::infinity();

  for (std::size_t step = 1; step <= cfg.total_dam_steps; ++step) {
    AdaptStepStats stats;
    stats.step = step;
    for (std::size_t k = 0; k < cfg.critic_iters_per_dam_step; ++k) {
      stats.critic_loss = session.critic_step();
    }
    stats.dam_loss = session.dam_step();
    stats.gap = session.gap();
    report.critic_loss.push_back(stats.critic_loss);
    report.dam_loss.push_back(stats.dam_loss);
    report.gap.push_back(stats.gap);
    if (std::abs(stats.gap) < best_abs) {
      best_abs = std::abs(stats.gap);
      report.best_step = step;
      result.dam = session.dam();
      result.dcm = session.dcm();
    }
    if (on_step) on_step(stats);
  }
  return result;
}

}  // namespace cellcount
