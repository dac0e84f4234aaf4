#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cellcount/density.hpp"
#include "cellcount/errors.hpp"
#include "cellcount/model.hpp"

namespace cellcount {

struct CountResult {
  std::string id;
  double estimated_count = 0.0;
  std::int64_t rounded_count = 0;
  std::optional<std::int64_t> ground_truth;
  std::optional<double> absolute_error;
  friend bool operator==(const CountResult&, const CountResult&) = default;
};

enum class Arm { adaptation, source_only, annotated_train };

inline const char* to_string(Arm a) {
  switch (a) {
    case Arm::adaptation: return "adaptation";
    case Arm::source_only: return "source_only";
    case Arm::annotated_train: return "annotated_train";
  }
  return "?";
}

// SAE is the population standard deviation (divide by n).
struct ArmScores {
  Arm arm = Arm::adaptation;
  double mae = 0.0;
  double sae = 0.0;
  std::size_t n_images = 0;
};

// Negative density pixels are clamped to zero before integration.
template <typename S>
double clamped_integral(const S* values, std::size_t n) {
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) total += std::max(0.0, static_cast<double>(values[k]));
  return total;
}

inline CountResult make_count_result(std::string id, double estimate,
                                     std::optional<std::int64_t> truth) {
  CountResult r;
  r.id = std::move(id);
  r.estimated_count = estimate;
  r.rounded_count = rounded_count(estimate);
  r.ground_truth = truth;
  if (truth) r.absolute_error = std::abs(estimate - static_cast<double>(*truth));
  return r;
}

// Clamped density estimate of decoder(encoder(img)).
template <typename S>
Grid<S> estimate_density(const Network<S>& encoder, const Network<S>& decoder, const Image& img) {
  Grid<S> map = unstack<S>(decode(decoder, encode(encoder, img)), 0);
  for (auto& v : map.values()) v = std::max(v, S{0});
  return map;
}

template <typename S>
CountResult count_image(const Network<S>& encoder, const Network<S>& decoder, const Image& img,
                        std::string id = {}, std::optional<std::int64_t> truth = std::nullopt) {
  const Tensor<S> out = decode(decoder, encode(encoder, img));
  return make_count_result(std::move(id), clamped_integral(out.plane(0, 0), out.plane_size()), truth);
}

// MAE and population SAE of the absolute errors present in `results`.
inline ArmScores score_arm(Arm arm, const std::vector<CountResult>& results) {
  std::vector<double> errors;
  for (const auto& r : results) {
    if (r.absolute_error) errors.push_back(*r.absolute_error);
  }
  if (errors.empty()) throw UsageError("score_arm needs at least one result with ground truth");
  const double n = static_cast<double>(errors.size());
  double mean = 0.0;
  for (double e : errors) mean += e;
  mean /= n;
  double var = 0.0;
  for (double e : errors) var += (e - mean) * (e - mean);
  return {arm, mean, std::sqrt(var / n), errors.size()};
}

struct EvalSample {
  std::string id;
  Image image;
  CentroidSet centroids;
};

template <typename S>
struct ArmModel {
  Arm arm;
  const Network<S>* encoder = nullptr;
  const Network<S>* decoder = nullptr;
};

struct ArmOutcome {
  Arm arm;
  std::optional<ArmScores> scores;  // empty when the arm was not supplied
  std::vector<CountResult> per_image;
};

struct ComparisonTable {
  std::vector<ArmOutcome> arms;  // always adaptation, source_only, annotated_train
};

// Scores every supplied arm on `eval_set`; absent arms are kept as empty rows.
template <typename S>
ComparisonTable run_comparison(const std::vector<ArmModel<S>>& models,
                               const std::vector<EvalSample>& eval_set) {
  if (eval_set.empty()) throw UsageError("evaluation set is empty");
  ComparisonTable table;
  for (Arm arm : {Arm::adaptation, Arm::source_only, Arm::annotated_train}) {
    ArmOutcome row{arm, std::nullopt, {}};
    for (const auto& m : models) {
      if (m.arm != arm || !m.encoder || !m.decoder) continue;
      for (const auto& s : eval_set) {
        row.per_image.push_back(count_image(*m.encoder, *m.decoder, s.image, s.id,
                                            static_cast<std::int64_t>(s.centroids.size())));
      }
      row.scores = score_arm(arm, row.per_image);
      break;
    }
    table.arms.push_back(std::move(row));
  }
  return table;
}

}  // namespace cellcount
