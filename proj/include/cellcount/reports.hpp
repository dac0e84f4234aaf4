#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include "cellcount/adaptation.hpp"
#include "cellcount/evalcount.hpp"
#include "cellcount/io.hpp"
#include "cellcount/training.hpp"

namespace cellcount::reports {

inline std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream os = io::open_out(path);
  os << std::setprecision(17);
  return os;
}

// epoch,train_loss,val_mse,val_mae
inline void write_train_report(const std::filesystem::path& path, const TrainReport& r) {
  auto os = open_csv(path);
  os << "epoch,train_loss,val_mse,val_mae\n";
  for (std::size_t e = 0; e < r.train_loss.size(); ++e) {
    os << e + 1 << ',' << r.train_loss[e] << ',' << r.val_mse[e] << ',' << r.val_mae[e] << '\n';
  }
}

// step,critic_loss,dam_loss,gap (step 0 carries the initial gap only)
inline void write_adapt_report(const std::filesystem::path& path, const AdaptReport& r) {
  auto os = open_csv(path);
  os << "step,critic_loss,dam_loss,gap\n";
  os << 0 << ",,," << r.initial_gap << '\n';
  for (std::size_t s = 0; s < r.gap.size(); ++s) {
    os << s + 1 << ',' << r.critic_loss[s] << ',' << r.dam_loss[s] << ',' << r.gap[s] << '\n';
  }
}

// id,estimated,rounded,truth,abs_error (truth and error empty when unknown)
inline void write_counts(std::ostream& os, const std::vector<CountResult>& results) {
  os << std::setprecision(17);
  os << "id,estimated,rounded,truth,abs_error\n";
  for (const auto& r : results) {
    os << r.id << ',' << r.estimated_count << ',' << r.rounded_count << ',';
    if (r.ground_truth) os << *r.ground_truth;
    os << ',';
    if (r.absolute_error) os << *r.absolute_error;
    os << '\n';
  }
}

inline void write_counts_csv(const std::filesystem::path& path, const std::vector<CountResult>& results) {
  auto os = open_csv(path);
  write_counts(os, results);
}

// arm,status,mae,sae,n_images; absent arms keep their row.
inline void write_comparison_csv(const std::filesystem::path& path, const ComparisonTable& table) {
  auto os = open_csv(path);
  os << "# sae = population standard deviation of absolute errors\n";
  os << "arm,status,mae,sae,n_images\n";
  for (const auto& row : table.arms) {
    os << to_string(row.arm) << ',';
    if (row.scores) {
      os << "present," << row.scores->mae << ',' << row.scores->sae << ',' << row.scores->n_images << '\n';
    } else {
      os << "absent,,,\n";
    }
  }
}

// Human-readable MAE +/- SAE table, one column per arm.
inline std::string format_comparison(const ComparisonTable& table) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << std::left << std::setw(14) << "Performance";
  for (const auto& row : table.arms) os << std::setw(22) << to_string(row.arm);
  os << '\n' << std::setw(14) << "MAE +/- SAE";
  for (const auto& row : table.arms) {
    std::ostringstream cell;
    cell << std::fixed << std::setprecision(2);
    if (row.scores) cell << row.scores->mae << " +/- " << row.scores->sae;
    else cell << "absent";
    os << std::setw(22) << cell.str();
  }
  os << '\n';
  return os.str();
}

}  // namespace cellcount::reports
