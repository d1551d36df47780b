#pragma once

// Point and interval scores: MAE, rooted RMSE, mean interval score, empirical
// coverage and mean interval width, plus the per-horizon report written to
// eval.csv.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gleamcast/parallel.hpp"

namespace gleamcast::metrics {

/// Sums use par::blocked_sum, so the result does not depend on exec.
double mae_metric(std::span<const double> truth, std::span<const double> pred,
                  par::Exec exec = par::Exec::serial);
double rmse_metric(std::span<const double> truth, std::span<const double> pred,
                   par::Exec exec = par::Exec::serial);

/// mean of (u - l) + 2/rho (z - u)1{z > u} + 2/rho (l - z)1{z < l}
double mis_metric(std::span<const double> z, std::span<const double> upper, std::span<const double> lower,
                  double rho, par::Exec exec = par::Exec::serial);

struct CoverageWidth {
  double coverage = 0.0;
  double width = 0.0;
};

CoverageWidth coverage_and_width(std::span<const double> z, std::span<const double> upper,
                                 std::span<const double> lower);

struct LevelScores {
  double level = 0.0;  // 1 - rho
  double mis = 0.0;
  double width = 0.0;
  double coverage = 0.0;
};

struct HorizonRow {
  std::size_t horizon = 0;
  double mae = 0.0;
  double rmse = 0.0;
  std::vector<LevelScores> levels;
};

struct EvalReport {
  std::vector<HorizonRow> rows;
};

/// horizon_weeks,metric,level,value; mae and rmse rows have an empty level.
std::string eval_csv(const EvalReport& report);
void write_eval_csv(const std::filesystem::path& path, const EvalReport& report);

}  // namespace gleamcast::metrics
