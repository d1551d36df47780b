#include "gleamcast/metrics.hpp"

#include <cmath>
#include <string>

#include "gleamcast/csv_io.hpp"
#include "gleamcast/errors.hpp"

namespace gleamcast::metrics {

namespace {

void check_pair(std::size_t a, std::size_t b, const char* what) {
  if (a != b)
    throw DimensionError(std::string(what) + ": lengths " + std::to_string(a) + " and " + std::to_string(b));
  if (a == 0) throw ContractError(std::string(what) + ": empty input");
}

}  // namespace

double mae_metric(std::span<const double> truth, std::span<const double> pred, par::Exec exec) {
  check_pair(truth.size(), pred.size(), "mae_metric");
  const double s = par::blocked_sum(truth.size(), exec, [&](std::size_t i) { return std::abs(truth[i] - pred[i]); });
  return s / static_cast<double>(truth.size());
}

double rmse_metric(std::span<const double> truth, std::span<const double> pred, par::Exec exec) {
  check_pair(truth.size(), pred.size(), "rmse_metric");
  const double s = par::blocked_sum(truth.size(), exec, [&](std::size_t i) {
    const double d = truth[i] - pred[i];
    return d * d;
  });
  return std::sqrt(s / static_cast<double>(truth.size()));
}

double mis_metric(std::span<const double> z, std::span<const double> upper, std::span<const double> lower,
                  double rho, par::Exec exec) {
  check_pair(z.size(), upper.size(), "mis_metric");
  check_pair(z.size(), lower.size(), "mis_metric");
  if (!(rho > 0.0 && rho < 1.0)) throw ContractError("mis_metric: rho must be in (0, 1)");
  const double k = 2.0 / rho;
  const double s = par::blocked_sum(z.size(), exec, [&](std::size_t i) {
    double score = upper[i] - lower[i];
    if (z[i] > upper[i]) score += k * (z[i] - upper[i]);
    if (z[i] < lower[i]) score += k * (lower[i] - z[i]);
    return score;
  });
  return s / static_cast<double>(z.size());
}

CoverageWidth coverage_and_width(std::span<const double> z, std::span<const double> upper,
                                 std::span<const double> lower) {
  check_pair(z.size(), upper.size(), "coverage_and_width");
  check_pair(z.size(), lower.size(), "coverage_and_width");
  std::size_t hit = 0;
  double width = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (lower[i] <= z[i] && z[i] <= upper[i]) ++hit;
    width += upper[i] - lower[i];
  }
  const auto n = static_cast<double>(z.size());
  return {static_cast<double>(hit) / n, width / n};
}

std::string eval_csv(const EvalReport& report) {
  std::string out = "horizon_weeks,metric,level,value\n";
  auto row = [&](std::size_t h, const char* metric, const std::string& level, double v) {
    out += std::to_string(h) + ',' + metric + ',' + level + ',' + csv::format_double(v) + '\n';
  };
  for (const HorizonRow& r : report.rows) {
    row(r.horizon, "mae", "", r.mae);
    row(r.horizon, "rmse", "", r.rmse);
    for (const LevelScores& l : r.levels) {
      const std::string level = csv::format_double(l.level);
      row(r.horizon, "mis", level, l.mis);
      row(r.horizon, "interval_width", level, l.width);
      row(r.horizon, "coverage", level, l.coverage);
    }
  }
  return out;
}

void write_eval_csv(const std::filesystem::path& path, const EvalReport& report) {
  csv::write_atomic(path, eval_csv(report));
}

}  // namespace gleamcast::metrics
