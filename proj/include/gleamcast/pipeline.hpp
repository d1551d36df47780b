#pragma once

// End-to-end orchestration: residual windows from observations and the
// forecast cube, model fitting for each uncertainty method, recombination
// with the mechanistic forecast, forecast/eval file formats and run config.
//
// Residual features. For an issue date d and input day t in [d - window, d),
// feature h (1-based) is obs(t) - cube(d - 7h, h) / 7: the daily share of the
// forecast issued h weeks earlier for the week ending at d. Targets are the
// weekly residuals obs(week h after d) - cube(d, h).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gleamcast/array2.hpp"
#include "gleamcast/data.hpp"
#include "gleamcast/dcrnn.hpp"
#include "gleamcast/graph.hpp"
#include "gleamcast/metrics.hpp"
#include "gleamcast/parallel.hpp"
#include "gleamcast/train_sample.hpp"
#include "gleamcast/uq_losses.hpp"

namespace gleamcast::pipeline {

/// `point` is a single MAE-trained model without intervals.
enum class UqMethod { point, bootstrap, quantile, sq, mis, mc_dropout, sgnht };
enum class Mode { autoregressive, ensemble };

std::string to_string(UqMethod m);
std::string to_string(Mode m);
UqMethod parse_uq_method(const std::string& s);
Mode parse_mode(const std::string& s);

struct RunConfig {
  std::filesystem::path observations;
  std::filesystem::path forecasts;
  std::filesystem::path mobility;  // empty: no edges
  dcrnn::ModelConfig model;        // input_features, output_heads and feedback are set per method
  train::TrainConfig train;
  UqMethod uq_method = UqMethod::bootstrap;
  std::vector<double> ci_levels{0.80, 0.90, 0.95};
  Mode mode = Mode::autoregressive;
  std::uint64_t seed = 0;
  /// Number of final issue dates with known targets that are forecast and
  /// never trained on.
  std::size_t holdout_issues = 2;
  std::size_t restarts = 10;
  double dropout_rate = 0.05;
  std::size_t dropout_passes = 300;
  train::SgnhtConfig sgnht;
  double teacher_prob = 0.5;
  double validation_fraction = 0.2;
  /// false trains the same network on raw observations with no mechanistic input.
  bool hybrid = true;

  void validate() const;
};

/// Parses config.json. Relative paths resolve against the file's directory.
/// Unknown keys are rejected with DataError.
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_json(const RunConfig& cfg);

struct Inputs {
  Observations observations;
  ForecastCube cube;
  graph::MobilityGraph graph;
};

/// Reads the three input files; the cube and graph use the observation
/// location order.
Inputs load_inputs(const RunConfig& cfg);

struct Window {
  Date issue;
  dcrnn::ResidualTensor input;  // window x P x D
  bool has_target = false;
  Array2 target;                // horizons x P (weekly), empty without target
  Array2 base;                  // horizons x P weekly mechanistic point (zero for the deep baseline)
};

struct Dataset {
  std::vector<std::string> locations;
  std::size_t horizons = 0;
  std::size_t window = 0;
  std::vector<Window> windows;  // ascending issue date
};

/// One window per cube issue whose input vintages and input days are all
/// available. Windows whose target weeks are not yet observed carry
/// has_target = false.
Dataset build_residual_dataset(const Observations& obs, const ForecastCube& cube, std::size_t window = 7,
                               std::size_t horizons = 4);

/// Same issue dates, raw daily observations as the single feature and raw
/// weekly observations as targets.
Dataset build_observation_dataset(const Observations& obs, const ForecastCube& cube, std::size_t window = 7,
                                  std::size_t horizons = 4);

struct Split {
  std::vector<std::size_t> train, validation, test;
};

/// Test = last holdout target-bearing windows; train/validation = earlier
/// windows whose target weeks end before the first test issue, the last
/// validation_fraction of them (at least one) for validation.
Split split_windows(const Dataset& data, std::size_t holdout, double validation_fraction);

/// gleam + residual, elementwise; shapes must match.
Array2 weekly_recombine(const Array2& gleam_weekly, const Array2& residual);

struct QuantileForecast {
  Date issue;
  std::size_t horizon = 0;
  std::string location;
  double point = 0.0;
  std::vector<uq::IntervalPair> intervals;  // ascending level
};

/// One independently trained model group; autoregressive mode has a single
/// slot covering every horizon, ensemble mode one slot per horizon.
struct Slot {
  std::vector<std::size_t> target_rows;
  dcrnn::ModelConfig model;
  std::vector<std::vector<double>> members;  // flat parameter vectors
};

struct ModelBundle {
  RunConfig config;
  std::vector<std::string> locations;
  double input_scale = 1.0;
  double target_scale = 1.0;
  std::vector<Slot> slots;
};

ModelBundle fit(const RunConfig& cfg, const Inputs& inputs, par::Exec exec = par::Exec::parallel);
std::vector<QuantileForecast> forecast(const ModelBundle& bundle, const Inputs& inputs,
                                       par::Exec exec = par::Exec::parallel);

std::vector<QuantileForecast> run_autoregressive(RunConfig cfg, const Inputs& inputs,
                                                 par::Exec exec = par::Exec::parallel);
std::vector<QuantileForecast> run_ensemble_mode(RunConfig cfg, const Inputs& inputs,
                                                par::Exec exec = par::Exec::parallel);

void save_bundle(const std::filesystem::path& path, const ModelBundle& bundle);
/// Throws DataError when missing or malformed.
ModelBundle load_bundle(const std::filesystem::path& path);

/// "N wk ahead inc death"
std::string target_name(std::size_t horizon);

/// issue_date,target,location,type,quantile,value with a point row and one
/// quantile row per level (0.5 repeats the point).
std::string forecasts_csv(const std::vector<QuantileForecast>& forecasts);
void write_forecasts_csv(const std::filesystem::path& path, const std::vector<QuantileForecast>& forecasts);
std::vector<QuantileForecast> read_forecasts_csv(const std::filesystem::path& path);

/// Per-horizon scores against weekly observed totals. Throws DataError when
/// a target week is not covered by the observations.
metrics::EvalReport evaluate(const std::vector<QuantileForecast>& forecasts, const Observations& truth);

}  // namespace gleamcast::pipeline
