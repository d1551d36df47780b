// gleamcast: simulate | train | forecast | evaluate
//
// Exit status: 0 success, 1 usage error, 2 data or numeric error.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>

#include "gleamcast/csv_io.hpp"
#include "gleamcast/data.hpp"
#include "gleamcast/errors.hpp"
#include "gleamcast/gleamlite.hpp"
#include "gleamcast/graph.hpp"
#include "gleamcast/metrics.hpp"
#include "gleamcast/pipeline.hpp"

namespace fs = std::filesystem;
using namespace gleamcast;

namespace {

struct SimulateArgs {
  std::size_t locations = 10;
  std::size_t days = 120;
  std::uint64_t seed = 1;
  double bias = 0.3;
  std::size_t members = 18;
  bool with_members = false;
  fs::path out;
};

void run_simulate(const SimulateArgs& a) {
  sim::WorldConfig wc;
  wc.locations = a.locations;
  wc.days = a.days;
  wc.seed = a.seed;
  wc.bias_scale = a.bias;
  wc.members = a.members;
  wc.keep_members = a.with_members;
  const sim::SyntheticWorld world = sim::make_synthetic_world(wc);
  fs::create_directories(a.out);
  write_observations(a.out / "observations.csv", world.observations);
  write_cube(a.out / "gleam_forecasts.csv", world.cube);
  graph::write_mobility_csv(a.out / "mobility.csv", world.graph);

  pipeline::RunConfig cfg;
  cfg.observations = "observations.csv";
  cfg.forecasts = "gleam_forecasts.csv";
  cfg.mobility = "mobility.csv";
  cfg.seed = a.seed;
  csv::write_atomic(a.out / "config.json", pipeline::run_config_json(cfg));
  std::cout << "wrote " << world.observations.days() << " days x " << wc.locations << " locations and "
            << world.cube.issues.size() << " forecast issues to " << a.out.string() << "\n";
}

void run_train(const fs::path& config, const fs::path& bundle) {
  const pipeline::RunConfig cfg = pipeline::load_run_config(config);
  const pipeline::Inputs inputs = pipeline::load_inputs(cfg);
  const pipeline::ModelBundle b = pipeline::fit(cfg, inputs);
  std::size_t members = 0;
  for (const auto& s : b.slots) members += s.members.size();
  pipeline::save_bundle(bundle, b);
  std::cout << "trained " << members << " " << pipeline::to_string(cfg.uq_method) << " model(s) in "
            << b.slots.size() << " slot(s); bundle written to " << bundle.string() << "\n";
}

void run_forecast(const fs::path& bundle_path, const fs::path& out) {
  const pipeline::ModelBundle b = pipeline::load_bundle(bundle_path);
  const pipeline::Inputs inputs = pipeline::load_inputs(b.config);
  const auto forecasts = pipeline::forecast(b, inputs);
  pipeline::write_forecasts_csv(out, forecasts);
  std::cout << "wrote " << forecasts.size() << " forecasts to " << out.string() << "\n";
}

void run_evaluate(const fs::path& forecasts_path, const fs::path& observations, const fs::path& out) {
  const auto forecasts = pipeline::read_forecasts_csv(forecasts_path);
  const Observations truth = read_observations(observations);
  const metrics::EvalReport report = pipeline::evaluate(forecasts, truth);
  metrics::write_eval_csv(out, report);
  for (const auto& row : report.rows)
    std::cout << row.horizon << " wk: mae " << row.mae << ", rmse " << row.rmse << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid mechanistic + graph-recurrent death forecasting"};
  app.require_subcommand(1);

  SimulateArgs sim_args;
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic world");
  simulate->add_option("--locations", sim_args.locations, "Number of locations")->check(CLI::Range(2, 1000));
  simulate->add_option("--days", sim_args.days, "Simulated days")->check(CLI::Range(42, 100000));
  simulate->add_option("--seed", sim_args.seed, "Random seed");
  simulate->add_option("--bias", sim_args.bias, "Scale of the spatial multiplicative cube bias")
      ->check(CLI::Range(0.0, 0.9));
  simulate->add_option("--members", sim_args.members, "Mechanistic ensemble members per issue")
      ->check(CLI::Range(1, 10000));
  simulate->add_flag("--with-members", sim_args.with_members, "Write ensemble member rows to the cube");
  simulate->add_option("--out", sim_args.out, "Output directory")->required();

  fs::path config, bundle, out, forecasts, observations;
  auto* train = app.add_subcommand("train", "Fit models and write a bundle");
  train->add_option("--config", config, "config.json")->required();
  train->add_option("--bundle", bundle, "Bundle output path")->required();

  auto* forecast = app.add_subcommand("forecast", "Forecast the held-out issues from a bundle");
  forecast->add_option("--bundle", bundle, "Trained bundle")->required();
  forecast->add_option("--out", out, "forecasts.csv output path")->required();

  auto* evaluate = app.add_subcommand("evaluate", "Score forecasts against observations");
  evaluate->add_option("--forecasts", forecasts, "forecasts.csv")->required();
  evaluate->add_option("--observations", observations, "observations.csv")->required();
  evaluate->add_option("--out", out, "eval.csv output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*simulate) run_simulate(sim_args);
    else if (*train) run_train(config, bundle);
    else if (*forecast) run_forecast(bundle, out);
    else if (*evaluate) run_evaluate(forecasts, observations, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
