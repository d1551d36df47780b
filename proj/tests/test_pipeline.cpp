#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <tuple>

#include "gleamcast/errors.hpp"
#include "gleamcast/gleamlite.hpp"
#include "gleamcast/pipeline.hpp"

using namespace gleamcast;
using namespace gleamcast::pipeline;
namespace fs = std::filesystem;

namespace {

const sim::SyntheticWorld& small_world() {
  static const sim::SyntheticWorld w = [] {
    sim::WorldConfig cfg;
    cfg.locations = 5;
    cfg.days = 180;
    cfg.seed = 2;
    return sim::make_synthetic_world(cfg);
  }();
  return w;
}

Inputs world_inputs() {
  const auto& w = small_world();
  return {w.observations, w.cube, w.graph};
}

RunConfig fast_config(UqMethod method) {
  RunConfig cfg;
  cfg.uq_method = method;
  cfg.seed = 3;
  cfg.model.hidden_units = 4;
  cfg.train.decay_epoch = 3;
  cfg.train.patience = 1;
  cfg.train.max_epochs = 5;
  cfg.restarts = 2;
  cfg.dropout_passes = 20;
  cfg.sgnht.chains = 3;
  cfg.sgnht.epochs = 4;
  return cfg;
}

// Constant daily deaths per location and a cube that matches them exactly.
Inputs flat_inputs(double cube_offset) {
  const std::size_t p = 3, days = 120;
  Inputs in;
  in.observations.locations = {"A", "B", "C"};
  in.observations.start = Date{18000};
  in.observations.values = Array2(days, p);
  for (std::size_t t = 0; t < days; ++t)
    for (std::size_t i = 0; i < p; ++i) in.observations.values(t, i) = 10.0 * static_cast<double>(i + 1);
  in.cube.locations = in.observations.locations;
  in.cube.horizons = 4;
  for (std::size_t d = 14; d + 28 <= days; d += 7) {
    in.cube.issues.push_back(in.observations.start + static_cast<int>(d));
    Array2 slice(4, p);
    for (std::size_t h = 0; h < 4; ++h)
      for (std::size_t i = 0; i < p; ++i) slice(h, i) = 70.0 * static_cast<double>(i + 1) + cube_offset;
    in.cube.point.push_back(slice);
  }
  Array2 a(p, p, 100.0);
  in.graph = graph::from_adjacency(a, in.observations.locations);
  return in;
}

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("gleamcast_pipeline_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  fs::path write(const std::string& name, const std::string& body) {
    std::ofstream(dir / name) << body;
    return dir / name;
  }
  fs::path dir;
};

}  // namespace

TEST(Dataset, PerfectMechanisticModelGivesZeroTensors) {
  const Inputs in = flat_inputs(0.0);
  const Dataset data = build_residual_dataset(in.observations, in.cube);
  ASSERT_FALSE(data.windows.empty());
  for (const Window& w : data.windows) {
    for (const Array2& f : w.input.frames)
      for (double v : f.data()) EXPECT_EQ(v, 0.0);
    ASSERT_TRUE(w.has_target);
    for (double v : w.target.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Dataset, ConstantBiasShiftsResidualsByMinusC) {
  const double c = 35.0;
  const Dataset clean = build_residual_dataset(flat_inputs(0.0).observations, flat_inputs(0.0).cube);
  const Inputs biased = flat_inputs(c);
  const Dataset shifted = build_residual_dataset(biased.observations, biased.cube);
  ASSERT_EQ(clean.windows.size(), shifted.windows.size());
  for (std::size_t k = 0; k < clean.windows.size(); ++k) {
    for (std::size_t i = 0; i < clean.windows[k].target.size(); ++i)
      EXPECT_EQ(shifted.windows[k].target[i], clean.windows[k].target[i] - c);
    // inputs carry the daily share of the weekly offset
    for (std::size_t t = 0; t < 7; ++t)
      for (std::size_t i = 0; i < clean.windows[k].input.frames[t].size(); ++i)
        EXPECT_NEAR(shifted.windows[k].input.frames[t][i], clean.windows[k].input.frames[t][i] - c / 7.0, 1e-12);
  }
}

TEST(Dataset, AdditivityOnSyntheticWorld) {
  const auto& w = small_world();
  ForecastCube moved = w.cube;
  for (Array2& a : moved.point)
    for (double& v : a.data()) v += 12.5;
  const Dataset a = build_residual_dataset(w.observations, w.cube);
  const Dataset b = build_residual_dataset(w.observations, moved);
  ASSERT_EQ(a.windows.size(), b.windows.size());
  for (std::size_t k = 0; k < a.windows.size(); ++k)
    for (std::size_t i = 0; i < a.windows[k].target.size(); ++i)
      EXPECT_NEAR(b.windows[k].target[i], a.windows[k].target[i] - 12.5, 1e-9);
}

TEST(Dataset, ShapesOnSyntheticWorld) {
  const auto& w = small_world();
  const Dataset data = build_residual_dataset(w.observations, w.cube);
  // issues need vintages 4 weeks back: days 42..147
  ASSERT_EQ(data.windows.size(), 16u);
  for (const Window& win : data.windows) {
    EXPECT_EQ(win.input.steps(), 7u);
    EXPECT_EQ(win.input.locations(), 5u);
    EXPECT_EQ(win.input.features(), 4u);
    EXPECT_TRUE(win.has_target);
    EXPECT_EQ(win.target.rows(), 4u);
    EXPECT_EQ(win.target.cols(), 5u);
  }
  const Dataset raw = build_observation_dataset(w.observations, w.cube);
  ASSERT_EQ(raw.windows.size(), 16u);
  EXPECT_EQ(raw.windows[0].input.features(), 1u);
  for (double v : raw.windows[0].base.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(build_residual_dataset(w.observations, w.cube, 8), ContractError);
}

TEST(Dataset, ResidualFeatureDefinition) {
  const auto& w = small_world();
  const Dataset data = build_residual_dataset(w.observations, w.cube);
  const Window& win = data.windows[3];
  for (std::size_t h = 1; h <= 4; ++h) {
    const std::size_t vintage = *w.cube.find(win.issue - static_cast<int>(7 * h));
    for (std::size_t t = 0; t < 7; ++t)
      for (std::size_t loc = 0; loc < 5; ++loc) {
        const Date day = win.issue - 7 + static_cast<int>(t);
        EXPECT_EQ(win.input.at(t, loc, h - 1), w.observations.at(day, loc) - w.cube.value(vintage, loc, h) / 7.0);
      }
  }
}

TEST(Recombine, Examples) {
  EXPECT_EQ(weekly_recombine(Array2{{100}}, Array2{{-20}}), (Array2{{80}}));
  const Array2 g{{1, 2}, {3, 4}};
  EXPECT_EQ(weekly_recombine(g, Array2(2, 2)), g);
  EXPECT_THROW(weekly_recombine(g, Array2(1, 2)), DimensionError);
}

TEST(Split, NoLeakage) {
  const auto& w = small_world();
  const Dataset data = build_residual_dataset(w.observations, w.cube);
  const Split s = split_windows(data, 2, 0.2);
  ASSERT_EQ(s.test.size(), 2u);
  EXPECT_EQ(s.test.back(), data.windows.size() - 1);
  const Date first_test = data.windows[s.test.front()].issue;
  std::set<std::size_t> seen;
  for (const auto* part : {&s.train, &s.validation})
    for (std::size_t i : *part) {
      EXPECT_LE(data.windows[i].issue + 28, first_test);
      EXPECT_TRUE(seen.insert(i).second);
    }
  EXPECT_EQ(s.train.size() + s.validation.size(), 11u);
  EXPECT_EQ(s.validation.size(), 3u);
  EXPECT_LT(s.train.back(), s.validation.front());
  EXPECT_THROW(split_windows(data, 16, 0.2), DataError);
}

TEST_F(TempDir, ConfigParsingAndUnknownKeys) {
  write("c.json", R"({"observations": "obs.csv", "forecasts": "/abs/cube.csv", "uq_method": "quantile",
                     "ci_levels": [0.95], "model": {"hidden_units": 16}, "train": {"max_epochs": 9}})");
  const RunConfig c = load_run_config(dir / "c.json");
  EXPECT_EQ(c.observations, dir / "obs.csv");
  EXPECT_EQ(c.forecasts, fs::path("/abs/cube.csv"));
  EXPECT_EQ(c.uq_method, UqMethod::quantile);
  EXPECT_EQ(c.model.hidden_units, 16u);
  EXPECT_EQ(c.train.max_epochs, 9u);
  EXPECT_EQ(c.ci_levels, std::vector<double>{0.95});

  write("u1.json", R"({"observations": "o", "forecasts": "f", "learning_rate": 1})");
  write("u2.json", R"({"observations": "o", "forecasts": "f", "train": {"lr": 1}})");
  write("u3.json", R"({"observations": "o", "forecasts": "f", "uq_method": "ensemble"})");
  write("u4.json", R"({"observations": "o", "forecasts": "f", "ci_levels": [1.5]})");
  write("u5.json", R"({"observations": "o"})");
  write("u6.json", R"({"observations": "o", "forecasts": )");
  for (const char* name : {"u1.json", "u2.json", "u3.json", "u4.json", "u5.json", "u6.json"})
    EXPECT_THROW(load_run_config(dir / name), DataError) << name;
  try {
    load_run_config(dir / "u1.json");
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos);
  }
}

TEST_F(TempDir, ConfigJsonRoundTrip) {
  RunConfig c = fast_config(UqMethod::sgnht);
  c.observations = dir / "o.csv";
  c.forecasts = dir / "f.csv";
  c.mode = Mode::ensemble;
  c.hybrid = false;
  write("c.json", run_config_json(c));
  const RunConfig back = load_run_config(dir / "c.json");
  EXPECT_EQ(run_config_json(back), run_config_json(c));
}

TEST(Methods, ParseNames) {
  for (auto m : {UqMethod::point, UqMethod::bootstrap, UqMethod::quantile, UqMethod::sq, UqMethod::mis,
                 UqMethod::mc_dropout, UqMethod::sgnht})
    EXPECT_EQ(parse_uq_method(to_string(m)), m);
  EXPECT_EQ(parse_mode("ensemble"), Mode::ensemble);
  EXPECT_THROW(parse_uq_method("dropout"), DataError);
}

TEST(Fit, BootstrapTrainsOneReplicatePerWindow) {
  const ModelBundle b = fit(fast_config(UqMethod::bootstrap), world_inputs());
  ASSERT_EQ(b.slots.size(), 1u);
  // 11 fit windows, 3 of them for validation
  EXPECT_EQ(b.slots[0].members.size(), 8u);
  EXPECT_EQ(b.slots[0].target_rows, (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(Fit, QuantileHeadsForNinetyFive) {
  RunConfig cfg = fast_config(UqMethod::quantile);
  cfg.ci_levels = {0.95};
  const ModelBundle b = fit(cfg, world_inputs());
  EXPECT_EQ(b.slots[0].model.output_heads, 3u);
  EXPECT_EQ(b.slots[0].model.feedback.column, 1u);
  EXPECT_EQ(b.slots[0].members.size(), 2u);
  const auto f = forecast(b, world_inputs());
  for (const auto& q : f) {
    ASSERT_EQ(q.intervals.size(), 1u);
    EXPECT_EQ(q.intervals[0].level, 0.95);
  }
}

TEST(Fit, EnsembleModeHasOneModelPerHorizon) {
  const ModelBundle b = fit(fast_config(UqMethod::point), world_inputs());
  RunConfig cfg = fast_config(UqMethod::point);
  cfg.mode = Mode::ensemble;
  const ModelBundle e = fit(cfg, world_inputs());
  ASSERT_EQ(e.slots.size(), 4u);
  for (std::size_t h = 0; h < 4; ++h) {
    EXPECT_EQ(e.slots[h].target_rows, std::vector<std::size_t>{h});
    EXPECT_EQ(e.slots[h].model.horizon, 1u);
  }
  EXPECT_EQ(b.slots.size(), 1u);
}

TEST(Fit, ModesCoincideAtHorizonOne) {
  RunConfig cfg = fast_config(UqMethod::point);
  cfg.model.horizon = 1;
  const auto a = run_autoregressive(cfg, world_inputs());
  const auto e = run_ensemble_mode(cfg, world_inputs());
  EXPECT_EQ(forecasts_csv(a), forecasts_csv(e));
}

TEST(Forecast, CompleteNestedAndDeterministic) {
  for (UqMethod m : {UqMethod::bootstrap, UqMethod::quantile, UqMethod::sq, UqMethod::mis, UqMethod::mc_dropout,
                     UqMethod::sgnht}) {
    for (Mode mode : {Mode::autoregressive, Mode::ensemble}) {
      if (mode == Mode::ensemble && m != UqMethod::mis && m != UqMethod::bootstrap) continue;
      RunConfig cfg = fast_config(m);
      cfg.mode = mode;
      const auto f = forecast(fit(cfg, world_inputs()), world_inputs());
      SCOPED_TRACE(to_string(m) + "/" + to_string(mode));
      // 2 held-out issues x 4 horizons x 5 locations
      ASSERT_EQ(f.size(), 40u);
      std::set<std::tuple<int, std::size_t, std::string>> cells;
      for (const auto& q : f) {
        EXPECT_TRUE(cells.insert({q.issue.days, q.horizon, q.location}).second);
        ASSERT_EQ(q.intervals.size(), 3u);
        double lo = q.point, hi = q.point;
        for (const auto& iv : q.intervals) {
          EXPECT_LE(iv.lower, lo);
          EXPECT_GE(iv.upper, hi);
          lo = iv.lower;
          hi = iv.upper;
        }
        EXPECT_TRUE(std::isfinite(q.point));
      }
      EXPECT_EQ(forecasts_csv(forecast(fit(cfg, world_inputs()), world_inputs())), forecasts_csv(f));
    }
  }
}

TEST(Forecast, SerialAndParallelAgree) {
  const RunConfig cfg = fast_config(UqMethod::bootstrap);
  EXPECT_EQ(forecasts_csv(run_autoregressive(cfg, world_inputs(), par::Exec::serial)),
            forecasts_csv(run_autoregressive(cfg, world_inputs(), par::Exec::parallel)));
}

TEST(Forecast, ZeroResidualWorldReturnsMechanisticForecast) {
  const Inputs in = flat_inputs(0.0);
  RunConfig cfg = fast_config(UqMethod::point);
  cfg.train.max_epochs = 40;
  cfg.train.decay_epoch = 30;
  cfg.train.patience = 3;
  const auto f = run_autoregressive(cfg, in);
  ASSERT_FALSE(f.empty());
  for (const auto& q : f) {
    const double base = 70.0 * static_cast<double>(in.observations.index_of(q.location) + 1);
    EXPECT_NEAR(q.point, base, 0.05) << q.location << " h" << q.horizon;
  }
}

TEST_F(TempDir, BundleRoundTrip) {
  RunConfig cfg = fast_config(UqMethod::mis);
  cfg.observations = dir / "obs.csv";
  cfg.forecasts = dir / "cube.csv";
  const ModelBundle b = fit(cfg, world_inputs());
  save_bundle(dir / "bundle.json", b);
  const ModelBundle back = load_bundle(dir / "bundle.json");
  EXPECT_EQ(back.slots.size(), b.slots.size());
  EXPECT_EQ(back.slots[0].members, b.slots[0].members);
  EXPECT_EQ(back.input_scale, b.input_scale);
  EXPECT_EQ(forecasts_csv(forecast(back, world_inputs())), forecasts_csv(forecast(b, world_inputs())));
}

TEST_F(TempDir, MissingOrBrokenBundle) {
  try {
    load_bundle(dir / "nope.json");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("train"), std::string::npos);
  }
  write("bad.json", R"({"format": "other"})");
  EXPECT_THROW(load_bundle(dir / "bad.json"), DataError);
}

TEST_F(TempDir, ForecastsCsvLayoutAndRoundTrip) {
  QuantileForecast f;
  f.issue = Date::parse("2020-06-07");
  f.horizon = 2;
  f.location = "CA";
  f.point = 50;
  f.intervals = {{40, 60, 0.8}, {35, 70, 0.95}};
  QuantileForecast bare = f;
  bare.location = "NY";
  bare.intervals.clear();
  const std::string body = forecasts_csv({f, bare});
  EXPECT_EQ(body,
            "issue_date,target,location,type,quantile,value\n"
            "2020-06-07,2 wk ahead inc death,CA,point,,50\n"
            "2020-06-07,2 wk ahead inc death,CA,quantile,0.025,35\n"
            "2020-06-07,2 wk ahead inc death,CA,quantile,0.1,40\n"
            "2020-06-07,2 wk ahead inc death,CA,quantile,0.5,50\n"
            "2020-06-07,2 wk ahead inc death,CA,quantile,0.9,60\n"
            "2020-06-07,2 wk ahead inc death,CA,quantile,0.975,70\n"
            "2020-06-07,2 wk ahead inc death,NY,point,,50\n");
  write_forecasts_csv(dir / "f.csv", {f, bare});
  const auto back = read_forecasts_csv(dir / "f.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(forecasts_csv(back), body);
  const auto p = write("bad.csv",
                       "issue_date,target,location,type,quantile,value\n"
                       "2020-06-07,1 wk ahead inc death,CA,point,,50\n"
                       "2020-06-07,1 wk ahead inc death,CA,quantile,0.1,40\n");
  EXPECT_THROW(read_forecasts_csv(p), DataError);
}

TEST(Evaluate, PerfectAndBiasedForecasts) {
  const auto& w = small_world();
  std::vector<QuantileForecast> exact, biased;
  for (int k = 0; k < 3; ++k)
    for (std::size_t h = 1; h <= 4; ++h)
      for (std::size_t loc = 0; loc < 5; ++loc) {
        QuantileForecast f;
        f.issue = w.observations.start + 60 + 7 * k;
        f.horizon = h;
        f.location = w.observations.locations[loc];
        for (int d = 0; d < 7; ++d) f.point += w.observations.at(f.issue + static_cast<int>(7 * (h - 1)) + d, loc);
        f.intervals = {{f.point, f.point, 0.9}};
        exact.push_back(f);
        f.point += 10.0;
        f.intervals.clear();
        biased.push_back(f);
      }
  const auto r = evaluate(exact, w.observations);
  ASSERT_EQ(r.rows.size(), 4u);
  for (const auto& row : r.rows) {
    EXPECT_EQ(row.mae, 0.0);
    EXPECT_EQ(row.rmse, 0.0);
    EXPECT_EQ(row.levels[0].coverage, 1.0);
    EXPECT_EQ(row.levels[0].width, 0.0);
    EXPECT_EQ(row.levels[0].mis, 0.0);
  }
  for (const auto& row : evaluate(biased, w.observations).rows) {
    EXPECT_NEAR(row.mae, 10.0, 1e-12);
    EXPECT_NEAR(row.rmse, 10.0, 1e-12);
    EXPECT_TRUE(row.levels.empty());
  }
  auto late = exact;
  late[0].issue = w.observations.end();
  EXPECT_THROW(evaluate(late, w.observations), DataError);
}

TEST(Evaluate, MatchesMetricOracles) {
  const auto& w = small_world();
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 20);
  std::vector<QuantileForecast> fs;
  std::vector<double> z, pt, lo, hi;
  for (std::size_t loc = 0; loc < 5; ++loc) {
    QuantileForecast f;
    f.issue = w.observations.start + 100;
    f.horizon = 1;
    f.location = w.observations.locations[loc];
    double truth = 0;
    for (int d = 0; d < 7; ++d) truth += w.observations.at(f.issue + d, loc);
    f.point = truth + n(rng);
    f.intervals = {{f.point - std::fabs(n(rng)), f.point + std::fabs(n(rng)), 0.8}};
    z.push_back(truth);
    pt.push_back(f.point);
    lo.push_back(f.intervals[0].lower);
    hi.push_back(f.intervals[0].upper);
    fs.push_back(f);
  }
  const auto r = evaluate(fs, w.observations);
  EXPECT_EQ(r.rows[0].mae, metrics::mae_metric(z, pt));
  EXPECT_EQ(r.rows[0].rmse, metrics::rmse_metric(z, pt));
  EXPECT_EQ(r.rows[0].levels[0].mis, metrics::mis_metric(z, hi, lo, 0.2));
}
