#include "gleamcast/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "gleamcast/csv_io.hpp"
#include "gleamcast/errors.hpp"

namespace gleamcast::pipeline {

using json = nlohmann::json;

namespace {

constexpr double kScaleFloor = 1e-12;

double clean_level(double v) { return std::round(v * 1e12) / 1e12; }

}  // namespace

std::string to_string(UqMethod m) {
  switch (m) {
    case UqMethod::point: return "point";
    case UqMethod::bootstrap: return "bootstrap";
    case UqMethod::quantile: return "quantile";
    case UqMethod::sq: return "sq";
    case UqMethod::mis: return "mis";
    case UqMethod::mc_dropout: return "mc_dropout";
    case UqMethod::sgnht: return "sgnht";
  }
  return "?";
}

std::string to_string(Mode m) { return m == Mode::autoregressive ? "autoregressive" : "ensemble"; }

UqMethod parse_uq_method(const std::string& s) {
  for (UqMethod m : {UqMethod::point, UqMethod::bootstrap, UqMethod::quantile, UqMethod::sq, UqMethod::mis,
                     UqMethod::mc_dropout, UqMethod::sgnht})
    if (to_string(m) == s) return m;
  throw DataError("unknown uq_method '" + s + "'");
}

Mode parse_mode(const std::string& s) {
  if (s == "autoregressive") return Mode::autoregressive;
  if (s == "ensemble") return Mode::ensemble;
  throw DataError("unknown mode '" + s + "'");
}

void RunConfig::validate() const {
  if (ci_levels.empty()) throw ContractError("config: ci_levels must not be empty");
  for (double l : ci_levels)
    if (!(l > 0.0 && l < 1.0)) throw ContractError("config: ci_levels must lie in (0, 1)");
  std::set<double> unique(ci_levels.begin(), ci_levels.end());
  if (unique.size() != ci_levels.size()) throw ContractError("config: duplicate ci_levels");
  if (model.window < 1 || model.window > 7) throw ContractError("config: model.window must be in [1, 7]");
  if (model.horizon < 1) throw ContractError("config: model.horizon must be >= 1");
  if (holdout_issues < 1) throw ContractError("config: holdout_issues must be >= 1");
  if (restarts < 1) throw ContractError("config: restarts must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ContractError("config: dropout_rate must be in [0, 1)");
  if (dropout_passes < 1) throw ContractError("config: dropout_passes must be >= 1");
  if (!(teacher_prob >= 0.0 && teacher_prob <= 1.0)) throw ContractError("config: teacher_prob must be in [0, 1]");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw ContractError("config: validation_fraction must be in (0, 1)");
  train.validate();
  sgnht.validate();
}

// ---------------------------------------------------------------- config json

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw DataError(where + ": expected an object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw DataError(where + ": unknown key '" + key + "'");
}

template <typename T>
T read_value(const json& j, const std::string& key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw DataError(where + ": bad value for '" + key + "'");
  }
}

std::size_t read_count(const json& j, const std::string& key, const std::string& where) {
  const json& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0)
    throw DataError(where + ": '" + key + "' must be a nonnegative integer");
  return v.get<std::size_t>();
}

std::string filter_name(dcrnn::FilterKind k) { return k == dcrnn::FilterKind::random_walk ? "random_walk" : "symmetric"; }
std::string cell_name(dcrnn::CellKind k) { return k == dcrnn::CellKind::gru ? "gru" : "vanilla"; }

dcrnn::FilterKind parse_filter(const std::string& s) {
  if (s == "random_walk") return dcrnn::FilterKind::random_walk;
  if (s == "symmetric") return dcrnn::FilterKind::symmetric;
  throw DataError("unknown filter '" + s + "'");
}

dcrnn::CellKind parse_cell(const std::string& s) {
  if (s == "gru") return dcrnn::CellKind::gru;
  if (s == "vanilla") return dcrnn::CellKind::vanilla;
  throw DataError("unknown cell '" + s + "'");
}

json model_json(const dcrnn::ModelConfig& m, bool full) {
  json j = {{"hidden_units", m.hidden_units}, {"diffusion_steps", m.diffusion_steps},
            {"filter", filter_name(m.filter)},  {"cell", cell_name(m.cell)},
            {"horizon", m.horizon},             {"window", m.window},
            {"init_std", m.init_std}};
  if (full) {
    j["input_features"] = m.input_features;
    j["output_heads"] = m.output_heads;
    j["feedback"] = m.feedback.kind == dcrnn::Feedback::Kind::spline_median ? "spline_median" : "column";
    j["feedback_column"] = m.feedback.column;
  }
  return j;
}

dcrnn::ModelConfig parse_model(const json& j, bool full, const std::string& where) {
  std::set<std::string> keys{"hidden_units", "diffusion_steps", "filter", "cell", "horizon", "window", "init_std"};
  if (full) keys.insert({"input_features", "output_heads", "feedback", "feedback_column"});
  reject_unknown(j, keys, where);
  dcrnn::ModelConfig m;
  if (j.contains("hidden_units")) m.hidden_units = read_count(j, "hidden_units", where);
  if (j.contains("diffusion_steps")) m.diffusion_steps = read_count(j, "diffusion_steps", where);
  if (j.contains("filter")) m.filter = parse_filter(read_value<std::string>(j, "filter", where));
  if (j.contains("cell")) m.cell = parse_cell(read_value<std::string>(j, "cell", where));
  if (j.contains("horizon")) m.horizon = read_count(j, "horizon", where);
  if (j.contains("window")) m.window = read_count(j, "window", where);
  if (j.contains("init_std")) m.init_std = read_value<double>(j, "init_std", where);
  if (full) {
    if (j.contains("input_features")) m.input_features = read_count(j, "input_features", where);
    if (j.contains("output_heads")) m.output_heads = read_count(j, "output_heads", where);
    if (j.contains("feedback")) {
      const auto kind = read_value<std::string>(j, "feedback", where);
      if (kind == "spline_median") m.feedback.kind = dcrnn::Feedback::Kind::spline_median;
      else if (kind == "column") m.feedback.kind = dcrnn::Feedback::Kind::column;
      else throw DataError(where + ": unknown feedback '" + kind + "'");
    }
    if (j.contains("feedback_column")) m.feedback.column = read_count(j, "feedback_column", where);
  }
  return m;
}

json config_json(const RunConfig& c) {
  json j;
  j["observations"] = c.observations.generic_string();
  j["forecasts"] = c.forecasts.generic_string();
  j["mobility"] = c.mobility.generic_string();
  j["model"] = model_json(c.model, false);
  j["train"] = {{"base_lr", c.train.base_lr},
                {"decayed_lr", c.train.decayed_lr},
                {"decay_epoch", c.train.decay_epoch},
                {"patience", c.train.patience},
                {"max_epochs", c.train.max_epochs}};
  j["uq_method"] = to_string(c.uq_method);
  j["ci_levels"] = c.ci_levels;
  j["mode"] = to_string(c.mode);
  j["seed"] = c.seed;
  j["holdout_issues"] = c.holdout_issues;
  j["restarts"] = c.restarts;
  j["dropout_rate"] = c.dropout_rate;
  j["dropout_passes"] = c.dropout_passes;
  j["sgnht"] = {{"chains", c.sgnht.chains},
                {"epochs", c.sgnht.epochs},
                {"burn_in_fraction", c.sgnht.burn_in_fraction},
                {"step", c.sgnht.step},
                {"diffusion", c.sgnht.diffusion},
                {"prior_std", c.sgnht.prior_std},
                {"init_std", c.sgnht.init_std},
                {"momentum_init_std", c.sgnht.momentum_init_std},
                {"patience", c.sgnht.patience}};
  j["teacher_prob"] = c.teacher_prob;
  j["validation_fraction"] = c.validation_fraction;
  j["hybrid"] = c.hybrid;
  return j;
}

RunConfig parse_config(const json& j, const std::filesystem::path& base_dir) {
  const std::string where = "config";
  reject_unknown(j,
                 {"observations", "forecasts", "mobility", "model", "train", "uq_method", "ci_levels", "mode", "seed",
                  "holdout_issues", "restarts", "dropout_rate", "dropout_passes", "sgnht", "teacher_prob",
                  "validation_fraction", "hybrid"},
                 where);
  RunConfig c;
  auto path_of = [&](const char* key) -> std::filesystem::path {
    if (!j.contains(key)) return {};
    std::filesystem::path p = read_value<std::string>(j, key, where);
    if (p.empty() || p.is_absolute()) return p;
    return base_dir / p;
  };
  c.observations = path_of("observations");
  c.forecasts = path_of("forecasts");
  c.mobility = path_of("mobility");
  if (c.observations.empty() || c.forecasts.empty())
    throw DataError("config: 'observations' and 'forecasts' are required");
  if (j.contains("model")) c.model = parse_model(j["model"], false, "config.model");
  if (j.contains("train")) {
    const json& t = j["train"];
    const std::string w = "config.train";
    reject_unknown(t, {"base_lr", "decayed_lr", "decay_epoch", "patience", "max_epochs"}, w);
    if (t.contains("base_lr")) c.train.base_lr = read_value<double>(t, "base_lr", w);
    if (t.contains("decayed_lr")) c.train.decayed_lr = read_value<double>(t, "decayed_lr", w);
    if (t.contains("decay_epoch")) c.train.decay_epoch = read_count(t, "decay_epoch", w);
    if (t.contains("patience")) c.train.patience = read_count(t, "patience", w);
    if (t.contains("max_epochs")) c.train.max_epochs = read_count(t, "max_epochs", w);
  }
  if (j.contains("uq_method")) c.uq_method = parse_uq_method(read_value<std::string>(j, "uq_method", where));
  if (j.contains("ci_levels")) c.ci_levels = read_value<std::vector<double>>(j, "ci_levels", where);
  if (j.contains("mode")) c.mode = parse_mode(read_value<std::string>(j, "mode", where));
  if (j.contains("seed")) c.seed = read_value<std::uint64_t>(j, "seed", where);
  if (j.contains("holdout_issues")) c.holdout_issues = read_count(j, "holdout_issues", where);
  if (j.contains("restarts")) c.restarts = read_count(j, "restarts", where);
  if (j.contains("dropout_rate")) c.dropout_rate = read_value<double>(j, "dropout_rate", where);
  if (j.contains("dropout_passes")) c.dropout_passes = read_count(j, "dropout_passes", where);
  if (j.contains("sgnht")) {
    const json& s = j["sgnht"];
    const std::string w = "config.sgnht";
    reject_unknown(s,
                   {"chains", "epochs", "burn_in_fraction", "step", "diffusion", "prior_std", "init_std",
                    "momentum_init_std", "patience"},
                   w);
    if (s.contains("chains")) c.sgnht.chains = read_count(s, "chains", w);
    if (s.contains("epochs")) c.sgnht.epochs = read_count(s, "epochs", w);
    if (s.contains("burn_in_fraction")) c.sgnht.burn_in_fraction = read_value<double>(s, "burn_in_fraction", w);
    if (s.contains("step")) c.sgnht.step = read_value<double>(s, "step", w);
    if (s.contains("diffusion")) c.sgnht.diffusion = read_value<double>(s, "diffusion", w);
    if (s.contains("prior_std")) c.sgnht.prior_std = read_value<double>(s, "prior_std", w);
    if (s.contains("init_std")) c.sgnht.init_std = read_value<double>(s, "init_std", w);
    if (s.contains("momentum_init_std")) c.sgnht.momentum_init_std = read_value<double>(s, "momentum_init_std", w);
    if (s.contains("patience")) c.sgnht.patience = read_count(s, "patience", w);
  }
  if (j.contains("teacher_prob")) c.teacher_prob = read_value<double>(j, "teacher_prob", where);
  if (j.contains("validation_fraction"))
    c.validation_fraction = read_value<double>(j, "validation_fraction", where);
  if (j.contains("hybrid")) c.hybrid = read_value<bool>(j, "hybrid", where);
  try {
    c.validate();
  } catch (const ContractError& e) {
    throw DataError(e.what());
  }
  return c;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": invalid JSON: " + e.what());
  }
}

}  // namespace

RunConfig load_run_config(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  return parse_config(j, std::filesystem::absolute(path).parent_path());
}

std::string run_config_json(const RunConfig& cfg) { return config_json(cfg).dump(2) + "\n"; }

Inputs load_inputs(const RunConfig& cfg) {
  Inputs in;
  in.observations = read_observations(cfg.observations);
  in.cube = read_cube(cfg.forecasts, in.observations.locations);
  const std::vector<graph::Edge> edges =
      cfg.mobility.empty() ? std::vector<graph::Edge>{} : graph::read_mobility_csv(cfg.mobility);
  try {
    in.graph = graph::from_edge_list(edges, in.observations.locations);
  } catch (const ContractError& e) {
    throw DataError(cfg.mobility.string() + ": " + e.what());
  }
  return in;
}

// ------------------------------------------------------------------ datasets

namespace {

void check_locations(const Observations& obs, const ForecastCube& cube) {
  if (obs.locations != cube.locations) throw DataError("forecast cube locations differ from observation locations");
}

std::vector<std::size_t> usable_issues(const Observations& obs, const ForecastCube& cube, std::size_t window,
                                       std::size_t horizons) {
  if (window < 1 || window > 7) throw ContractError("window must be in [1, 7] days");
  if (horizons < 1 || horizons > cube.horizons)
    throw ContractError("horizons must be in [1, " + std::to_string(cube.horizons) + "]");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < cube.issues.size(); ++i) {
    const Date d = cube.issues[i];
    bool ok = true;
    for (std::size_t h = 1; h <= horizons && ok; ++h) ok = cube.find(d - static_cast<int>(7 * h)).has_value();
    if (!ok) continue;
    const Date first = d - static_cast<int>(window);
    // observations are contiguous, so coverage of both ends covers the window
    if (!obs.covers(first) || !obs.covers(d - 1)) continue;
    out.push_back(i);
  }
  return out;
}

Array2 weekly_observed(const Observations& obs, Date issue, std::size_t horizons, bool& covered) {
  Array2 out(horizons, obs.locations.size());
  covered = obs.covers(issue) && obs.covers(issue + static_cast<int>(7 * horizons) - 1);
  if (!covered) return out;
  for (std::size_t h = 0; h < horizons; ++h)
    for (int d = 0; d < 7; ++d)
      for (std::size_t p = 0; p < obs.locations.size(); ++p)
        out(h, p) += obs.at(issue + static_cast<int>(7 * h) + d, p);
  return out;
}

}  // namespace

Dataset build_residual_dataset(const Observations& obs, const ForecastCube& cube, std::size_t window,
                               std::size_t horizons) {
  check_locations(obs, cube);
  const std::size_t p = obs.locations.size();
  Dataset data{obs.locations, horizons, window, {}};
  for (std::size_t i : usable_issues(obs, cube, window, horizons)) {
    const Date d = cube.issues[i];
    Window w;
    w.issue = d;
    w.input = dcrnn::ResidualTensor::zeros(window, p, horizons);
    for (std::size_t h = 1; h <= horizons; ++h) {
      const std::size_t vintage = *cube.find(d - static_cast<int>(7 * h));
      for (std::size_t t = 0; t < window; ++t) {
        const Date day = d - static_cast<int>(window) + static_cast<int>(t);
        for (std::size_t loc = 0; loc < p; ++loc)
          w.input.at(t, loc, h - 1) = obs.at(day, loc) - cube.value(vintage, loc, h) / 7.0;
      }
    }
    w.base = Array2(horizons, p);
    for (std::size_t h = 1; h <= horizons; ++h)
      for (std::size_t loc = 0; loc < p; ++loc) w.base(h - 1, loc) = cube.value(i, loc, h);
    Array2 observed = weekly_observed(obs, d, horizons, w.has_target);
    if (w.has_target) {
      w.target = Array2(horizons, p);
      for (std::size_t k = 0; k < observed.size(); ++k) w.target[k] = observed[k] - w.base[k];
    }
    data.windows.push_back(std::move(w));
  }
  return data;
}

Dataset build_observation_dataset(const Observations& obs, const ForecastCube& cube, std::size_t window,
                                  std::size_t horizons) {
  check_locations(obs, cube);
  const std::size_t p = obs.locations.size();
  Dataset data{obs.locations, horizons, window, {}};
  for (std::size_t i : usable_issues(obs, cube, window, horizons)) {
    const Date d = cube.issues[i];
    Window w;
    w.issue = d;
    w.input = dcrnn::ResidualTensor::zeros(window, p, 1);
    for (std::size_t t = 0; t < window; ++t)
      for (std::size_t loc = 0; loc < p; ++loc)
        w.input.at(t, loc, 0) = obs.at(d - static_cast<int>(window) + static_cast<int>(t), loc);
    w.base = Array2(horizons, p);
    Array2 observed = weekly_observed(obs, d, horizons, w.has_target);
    if (w.has_target) w.target = std::move(observed);
    data.windows.push_back(std::move(w));
  }
  return data;
}

Split split_windows(const Dataset& data, std::size_t holdout, double validation_fraction) {
  if (holdout < 1) throw ContractError("split_windows: holdout must be >= 1");
  std::vector<std::size_t> labelled;
  for (std::size_t i = 0; i < data.windows.size(); ++i)
    if (data.windows[i].has_target) labelled.push_back(i);
  if (labelled.size() <= holdout)
    throw DataError("only " + std::to_string(labelled.size()) + " windows with known targets; need more than " +
                    std::to_string(holdout));
  Split s;
  s.test.assign(labelled.end() - static_cast<std::ptrdiff_t>(holdout), labelled.end());
  const Date first_test = data.windows[s.test.front()].issue;
  std::vector<std::size_t> fit;
  for (std::size_t i : labelled)
    if (data.windows[i].issue + static_cast<int>(7 * data.horizons) <= first_test) fit.push_back(i);
  if (fit.size() < 2)
    throw DataError("only " + std::to_string(fit.size()) +
                    " training windows end before the held-out issues; need at least 2");
  auto n_val = static_cast<std::size_t>(std::ceil(validation_fraction * static_cast<double>(fit.size())));
  n_val = std::clamp<std::size_t>(n_val, 1, fit.size() - 1);
  s.train.assign(fit.begin(), fit.end() - static_cast<std::ptrdiff_t>(n_val));
  s.validation.assign(fit.end() - static_cast<std::ptrdiff_t>(n_val), fit.end());
  return s;
}

Array2 weekly_recombine(const Array2& gleam_weekly, const Array2& residual) {
  if (!gleam_weekly.same_shape(residual))
    throw DimensionError("weekly_recombine: forecast " + gleam_weekly.shape_string() + " vs residual " +
                         residual.shape_string());
  Array2 out = gleam_weekly;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += residual[k];
  return out;
}

// ------------------------------------------------------------------ training

namespace {

struct LossSpec {
  enum class Kind { mae, pinball, crps, mis };
  Kind kind = Kind::mae;
  std::vector<double> quantiles;  // pinball heads
  std::vector<double> rhos;       // mis triples (l, u, f) per entry
};

std::vector<double> mis_levels(const RunConfig& cfg) {
  std::vector<double> l = cfg.ci_levels;
  std::sort(l.begin(), l.end());
  return l;
}

LossSpec loss_for(const RunConfig& cfg) {
  LossSpec s;
  switch (cfg.uq_method) {
    case UqMethod::quantile:
      s.kind = LossSpec::Kind::pinball;
      s.quantiles = uq::quantile_levels(cfg.ci_levels);
      break;
    case UqMethod::sq: s.kind = LossSpec::Kind::crps; break;
    case UqMethod::mis:
      s.kind = LossSpec::Kind::mis;
      for (double l : mis_levels(cfg)) s.rhos.push_back(1.0 - l);
      break;
    default: break;
  }
  return s;
}

dcrnn::ModelConfig slot_model(const RunConfig& cfg, std::size_t features, std::size_t steps) {
  dcrnn::ModelConfig m = cfg.model;
  m.input_features = features;
  m.horizon = steps;
  m.output_heads = 1;
  m.feedback = {};
  switch (cfg.uq_method) {
    case UqMethod::quantile: {
      const auto q = uq::quantile_levels(cfg.ci_levels);
      m.output_heads = q.size();
      m.feedback.column = static_cast<std::size_t>(std::find(q.begin(), q.end(), 0.5) - q.begin());
      break;
    }
    case UqMethod::sq:
      m.output_heads = uq::kSplineParams;
      m.feedback.kind = dcrnn::Feedback::Kind::spline_median;
      break;
    case UqMethod::mis:
      m.output_heads = 3 * cfg.ci_levels.size();
      m.feedback.column = 2;
      break;
    default: break;
  }
  m.validate();
  return m;
}

ad::Var step_loss(const LossSpec& spec, ad::Tape& tape, ad::Var out, const Array2& target, std::size_t row) {
  const std::size_t p = out.rows();
  Array2 y(p, 1);
  for (std::size_t i = 0; i < p; ++i) y(i, 0) = target(row, i);
  const ad::Var yv = tape.constant(std::move(y));
  switch (spec.kind) {
    case LossSpec::Kind::mae: return uq::mae_loss(yv, ad::slice_cols(out, 0, 1));
    case LossSpec::Kind::crps: return uq::crps_spline_loss(out, yv);
    case LossSpec::Kind::pinball: {
      ad::Var total = uq::pinball_loss(yv, ad::slice_cols(out, 0, 1), spec.quantiles[0]);
      for (std::size_t j = 1; j < spec.quantiles.size(); ++j)
        total = ad::add(total, uq::pinball_loss(yv, ad::slice_cols(out, j, 1), spec.quantiles[j]));
      return total;
    }
    case LossSpec::Kind::mis: {
      ad::Var total;
      for (std::size_t j = 0; j < spec.rhos.size(); ++j) {
        const ad::Var term = uq::mis_loss(yv, ad::slice_cols(out, 3 * j + 1, 1), ad::slice_cols(out, 3 * j, 1),
                                          ad::slice_cols(out, 3 * j + 2, 1), spec.rhos[j]);
        total = j == 0 ? term : ad::add(total, term);
      }
      return total;
    }
  }
  throw ContractError("step_loss: unknown loss");
}

/// Normalized windows for one slot: inputs / input_scale, targets restricted
/// to the slot's rows and divided by target_scale.
struct SlotData {
  std::vector<dcrnn::ResidualTensor> inputs;
  std::vector<Array2> targets;  // steps x P, empty without target
};

SlotData slot_data(const Dataset& data, const std::vector<std::size_t>& rows, double in_scale, double out_scale) {
  SlotData s;
  for (const Window& w : data.windows) {
    dcrnn::ResidualTensor x = w.input;
    for (Array2& f : x.frames)
      for (double& v : f.data()) v /= in_scale;
    s.inputs.push_back(std::move(x));
    Array2 t;
    if (w.has_target) {
      t = Array2(rows.size(), data.locations.size());
      for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t p = 0; p < data.locations.size(); ++p) t(r, p) = w.target(rows[r], p) / out_scale;
    }
    s.targets.push_back(std::move(t));
  }
  return s;
}

class WindowObjective : public train::Objective {
 public:
  WindowObjective(const dcrnn::Model& model, const SlotData& data, std::vector<std::size_t> train_idx,
                  std::vector<std::size_t> val_idx, LossSpec loss, double teacher_prob)
      : model_(model),
        data_(data),
        train_(std::move(train_idx)),
        val_(std::move(val_idx)),
        loss_(std::move(loss)),
        teacher_prob_(teacher_prob) {}

  std::size_t train_size() const override { return train_.size(); }

  double loss_and_grad(const ad::ParamSet& params, std::size_t idx, std::vector<double>& grad,
                       par::Rng& rng) const override {
    const std::size_t w = train_.at(idx);
    ad::Tape tape;
    const auto leaves = params.bind(tape);
    const ad::Var loss = window_loss(tape, leaves, w, teacher_prob_, &rng);
    tape.backward(loss);
    grad = params.gather_grads(tape, leaves);
    return loss.value()(0, 0);
  }

  double validation_loss(const ad::ParamSet& params) const override {
    double total = 0.0;
    for (std::size_t w : val_) {
      ad::Tape tape;
      const auto leaves = params.bind(tape);
      total += window_loss(tape, leaves, w, 0.0, nullptr).value()(0, 0);
    }
    return total / static_cast<double>(val_.size());
  }

  double nll_weight() const override {
    return static_cast<double>(model_.locations() * model_.config().horizon);
  }

 private:
  ad::Var window_loss(ad::Tape& tape, std::span<const ad::Var> leaves, std::size_t w, double teacher_prob,
                      par::Rng* rng) const {
    const dcrnn::BoundModel m = model_.bind(tape, leaves);
    const Array2& target = data_.targets[w];
    const ad::Var h = model_.encode(tape, m, data_.inputs[w]);
    const auto outs = model_.decode(tape, m, h, target.rows(), teacher_prob > 0.0 ? &target : nullptr,
                                    teacher_prob, rng);
    ad::Var total = step_loss(loss_, tape, outs[0], target, 0);
    for (std::size_t s = 1; s < outs.size(); ++s) total = ad::add(total, step_loss(loss_, tape, outs[s], target, s));
    return ad::scale(total, 1.0 / static_cast<double>(outs.size()));
  }

  const dcrnn::Model& model_;
  const SlotData& data_;
  std::vector<std::size_t> train_;
  std::vector<std::size_t> val_;
  LossSpec loss_;
  double teacher_prob_;
};

double rms(const std::vector<const Array2*>& arrays) {
  double ss = 0.0;
  std::size_t n = 0;
  for (const Array2* a : arrays) {
    for (double v : a->data()) ss += v * v;
    n += a->size();
  }
  const double r = n > 0 ? std::sqrt(ss / static_cast<double>(n)) : 0.0;
  return r > kScaleFloor ? r : 1.0;
}

struct Prepared {
  Dataset data;
  Split split;
};

Prepared prepare(const RunConfig& cfg, const Inputs& in) {
  Prepared p;
  p.data = cfg.hybrid ? build_residual_dataset(in.observations, in.cube, cfg.model.window, cfg.model.horizon)
                      : build_observation_dataset(in.observations, in.cube, cfg.model.window, cfg.model.horizon);
  p.split = split_windows(p.data, cfg.holdout_issues, cfg.validation_fraction);
  return p;
}

std::vector<std::vector<std::size_t>> slot_rows(const RunConfig& cfg) {
  if (cfg.mode == Mode::autoregressive) {
    std::vector<std::size_t> all(cfg.model.horizon);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return {all};
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t h = 0; h < cfg.model.horizon; ++h) out.push_back({h});
  return out;
}

}  // namespace

ModelBundle fit(const RunConfig& cfg, const Inputs& in, par::Exec exec) {
  cfg.validate();
  const Prepared prep = prepare(cfg, in);
  const Dataset& data = prep.data;
  ModelBundle bundle;
  bundle.config = cfg;
  bundle.locations = data.locations;

  std::vector<const Array2*> ins, outs;
  for (const auto* part : {&prep.split.train, &prep.split.validation})
    for (std::size_t i : *part) {
      for (const Array2& f : data.windows[i].input.frames) ins.push_back(&f);
      outs.push_back(&data.windows[i].target);
    }
  bundle.input_scale = rms(ins);
  bundle.target_scale = rms(outs);

  const LossSpec loss = loss_for(cfg);
  const auto groups = slot_rows(cfg);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    Slot slot;
    slot.target_rows = groups[g];
    slot.model = slot_model(cfg, data.windows.front().input.features(), groups[g].size());
    const dcrnn::Model model(slot.model, in.graph);
    const SlotData sd = slot_data(data, slot.target_rows, bundle.input_scale, bundle.target_scale);
    const std::uint64_t slot_seed = par::derive_seed(cfg.seed, g);

    auto train_member = [&](std::size_t member, std::vector<std::size_t> train_idx) {
      const std::uint64_t s = par::derive_seed(slot_seed, member);
      const WindowObjective obj(model, sd, std::move(train_idx), prep.split.validation, loss, cfg.teacher_prob);
      train::TrainConfig tc = cfg.train;
      tc.seed = par::derive_seed(s, 1);
      return train::train(obj, model.init_params(par::derive_seed(s, 2)), tc).params.flatten();
    };

    switch (cfg.uq_method) {
      case UqMethod::point:
      case UqMethod::mc_dropout: slot.members.push_back(train_member(0, prep.split.train)); break;
      case UqMethod::bootstrap: {
        const auto subsets = train::bootstrap_replicates(prep.split.train.size());
        slot.members.resize(subsets.size());
        par::for_each_member(subsets.size(), exec, [&](std::size_t r) {
          std::vector<std::size_t> idx;
          for (std::size_t k : subsets[r]) idx.push_back(prep.split.train[k]);
          slot.members[r] = train_member(r, std::move(idx));
        });
        break;
      }
      case UqMethod::quantile:
      case UqMethod::sq:
      case UqMethod::mis:
        slot.members.resize(cfg.restarts);
        par::for_each_member(cfg.restarts, exec,
                             [&](std::size_t r) { slot.members[r] = train_member(r, prep.split.train); });
        break;
      case UqMethod::sgnht: {
        const WindowObjective obj(model, sd, prep.split.train, prep.split.validation, loss, cfg.teacher_prob);
        train::SgnhtConfig sc = cfg.sgnht;
        sc.seed = slot_seed;
        slot.members = train::sgnht_sample(obj, model.init_params(slot_seed), sc, exec).members;
        break;
      }
    }
    bundle.slots.push_back(std::move(slot));
  }
  return bundle;
}

// ---------------------------------------------------------------- prediction

namespace {

/// Per member (or pass): [test window][row][location][head], normalized.
using MemberOutput = std::vector<std::vector<Array2>>;  // [window][row] -> P x heads

MemberOutput predict_member(const dcrnn::Model& model, const ad::ParamSet& params, const SlotData& sd,
                            const std::vector<std::size_t>& test) {
  MemberOutput out;
  for (std::size_t w : test) out.push_back(model.predict(params, sd.inputs[w]));
  return out;
}

std::size_t find_level(const std::vector<double>& qs, double q) {
  for (std::size_t j = 0; j < qs.size(); ++j)
    if (std::abs(qs[j] - q) < 1e-9) return j;
  throw ContractError("quantile level " + std::to_string(q) + " has no head");
}

}  // namespace

std::vector<QuantileForecast> forecast(const ModelBundle& bundle, const Inputs& in, par::Exec exec) {
  const RunConfig& cfg = bundle.config;
  const Prepared prep = prepare(cfg, in);
  if (prep.data.locations != bundle.locations) throw DataError("bundle locations differ from the input data");
  const std::vector<std::size_t>& test = prep.split.test;
  const std::size_t p = bundle.locations.size();
  const std::size_t horizons = cfg.model.horizon;
  std::vector<double> levels = cfg.ci_levels;
  std::sort(levels.begin(), levels.end());
  const double scale = bundle.target_scale;

  // [window][row][loc]
  std::vector<std::vector<std::vector<QuantileForecast>>> cells(
      test.size(), std::vector<std::vector<QuantileForecast>>(horizons, std::vector<QuantileForecast>(p)));

  for (const Slot& slot : bundle.slots) {
    const dcrnn::Model model(slot.model, in.graph);
    ad::ParamSet shape = model.init_params(0);
    if (slot.members.empty()) throw DataError("bundle slot has no trained members");
    for (const auto& m : slot.members)
      if (m.size() != shape.dim()) throw DataError("bundle parameter vector has the wrong length");
    const SlotData sd = slot_data(prep.data, slot.target_rows, bundle.input_scale, bundle.target_scale);
    auto params_of = [&](std::size_t m) {
      ad::ParamSet ps = shape;
      ps.assign(slot.members[m]);
      return ps;
    };

    // members' normalized outputs
    std::vector<MemberOutput> outputs;
    if (cfg.uq_method == UqMethod::mc_dropout) {
      const ad::ParamSet base = params_of(0);
      const auto passes = train::mc_dropout_predict(
          base,
          [&](const ad::ParamSet& ps) {
            std::vector<double> flat;
            for (const auto& steps : predict_member(model, ps, sd, test))
              for (const Array2& a : steps) flat.insert(flat.end(), a.data().begin(), a.data().end());
            return flat;
          },
          cfg.dropout_rate, cfg.dropout_passes, par::derive_seed(cfg.seed, 7777), exec);
      for (const auto& flat : passes) {
        MemberOutput mo;
        std::size_t k = 0;
        for (std::size_t w = 0; w < test.size(); ++w) {
          std::vector<Array2> steps;
          for (std::size_t r = 0; r < slot.target_rows.size(); ++r) {
            Array2 a(p, 1);
            for (double& v : a.data()) v = flat[k++];
            steps.push_back(std::move(a));
          }
          mo.push_back(std::move(steps));
        }
        outputs.push_back(std::move(mo));
      }
    } else {
      outputs.resize(slot.members.size());
      par::for_each_member(slot.members.size(), exec,
                           [&](std::size_t m) { outputs[m] = predict_member(model, params_of(m), sd, test); });
    }
    const auto n_members = static_cast<double>(outputs.size());

    for (std::size_t w = 0; w < test.size(); ++w) {
      const Window& win = prep.data.windows[test[w]];
      for (std::size_t r = 0; r < slot.target_rows.size(); ++r) {
        const std::size_t row = slot.target_rows[r];
        for (std::size_t loc = 0; loc < p; ++loc) {
          QuantileForecast& qf = cells[w][row][loc];
          qf.issue = win.issue;
          qf.horizon = row + 1;
          qf.location = bundle.locations[loc];
          const double base = win.base(row, loc);
          auto to_deaths = [&](double v) { return base + scale * v; };
          switch (cfg.uq_method) {
            case UqMethod::point: qf.point = to_deaths(outputs[0][w][r](loc, 0)); break;
            case UqMethod::bootstrap:
            case UqMethod::mc_dropout:
            case UqMethod::sgnht: {
              std::vector<double> samples;
              double sum = 0.0;
              for (const MemberOutput& mo : outputs) {
                samples.push_back(to_deaths(mo[w][r](loc, 0)));
                sum += samples.back();
              }
              qf.point = sum / n_members;
              if (samples.size() < 2) {
                samples.push_back(samples.front());
              }
              for (double level : levels) qf.intervals.push_back(uq::interval_from_samples(samples, 1.0 - level));
              break;
            }
            case UqMethod::quantile: {
              const auto qs = uq::quantile_levels(cfg.ci_levels);
              std::vector<double> mean(qs.size(), 0.0);
              for (const MemberOutput& mo : outputs)
                for (std::size_t j = 0; j < qs.size(); ++j) mean[j] += mo[w][r](loc, j) / n_members;
              qf.point = to_deaths(mean[find_level(qs, 0.5)]);
              for (double level : levels) {
                const double rho = 1.0 - level;
                qf.intervals.push_back({to_deaths(mean[find_level(qs, clean_level(rho / 2))]),
                                        to_deaths(mean[find_level(qs, clean_level(1.0 - rho / 2))]), level});
              }
              break;
            }
            case UqMethod::sq: {
              const auto qs = uq::quantile_levels(cfg.ci_levels);
              std::vector<double> mean(qs.size(), 0.0);
              for (const MemberOutput& mo : outputs) {
                const auto spline = uq::spline_decode(uq::SplineQuantileParams::from_span(mo[w][r].row(loc)));
                for (std::size_t j = 0; j < qs.size(); ++j) mean[j] += spline(qs[j]) / n_members;
              }
              qf.point = to_deaths(mean[find_level(qs, 0.5)]);
              for (double level : levels) {
                const double rho = 1.0 - level;
                qf.intervals.push_back({to_deaths(mean[find_level(qs, clean_level(rho / 2))]),
                                        to_deaths(mean[find_level(qs, clean_level(1.0 - rho / 2))]), level});
              }
              break;
            }
            case UqMethod::mis: {
              std::vector<double> mean(3 * levels.size(), 0.0);
              for (const MemberOutput& mo : outputs)
                for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += mo[w][r](loc, j) / n_members;
              qf.point = to_deaths(mean[2]);
              for (std::size_t j = 0; j < levels.size(); ++j)
                qf.intervals.push_back({to_deaths(mean[3 * j]), to_deaths(mean[3 * j + 1]), levels[j]});
              break;
            }
          }
          uq::crossing_repair(qf.point, qf.intervals);
        }
      }
    }
  }

  std::vector<QuantileForecast> out;
  for (auto& w : cells)
    for (auto& row : w)
      for (auto& qf : row) out.push_back(std::move(qf));
  return out;
}

std::vector<QuantileForecast> run_autoregressive(RunConfig cfg, const Inputs& inputs, par::Exec exec) {
  cfg.mode = Mode::autoregressive;
  return forecast(fit(cfg, inputs, exec), inputs, exec);
}

std::vector<QuantileForecast> run_ensemble_mode(RunConfig cfg, const Inputs& inputs, par::Exec exec) {
  cfg.mode = Mode::ensemble;
  return forecast(fit(cfg, inputs, exec), inputs, exec);
}

// -------------------------------------------------------------------- bundle

void save_bundle(const std::filesystem::path& path, const ModelBundle& b) {
  json j;
  j["format"] = "gleamcast-bundle";
  j["version"] = 1;
  j["config"] = config_json(b.config);
  j["locations"] = b.locations;
  j["input_scale"] = b.input_scale;
  j["target_scale"] = b.target_scale;
  j["slots"] = json::array();
  for (const Slot& s : b.slots)
    j["slots"].push_back({{"target_rows", s.target_rows}, {"model", model_json(s.model, true)}, {"members", s.members}});
  csv::write_atomic(path, j.dump() + "\n");
}

ModelBundle load_bundle(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("model bundle " + path.string() + " not found; run `train` first");
  const json j = read_json_file(path);
  const std::string where = path.string();
  try {
    if (j.value("format", "") != "gleamcast-bundle" || j.value("version", 0) != 1)
      throw DataError(where + ": not a gleamcast model bundle");
    ModelBundle b;
    b.config = parse_config(j.at("config"), {});
    b.locations = j.at("locations").get<std::vector<std::string>>();
    b.input_scale = j.at("input_scale").get<double>();
    b.target_scale = j.at("target_scale").get<double>();
    for (const json& s : j.at("slots")) {
      Slot slot;
      slot.target_rows = s.at("target_rows").get<std::vector<std::size_t>>();
      slot.model = parse_model(s.at("model"), true, where + " slot model");
      slot.members = s.at("members").get<std::vector<std::vector<double>>>();
      for (std::size_t r : slot.target_rows)
        if (r >= b.config.model.horizon) throw DataError(where + ": slot row out of range");
      b.slots.push_back(std::move(slot));
    }
    if (b.slots.empty()) throw DataError(where + ": bundle has no models");
    return b;
  } catch (const json::exception& e) {
    throw DataError(where + ": malformed bundle: " + e.what());
  }
}

// ----------------------------------------------------------------- forecasts

std::string target_name(std::size_t horizon) { return std::to_string(horizon) + " wk ahead inc death"; }

namespace {

std::size_t parse_target(const std::string& s, const std::filesystem::path& path, std::size_t line) {
  const std::string suffix = " wk ahead inc death";
  if (s.size() <= suffix.size() || s.compare(s.size() - suffix.size(), suffix.size(), suffix) != 0)
    throw DataError(path.string() + ":" + std::to_string(line) + ": unrecognised target '" + s + "'");
  const long long h = csv::parse_int(s.substr(0, s.size() - suffix.size()), path, line);
  if (h < 1) throw DataError(path.string() + ":" + std::to_string(line) + ": horizon must be >= 1");
  return static_cast<std::size_t>(h);
}

}  // namespace

std::string forecasts_csv(const std::vector<QuantileForecast>& forecasts) {
  std::string out = "issue_date,target,location,type,quantile,value\n";
  for (const QuantileForecast& f : forecasts) {
    const std::string prefix = f.issue.iso() + ',' + target_name(f.horizon) + ',' + f.location + ',';
    out += prefix + "point,," + csv::format_double(f.point) + '\n';
    if (f.intervals.empty()) continue;
    std::map<double, double> rows{{0.5, f.point}};
    for (const uq::IntervalPair& iv : f.intervals) {
      const double rho = 1.0 - iv.level;
      rows[clean_level(rho / 2)] = iv.lower;
      rows[clean_level(1.0 - rho / 2)] = iv.upper;
    }
    for (const auto& [q, v] : rows) out += prefix + "quantile," + csv::format_double(q) + ',' + csv::format_double(v) + '\n';
  }
  return out;
}

void write_forecasts_csv(const std::filesystem::path& path, const std::vector<QuantileForecast>& forecasts) {
  csv::write_atomic(path, forecasts_csv(forecasts));
}

std::vector<QuantileForecast> read_forecasts_csv(const std::filesystem::path& path) {
  const csv::Table t = csv::read(path, {"issue_date", "target", "location", "type", "quantile", "value"});
  struct Group {
    QuantileForecast f;
    bool has_point = false;
    std::map<double, double> quantiles;
    std::size_t line = 0;
  };
  std::vector<Group> groups;
  std::map<std::tuple<int, std::size_t, std::string>, std::size_t> index;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::size_t line = r + 2;
    const Date issue = Date::parse(row[0]);
    const std::size_t h = parse_target(row[1], path, line);
    const auto key = std::make_tuple(issue.days, h, row[2]);
    auto [it, added] = index.try_emplace(key, groups.size());
    if (added) {
      Group g;
      g.f.issue = issue;
      g.f.horizon = h;
      g.f.location = row[2];
      g.line = line;
      groups.push_back(std::move(g));
    }
    Group& g = groups[it->second];
    const double value = csv::parse_double(row[5], path, line);
    if (row[3] == "point") {
      if (g.has_point) throw DataError(path.string() + ":" + std::to_string(line) + ": duplicate point row");
      g.has_point = true;
      g.f.point = value;
    } else if (row[3] == "quantile") {
      const double q = csv::parse_double(row[4], path, line);
      if (!(q > 0.0 && q < 1.0)) throw DataError(path.string() + ":" + std::to_string(line) + ": quantile out of (0, 1)");
      if (!g.quantiles.emplace(clean_level(q), value).second)
        throw DataError(path.string() + ":" + std::to_string(line) + ": duplicate quantile row");
    } else {
      throw DataError(path.string() + ":" + std::to_string(line) + ": unknown type '" + row[3] + "'");
    }
  }
  std::vector<QuantileForecast> out;
  for (Group& g : groups) {
    if (!g.has_point) throw DataError(path.string() + ":" + std::to_string(g.line) + ": forecast without a point row");
    for (const auto& [q, v] : g.quantiles) {
      if (q >= 0.5) continue;
      const auto upper = g.quantiles.find(clean_level(1.0 - q));
      if (upper == g.quantiles.end())
        throw DataError(path.string() + ":" + std::to_string(g.line) + ": quantile " + csv::format_double(q) +
                        " has no matching upper quantile");
      g.f.intervals.push_back({v, upper->second, clean_level(1.0 - 2.0 * q)});
    }
    std::sort(g.f.intervals.begin(), g.f.intervals.end(),
              [](const uq::IntervalPair& a, const uq::IntervalPair& b) { return a.level < b.level; });
    out.push_back(std::move(g.f));
  }
  return out;
}

metrics::EvalReport evaluate(const std::vector<QuantileForecast>& forecasts, const Observations& truth) {
  if (forecasts.empty()) throw DataError("evaluate: no forecasts");
  std::vector<double> levels;
  for (const auto& iv : forecasts.front().intervals) levels.push_back(iv.level);

  struct Acc {
    std::vector<double> z, point;
    std::vector<std::vector<double>> lower, upper;
  };
  std::map<std::size_t, Acc> by_h;
  for (const QuantileForecast& f : forecasts) {
    if (f.intervals.size() != levels.size())
      throw DataError("evaluate: forecasts carry different confidence levels");
    const std::size_t loc = truth.index_of(f.location);
    const Date from = f.issue + static_cast<int>(7 * (f.horizon - 1));
    if (!truth.covers(from) || !truth.covers(from + 6))
      throw DataError("evaluate: no observations for " + f.location + " in the week starting " + from.iso());
    double z = 0.0;
    for (int d = 0; d < 7; ++d) z += truth.at(from + d, loc);
    Acc& a = by_h[f.horizon];
    a.lower.resize(levels.size());
    a.upper.resize(levels.size());
    a.z.push_back(z);
    a.point.push_back(f.point);
    for (std::size_t j = 0; j < levels.size(); ++j) {
      if (std::abs(f.intervals[j].level - levels[j]) > 1e-9)
        throw DataError("evaluate: forecasts carry different confidence levels");
      a.lower[j].push_back(f.intervals[j].lower);
      a.upper[j].push_back(f.intervals[j].upper);
    }
  }
  metrics::EvalReport report;
  for (const auto& [h, a] : by_h) {
    metrics::HorizonRow row;
    row.horizon = h;
    row.mae = metrics::mae_metric(a.z, a.point);
    row.rmse = metrics::rmse_metric(a.z, a.point);
    for (std::size_t j = 0; j < levels.size(); ++j) {
      const auto cw = metrics::coverage_and_width(a.z, a.upper[j], a.lower[j]);
      row.levels.push_back({levels[j], metrics::mis_metric(a.z, a.upper[j], a.lower[j], 1.0 - levels[j]), cw.width,
                            cw.coverage});
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace gleamcast::pipeline
