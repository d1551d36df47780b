#include "gleamcast/gleamlite.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "gleamcast/errors.hpp"

namespace gleamcast::sim {

namespace {

Count draw(par::Rng& rng, Count n, double rate) {
  if (n <= 0 || rate <= 0.0) return 0;
  const double p = 1.0 - std::exp(-rate);
  return std::binomial_distribution<Count>(n, std::clamp(p, 0.0, 1.0))(rng);
}

Count thin(par::Rng& rng, Count n, double p) {
  if (n <= 0 || p <= 0.0) return 0;
  return std::binomial_distribution<Count>(n, std::min(p, 1.0))(rng);
}

}  // namespace

PopState PopState::seeded(std::span<const Count> population, std::span<const Count> exposed,
                          std::span<const Count> infectious) {
  if (population.size() != exposed.size() || population.size() != infectious.size())
    throw DimensionError("PopState::seeded: inconsistent location counts");
  PopState s;
  const std::size_t p = population.size();
  s.S.resize(p);
  s.E.assign(exposed.begin(), exposed.end());
  s.I.assign(infectious.begin(), infectious.end());
  s.R.assign(p, 0);
  s.D.assign(p, 0);
  for (std::size_t i = 0; i < p; ++i) {
    s.S[i] = population[i] - exposed[i] - infectious[i];
    if (s.S[i] < 0 || exposed[i] < 0 || infectious[i] < 0)
      throw ContractError("PopState::seeded: compartments must be nonnegative");
  }
  return s;
}

void EpiParams::validate() const {
  if (!(beta >= 0.0 && sigma_e >= 0.0 && gamma >= 0.0 && base_ifr >= 0.0 && ifr_multiplier >= 0.0 &&
        mobility_scale >= 0.0 && waning >= 0.0))
    throw ContractError("EpiParams: rates must be nonnegative");
  if (ifr() > 1.0) throw ContractError("EpiParams: base_ifr * ifr_multiplier exceeds 1");
}

Array2 mixing_matrix(const graph::MobilityGraph& g) { return graph::random_walk_matrix(g); }

std::vector<Count> seir_step(PopState& s, const EpiParams& params, const Array2& mixing, par::Rng& rng,
                             double beta_multiplier) {
  const std::size_t p = s.size();
  if (mixing.rows() != p || mixing.cols() != p)
    throw DimensionError("seir_step: mixing " + mixing.shape_string() + " for " + std::to_string(p) + " locations");

  std::vector<double> prevalence(p, 0.0);
  for (std::size_t i = 0; i < p; ++i) {
    const Count n = s.total(i);
    prevalence[i] = n > 0 ? static_cast<double>(s.I[i]) / static_cast<double>(n) : 0.0;
  }
  const double beta = params.beta * beta_multiplier;
  const std::uint64_t step_seed = rng();
  std::vector<Count> deaths(p, 0);
  for (std::size_t i = 0; i < p; ++i) {
    double imported = 0.0;
    if (params.mobility_scale > 0.0)
      for (std::size_t j = 0; j < p; ++j) imported += mixing(i, j) * prevalence[j];
    const double force = beta * (prevalence[i] + params.mobility_scale * imported);

    par::Rng local = par::make_rng(step_seed, i);
    const Count infected = draw(local, s.S[i], force);
    const Count onset = draw(local, s.E[i], params.sigma_e);
    const Count removed = draw(local, s.I[i], params.gamma);
    const Count died = thin(local, removed, params.ifr());
    const Count waned = draw(local, s.R[i], params.waning);
    s.S[i] += waned - infected;
    s.E[i] += infected - onset;
    s.I[i] += onset - removed;
    s.R[i] += removed - died - waned;
    s.D[i] += died;
    deaths[i] = died;
  }
  return deaths;
}

Trajectory simulate(PopState state, const EpiParams& params, const Array2& mixing, std::size_t days,
                    par::Rng& rng, std::span<const double> beta_multiplier) {
  params.validate();
  if (!beta_multiplier.empty() && beta_multiplier.size() < days)
    throw DimensionError("simulate: beta multiplier shorter than the simulated period");
  Trajectory out;
  out.deaths = Array2(days, state.size());
  for (std::size_t t = 0; t < days; ++t) {
    const double m = beta_multiplier.empty() ? 1.0 : beta_multiplier[t];
    const auto deaths = seir_step(state, params, mixing, rng, m);
    for (std::size_t i = 0; i < deaths.size(); ++i) out.deaths(t, i) = static_cast<double>(deaths[i]);
  }
  out.final_state = std::move(state);
  return out;
}

std::vector<EnsembleMember> simulate_ensemble(const PopState& initial, const EpiParams& base,
                                              std::span<const GridPoint> grid, std::size_t members,
                                              std::size_t days, const Array2& mixing, std::uint64_t seed,
                                              par::Exec exec, std::span<const double> beta_multiplier) {
  if (grid.empty()) throw ContractError("simulate_ensemble: empty parameter grid");
  if (members < 1) throw ContractError("simulate_ensemble: need at least one member");
  std::vector<EnsembleMember> out(members);
  par::for_each_member(members, exec, [&](std::size_t m) {
    EpiParams p = base;
    const std::size_t g = m % grid.size();
    p.beta = grid[g].beta;
    p.ifr_multiplier = grid[g].ifr_multiplier;
    par::Rng rng = par::make_rng(seed, m);
    out[m] = {g, simulate(initial, p, mixing, days, rng, beta_multiplier)};
  });
  return out;
}

double gaussian_log_likelihood(const Array2& observed, const Array2& member) {
  if (!observed.same_shape(member))
    throw DimensionError("gaussian_log_likelihood: " + observed.shape_string() + " vs " + member.shape_string());
  if (observed.empty()) throw ContractError("gaussian_log_likelihood: empty window");
  const auto n = static_cast<double>(observed.size());
  double ss = 0.0;
  for (std::size_t k = 0; k < observed.size(); ++k) {
    const double r = observed[k] - member[k];
    ss += r * r;
  }
  const double var = std::max(ss / n, 1e-12);
  return -0.5 * n * (std::log(2.0 * std::numbers::pi * var) + 1.0);
}

double trend_slope(const Array2& series) {
  const std::size_t t = series.rows();
  if (t < 2) return 0.0;
  const double tbar = 0.5 * static_cast<double>(t - 1);
  std::vector<double> total(t, 0.0);
  double ybar = 0.0;
  for (std::size_t r = 0; r < t; ++r) {
    for (double v : series.row(r)) total[r] += v;
    ybar += total[r];
  }
  ybar /= static_cast<double>(t);
  double num = 0.0, den = 0.0;
  for (std::size_t r = 0; r < t; ++r) {
    const double dt = static_cast<double>(r) - tbar;
    num += dt * (total[r] - ybar);
    den += dt * dt;
  }
  return num / den;
}

std::vector<double> akaike_weights(std::span<const double> aic) {
  if (aic.empty()) throw ContractError("akaike_weights: no members");
  const double best = *std::min_element(aic.begin(), aic.end());
  std::vector<double> w(aic.size());
  double total = 0.0;
  for (std::size_t m = 0; m < aic.size(); ++m) {
    w[m] = std::exp(-0.5 * (aic[m] - best));
    total += w[m];
  }
  for (double& x : w) x /= total;
  return w;
}

std::vector<double> aic_filter_weight(std::span<const Array2> members, const Array2& observed, std::size_t k) {
  if (observed.empty()) throw ContractError("aic_filter_weight: empty calibration window");
  if (members.empty()) throw ContractError("aic_filter_weight: no members");
  const double obs_slope = trend_slope(observed);
  std::vector<std::size_t> kept;
  std::vector<double> aic;
  for (std::size_t m = 0; m < members.size(); ++m) {
    if (obs_slope * trend_slope(members[m]) < 0.0) continue;
    kept.push_back(m);
    aic.push_back(2.0 * static_cast<double>(k) - 2.0 * gaussian_log_likelihood(observed, members[m]));
  }
  if (kept.empty())
    throw DataError("aic_filter_weight: every member disagrees with the observed trend; widen the parameter grid");
  const std::vector<double> w = akaike_weights(aic);
  std::vector<double> out(members.size(), 0.0);
  for (std::size_t j = 0; j < kept.size(); ++j) out[kept[j]] = w[j];
  return out;
}

CubeSlice forecast_from_ensemble(std::span<const Array2> member_daily, std::span<const double> weights,
                                 std::size_t horizons) {
  if (member_daily.empty() || member_daily.size() != weights.size())
    throw DimensionError("forecast_from_ensemble: member/weight count mismatch");
  if (horizons < 1) throw ContractError("forecast_from_ensemble: horizons must be >= 1");
  const std::size_t p = member_daily[0].cols();
  CubeSlice out;
  out.point = Array2(horizons, p);
  out.weights.assign(weights.begin(), weights.end());
  for (std::size_t m = 0; m < member_daily.size(); ++m) {
    const Array2& daily = member_daily[m];
    if (daily.rows() < 7 * horizons || daily.cols() != p)
      throw DimensionError("forecast_from_ensemble: member " + std::to_string(m) + " is " + daily.shape_string());
    Array2 weekly(horizons, p);
    for (std::size_t h = 0; h < horizons; ++h)
      for (std::size_t d = 0; d < 7; ++d)
        for (std::size_t i = 0; i < p; ++i) weekly(h, i) += daily(7 * h + d, i);
    out.members.push_back(std::move(weekly));
  }
  // fixed member order
  for (std::size_t m = 0; m < out.members.size(); ++m)
    for (std::size_t k = 0; k < out.point.size(); ++k) out.point[k] += weights[m] * out.members[m][k];
  return out;
}

namespace {

constexpr std::size_t kCalibrationDays = 14;
constexpr std::size_t kHorizons = 4;
constexpr std::size_t kRegimeDays = 21;

}  // namespace

SyntheticWorld make_synthetic_world(const WorldConfig& cfg, par::Exec exec) {
  if (cfg.locations < 2) throw ContractError("make_synthetic_world: need at least 2 locations");
  if (cfg.days < kCalibrationDays + 7 * kHorizons)
    throw ContractError("make_synthetic_world: need at least " + std::to_string(kCalibrationDays + 7 * kHorizons) +
                        " days");
  if (cfg.members < 1) throw ContractError("make_synthetic_world: need at least one member");
  const std::size_t p = cfg.locations;
  par::Rng rng = par::make_rng(cfg.seed, 0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SyntheticWorld world;
  std::vector<std::string> codes;
  for (std::size_t i = 0; i < p; ++i) codes.push_back("L" + std::string(i < 10 ? "0" : "") + std::to_string(i));

  std::vector<Count> population(p), exposed(p), infectious(p);
  for (std::size_t i = 0; i < p; ++i) {
    population[i] = static_cast<Count>(std::round(std::exp(std::log(5e5) + unit(rng) * std::log(10.0))));
    infectious[i] = 50 + static_cast<Count>(unit(rng) * 450.0);
    exposed[i] = 50 + static_cast<Count>(unit(rng) * 450.0);
  }
  Array2 adjacency(p, p);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j)
      if (i != j && unit(rng) < 0.5) adjacency(i, j) = std::round(100.0 + 4900.0 * unit(rng));
  world.graph = graph::from_adjacency(adjacency, codes);
  const Array2 mixing = mixing_matrix(world.graph);

  // intervention regimes: beta multiplier redrawn every three weeks
  std::vector<double> multiplier(cfg.days);
  double current = 1.0;
  for (std::size_t t = 0; t < cfg.days; ++t) {
    if (t % kRegimeDays == 0) current = 0.55 + 0.4 * unit(rng);
    multiplier[t] = current;
  }

  EpiParams truth;
  truth.waning = 1.0 / 45.0;
  std::vector<PopState> history;
  history.reserve(cfg.days + 1);
  PopState state = PopState::seeded(population, exposed, infectious);
  world.observations.locations = codes;
  world.observations.start = cfg.start;
  world.observations.values = Array2(cfg.days, p);
  par::Rng truth_rng = par::make_rng(cfg.seed, 1);
  for (std::size_t t = 0; t < cfg.days; ++t) {
    history.push_back(state);
    const auto deaths = seir_step(state, truth, mixing, truth_rng, multiplier[t]);
    for (std::size_t i = 0; i < p; ++i) world.observations.values(t, i) = static_cast<double>(deaths[i]);
  }
  history.push_back(state);

  // spatially smooth bias: white noise diffused twice over the graph
  world.bias.assign(p, 0.0);
  if (cfg.bias_scale > 0.0) {
    const Array2 f = graph::sym_norm_filter(world.graph);
    std::normal_distribution<double> normal(0.0, 1.0);
    Array2 z(p, 1);
    for (double& v : z.data()) v = normal(rng);
    Array2 smooth = matmul(f, matmul(f, z));
    for (std::size_t i = 0; i < p; ++i) smooth(i, 0) += 0.5 * z(i, 0);
    double peak = 0.0;
    for (double v : smooth.data()) peak = std::max(peak, std::abs(v));
    for (std::size_t i = 0; i < p; ++i) world.bias[i] = peak > 0.0 ? cfg.bias_scale * smooth(i, 0) / peak : 0.0;
  }

  std::vector<GridPoint> grid;
  for (double b : {0.8, 1.0, 1.25})
    for (double ifr : {0.8, 1.0, 1.25}) grid.push_back({truth.beta * b, ifr});

  ForecastCube& cube = world.cube;
  cube.locations = codes;
  cube.horizons = kHorizons;
  std::vector<std::size_t> issue_days;
  for (std::size_t d = kCalibrationDays; d + 7 * kHorizons <= cfg.days; d += 7) issue_days.push_back(d);

  const std::size_t span_days = kCalibrationDays + 7 * kHorizons;
  cube.issues.resize(issue_days.size());
  cube.point.resize(issue_days.size());
  if (cfg.keep_members) {
    cube.members.resize(issue_days.size());
    cube.weights.resize(issue_days.size());
  }
  for (std::size_t k = 0; k < issue_days.size(); ++k) {
    const std::size_t d = issue_days[k];
    const std::size_t from = d - kCalibrationDays;
    // interventions are announced, so the mechanistic model follows the true
    // transmission schedule; its errors are calibration, noise and the bias
    const std::vector<double> schedule(multiplier.begin() + static_cast<std::ptrdiff_t>(from),
                                       multiplier.begin() + static_cast<std::ptrdiff_t>(from + span_days));
    const auto ensemble = simulate_ensemble(history.at(from), truth, grid, cfg.members, span_days, mixing,
                                            par::derive_seed(cfg.seed, 1000 + k), exec, schedule);
    Array2 observed(kCalibrationDays, p);
    for (std::size_t t = 0; t < kCalibrationDays; ++t)
      for (std::size_t i = 0; i < p; ++i) observed(t, i) = world.observations.values(from + t, i);
    std::vector<Array2> calib, future;
    for (const auto& m : ensemble) {
      Array2 c(kCalibrationDays, p), f(7 * kHorizons, p);
      for (std::size_t t = 0; t < span_days; ++t)
        for (std::size_t i = 0; i < p; ++i)
          (t < kCalibrationDays ? c(t, i) : f(t - kCalibrationDays, i)) = m.trajectory.deaths(t, i);
      calib.push_back(std::move(c));
      future.push_back(std::move(f));
    }
    const auto weights = aic_filter_weight(calib, observed, 2);
    CubeSlice slice = forecast_from_ensemble(future, weights, kHorizons);
    for (std::size_t h = 0; h < kHorizons; ++h)
      for (std::size_t i = 0; i < p; ++i) {
        slice.point(h, i) *= 1.0 + world.bias[i];
        for (Array2& m : slice.members) m(h, i) *= 1.0 + world.bias[i];
      }
    cube.issues[k] = cfg.start + static_cast<int>(d);
    cube.point[k] = std::move(slice.point);
    if (cfg.keep_members) {
      cube.members[k] = std::move(slice.members);
      cube.weights[k] = std::move(slice.weights);
    }
  }
  return world;
}

}  // namespace gleamcast::sim
