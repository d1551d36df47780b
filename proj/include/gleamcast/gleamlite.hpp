#pragma once

// Small stochastic metapopulation SEIR simulator used to build synthetic
// worlds: a "true" epidemic, and per issue date a calibrated mechanistic
// ensemble whose weighted weekly forecasts form the forecast cube.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gleamcast/array2.hpp"
#include "gleamcast/data.hpp"
#include "gleamcast/graph.hpp"
#include "gleamcast/parallel.hpp"

namespace gleamcast::sim {

using Count = std::int64_t;

/// Integer compartments per location; D is cumulative deaths.
struct PopState {
  std::vector<Count> S, E, I, R, D;

  /// S = population - exposed - infectious, R = D = 0.
  static PopState seeded(std::span<const Count> population, std::span<const Count> exposed,
                         std::span<const Count> infectious);
  std::size_t size() const { return S.size(); }
  Count total(std::size_t i) const { return S[i] + E[i] + I[i] + R[i] + D[i]; }
};

struct EpiParams {
  double beta = 0.3;       // per day
  double sigma_e = 1.0 / 3.0;
  double gamma = 0.2;
  double base_ifr = 0.01;
  double ifr_multiplier = 1.0;
  double mobility_scale = 0.2;
  /// R -> S rate per day (waning immunity); 0 gives a plain SEIR model.
  double waning = 0.0;

  double ifr() const { return base_ifr * ifr_multiplier; }
  /// Throws ContractError for negative rates or ifr() > 1.
  void validate() const;
};

/// Row-normalized adjacency used to mix infectious pressure.
Array2 mixing_matrix(const graph::MobilityGraph& g);

/// Advances one day and returns incident deaths per location. Force of
/// infection at i is beta_eff (I_i/N_i + mobility_scale sum_j W_ij I_j/N_j);
/// each flow is Binomial(n, 1 - exp(-rate)) and deaths thin the I exit flow
/// with probability ifr(); recovered lose immunity at rate waning. Each location draws from its own sub-stream, so
/// with mobility_scale = 0 locations evolve independently.
std::vector<Count> seir_step(PopState& state, const EpiParams& params, const Array2& mixing, par::Rng& rng,
                             double beta_multiplier = 1.0);

struct Trajectory {
  Array2 deaths;  // days x P
  PopState final_state;
};

/// beta_multiplier, when nonempty, gives a per-day factor on beta.
Trajectory simulate(PopState state, const EpiParams& params, const Array2& mixing, std::size_t days,
                    par::Rng& rng, std::span<const double> beta_multiplier = {});

struct GridPoint {
  double beta = 0.0;
  double ifr_multiplier = 1.0;
};

struct EnsembleMember {
  std::size_t grid_index = 0;
  Trajectory trajectory;
};

/// Member m uses grid[m % grid.size()] and the stream (seed, m).
std::vector<EnsembleMember> simulate_ensemble(const PopState& initial, const EpiParams& base,
                                              std::span<const GridPoint> grid, std::size_t members,
                                              std::size_t days, const Array2& mixing, std::uint64_t seed,
                                              par::Exec exec = par::Exec::parallel,
                                              std::span<const double> beta_multiplier = {});

/// Gaussian log-likelihood of observed given member with the maximum
/// likelihood variance of the residuals (floored at 1e-12).
double gaussian_log_likelihood(const Array2& observed, const Array2& member);

/// Least-squares slope over time of the location-summed series (rows = days).
double trend_slope(const Array2& series);

/// exp(-(aic - min aic)/2), normalized.
std::vector<double> akaike_weights(std::span<const double> aic);

/// AIC = 2k - 2 logL per member. Members whose trend slope has the opposite
/// sign to the observed slope get weight 0; the rest get Akaike weights.
/// Throws DataError when every member is filtered out.
std::vector<double> aic_filter_weight(std::span<const Array2> members, const Array2& observed, std::size_t k);

struct CubeSlice {
  Array2 point;                // horizons x P weekly deaths
  std::vector<Array2> members; // per member, horizons x P
  std::vector<double> weights;
};

/// member_daily[m] holds at least 7 * horizons days starting at the issue
/// date. The point forecast is the weighted mean of member weekly totals.
CubeSlice forecast_from_ensemble(std::span<const Array2> member_daily, std::span<const double> weights,
                                 std::size_t horizons);

struct WorldConfig {
  std::size_t locations = 10;
  std::size_t days = 120;
  std::uint64_t seed = 1;
  /// Multiplicative, spatially smooth bias applied to the cube; 0 disables.
  double bias_scale = 0.3;
  std::size_t members = 18;
  bool keep_members = false;
  Date start = Date{18322};  // 2020-03-01
};

struct SyntheticWorld {
  graph::MobilityGraph graph;
  Observations observations;
  ForecastCube cube;
  std::vector<double> bias;  // per-location factor minus one
};

/// Issue dates run weekly from day 14 while the 4-week target fits inside
/// the simulated period. Each issue's ensemble starts from the true state 14
/// days earlier, is AIC-weighted on those 14 days, and forecasts the next 28.
SyntheticWorld make_synthetic_world(const WorldConfig& cfg, par::Exec exec = par::Exec::parallel);

}  // namespace gleamcast::sim
