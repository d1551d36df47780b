#pragma once

// Training objectives and interval constructors for the uncertainty
// quantification back-ends: absolute error, pinball (quantile) loss, the
// interval-score loss, a monotone linear-spline quantile function scored by
// CRPS, empirical-quantile intervals and crossing repair.

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "gleamcast/autodiff.hpp"

namespace gleamcast::uq {

/// Central (1 - rho) interval; level = 1 - rho.
struct IntervalPair {
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.0;
};

double mae_loss(std::span<const double> y, std::span<const double> f);
/// mean of (y - f)(q - 1{y < f})
double pinball_loss(std::span<const double> y, std::span<const double> f, double q);
/// mean of (u - l) + 2/rho (y - u)1{y > u} + 2/rho (l - y)1{y < l} + |y - f|
double mis_loss(std::span<const double> y, std::span<const double> u, std::span<const double> l,
                std::span<const double> f, double rho);

// Tape versions. y is treated as a constant target of the same shape as f.
ad::Var mae_loss(ad::Var y, ad::Var f);
ad::Var pinball_loss(ad::Var y, ad::Var f, double q);
ad::Var mis_loss(ad::Var y, ad::Var u, ad::Var l, ad::Var f, double rho);

constexpr std::size_t kSplineSegments = 5;
constexpr std::size_t kSplineParams = 1 + 2 * kSplineSegments;

/// Raw (unconstrained) spline parameters: intercept, then slope parameters,
/// then knot parameters.
struct SplineQuantileParams {
  double intercept = 0.0;
  std::array<double, kSplineSegments> slope_raw{};
  std::array<double, kSplineSegments> knot_raw{};

  static SplineQuantileParams from_span(std::span<const double> p);
};

/// Decoded piecewise-linear quantile function on [0, 1].
struct SplineQuantile {
  double intercept = 0.0;
  std::array<double, kSplineSegments> slopes{};
  /// knots[0] = 0 < knots[1] < ... < knots[5] = 1
  std::array<double, kSplineSegments + 1> knots{};

  double operator()(double alpha) const;
  /// Q at each knot.
  std::array<double, kSplineSegments + 1> knot_values() const;
};

/// Knot widths are a softmax of the knot parameters; slopes are softplus.
SplineQuantile spline_decode(const SplineQuantileParams& p);

/// CRPS(Q, y) = integral over alpha of 2 * pinball_alpha(Q(alpha), y), closed form.
double crps_linear_spline(const SplineQuantileParams& p, double y);

/// Mean CRPS over rows of params (N x 11) against y (N x 1).
ad::Var crps_spline_loss(ad::Var params, ad::Var y);
/// Q(alpha) per row of params (N x 11), as N x 1.
ad::Var spline_quantile(ad::Var params, double alpha);

/// Empirical quantile of sorted samples, linear interpolation at (n - 1) q.
double empirical_quantile(std::span<const double> sorted, double q);

/// (rho/2, 1 - rho/2) empirical quantiles of at least two samples.
IntervalPair interval_from_samples(std::span<const double> samples, double rho);

/// Clips bounds so that lower <= point <= upper and intervals are nested by
/// level: working outwards from the point, each lower bound is capped by the
/// next-inner lower bound and each upper bound floored by the next-inner
/// upper bound. Leaves consistent input unchanged; idempotent.
void crossing_repair(double point, std::vector<IntervalPair>& intervals);

/// Quantile levels used for a set of confidence levels: rho/2 and 1 - rho/2
/// for each level plus 0.5, sorted ascending.
std::vector<double> quantile_levels(std::span<const double> ci_levels);

}  // namespace gleamcast::uq
