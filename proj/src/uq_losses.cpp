#include "gleamcast/uq_losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gleamcast/errors.hpp"

namespace gleamcast::uq {

namespace {

constexpr std::size_t kSeg = kSplineSegments;

void check_pair(std::span<const double> a, std::span<const double> b, const char* op) {
  if (a.size() != b.size())
    throw DimensionError(std::string(op) + ": lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  if (a.empty()) throw ContractError(std::string(op) + ": empty input");
}

void check_level(double rho, const char* op) {
  if (!(rho > 0.0 && rho < 1.0)) throw ContractError(std::string(op) + ": level must be in (0, 1)");
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::array<double, kSeg> softmax(const std::array<double, kSeg>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  std::array<double, kSeg> w{};
  double s = 0.0;
  for (std::size_t i = 0; i < kSeg; ++i) s += (w[i] = std::exp(z[i] - m));
  for (double& x : w) x /= s;
  return w;
}

struct Decoded {
  SplineQuantile q;
  std::array<double, kSeg> widths{};
};

Decoded decode_full(const SplineQuantileParams& p) {
  Decoded d;
  d.q.intercept = p.intercept;
  for (std::size_t k = 0; k < kSeg; ++k) d.q.slopes[k] = softplus(p.slope_raw[k]);
  d.widths = softmax(p.knot_raw);
  d.q.knots[0] = 0.0;
  for (std::size_t k = 1; k < kSeg; ++k) d.q.knots[k] = d.q.knots[k - 1] + d.widths[k - 1];
  d.q.knots[kSeg] = 1.0;
  return d;
}

// Chain rule from (intercept, slopes, interior knots) to the 11 raw params.
std::array<double, kSplineParams> raw_gradient(const SplineQuantileParams& p, const Decoded& d,
                                               double d_intercept, const std::array<double, kSeg>& d_slope,
                                               const std::array<double, kSeg - 1>& d_knot) {
  std::array<double, kSplineParams> g{};
  g[0] = d_intercept;
  for (std::size_t k = 0; k < kSeg; ++k) g[1 + k] = d_slope[k] * logistic(p.slope_raw[k]);
  // knots[j] = sum_{i<j} widths[i] for interior j = 1..4
  std::array<double, kSeg> d_width{};
  for (std::size_t i = 0; i + 1 < kSeg; ++i)
    for (std::size_t j = i + 1; j < kSeg; ++j) d_width[i] += d_knot[j - 1];
  double avg = 0.0;
  for (std::size_t i = 0; i < kSeg; ++i) avg += d.widths[i] * d_width[i];
  for (std::size_t m = 0; m < kSeg; ++m) g[1 + kSeg + m] = d.widths[m] * (d_width[m] - avg);
  return g;
}

// Level where Q first exceeds y, clamped to [0, 1].
double crossing_level(const SplineQuantile& q, const std::array<double, kSeg + 1>& qk, double y) {
  if (y < qk[0]) return 0.0;
  for (std::size_t k = 1; k <= kSeg; ++k)
    if (y < qk[k]) return q.knots[k - 1] + (y - qk[k - 1]) / q.slopes[k - 1];
  return 1.0;
}

struct CrpsEval {
  double value;
  std::array<double, kSplineParams> grad;
};

CrpsEval crps_with_grad(const SplineQuantileParams& p, double y, bool want_grad) {
  const Decoded d = decode_full(p);
  const SplineQuantile& q = d.q;
  const auto qk = q.knot_values();
  const double at = crossing_level(q, qk, y);

  // CRPS = 2 [ int_{at}^1 (Q - y) - int_0^1 alpha (Q - y) ]
  double upper_part = 0.0;
  double moment_part = 0.0;
  for (std::size_t k = 0; k < kSeg; ++k) {
    const double a = q.knots[k], b = q.knots[k + 1], s = q.slopes[k];
    const double c0 = qk[k] - y;  // Q - y at a
    const double lo = std::max(a, at);
    if (lo < b) upper_part += c0 * (b - lo) + 0.5 * s * ((b - a) * (b - a) - (lo - a) * (lo - a));
    // alpha * (c0 - s a + s alpha)
    moment_part += (c0 - s * a) * 0.5 * (b * b - a * a) + s * (b * b * b - a * a * a) / 3.0;
  }
  CrpsEval out{2.0 * (upper_part - moment_part), {}};
  if (!want_grad) return out;

  std::array<double, kSeg> d_slope{};
  for (std::size_t k = 0; k < kSeg; ++k) {
    const double a = q.knots[k], b = q.knots[k + 1], w = b - a;
    const double lo = std::max(a, at);
    double above = w * (1.0 - std::max(at, b));
    if (lo < b) above += 0.5 * (w * w - (lo - a) * (lo - a));
    const double moment = (b * b * b - a * a * a) / 3.0 - a * 0.5 * (b * b - a * a) + w * 0.5 * (1.0 - b * b);
    d_slope[k] = 2.0 * (above - moment);
  }
  std::array<double, kSeg - 1> d_knot{};
  for (std::size_t j = 1; j < kSeg; ++j) {
    const double a = q.knots[j];
    d_knot[j - 1] = 2.0 * (q.slopes[j - 1] - q.slopes[j]) * ((1.0 - std::max(a, at)) - 0.5 * (1.0 - a * a));
  }
  out.grad = raw_gradient(p, d, 1.0 - 2.0 * at, d_slope, d_knot);
  return out;
}

struct QuantileEval {
  double value;
  std::array<double, kSplineParams> grad;
};

QuantileEval quantile_with_grad(const SplineQuantileParams& p, double alpha) {
  const Decoded d = decode_full(p);
  const SplineQuantile& q = d.q;
  std::array<double, kSeg> d_slope{};
  for (std::size_t k = 0; k < kSeg; ++k)
    d_slope[k] = std::clamp(alpha - q.knots[k], 0.0, q.knots[k + 1] - q.knots[k]);
  std::array<double, kSeg - 1> d_knot{};
  for (std::size_t j = 1; j < kSeg; ++j)
    d_knot[j - 1] = alpha > q.knots[j] ? q.slopes[j - 1] - q.slopes[j] : 0.0;
  return {q(alpha), raw_gradient(p, d, 1.0, d_slope, d_knot)};
}

SplineQuantileParams row_params(const Array2& a, std::size_t r) { return SplineQuantileParams::from_span(a.row(r)); }

}  // namespace

double mae_loss(std::span<const double> y, std::span<const double> f) {
  check_pair(y, f, "mae_loss");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += std::fabs(y[i] - f[i]);
  return s / static_cast<double>(y.size());
}

double pinball_loss(std::span<const double> y, std::span<const double> f, double q) {
  check_pair(y, f, "pinball_loss");
  check_level(q, "pinball_loss");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - f[i]) * (q - (y[i] < f[i] ? 1.0 : 0.0));
  return s / static_cast<double>(y.size());
}

double mis_loss(std::span<const double> y, std::span<const double> u, std::span<const double> l,
                std::span<const double> f, double rho) {
  check_pair(y, u, "mis_loss");
  check_pair(y, l, "mis_loss");
  check_pair(y, f, "mis_loss");
  check_level(rho, "mis_loss");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    s += u[i] - l[i] + std::fabs(y[i] - f[i]);
    if (y[i] > u[i]) s += 2.0 / rho * (y[i] - u[i]);
    if (y[i] < l[i]) s += 2.0 / rho * (l[i] - y[i]);
  }
  return s / static_cast<double>(y.size());
}

ad::Var mae_loss(ad::Var y, ad::Var f) { return ad::mean(ad::abs(ad::sub(f, y))); }

ad::Var pinball_loss(ad::Var y, ad::Var f, double q) {
  check_level(q, "pinball_loss");
  const ad::Var under = ad::relu(ad::sub(y, f));
  const ad::Var over = ad::relu(ad::sub(f, y));
  return ad::mean(ad::add(ad::scale(under, q), ad::scale(over, 1.0 - q)));
}

ad::Var mis_loss(ad::Var y, ad::Var u, ad::Var l, ad::Var f, double rho) {
  check_level(rho, "mis_loss");
  const double penalty = 2.0 / rho;
  ad::Var score = ad::sub(u, l);
  score = ad::add(score, ad::scale(ad::relu(ad::sub(y, u)), penalty));
  score = ad::add(score, ad::scale(ad::relu(ad::sub(l, y)), penalty));
  score = ad::add(score, ad::abs(ad::sub(y, f)));
  return ad::mean(score);
}

SplineQuantileParams SplineQuantileParams::from_span(std::span<const double> p) {
  if (p.size() != kSplineParams)
    throw DimensionError("SplineQuantileParams: expected 11 values, got " + std::to_string(p.size()));
  SplineQuantileParams out;
  out.intercept = p[0];
  for (std::size_t k = 0; k < kSeg; ++k) {
    out.slope_raw[k] = p[1 + k];
    out.knot_raw[k] = p[1 + kSeg + k];
  }
  return out;
}

double SplineQuantile::operator()(double alpha) const {
  alpha = std::clamp(alpha, 0.0, 1.0);
  double v = intercept;
  for (std::size_t k = 0; k < kSeg; ++k) v += slopes[k] * std::clamp(alpha - knots[k], 0.0, knots[k + 1] - knots[k]);
  return v;
}

std::array<double, kSplineSegments + 1> SplineQuantile::knot_values() const {
  std::array<double, kSeg + 1> out{};
  out[0] = intercept;
  for (std::size_t k = 0; k < kSeg; ++k) out[k + 1] = out[k] + slopes[k] * (knots[k + 1] - knots[k]);
  return out;
}

SplineQuantile spline_decode(const SplineQuantileParams& p) { return decode_full(p).q; }

double crps_linear_spline(const SplineQuantileParams& p, double y) { return crps_with_grad(p, y, false).value; }

ad::Var crps_spline_loss(ad::Var params, ad::Var y) {
  const Array2& pv = params.value();
  const Array2& yv = y.value();
  if (pv.cols() != kSplineParams || yv.cols() != 1 || yv.rows() != pv.rows())
    throw DimensionError("crps_spline_loss: params " + pv.shape_string() + ", targets " + yv.shape_string());
  if (pv.rows() == 0) throw ContractError("crps_spline_loss: empty input");
  const std::size_t n = pv.rows();
  double total = 0.0;
  Array2 grads(n, kSplineParams);
  for (std::size_t r = 0; r < n; ++r) {
    const CrpsEval e = crps_with_grad(row_params(pv, r), yv(r, 0), true);
    total += e.value;
    std::copy(e.grad.begin(), e.grad.end(), grads.row(r).begin());
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  const ad::Var inputs[] = {params, y};
  return ad::custom(inputs, Array2(1, 1, total * inv_n),
                    [grads = std::move(grads), inv_n](const Array2& g, std::span<Array2*> in) {
                      if (in[0] == nullptr) return;
                      const double w = g(0, 0) * inv_n;
                      for (std::size_t i = 0; i < grads.size(); ++i) (*in[0])[i] += w * grads[i];
                    });
}

ad::Var spline_quantile(ad::Var params, double alpha) {
  const Array2& pv = params.value();
  if (pv.cols() != kSplineParams)
    throw DimensionError("spline_quantile: params " + pv.shape_string() + ", expected N x 11");
  const std::size_t n = pv.rows();
  Array2 value(n, 1);
  Array2 jac(n, kSplineParams);
  for (std::size_t r = 0; r < n; ++r) {
    const QuantileEval e = quantile_with_grad(row_params(pv, r), alpha);
    value(r, 0) = e.value;
    std::copy(e.grad.begin(), e.grad.end(), jac.row(r).begin());
  }
  const ad::Var inputs[] = {params};
  return ad::custom(inputs, std::move(value), [jac = std::move(jac)](const Array2& g, std::span<Array2*> in) {
    if (in[0] == nullptr) return;
    for (std::size_t r = 0; r < jac.rows(); ++r)
      for (std::size_t c = 0; c < kSplineParams; ++c) (*in[0])(r, c) += g(r, 0) * jac(r, c);
  });
}

double empirical_quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw ContractError("empirical_quantile: no samples");
  const double pos = static_cast<double>(sorted.size() - 1) * std::clamp(q, 0.0, 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

IntervalPair interval_from_samples(std::span<const double> samples, double rho) {
  if (samples.size() < 2) throw ContractError("interval_from_samples: need at least 2 samples");
  check_level(rho, "interval_from_samples");
  std::vector<double> s(samples.begin(), samples.end());
  std::sort(s.begin(), s.end());
  return {empirical_quantile(s, rho / 2.0), empirical_quantile(s, 1.0 - rho / 2.0), 1.0 - rho};
}

void crossing_repair(double point, std::vector<IntervalPair>& intervals) {
  std::stable_sort(intervals.begin(), intervals.end(),
                   [](const IntervalPair& a, const IntervalPair& b) { return a.level < b.level; });
  double lower_cap = point;
  double upper_floor = point;
  for (IntervalPair& iv : intervals) {
    iv.lower = std::min(iv.lower, lower_cap);
    iv.upper = std::max(iv.upper, upper_floor);
    lower_cap = iv.lower;
    upper_floor = iv.upper;
  }
}

std::vector<double> quantile_levels(std::span<const double> ci_levels) {
  auto clean = [](double q) { return std::round(q * 1e12) / 1e12; };
  std::vector<double> out{0.5};
  for (double level : ci_levels) {
    check_level(level, "quantile_levels");
    const double rho = 1.0 - level;
    out.push_back(clean(rho / 2.0));
    out.push_back(clean(1.0 - rho / 2.0));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace gleamcast::uq
