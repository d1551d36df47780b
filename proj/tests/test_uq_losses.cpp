#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "gleamcast/errors.hpp"
#include "gleamcast/metrics.hpp"
#include "gleamcast/uq_losses.hpp"

using namespace gleamcast;
using uq::IntervalPair;
using uq::SplineQuantileParams;

namespace {

const double kSoftplusInvOne = std::log(std::exp(1.0) - 1.0);

SplineQuantileParams random_spline(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  SplineQuantileParams p;
  p.intercept = 3.0 * n(rng);
  for (double& s : p.slope_raw) s = 1.5 * n(rng);
  for (double& k : p.knot_raw) k = n(rng);
  return p;
}

double pinball_point(double y, double f, double alpha) { return (y - f) * (alpha - (y < f ? 1.0 : 0.0)); }

double crps_trapezoid(const uq::SplineQuantile& q, double y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i <= n; ++i) {
    const double a = static_cast<double>(i) / static_cast<double>(n);
    const double w = (i == 0 || i == n) ? 0.5 : 1.0;
    s += w * 2.0 * pinball_point(y, q(a), a);
  }
  return s / static_cast<double>(n);
}

bool nested(double point, const std::vector<IntervalPair>& iv) {
  double lo = point, hi = point;
  for (const auto& i : iv) {
    if (i.lower > lo || i.upper < hi) return false;
    lo = i.lower;
    hi = i.upper;
  }
  return true;
}

}  // namespace

TEST(Mae, Examples) {
  EXPECT_DOUBLE_EQ(uq::mae_loss(std::vector<double>{1, 3}, std::vector<double>{1, 1}), 1.0);
  const std::vector<double> y{2.5, -1, 4};
  EXPECT_EQ(uq::mae_loss(y, y), 0.0);
  EXPECT_THROW(uq::mae_loss(std::vector<double>{}, std::vector<double>{}), ContractError);
  EXPECT_THROW(uq::mae_loss(std::vector<double>{1}, std::vector<double>{1, 2}), DimensionError);
}

TEST(Mae, RandomMatchesElementwiseOracle) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  std::vector<double> y(100), f(100);
  for (auto& v : y) v = n(rng);
  for (auto& v : f) v = n(rng);
  double ref = 0;
  for (std::size_t i = 0; i < y.size(); ++i) ref += std::fabs(y[i] - f[i]);
  EXPECT_NEAR(uq::mae_loss(y, f), ref / 100.0, 1e-14);
}

TEST(Pinball, Branches) {
  EXPECT_NEAR(uq::pinball_loss(std::vector<double>{1}, std::vector<double>{0}, 0.9), 0.9, 1e-15);
  EXPECT_NEAR(uq::pinball_loss(std::vector<double>{0}, std::vector<double>{1}, 0.9), 0.1, 1e-15);
  EXPECT_THROW(uq::pinball_loss(std::vector<double>{0}, std::vector<double>{1}, 1.0), ContractError);
}

TEST(Pinball, MinimizerIsTheQuantile) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  std::vector<double> y(20000);
  for (auto& v : y) v = n(rng);
  double best = 0, best_loss = 1e300;
  for (double c = 1.5; c <= 2.5; c += 0.002) {
    const double l = uq::pinball_loss(y, std::vector<double>(y.size(), c), 0.975);
    if (l < best_loss) {
      best_loss = l;
      best = c;
    }
  }
  EXPECT_NEAR(best, 1.96, 0.05);
}

TEST(Pinball, ConvexInForecast) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  for (int rep = 0; rep < 200; ++rep) {
    const std::vector<double> y{n(rng), n(rng)};
    const std::vector<double> a{n(rng), n(rng)}, b{n(rng), n(rng)};
    std::vector<double> mid{(a[0] + b[0]) / 2, (a[1] + b[1]) / 2};
    EXPECT_LE(uq::pinball_loss(y, mid, 0.3),
              0.5 * uq::pinball_loss(y, a, 0.3) + 0.5 * uq::pinball_loss(y, b, 0.3) + 1e-12);
  }
}

TEST(Mis, Examples) {
  auto one = [](double y, double u, double l, double f) {
    return uq::mis_loss(std::vector<double>{y}, std::vector<double>{u}, std::vector<double>{l},
                        std::vector<double>{f}, 0.05);
  };
  EXPECT_DOUBLE_EQ(one(1, 2, 0, 1), 2.0);
  EXPECT_DOUBLE_EQ(one(3, 2, 0, 1), 44.0);
}

TEST(Mis, EqualsMetricPlusMae) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  std::vector<double> y(300), u(300), l(300), f(300);
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = n(rng);
    f[i] = n(rng);
    l[i] = f[i] - std::fabs(n(rng));
    u[i] = f[i] + std::fabs(n(rng));
  }
  EXPECT_NEAR(uq::mis_loss(y, u, l, f, 0.1), metrics::mis_metric(y, u, l, 0.1) + uq::mae_loss(y, f), 1e-12);
}

TEST(Mis, TapeMatchesPlain) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  Array2 y(6, 1), u(6, 1), l(6, 1), f(6, 1);
  for (std::size_t i = 0; i < 6; ++i) {
    y[i] = n(rng);
    f[i] = n(rng);
    l[i] = f[i] - 0.5;
    u[i] = f[i] + 0.5;
  }
  ad::Tape t;
  auto v = uq::mis_loss(t.constant(y), t.leaf(u), t.leaf(l), t.leaf(f), 0.2);
  EXPECT_NEAR(v.value()(0, 0), uq::mis_loss(y.data(), u.data(), l.data(), f.data(), 0.2), 1e-14);
}

TEST(Spline, ZeroParamsDecodeToLinear) {
  const auto q = uq::spline_decode(SplineQuantileParams{});
  for (std::size_t k = 0; k <= uq::kSplineSegments; ++k) EXPECT_NEAR(q.knots[k], k / 5.0, 1e-15);
  for (double s : q.slopes) EXPECT_NEAR(s, std::log(2.0), 1e-15);
  for (double a : {0.0, 0.13, 0.5, 0.77, 1.0}) EXPECT_NEAR(q(a), std::log(2.0) * a, 1e-14);
}

TEST(Spline, ZeroSlopesGiveConstant) {
  SplineQuantileParams p;
  p.intercept = 7.0;
  p.slope_raw.fill(-800.0);
  const auto q = uq::spline_decode(p);
  for (double a : {0.0, 0.3, 1.0}) EXPECT_EQ(q(a), 7.0);
}

TEST(Spline, MonotoneOnFineGrid) {
  std::mt19937_64 rng(6);
  for (int rep = 0; rep < 20; ++rep) {
    const auto q = uq::spline_decode(random_spline(rng));
    for (std::size_t k = 0; k < uq::kSplineSegments; ++k) EXPECT_LT(q.knots[k], q.knots[k + 1]);
    double prev = q(0.0);
    for (int i = 1; i <= 10000; ++i) {
      const double v = q(i / 10000.0);
      ASSERT_GE(v, prev);
      prev = v;
    }
  }
}

TEST(Spline, FromSpanRequiresElevenValues) {
  EXPECT_THROW(SplineQuantileParams::from_span(std::vector<double>(10)), DimensionError);
}

TEST(Crps, UniformQuantileAtMidpoint) {
  SplineQuantileParams p;
  p.slope_raw.fill(kSoftplusInvOne);
  EXPECT_NEAR(uq::crps_linear_spline(p, 0.5), 1.0 / 12.0, 1e-12);
}

TEST(Crps, DegenerateForecastAtTruth) {
  SplineQuantileParams p;
  p.intercept = 2.5;
  p.slope_raw.fill(-800.0);
  EXPECT_NEAR(uq::crps_linear_spline(p, 2.5), 0.0, 1e-12);
}

TEST(Crps, MatchesQuadrature) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n;
  for (int rep = 0; rep < 30; ++rep) {
    const auto p = random_spline(rng);
    const auto q = uq::spline_decode(p);
    const double y = q(0.5) + 2.0 * n(rng);
    EXPECT_NEAR(uq::crps_linear_spline(p, y), crps_trapezoid(q, y, 100000), 1e-5);
  }
}

TEST(Crps, TapeLossIsRowMean) {
  std::mt19937_64 rng(8);
  Array2 params(3, uq::kSplineParams);
  Array2 y(3, 1);
  double ref = 0;
  for (std::size_t r = 0; r < 3; ++r) {
    const auto p = random_spline(rng);
    params(r, 0) = p.intercept;
    for (std::size_t k = 0; k < 5; ++k) {
      params(r, 1 + k) = p.slope_raw[k];
      params(r, 6 + k) = p.knot_raw[k];
    }
    y(r, 0) = 0.3 * static_cast<double>(r);
    ref += uq::crps_linear_spline(p, y(r, 0));
  }
  ad::Tape t;
  auto loss = uq::crps_spline_loss(t.leaf(params), t.constant(y));
  EXPECT_NEAR(loss.value()(0, 0), ref / 3.0, 1e-13);
}

TEST(Crps, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  for (int rep = 0; rep < 10; ++rep) {
    ad::ParamSet ps;
    Array2 params(4, uq::kSplineParams);
    std::normal_distribution<double> n;
    for (double& v : params.data()) v = n(rng);
    ps.add("p", params);
    Array2 y(4, 1);
    for (double& v : y.data()) v = 2.0 * n(rng);
    ad::ScalarFn f = [&](ad::Tape& t, std::span<const ad::Var> leaves) {
      return ad::add(uq::crps_spline_loss(leaves[0], t.constant(y)), ad::sum(uq::spline_quantile(leaves[0], 0.3)));
    };
    EXPECT_LT(ad::grad_check(f, ps), 1e-4);
  }
}

TEST(Interval, ExactInterpolationPositions) {
  std::vector<double> s(11);
  for (int i = 0; i <= 10; ++i) s[i] = 10 - i;
  const auto iv = uq::interval_from_samples(s, 0.5);
  EXPECT_DOUBLE_EQ(iv.lower, 2.5);
  EXPECT_DOUBLE_EQ(iv.upper, 7.5);
  EXPECT_DOUBLE_EQ(iv.level, 0.5);
}

TEST(Interval, DegenerateSamples) {
  const auto iv = uq::interval_from_samples(std::vector<double>(9, 3.25), 0.1);
  EXPECT_EQ(iv.lower, 3.25);
  EXPECT_EQ(iv.upper, 3.25);
  EXPECT_THROW(uq::interval_from_samples(std::vector<double>{1}, 0.1), ContractError);
}

TEST(Interval, NormalQuantiles) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> n;
  std::vector<double> s(100000);
  for (auto& v : s) v = n(rng);
  const auto iv = uq::interval_from_samples(s, 0.05);
  EXPECT_NEAR(iv.lower, -1.96, 0.02);
  EXPECT_NEAR(iv.upper, 1.96, 0.02);
}

TEST(CrossingRepair, SingleClip) {
  std::vector<IntervalPair> iv{{2, 3, 0.8}};
  uq::crossing_repair(1, iv);
  EXPECT_EQ(iv[0].lower, 1);
  EXPECT_EQ(iv[0].upper, 3);
}

TEST(CrossingRepair, ConsistentInputUnchanged) {
  std::vector<IntervalPair> iv{{0, 4, 0.8}, {-1, 5, 0.9}, {-2, 6, 0.95}};
  const auto before = iv;
  uq::crossing_repair(2, iv);
  for (std::size_t i = 0; i < iv.size(); ++i) {
    EXPECT_EQ(iv[i].lower, before[i].lower);
    EXPECT_EQ(iv[i].upper, before[i].upper);
  }
}

TEST(CrossingRepair, RandomViolationsBecomeNestedAndStayFixed) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n;
  for (int rep = 0; rep < 1000; ++rep) {
    std::vector<IntervalPair> iv{{n(rng), n(rng), 0.95}, {n(rng), n(rng), 0.8}, {n(rng), n(rng), 0.9}};
    const double point = n(rng);
    uq::crossing_repair(point, iv);
    ASSERT_TRUE(nested(point, iv));
    EXPECT_EQ(iv[0].level, 0.8);
    auto again = iv;
    uq::crossing_repair(point, again);
    for (std::size_t i = 0; i < iv.size(); ++i) {
      EXPECT_EQ(again[i].lower, iv[i].lower);
      EXPECT_EQ(again[i].upper, iv[i].upper);
    }
  }
}

TEST(QuantileLevels, DefaultLevels) {
  const auto q = uq::quantile_levels(std::vector<double>{0.8, 0.9, 0.95});
  const std::vector<double> expected{0.025, 0.05, 0.1, 0.5, 0.9, 0.95, 0.975};
  ASSERT_EQ(q.size(), expected.size());
  for (std::size_t i = 0; i < q.size(); ++i) EXPECT_EQ(q[i], expected[i]);
  EXPECT_EQ(uq::quantile_levels(std::vector<double>{0.95}), (std::vector<double>{0.025, 0.5, 0.975}));
  EXPECT_THROW(uq::quantile_levels(std::vector<double>{1.0}), ContractError);
}
