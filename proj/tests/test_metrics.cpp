#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gleamcast/errors.hpp"
#include "gleamcast/metrics.hpp"

using namespace gleamcast;
using namespace gleamcast::metrics;

namespace {

std::vector<double> normals(std::size_t n, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

}  // namespace

TEST(Metrics, PointExamples) {
  const std::vector<double> one{1}, three{3};
  EXPECT_EQ(mae_metric(one, three), 2.0);
  EXPECT_EQ(rmse_metric(one, three), 2.0);
  EXPECT_EQ(mae_metric(three, three), 0.0);
  EXPECT_NEAR(rmse_metric(std::vector<double>{0, 0}, std::vector<double>{3, 4}), std::sqrt(12.5), 1e-15);
  EXPECT_THROW(mae_metric(std::vector<double>{}, std::vector<double>{}), ContractError);
  EXPECT_THROW(rmse_metric(one, std::vector<double>{1, 2}), DimensionError);
}

TEST(Metrics, RandomMatchesFlatOracle) {
  std::mt19937_64 rng(1);
  // 4 horizons x 50 locations flattened
  const auto t = normals(200, rng, 10), p = normals(200, rng, 10);
  double a = 0, s = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    a += std::fabs(t[i] - p[i]);
    s += (t[i] - p[i]) * (t[i] - p[i]);
  }
  EXPECT_NEAR(mae_metric(t, p), a / 200, 1e-12);
  EXPECT_NEAR(rmse_metric(t, p), std::sqrt(s / 200), 1e-12);
  EXPECT_GE(rmse_metric(t, p), mae_metric(t, p));
}

TEST(Metrics, MisExamples) {
  const std::vector<double> u{1}, l{0};
  EXPECT_DOUBLE_EQ(mis_metric(std::vector<double>{0.5}, u, l, 0.05), 1.0);
  EXPECT_DOUBLE_EQ(mis_metric(std::vector<double>{2.0}, u, l, 0.05), 41.0);
  EXPECT_THROW(mis_metric(std::vector<double>{2.0}, u, l, 0.0), ContractError);
}

TEST(Metrics, MisIsMeanOfPerSampleScores) {
  std::mt19937_64 rng(2);
  const auto z = normals(1000, rng), c = normals(1000, rng);
  std::vector<double> u(1000), l(1000);
  std::uniform_real_distribution<double> w(0.0, 2.0);
  for (std::size_t i = 0; i < z.size(); ++i) {
    l[i] = c[i] - w(rng);
    u[i] = c[i] + w(rng);
  }
  double s = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double score = (u[i] - l[i]) + (z[i] > u[i] ? 2 / 0.1 * (z[i] - u[i]) : 0.0) +
                         (z[i] < l[i] ? 2 / 0.1 * (l[i] - z[i]) : 0.0);
    s += score;
  }
  EXPECT_NEAR(mis_metric(z, u, l, 0.1), s / 1000, 1e-12);
  EXPECT_EQ(mis_metric(z, u, l, 0.1, par::Exec::serial), mis_metric(z, u, l, 0.1, par::Exec::parallel));
}

TEST(Metrics, MisAtLeastWidthAndWideningIsLinear) {
  std::mt19937_64 rng(3);
  const auto z = normals(500, rng);
  std::vector<double> u(500, 1.0), l(500, -1.0);
  const auto cw = coverage_and_width(z, u, l);
  EXPECT_GE(mis_metric(z, u, l, 0.05), cw.width);
  std::vector<double> big_u(500, 10.0), big_l(500, -10.0);
  const double covered = mis_metric(z, big_u, big_l, 0.05);
  EXPECT_NEAR(covered, 20.0, 1e-12);
  std::vector<double> wider_u(500, 10.5);
  EXPECT_NEAR(mis_metric(z, wider_u, big_l, 0.05) - covered, 0.5, 1e-12);
}

TEST(Metrics, CoverageExamples) {
  const std::vector<double> z{1, 2, 3};
  auto cw = coverage_and_width(z, z, z);
  EXPECT_EQ(cw.coverage, 1.0);
  EXPECT_EQ(cw.width, 0.0);
  cw = coverage_and_width(z, std::vector<double>{5, 5, 5}, std::vector<double>{0, 0, 0});
  EXPECT_EQ(cw.coverage, 1.0);
  EXPECT_EQ(cw.width, 5.0);
}

TEST(Metrics, NormalCoverageMonteCarlo) {
  std::mt19937_64 rng(4);
  const auto z = normals(100000, rng);
  const std::vector<double> u(z.size(), 1.959963984540054), l(z.size(), -1.959963984540054);
  EXPECT_NEAR(coverage_and_width(z, u, l).coverage, 0.95, 0.01);
}

TEST(Metrics, PermutationInvariance) {
  std::mt19937_64 rng(5);
  auto t = normals(300, rng), p = normals(300, rng);
  std::vector<double> u(300), l(300);
  for (std::size_t i = 0; i < 300; ++i) {
    u[i] = p[i] + 1.0;
    l[i] = p[i] - 0.5;
  }
  const double mae = mae_metric(t, p), rmse = rmse_metric(t, p), mis = mis_metric(t, u, l, 0.2);
  std::vector<std::size_t> idx(300);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<double> t2, p2, u2, l2;
  for (auto i : idx) {
    t2.push_back(t[i]);
    p2.push_back(p[i]);
    u2.push_back(u[i]);
    l2.push_back(l[i]);
  }
  EXPECT_NEAR(mae_metric(t2, p2), mae, 1e-12);
  EXPECT_NEAR(rmse_metric(t2, p2), rmse, 1e-12);
  EXPECT_NEAR(mis_metric(t2, u2, l2, 0.2), mis, 1e-12);
}

TEST(Metrics, EvalCsvLayout) {
  EvalReport r;
  r.rows.push_back({1, 2.5, 3.0, {{0.95, 10.0, 4.0, 0.75}}});
  EXPECT_EQ(eval_csv(r),
            "horizon_weeks,metric,level,value\n"
            "1,mae,,2.5\n"
            "1,rmse,,3\n"
            "1,mis,0.95,10\n"
            "1,interval_width,0.95,4\n"
            "1,coverage,0.95,0.75\n");
}
