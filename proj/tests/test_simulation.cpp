#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "bbreg/simulation.hpp"

using namespace bbreg;

TEST(DepthPool, Endpoints) {
  const auto pool = default_depth_pool();
  ASSERT_EQ(pool.size(), 31u);
  EXPECT_EQ(pool.front(), 7821);
  EXPECT_EQ(pool.back(), 58655);
  EXPECT_TRUE(std::ranges::is_sorted(pool));
  // log-spaced: consecutive ratios are nearly constant
  const double ratio = std::pow(58655.0 / 7821.0, 1.0 / 30.0);
  for (std::size_t i = 1; i < pool.size(); ++i) {
    EXPECT_NEAR(static_cast<double>(pool[i]) / static_cast<double>(pool[i - 1]), ratio, 1e-3);
  }
}

TEST(DrawDepths, Examples) {
  RngStream rng(1, 0);
  const auto same = draw_depths({4242}, 50, rng);
  EXPECT_TRUE(std::ranges::all_of(same, [](std::int64_t m) { return m == 4242; }));
  EXPECT_THROW(draw_depths({}, 3, rng), std::invalid_argument);

  const auto pool = default_depth_pool();
  const auto d = draw_depths(pool, 5000, rng);
  for (auto m : d) {
    EXPECT_GE(m, 7821);
    EXPECT_LE(m, 58655);
    EXPECT_NE(std::ranges::find(pool, m), pool.end());
  }
}

TEST(DrawDepths, MeanMatchesPool) {
  const auto pool = default_depth_pool();
  double mean = 0.0;
  double sq = 0.0;
  for (auto m : pool) {
    mean += static_cast<double>(m);
    sq += static_cast<double>(m) * static_cast<double>(m);
  }
  mean /= pool.size();
  const double var = sq / pool.size() - mean * mean;
  RngStream rng(2, 0);
  const std::size_t n = 200'000;
  const auto d = draw_depths(pool, n, rng);
  const double sample_mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
  EXPECT_NEAR(sample_mean, mean, 3.0 * std::sqrt(var / n));
}

TEST(DesignHalfSplit, Examples) {
  auto zeros = [](int n) {
    const auto d = design_half_split(n);
    EXPECT_TRUE(d.X() == d.Xstar());
    EXPECT_EQ(d.k(), 1);
    EXPECT_EQ(d.kstar(), 1);
    int z = 0;
    for (int i = 0; i < n; ++i) {
      if (d.X()(i, 0) == 0.0) {
        ++z;
        EXPECT_LT(i, n / 2 - 1);  // zeros come first
      } else {
        EXPECT_EQ(d.X()(i, 0), 1.0);
      }
    }
    return z;
  };
  EXPECT_EQ(zeros(10), 4);
  EXPECT_EQ(zeros(30), 14);
  EXPECT_EQ(zeros(4), 1);
  EXPECT_EQ(zeros(100), 49);
  EXPECT_THROW(design_half_split(7), std::invalid_argument);
  EXPECT_THROW(design_half_split(2), std::invalid_argument);
}

TEST(Settings, PublishedValues) {
  auto expect = [](Setting s, double c, std::vector<double> v) {
    const Theta t = setting_theta(s, c);
    ASSERT_EQ(t.dim(), 4);
    for (int j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(t[j], v[static_cast<std::size_t>(j)]) << to_string(s);
  };
  expect(Setting::S1, 1.0, {-5.75, 0, -5.24, 0});
  expect(Setting::S2, 1.0, {-5.36, -1.12, -5.69, 0});
  expect(Setting::S3, 1.0, {-5.51, 0, -5.38, 0.70});
  expect(Setting::S4, 1.0, {-5.17, -2.46, -5.13, -3.88});
  expect(Setting::S5, 1.0, {-5.17, -2.46, -5.13, -3.88});
  expect(Setting::S4, 0.5, {-5.17, -1.23, -5.13, -3.88});
  expect(Setting::S5, 0.25, {-5.17, -2.46, -5.13, -0.97});
  expect(Setting::S1, 0.3, {-5.75, 0, -5.24, 0});
  EXPECT_THROW(setting_theta(Setting::S4, 1.5), std::invalid_argument);
  EXPECT_EQ(parse_setting("S3"), Setting::S3);
  EXPECT_THROW(parse_setting("S6"), std::invalid_argument);
}

TEST(Settings, Nulls) {
  auto coords = [](Setting s) {
    const auto c = setting_null(s);
    std::vector<int> out;
    for (Eigen::Index r = 0; r < c.A.rows(); ++r) {
      Eigen::Index j;
      c.A.row(r).maxCoeff(&j);
      out.push_back(static_cast<int>(j));
    }
    return out;
  };
  EXPECT_EQ(coords(Setting::S1), (std::vector<int>{1, 3}));
  EXPECT_EQ(coords(Setting::S2), (std::vector<int>{3}));
  EXPECT_EQ(coords(Setting::S3), (std::vector<int>{1}));
  EXPECT_EQ(coords(Setting::S4), (std::vector<int>{1}));
  EXPECT_EQ(coords(Setting::S5), (std::vector<int>{3}));
  // each null holds at the true parameter (S4/S5 at c = 0)
  for (auto s : {Setting::S1, Setting::S2, Setting::S3}) {
    const auto c = setting_null(s);
    EXPECT_TRUE((c.A * setting_theta(s).values() - c.b).isZero());
  }
  for (auto s : {Setting::S4, Setting::S5}) {
    const auto c = setting_null(s);
    EXPECT_TRUE((c.A * setting_theta(s, 0.0).values() - c.b).isZero());
  }
}

TEST(Summaries, RejectionRateArithmetic) {
  std::vector<SimRecord> recs;
  for (double p : {0.01, 0.05, 0.2, 0.049, 0.9, 0.051}) recs.push_back({p, 1.0, false, false});
  recs.push_back(SimRecord{.failed = true});
  recs.push_back({0.0001, 9.0, false, true});  // failed records never count as rejections
  EXPECT_DOUBLE_EQ(rejection_rate(recs), 3.0 / 8.0);
  EXPECT_DOUBLE_EQ(rejection_rate(recs, 0.01), 1.0 / 8.0);
  EXPECT_EQ(rejection_rate({}), 0.0);
  const auto s = summarize(recs);
  EXPECT_EQ(s.failures, 2);
  EXPECT_DOUBLE_EQ(s.rejection_rate, 3.0 / 8.0);
}

TEST(Summaries, KsStatistic) {
  EXPECT_DOUBLE_EQ(ks_uniform({0.5}), 0.5);
  EXPECT_DOUBLE_EQ(ks_uniform({0.25, 0.75}), 0.25);
  EXPECT_DOUBLE_EQ(ks_uniform({1.0, 1.0}), 1.0);
  // evenly spread points are as uniform as possible
  std::vector<double> even;
  for (int i = 0; i < 100; ++i) even.push_back((i + 0.5) / 100.0);
  EXPECT_NEAR(ks_uniform(even), 0.005, 1e-12);
  EXPECT_NEAR(ks_critical_1pct(100), 0.16276, 1e-12);
}

TEST(RunScenario, Reproducible) {
  SimScenario sc;
  sc.setting = Setting::S2;
  sc.n = 10;
  sc.n_sims = 40;
  sc.methods = {TestMethod::wald, TestMethod::lrt, TestMethod::pb_lrt};
  sc.B = 15;
  sc.seed = 5;
  sc.threads = 1;
  const auto a = run_scenario(sc);
  sc.threads = 3;
  const auto b = run_scenario(sc);
  for (auto m : sc.methods) {
    ASSERT_EQ(a.records.at(m).size(), 40u);
    for (std::size_t r = 0; r < 40; ++r) {
      EXPECT_EQ(a.records.at(m)[r].p_value, b.records.at(m)[r].p_value);
      EXPECT_EQ(a.records.at(m)[r].statistic, b.records.at(m)[r].statistic);
    }
    EXPECT_EQ(a.summary.at(m).rejection_rate, rejection_rate(a.records.at(m)));
  }
  sc.seed = 6;
  const auto c = run_scenario(sc);
  EXPECT_NE(c.records.at(TestMethod::lrt)[0].p_value, a.records.at(TestMethod::lrt)[0].p_value);
}

TEST(RunScenario, FixedDepthsAreShared) {
  SimScenario sc;
  sc.setting = Setting::S1;
  sc.n = 10;
  sc.n_sims = 5;
  sc.redraw_depths = false;
  sc.depth_pool = {1000, 2000, 3000};
  const auto rep = run_scenario(sc);
  EXPECT_EQ(rep.records.at(TestMethod::wald).size(), 5u);
  EXPECT_THROW(
      [] {
        SimScenario bad;
        bad.n = 9;
        run_scenario(bad);
      }(),
      std::invalid_argument);
}

TEST(RunScenario, NullPowerNearLevel) {
  SimScenario sc;
  sc.setting = Setting::S4;
  sc.scale_c = 0.0;
  sc.n = 30;
  sc.n_sims = 400;
  sc.methods = {TestMethod::lrt};
  sc.seed = 7;
  const auto rep = run_scenario(sc);
  EXPECT_NEAR(rep.summary.at(TestMethod::lrt).rejection_rate, 0.05, 0.02);
}

TEST(PowerCurve, ScalesOnlyTheTestedCoefficient) {
  SimScenario sc;
  sc.setting = Setting::S1;
  EXPECT_THROW(power_curve(sc, {0.0}), std::invalid_argument);
  sc.setting = Setting::S5;
  sc.n = 30;
  sc.n_sims = 60;
  sc.methods = {TestMethod::lrt};
  const auto curve = power_curve(sc, {0.0, 1.0});
  ASSERT_EQ(curve.size(), 2u);
  EXPECT_EQ(curve[0].c, 0.0);
  EXPECT_LT(curve[0].summary.at(TestMethod::lrt).rejection_rate, curve[1].summary.at(TestMethod::lrt).rejection_rate);
}
