// Monte-Carlo calibration of the tests under the published null settings.
#include <gtest/gtest.h>

#include "bbreg/simulation.hpp"

using namespace bbreg;

namespace {

SimReport simulate(Setting s, int n, int sims, std::vector<TestMethod> methods, std::uint64_t seed, int B = 200) {
  SimScenario sc;
  sc.setting = s;
  sc.n = n;
  sc.n_sims = sims;
  sc.methods = std::move(methods);
  sc.B = B;
  sc.seed = seed;
  return run_scenario(sc);
}

}  // namespace

TEST(Calibration, WaldLevelS3LargeSample) {
  const auto rep = simulate(Setting::S3, 100, 1000, {TestMethod::wald}, 101);
  const auto& s = rep.summary.at(TestMethod::wald);
  EXPECT_GE(s.rejection_rate, 0.03);
  EXPECT_LE(s.rejection_rate, 0.07);
  EXPECT_EQ(s.failures, 0);
}

TEST(Calibration, LrtUniformS2) {
  const auto rep = simulate(Setting::S2, 30, 1000, {TestMethod::lrt}, 102);
  EXPECT_LT(rep.summary.at(TestMethod::lrt).ks_statistic, 0.05);
}

TEST(Calibration, AsymptoticUniformityAtN100) {
  for (auto s : {Setting::S1, Setting::S2, Setting::S3}) {
    const auto rep = simulate(s, 100, 1000, {TestMethod::wald, TestMethod::lrt}, 200 + static_cast<int>(s));
    for (auto m : {TestMethod::wald, TestMethod::lrt}) {
      EXPECT_LT(rep.summary.at(m).ks_statistic, ks_critical_1pct(1000)) << to_string(s) << ' ' << to_string(m);
    }
  }
}

TEST(Calibration, BootstrapCloserToUniformAtN10) {
  const auto rep = simulate(Setting::S1, 10, 300,
                            {TestMethod::wald, TestMethod::lrt, TestMethod::pb_wald, TestMethod::pb_lrt}, 301, 100);
  const double ks_wald = rep.summary.at(TestMethod::wald).ks_statistic;
  const double ks_lrt = rep.summary.at(TestMethod::lrt).ks_statistic;
  EXPECT_LT(rep.summary.at(TestMethod::pb_wald).ks_statistic, ks_wald);
  EXPECT_LT(rep.summary.at(TestMethod::pb_lrt).ks_statistic, ks_lrt);
  // the asymptotic tests are liberal in small samples
  EXPECT_GT(rep.summary.at(TestMethod::lrt).rejection_rate, 0.05);
}
