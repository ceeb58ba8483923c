#pragma once

// Type I error and power studies for the two-group design: simulate
// beta-binomial counts under a known parameter, test a fixed null with
// each method, and summarize the p-values.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "bbreg/bootstrap.hpp"
#include "bbreg/inference.hpp"
#include "bbreg/model.hpp"
#include "bbreg/parallel.hpp"
#include "bbreg/random.hpp"

namespace bbreg {

enum class Setting { S1, S2, S3, S4, S5 };

inline std::string_view to_string(Setting s) {
  static constexpr std::string_view names[] = {"S1", "S2", "S3", "S4", "S5"};
  return names[static_cast<int>(s)];
}

inline Setting parse_setting(std::string_view s) {
  for (Setting v : {Setting::S1, Setting::S2, Setting::S3, Setting::S4, Setting::S5}) {
    if (s == to_string(v)) return v;
  }
  throw std::invalid_argument("unknown setting '" + std::string(s) + "' (expected S1..S5)");
}

/// True (beta0, beta1, beta0*, beta1*) for a setting. For S4 the scale c
/// multiplies beta1, for S5 it multiplies beta1*; other settings ignore it.
inline Theta setting_theta(Setting s, double c = 1.0) {
  if (!(c >= 0.0 && c <= 1.0)) throw std::invalid_argument("setting_theta: c must lie in [0, 1]");
  auto make = [](double b0, double b1, double b0s, double b1s) {
    return Theta(b0, Vector::Constant(1, b1), b0s, Vector::Constant(1, b1s));
  };
  switch (s) {
    case Setting::S1: return make(-5.75, 0.0, -5.24, 0.0);
    case Setting::S2: return make(-5.36, -1.12, -5.69, 0.0);
    case Setting::S3: return make(-5.51, 0.0, -5.38, 0.70);
    case Setting::S4: return make(-5.17, -2.46 * c, -5.13, -3.88);
    case Setting::S5: return make(-5.17, -2.46, -5.13, -3.88 * c);
  }
  throw std::invalid_argument("setting_theta: bad setting");
}

/// Null hypothesis tested in each setting, as a constraint on the
/// four-dimensional theta of the two-group design.
inline ConstraintSpec setting_null(Setting s) {
  switch (s) {
    case Setting::S1: return ConstraintSpec::select(4, {1, 3});
    case Setting::S2: return ConstraintSpec::select(4, {3});
    case Setting::S3: return ConstraintSpec::select(4, {1});
    case Setting::S4: return ConstraintSpec::select(4, {1});
    case Setting::S5: return ConstraintSpec::select(4, {3});
  }
  throw std::invalid_argument("setting_null: bad setting");
}

/// 31 depths evenly spaced in log scale between 7821 and 58655.
inline std::vector<std::int64_t> default_depth_pool() {
  constexpr int count = 31;
  const double lo = std::log(7821.0);
  const double hi = std::log(58655.0);
  std::vector<std::int64_t> pool(count);
  for (int i = 0; i < count; ++i) {
    pool[static_cast<std::size_t>(i)] = std::llround(std::exp(lo + (hi - lo) * i / (count - 1)));
  }
  return pool;
}

/// n draws with replacement from the pool.
inline std::vector<std::int64_t> draw_depths(const std::vector<std::int64_t>& pool, std::size_t n, RngStream& rng) {
  if (pool.empty()) throw std::invalid_argument("draw_depths: empty depth pool");
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::vector<std::int64_t> out(n);
  for (auto& m : out) m = pool[pick(rng.engine())];
  return out;
}

/// One binary covariate shared by both submodels: n/2 - 1 zeros, then ones.
inline DesignPair design_half_split(int n) {
  if (n < 4 || n % 2 != 0) throw std::invalid_argument("design_half_split: n must be even and >= 4");
  Matrix X(n, 1);
  for (int i = 0; i < n; ++i) X(i, 0) = i < n / 2 - 1 ? 0.0 : 1.0;
  return {X, X};
}

struct SimScenario {
  Setting setting = Setting::S1;
  double scale_c = 1.0;
  int n = 30;
  int n_sims = 1000;
  std::vector<TestMethod> methods{TestMethod::wald, TestMethod::lrt};
  int B = 200;
  std::vector<std::int64_t> depth_pool = default_depth_pool();
  std::uint64_t seed = 1;
  /// Draw new depths for every replicate; otherwise one draw is shared.
  bool redraw_depths = true;
  unsigned threads = 0;
  TrustConfig trust;

  [[nodiscard]] Theta theta_true() const { return setting_theta(setting, scale_c); }

  void validate() const {
    if (n_sims < 1) throw std::invalid_argument("SimScenario: n_sims must be positive");
    if (methods.empty()) throw std::invalid_argument("SimScenario: no test methods");
    if (depth_pool.empty()) throw std::invalid_argument("SimScenario: empty depth pool");
    if (std::ranges::any_of(methods, is_bootstrap) && B < 1) {
      throw std::invalid_argument("SimScenario: bootstrap methods need B >= 1");
    }
    (void)design_half_split(n);
    (void)theta_true();
  }
};

struct SimRecord {
  double p_value = std::numeric_limits<double>::quiet_NaN();
  double statistic = std::numeric_limits<double>::quiet_NaN();
  bool degenerate = false;
  bool failed = false;
};

struct MethodSummary {
  double rejection_rate = 0.0;
  double ks_statistic = 0.0;
  int failures = 0;
};

struct SimReport {
  SimScenario scenario;
  std::map<TestMethod, std::vector<SimRecord>> records;
  std::map<TestMethod, MethodSummary> summary;
};

inline constexpr double kSimLevel = 0.05;

/// #{p <= level} / (number of replicates); failed replicates count as
/// non-rejections.
inline double rejection_rate(const std::vector<SimRecord>& recs, double level = kSimLevel) {
  if (recs.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& r : recs) {
    if (!r.failed && r.p_value <= level) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(recs.size());
}

/// Kolmogorov-Smirnov distance between the empirical distribution of p and U(0,1).
inline double ks_uniform(std::vector<double> p) {
  if (p.empty()) return 0.0;
  std::ranges::sort(p);
  const auto n = static_cast<double>(p.size());
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double x = std::clamp(p[i], 0.0, 1.0);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - x, x - static_cast<double>(i) / n});
  }
  return d;
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
inline double ks_critical_1pct(std::size_t n) { return 1.6276 / std::sqrt(static_cast<double>(n)); }

inline MethodSummary summarize(const std::vector<SimRecord>& recs) {
  MethodSummary s;
  std::vector<double> p;
  for (const auto& r : recs) {
    if (r.failed) {
      ++s.failures;
    } else {
      p.push_back(r.p_value);
    }
  }
  s.rejection_rate = rejection_rate(recs);
  s.ks_statistic = ks_uniform(std::move(p));
  return s;
}

/// Replicate r uses stream (seed, r): depths first, then counts; bootstrap
/// replicates use its substreams.
inline SimReport run_scenario(const SimScenario& sc) {
  sc.validate();
  const DesignPair design = design_half_split(sc.n);
  const Theta truth = sc.theta_true();
  const ConstraintSpec null = setting_null(sc.setting);
  const auto n = static_cast<std::size_t>(sc.n);
  std::vector<std::int64_t> fixed_depths;
  if (!sc.redraw_depths) {
    RngStream depth_rng(sc.seed, std::numeric_limits<std::uint64_t>::max());
    fixed_depths = draw_depths(sc.depth_pool, n, depth_rng);
  }
  TestOptions opts;
  opts.trust = sc.trust;
  opts.B = sc.B;
  opts.threads = 1;

  const auto sims = static_cast<std::size_t>(sc.n_sims);
  std::vector<std::map<TestMethod, SimRecord>> rows(sims);
  parallel_for(sims, sc.threads, [&](std::size_t r) {
    RngStream rng(sc.seed, r);
    const auto depths = sc.redraw_depths ? draw_depths(sc.depth_pool, n, rng) : fixed_depths;
    const Dataset data(sample_beta_binomial(truth, design, depths, rng), depths);
    auto& row = rows[r];
    try {
      const auto results = run_tests(sc.methods, data, design, null, opts, rng);
      for (const auto& [m, res] : results) row[m] = {res.p_value, res.statistic, res.degenerate, false};
    } catch (const std::exception&) {
      for (auto m : sc.methods) row[m] = SimRecord{.failed = true};
    }
  });

  SimReport rep;
  rep.scenario = sc;
  for (auto m : sc.methods) {
    auto& recs = rep.records[m];
    recs.reserve(sims);
    for (const auto& row : rows) recs.push_back(row.at(m));
    rep.summary[m] = summarize(recs);
  }
  return rep;
}

struct PowerPoint {
  double c = 0.0;
  std::map<TestMethod, MethodSummary> summary;
};

/// Runs the scenario at each scale c (settings S4 and S5).
inline std::vector<PowerPoint> power_curve(SimScenario sc, const std::vector<double>& scales) {
  if (sc.setting != Setting::S4 && sc.setting != Setting::S5) {
    throw std::invalid_argument("power_curve: only settings S4 and S5 are scaled");
  }
  std::vector<PowerPoint> out;
  for (double c : scales) {
    sc.scale_c = c;
    out.push_back({c, run_scenario(sc).summary});
  }
  return out;
}

}  // namespace bbreg
