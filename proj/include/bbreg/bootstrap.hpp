#pragma once

// Parametric-bootstrap Wald and likelihood-ratio tests, and a driver that
// runs any subset of the four tests while sharing fits and simulated
// replicates between them.
//
// Replicate b always draws from rng.substream(b), so pb_wald and pb_lrt
// called separately see the same simulated datasets as a combined run, and
// results do not depend on the thread count.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bbreg/inference.hpp"
#include "bbreg/model.hpp"
#include "bbreg/optimizer.hpp"
#include "bbreg/parallel.hpp"
#include "bbreg/random.hpp"

namespace bbreg {

inline constexpr int kDefaultBootstrapReps = 10000;

struct TestOptions {
  TrustConfig trust;
  int B = kDefaultBootstrapReps;
  /// 0 means hardware concurrency.
  unsigned threads = 0;
};

/// Unrestricted fit plus the restricted fit under a constraint. If the
/// restricted optimum beats the unrestricted one, the unrestricted fit is
/// rerun with the restricted estimate as an extra start.
struct NestedFits {
  FitResult full;
  FitResult null;
};

inline NestedFits fit_nested(const Dataset& data, const DesignPair& design, const ConstraintSpec& constraint,
                             const TrustConfig& config, const FitResult* full = nullptr) {
  NestedFits out;
  out.full = full ? *full : fit(data, design, config);
  out.null = fit_restricted(data, design, constraint, config, {out.full.theta_hat});
  if (out.null.loglik > out.full.loglik) {
    out.full = fit(data, design, config, {out.null.theta_hat});
  }
  return out;
}

namespace detail {

struct ReplicateStats {
  bool ok = false;
  double wald = 0.0;
  double lrt = 0.0;
};

inline double wald_or_zero(const Dataset& data, const DesignPair& design, const FitResult& full,
                           const ConstraintSpec& constraint) {
  if (full.boundary_flag || detect_separation(data, design)) return 0.0;
  try {
    return wald_statistic(full.theta_hat.values(), full.observed_info, constraint, data.size());
  } catch (const SingularInformationError&) {
    return 0.0;
  }
}

inline std::optional<double> lrt_or_zero(const Dataset& data, const DesignPair& design, const NestedFits& fits,
                                         const ConstraintSpec& constraint) {
  if (detect_separation(data, design) && touches_dispersion(constraint, design)) return 0.0;
  const double t = 2.0 * (fits.full.loglik - fits.null.loglik);
  if (t <= -kLrtNoiseFloor) return std::nullopt;
  return std::max(t, 0.0);
}

inline ReplicateStats run_replicate(const Theta& null_theta, const Dataset& data, const DesignPair& design,
                                    const ConstraintSpec& constraint, bool need_wald, bool need_lrt,
                                    const TrustConfig& config, RngStream rng) {
  ReplicateStats st;
  Dataset sim(sample_beta_binomial(null_theta, design, data.depths(), rng), data.depths());
  try {
    FitResult full = fit(sim, design, config);
    if (need_lrt) {
      NestedFits fits = fit_nested(sim, design, constraint, config, &full);
      if (!fits.full.converged || !fits.null.converged) return st;
      const auto t = lrt_or_zero(sim, design, fits, constraint);
      if (!t) return st;
      st.lrt = *t;
      full = std::move(fits.full);
    } else if (!full.converged) {
      return st;
    }
    if (need_wald) st.wald = wald_or_zero(sim, design, full, constraint);
    st.ok = true;
  } catch (const std::exception&) {
    st.ok = false;
  }
  return st;
}

inline void bootstrap_p_value(TestResult& res, const std::vector<ReplicateStats>& reps, bool wald, int B) {
  res.boot_reps = B;
  if (res.statistic <= 0.0) {
    // every replicate statistic is >= 0 = T
    res.p_value = 1.0;
    return;
  }
  int used = 0;
  int exceed = 0;
  for (const auto& r : reps) {
    if (!r.ok) continue;
    ++used;
    if ((wald ? r.wald : r.lrt) >= res.statistic) ++exceed;
  }
  res.excluded_reps = B - used;
  res.p_value = (1.0 + exceed) / (used + 1.0);
  if (res.excluded_reps * 100 > B) {
    res.warning = std::to_string(res.excluded_reps) + " of " + std::to_string(B) +
                  " bootstrap replicates failed to converge and were excluded";
  }
}

}  // namespace detail

/// Runs the requested tests of A theta = b on one dataset. Fits and
/// bootstrap replicates are shared between methods. `full` may supply a
/// precomputed unrestricted fit.
inline std::map<TestMethod, TestResult> run_tests(const std::vector<TestMethod>& methods, const Dataset& data,
                                                  const DesignPair& design, const ConstraintSpec& constraint,
                                                  const TestOptions& options, const RngStream& rng,
                                                  const FitResult* full = nullptr) {
  detail::check_rows(data, design);
  constraint.validate(design.dim());
  const int r = constraint.rows();
  const bool want_wald = std::ranges::any_of(methods, [](TestMethod m) { return is_wald_type(m); });
  const bool want_lrt = std::ranges::any_of(methods, [](TestMethod m) { return !is_wald_type(m); });
  const bool want_pb_wald = std::ranges::find(methods, TestMethod::pb_wald) != methods.end();
  const bool want_pb_lrt = std::ranges::find(methods, TestMethod::pb_lrt) != methods.end();
  const bool want_boot = want_pb_wald || want_pb_lrt;

  FitResult full_fit = full ? *full : fit(data, design, options.trust);
  std::optional<NestedFits> nested;
  if (want_lrt || want_boot) {
    nested = fit_nested(data, design, constraint, options.trust, &full_fit);
    if (!nested->null.converged) throw std::runtime_error("restricted (null) fit failed to converge");
    full_fit = nested->full;
  }

  std::map<TestMethod, TestResult> out;
  const bool separated = detect_separation(data, design);
  TestResult wald_res;
  TestResult lrt_res;
  if (want_wald) {
    wald_res = separated ? detail::degenerate_result(TestMethod::wald, r) : wald_test(full_fit, constraint, data.size());
  }
  if (want_lrt) lrt_res = lr_test(data, design, nested->full, nested->null, constraint);
  if (methods.end() != std::ranges::find(methods, TestMethod::wald)) out[TestMethod::wald] = wald_res;
  if (methods.end() != std::ranges::find(methods, TestMethod::lrt)) out[TestMethod::lrt] = lrt_res;

  if (want_boot) {
    if (options.B < 1) throw std::invalid_argument("bootstrap needs B >= 1");
    const bool need_wald_reps = want_pb_wald && wald_res.statistic > 0.0;
    const bool need_lrt_reps = want_pb_lrt && lrt_res.statistic > 0.0;
    std::vector<detail::ReplicateStats> reps;
    if (need_wald_reps || need_lrt_reps) {
      reps.resize(static_cast<std::size_t>(options.B));
      const Theta null_theta = nested->null.theta_hat;
      parallel_for(reps.size(), options.threads, [&](std::size_t b) {
        reps[b] = detail::run_replicate(null_theta, data, design, constraint, need_wald_reps, need_lrt_reps,
                                        options.trust, rng.substream(b));
      });
    }
    if (want_pb_wald) {
      TestResult res = wald_res;
      res.method = TestMethod::pb_wald;
      detail::bootstrap_p_value(res, reps, true, options.B);
      out[TestMethod::pb_wald] = res;
    }
    if (want_pb_lrt) {
      TestResult res = lrt_res;
      res.method = TestMethod::pb_lrt;
      detail::bootstrap_p_value(res, reps, false, options.B);
      out[TestMethod::pb_lrt] = res;
    }
  }
  if (!full_fit.converged) {
    for (auto& [m, res] : out) {
      if (!res.warning.empty()) res.warning += "; ";
      res.warning += "unrestricted fit did not converge";
    }
  }
  return out;
}

inline TestResult run_test(TestMethod method, const Dataset& data, const DesignPair& design,
                           const ConstraintSpec& constraint, const TestOptions& options, const RngStream& rng,
                           const FitResult* full = nullptr) {
  return run_tests({method}, data, design, constraint, options, rng, full).at(method);
}

/// Parametric-bootstrap Wald test: simulate B datasets from the restricted
/// estimate, refit each, and compare replicate Wald statistics with the
/// observed one.
inline TestResult pb_wald_test(const Dataset& data, const DesignPair& design, const ConstraintSpec& constraint,
                               int B, const RngStream& rng, TestOptions options = {}) {
  options.B = B;
  return run_test(TestMethod::pb_wald, data, design, constraint, options, rng);
}

/// Parametric-bootstrap LRT: as pb_wald_test, but each replicate also
/// refits the restricted model and uses the likelihood-ratio statistic.
inline TestResult pb_lr_test(const Dataset& data, const DesignPair& design, const ConstraintSpec& constraint,
                             int B, const RngStream& rng, TestOptions options = {}) {
  options.B = B;
  return run_test(TestMethod::pb_lrt, data, design, constraint, options, rng);
}

}  // namespace bbreg
