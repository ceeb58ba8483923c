#pragma once

// Wald and likelihood-ratio tests of A theta = b, with the degenerate
// (all-zero group) conventions: Wald-type tests report a zero statistic
// and p-value 1 whenever the mean-model MLE diverges.

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "bbreg/model.hpp"
#include "bbreg/optimizer.hpp"
#include "bbreg/special_functions.hpp"

namespace bbreg {

enum class TestMethod { wald, lrt, pb_wald, pb_lrt };

inline std::string_view to_string(TestMethod m) {
  switch (m) {
    case TestMethod::wald: return "wald";
    case TestMethod::lrt: return "lrt";
    case TestMethod::pb_wald: return "pb_wald";
    case TestMethod::pb_lrt: return "pb_lrt";
  }
  return "unknown";
}

inline TestMethod parse_test_method(std::string_view s) {
  if (s == "wald") return TestMethod::wald;
  if (s == "lrt") return TestMethod::lrt;
  if (s == "pb_wald") return TestMethod::pb_wald;
  if (s == "pb_lrt") return TestMethod::pb_lrt;
  throw std::invalid_argument("unknown test method '" + std::string(s) + "'");
}

inline bool is_wald_type(TestMethod m) { return m == TestMethod::wald || m == TestMethod::pb_wald; }
inline bool is_bootstrap(TestMethod m) { return m == TestMethod::pb_wald || m == TestMethod::pb_lrt; }

struct TestResult {
  double statistic = 0.0;
  int df = 0;
  double p_value = 1.0;
  TestMethod method = TestMethod::wald;
  bool degenerate = false;
  std::optional<int> boot_reps;
  /// Bootstrap replicates dropped because a refit did not converge.
  int excluded_reps = 0;
  std::string warning;
};

/// Thrown when the observed information is too ill-conditioned to invert.
class SingularInformationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kMaxInformationCondition = 1e12;
inline constexpr double kLrtNoiseFloor = 1e-8;

/// I(theta) = -H(theta) / n at the fitted estimate.
inline Matrix observed_information(const FitResult& fit, const Dataset& data, const DesignPair& design) {
  const Matrix H = hessian(fit.theta_hat, data, design);
  const Matrix info = -(H + H.transpose()) / (2.0 * static_cast<double>(data.size()));
  Eigen::SelfAdjointEigenSolver<Matrix> eig(info, Eigen::EigenvaluesOnly);
  const Vector& ev = eig.eigenvalues();
  const double largest = ev.cwiseAbs().maxCoeff();
  const double smallest = ev.cwiseAbs().minCoeff();
  if (!(smallest > 0.0) || largest / smallest > kMaxInformationCondition) {
    throw SingularInformationError("observed information is singular (condition number exceeds 1e12)");
  }
  return info;
}

namespace detail {

inline TestResult degenerate_result(TestMethod method, int df) {
  TestResult r;
  r.method = method;
  r.df = df;
  r.statistic = 0.0;
  r.p_value = 1.0;
  r.degenerate = true;
  return r;
}

inline bool is_binary(const Eigen::Ref<const Vector>& col) {
  bool has0 = false;
  bool has1 = false;
  for (Eigen::Index i = 0; i < col.size(); ++i) {
    if (col[i] == 0.0) {
      has0 = true;
    } else if (col[i] == 1.0) {
      has1 = true;
    } else {
      return false;
    }
  }
  return has0 && has1;
}

// Wald statistic from an information matrix; throws SingularInformationError.
inline double wald_statistic(const Vector& theta, const Matrix& info, const ConstraintSpec& c, std::size_t n) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (info + info.transpose()));
  const Vector& ev = eig.eigenvalues();
  if (!(ev[0] > 0.0) || ev[ev.size() - 1] / ev[0] > kMaxInformationCondition) {
    throw SingularInformationError("observed information is singular or not positive definite");
  }
  const Matrix info_inv = eig.eigenvectors() * ev.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
  const Matrix middle = c.A * info_inv * c.A.transpose();
  Eigen::LDLT<Matrix> ldlt(middle);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().minCoeff() <= 1e-14 * std::max(1.0, ldlt.vectorD().maxCoeff())) {
    throw SingularInformationError("A I^-1 A' is singular");
  }
  const Vector resid = c.A * theta - c.b;
  const double t = static_cast<double>(n) * resid.dot(ldlt.solve(resid));
  return std::max(t, 0.0);
}

}  // namespace detail

/// True if some level of a binary column of [1 X] (the intercept column
/// standing for the pooled data) has only zero counts. Under that pattern
/// a mean-model coefficient diverges to infinity.
inline bool detect_separation(const Dataset& data, const DesignPair& design) {
  detail::check_rows(data, design);
  std::int64_t total = 0;
  for (auto w : data.counts()) total += w;
  if (total == 0) return true;
  const Matrix& X = design.X();
  for (Eigen::Index c = 0; c < X.cols(); ++c) {
    if (!detail::is_binary(X.col(c))) continue;
    std::int64_t level0 = 0;
    std::int64_t level1 = 0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      (X(i, c) == 1.0 ? level1 : level0) += data.count(static_cast<std::size_t>(i));
    }
    if (level0 == 0 || level1 == 0) return true;
  }
  return false;
}

/// Wald test from a fit alone. The fit's boundary flag or a singular
/// information matrix yields the degenerate result (statistic 0, p = 1).
inline TestResult wald_test(const FitResult& fit, const ConstraintSpec& constraint, std::size_t n) {
  if (fit.restricted) throw std::invalid_argument("wald_test: needs an unrestricted fit");
  constraint.validate(fit.theta_hat.dim());
  const int r = constraint.rows();
  if (fit.boundary_flag) return detail::degenerate_result(TestMethod::wald, r);
  TestResult res;
  res.method = TestMethod::wald;
  res.df = r;
  try {
    res.statistic = detail::wald_statistic(fit.theta_hat.values(), fit.observed_info, constraint, n);
  } catch (const SingularInformationError&) {
    return detail::degenerate_result(TestMethod::wald, r);
  }
  res.p_value = chi2_sf(res.statistic, r);
  return res;
}

/// Wald test that also checks the data for separation.
inline TestResult wald_test(const Dataset& data, const DesignPair& design, const FitResult& fit,
                            const ConstraintSpec& constraint) {
  if (fit.data_fingerprint != fingerprint(data, design)) {
    throw std::invalid_argument("wald_test: fit does not belong to this dataset");
  }
  if (detect_separation(data, design)) return detail::degenerate_result(TestMethod::wald, constraint.rows());
  return wald_test(fit, constraint, data.size());
}

/// T = 2 (loglik(full) - loglik(null)). Values in (-1e-8, 0) are solver
/// noise and become 0; anything more negative means the full fit failed.
inline TestResult lr_test(const FitResult& fit_full, const FitResult& fit_null, int r) {
  if (fit_full.data_fingerprint != fit_null.data_fingerprint) {
    throw std::invalid_argument("lr_test: fits were computed on different data");
  }
  if (fit_full.restricted || !fit_null.restricted) {
    throw std::invalid_argument("lr_test: expects (unrestricted, restricted) fits");
  }
  if (r < 1) throw std::invalid_argument("lr_test: degrees of freedom must be positive");
  double t = 2.0 * (fit_full.loglik - fit_null.loglik);
  if (t < 0.0) {
    if (t <= -kLrtNoiseFloor) {
      throw std::runtime_error("lr_test: restricted fit exceeds the unrestricted fit (convergence failure)");
    }
    t = 0.0;
  }
  TestResult res;
  res.method = TestMethod::lrt;
  res.df = r;
  res.statistic = t;
  res.p_value = chi2_sf(t, r);
  return res;
}

/// Whether the constraint involves any overdispersion coefficient.
inline bool touches_dispersion(const ConstraintSpec& c, const DesignPair& design) {
  const int first = design.k() + 1;
  return c.A.rightCols(design.dim() - first).cwiseAbs().maxCoeff() > 0.0;
}

/// LRT with the zero-group convention: when the data are separated, a
/// hypothesis about the overdispersion coefficients is uninformative and
/// is reported as statistic 0, p-value 1, degenerate.
inline TestResult lr_test(const Dataset& data, const DesignPair& design, const FitResult& fit_full,
                          const FitResult& fit_null, const ConstraintSpec& constraint) {
  if (fit_full.data_fingerprint != fingerprint(data, design)) {
    throw std::invalid_argument("lr_test: fit does not belong to this dataset");
  }
  if (detect_separation(data, design) && touches_dispersion(constraint, design)) {
    return detail::degenerate_result(TestMethod::lrt, constraint.rows());
  }
  return lr_test(fit_full, fit_null, constraint.rows());
}

}  // namespace bbreg
