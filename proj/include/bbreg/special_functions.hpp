#pragma once

// Scalar special functions used by the beta-binomial likelihood and its
// derivatives: log-gamma, digamma, trigamma, log-beta, log binomial
// coefficients and the chi-squared survival function.
//
// The *_diff / *_ratio helpers evaluate differences such as
// psi(x + d) - psi(x) without catastrophic cancellation when x is large,
// which is the regime reached when the overdispersion is small
// (1/gamma reaches 1e13 at the predictor clamp).

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace bbreg {

namespace detail {

inline void require_positive(double x, const char* fn) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw std::domain_error(std::string(fn) + ": argument must be finite and positive, got " +
                            std::to_string(x));
  }
}

// Arguments at or above this use asymptotic expansions.
inline constexpr double kAsymptoticThreshold = 10.0;
// Integer shifts up to this length are summed term by term.
inline constexpr std::int64_t kDirectSumLimit = 16;

// zeta(k) - 1 for k = 2..kZetaTerms+1, via a partial sum plus an
// Euler-Maclaurin tail.
inline constexpr int kZetaTerms = 40;

inline const std::array<double, kZetaTerms>& zeta_minus_one_table() {
  static const std::array<double, kZetaTerms> table = [] {
    std::array<double, kZetaTerms> t{};
    constexpr int N = 64;
    for (int idx = 0; idx < kZetaTerms; ++idx) {
      const double k = idx + 2.0;
      long double sum = 0.0L;
      for (int n = N - 1; n >= 2; --n) sum += std::pow(static_cast<long double>(n), -k);
      const long double Nl = N;
      // tail sum_{n>=N} n^-k
      long double tail = std::pow(Nl, 1.0L - k) / (k - 1.0L) + 0.5L * std::pow(Nl, -k) +
                         k / 12.0L * std::pow(Nl, -k - 1.0L) -
                         k * (k + 1.0L) * (k + 2.0L) / 720.0L * std::pow(Nl, -k - 3.0L) +
                         k * (k + 1.0L) * (k + 2.0L) * (k + 3.0L) * (k + 4.0L) / 30240.0L *
                             std::pow(Nl, -k - 5.0L);
      t[static_cast<std::size_t>(idx)] = static_cast<double>(sum + tail);
    }
    return t;
  }();
  return table;
}

// log Gamma(2 + eps) for |eps| <= 0.5 by its Taylor series about 2.
inline double log_gamma_two_plus(double eps) {
  constexpr double euler_gamma = 0.57721566490153286061;
  const auto& z = zeta_minus_one_table();
  double term = eps;  // eps^k, starting at k = 1
  double sum = 0.0;
  for (int idx = 0; idx < kZetaTerms; ++idx) {
    term *= eps;  // eps^(idx+2)
    const double k = idx + 2.0;
    const double contrib = ((idx % 2 == 0) ? 1.0 : -1.0) * z[static_cast<std::size_t>(idx)] * term / k;
    sum += contrib;
    if (std::abs(contrib) < 1e-18 * std::abs(sum) + 1e-300) break;
  }
  return (1.0 - euler_gamma) * eps + sum;
}

// Stirling correction: log Gamma(x) - [(x - 1/2) log x - x + log(2 pi)/2].
inline double stirling_correction(double x) {
  const double r = 1.0 / x;
  const double r2 = r * r;
  return r * (1.0 / 12.0 +
              r2 * (-1.0 / 360.0 +
                    r2 * (1.0 / 1260.0 +
                          r2 * (-1.0 / 1680.0 +
                                r2 * (1.0 / 1188.0 + r2 * (-691.0 / 360360.0 + r2 * (1.0 / 156.0)))))));
}

// digamma(x) - [log x - 1/(2x)] for large x.
inline double digamma_tail(double x) {
  const double r2 = 1.0 / (x * x);
  return -r2 * (1.0 / 12.0 -
                r2 * (1.0 / 120.0 -
                      r2 * (1.0 / 252.0 -
                            r2 * (1.0 / 240.0 -
                                  r2 * (1.0 / 132.0 - r2 * (691.0 / 32760.0 - r2 * (1.0 / 12.0)))))));
}

// trigamma(x) - [1/x + 1/(2x^2)] for large x.
inline double trigamma_tail(double x) {
  const double r = 1.0 / x;
  const double r2 = r * r;
  return r * r2 *
         (1.0 / 6.0 -
          r2 * (1.0 / 30.0 -
                r2 * (1.0 / 42.0 -
                      r2 * (1.0 / 30.0 - r2 * (5.0 / 66.0 - r2 * (691.0 / 2730.0 - r2 * (7.0 / 6.0)))))));
}

}  // namespace detail

/// Natural log of the gamma function for x > 0.
inline double log_gamma(double x) {
  detail::require_positive(x, "log_gamma");
  if (x >= detail::kAsymptoticThreshold) {
    constexpr double half_log_two_pi = 0.91893853320467274178;
    return (x - 0.5) * std::log(x) - x + half_log_two_pi + detail::stirling_correction(x);
  }
  if (x < 0.5) return log_gamma(x + 1.0) - std::log(x);
  if (x < 1.5) return detail::log_gamma_two_plus(x - 1.0) - std::log1p(x - 1.0);
  if (x < 2.5) return detail::log_gamma_two_plus(x - 2.0);
  // Shift down into [1.5, 2.5): Gamma(x) = Gamma(x - m) * prod_{j=1..m} (x - j).
  double y = x;
  double prod = 1.0;
  while (y >= 2.5) {
    y -= 1.0;
    prod *= y;
  }
  return detail::log_gamma_two_plus(y - 2.0) + std::log(prod);
}

/// ln B(x, y).
inline double log_beta(double x, double y) {
  detail::require_positive(x, "log_beta");
  detail::require_positive(y, "log_beta");
  return log_gamma(x) + log_gamma(y) - log_gamma(x + y);
}

inline double digamma(double x) {
  detail::require_positive(x, "digamma");
  double shift = 0.0;
  while (x < detail::kAsymptoticThreshold) {
    shift -= 1.0 / x;
    x += 1.0;
  }
  return shift + std::log(x) - 0.5 / x + detail::digamma_tail(x);
}

inline double trigamma(double x) {
  detail::require_positive(x, "trigamma");
  double shift = 0.0;
  while (x < detail::kAsymptoticThreshold) {
    shift += 1.0 / (x * x);
    x += 1.0;
  }
  return shift + 1.0 / x + 0.5 / (x * x) + detail::trigamma_tail(x);
}

/// ln C(M, W).
inline double log_choose(std::int64_t M, std::int64_t W) {
  if (M < 0 || W < 0 || W > M) {
    throw std::domain_error("log_choose: need 0 <= W <= M, got M=" + std::to_string(M) +
                            ", W=" + std::to_string(W));
  }
  if (W == 0 || W == M) return 0.0;
  const auto m = static_cast<double>(M);
  const auto w = static_cast<double>(W);
  return log_gamma(m + 1.0) - log_gamma(w + 1.0) - log_gamma(m - w + 1.0);
}

/// log Gamma(x + d) - log Gamma(x) for x > 0 and integer d >= 0.
inline double log_gamma_ratio(double x, std::int64_t d) {
  detail::require_positive(x, "log_gamma_ratio");
  if (d < 0) throw std::domain_error("log_gamma_ratio: negative shift");
  if (d == 0) return 0.0;
  const auto dd = static_cast<double>(d);
  if (x >= detail::kAsymptoticThreshold) {
    const double y = x + dd;
    return (x - 0.5) * std::log1p(dd / x) + dd * std::log(y) - dd +
           (detail::stirling_correction(y) - detail::stirling_correction(x));
  }
  if (d <= detail::kDirectSumLimit) {
    double prod = 1.0;
    for (std::int64_t j = 0; j < d; ++j) prod *= x + static_cast<double>(j);
    return std::log(prod);
  }
  return log_gamma(x + dd) - log_gamma(x);
}

/// psi(x + d) - psi(x) for x > 0 and integer d >= 0.
inline double digamma_diff(double x, std::int64_t d) {
  detail::require_positive(x, "digamma_diff");
  if (d < 0) throw std::domain_error("digamma_diff: negative shift");
  if (d == 0) return 0.0;
  const auto dd = static_cast<double>(d);
  if (x >= detail::kAsymptoticThreshold) {
    const double y = x + dd;
    return std::log1p(dd / x) + 0.5 * dd / (x * y) + (detail::digamma_tail(y) - detail::digamma_tail(x));
  }
  if (d <= detail::kDirectSumLimit) {
    double sum = 0.0;
    for (std::int64_t j = d - 1; j >= 0; --j) sum += 1.0 / (x + static_cast<double>(j));
    return sum;
  }
  return digamma(x + dd) - digamma(x);
}

/// psi1(x) - psi1(x + d) for x > 0 and integer d >= 0 (nonnegative).
inline double trigamma_diff(double x, std::int64_t d) {
  detail::require_positive(x, "trigamma_diff");
  if (d < 0) throw std::domain_error("trigamma_diff: negative shift");
  if (d == 0) return 0.0;
  const auto dd = static_cast<double>(d);
  if (x >= detail::kAsymptoticThreshold) {
    const double y = x + dd;
    const double xy = x * y;
    return dd / xy + 0.5 * dd * (x + y) / (xy * xy) +
           (detail::trigamma_tail(x) - detail::trigamma_tail(y));
  }
  if (d <= detail::kDirectSumLimit) {
    double sum = 0.0;
    for (std::int64_t j = d - 1; j >= 0; --j) {
      const double v = x + static_cast<double>(j);
      sum += 1.0 / (v * v);
    }
    return sum;
  }
  return trigamma(x) - trigamma(x + dd);
}

/// Regularized upper incomplete gamma Q(a, x).
inline double gamma_q(double a, double x) {
  detail::require_positive(a, "gamma_q");
  if (!(x >= 0.0)) throw std::domain_error("gamma_q: x must be nonnegative");
  if (x == 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  const double log_prefactor = -x + a * std::log(x) - log_gamma(a);
  constexpr double eps = 1e-17;
  constexpr int max_iter = 100000;
  if (x < a + 1.0) {
    // series for P(a, x)
    double ap = a;
    double del = 1.0 / a;
    double sum = del;
    for (int n = 0; n < max_iter; ++n) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::abs(del) < std::abs(sum) * eps) break;
    }
    return 1.0 - sum * std::exp(log_prefactor);
  }
  // modified Lentz continued fraction for Q(a, x)
  constexpr double tiny = std::numeric_limits<double>::min() / eps;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < max_iter; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < eps) break;
  }
  return std::exp(log_prefactor) * h;
}

/// P(chi^2_r >= t).
inline double chi2_sf(double t, int r) {
  if (r < 1) throw std::domain_error("chi2_sf: degrees of freedom must be >= 1");
  if (!(t >= 0.0)) throw std::domain_error("chi2_sf: statistic must be nonnegative");
  return gamma_q(0.5 * r, 0.5 * t);
}

}  // namespace bbreg
