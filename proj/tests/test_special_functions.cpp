#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <gtest/gtest.h>

#include "bbreg/special_functions.hpp"

using namespace bbreg;

namespace {

// max(abs_tol, rel_tol * |expected|)
void expect_close(double got, double expected, double abs_tol, double rel_tol) {
  EXPECT_NEAR(got, expected, std::max(abs_tol, rel_tol * std::abs(expected))) << "expected " << expected;
}

std::vector<double> log_grid(double lo, double hi, int count) {
  std::vector<double> xs;
  for (int i = 0; i < count; ++i) xs.push_back(lo * std::pow(hi / lo, static_cast<double>(i) / (count - 1)));
  return xs;
}

// Eighth-order central difference, then one Richardson step.
template <class F>
double derivative(F f, double x, double h) {
  auto d = [&](double s) {
    return (672.0 * (f(x + s) - f(x - s)) - 168.0 * (f(x + 2 * s) - f(x - 2 * s)) +
            32.0 * (f(x + 3 * s) - f(x - 3 * s)) - 3.0 * (f(x + 4 * s) - f(x - 4 * s))) /
           (840.0 * s);
  };
  const double coarse = d(2 * h);
  const double fine = d(h);
  return fine + (fine - coarse) / 255.0;
}

}  // namespace

TEST(LogGamma, Examples) {
  EXPECT_EQ(log_gamma(1.0), 0.0);
  expect_close(log_gamma(5.0), std::log(24.0), 1e-15, 1e-14);
  expect_close(log_gamma(0.5), 0.5 * std::log(std::numbers::pi), 1e-15, 1e-14);
}

TEST(LogGamma, FactorialsAndHalfIntegers) {
  long double log_fact = 0.0L;  // log((n-1)!)
  for (int n = 1; n <= 170; ++n) {
    if (n > 1) log_fact += std::log(static_cast<long double>(n - 1));
    expect_close(log_gamma(n), static_cast<double>(log_fact), 1e-15, 1e-13);
  }
  // Gamma(n + 1/2) = (2n)! sqrt(pi) / (4^n n!)
  long double lg = 0.5L * std::log(std::numbers::pi_v<long double>);
  for (int n = 0; n <= 100; ++n) {
    if (n > 0) lg += std::log(static_cast<long double>(n) - 0.5L);
    expect_close(log_gamma(n + 0.5), static_cast<double>(lg), 1e-15, 1e-13);
  }
}

TEST(LogGamma, MatchesReferenceAcrossRange) {
  for (double x : log_grid(1e-6, 1e8, 400)) {
    expect_close(log_gamma(x), boost::math::lgamma(x), 1e-14, 1e-12);
  }
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.3, 3.0);
  for (int i = 0; i < 2000; ++i) {
    const double x = u(rng);
    expect_close(log_gamma(x), boost::math::lgamma(x), 1e-15, 1e-12);
  }
}

TEST(LogGamma, DomainErrors) {
  EXPECT_THROW(log_gamma(0.0), std::domain_error);
  EXPECT_THROW(log_gamma(-1.5), std::domain_error);
  EXPECT_THROW(log_gamma(std::numeric_limits<double>::quiet_NaN()), std::domain_error);
}

TEST(LogBeta, Examples) {
  EXPECT_NEAR(log_beta(1.0, 1.0), 0.0, 1e-15);
  EXPECT_NEAR(log_beta(2.0, 3.0), std::log(1.0 / 12.0), 1e-14);
  EXPECT_NEAR(log_beta(0.5, 0.5), std::log(std::numbers::pi), 1e-14);
  EXPECT_THROW(log_beta(0.0, 1.0), std::domain_error);
  EXPECT_THROW(log_beta(1.0, -2.0), std::domain_error);
}

TEST(LogBeta, MatchesBetaIntegral) {
  boost::math::quadrature::tanh_sinh<double> integrator;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.1, 10.0);
  for (int i = 0; i < 60; ++i) {
    const double x = u(rng);
    const double y = u(rng);
    // tanh-sinh passes the distance to the nearer endpoint, so 1 - t is exact near t = 1
    auto f = [&](double t, double tc) {
      const double one_minus_t = t < 0.5 ? 1.0 - t : tc;
      return std::pow(t, x - 1.0) * std::pow(one_minus_t, y - 1.0);
    };
    const double b = integrator.integrate(f, 0.0, 1.0);
    EXPECT_NEAR(std::exp(log_beta(x, y)), b, 1e-8 * std::max(1.0, b)) << "x=" << x << " y=" << y;
  }
}

TEST(Digamma, Examples) {
  const double fd1 = derivative([](double t) { return log_gamma(t); }, 1.0, 1e-3);
  EXPECT_NEAR(digamma(1.0), fd1, 1e-10);
  EXPECT_NEAR(digamma(1.0), -0.57721566490153286061, 1e-14);
  EXPECT_NEAR(digamma(2.0), digamma(1.0) + 1.0, 1e-14);
  const double fd = derivative([](double t) { return log_gamma(t); }, 10.5, 1e-3);
  EXPECT_NEAR(digamma(10.5), fd, 1e-10);
}

TEST(Digamma, RecurrenceProperty) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> lx(std::log(1e-3), std::log(1e6));
  for (int i = 0; i < 5000; ++i) {
    const double x = std::exp(lx(rng));
    EXPECT_NEAR(digamma(x + 1.0) - digamma(x), 1.0 / x, 1e-10 * std::max(1.0, 1.0 / x)) << x;
  }
}

TEST(Digamma, MatchesReferenceAcrossRange) {
  // 1e-10 absolute, relaxed to a few ulps where |psi| is large (x -> 0).
  for (double x : log_grid(1e-6, 1e8, 400)) {
    const double ref = boost::math::digamma(x);
    expect_close(digamma(x), ref, 1e-10, 4e-16);
  }
  EXPECT_THROW(digamma(0.0), std::domain_error);
}

TEST(Trigamma, Examples) {
  // series sum 1/n^2 with Euler-Maclaurin tail
  long double s = 0.0L;
  const int N = 100000;
  for (int n = N - 1; n >= 1; --n) s += 1.0L / (static_cast<long double>(n) * n);
  s += 1.0L / N + 0.5L / (static_cast<long double>(N) * N) + 1.0L / (6.0L * N * N * N);
  EXPECT_NEAR(trigamma(1.0), static_cast<double>(s), 1e-14);
  EXPECT_NEAR(trigamma(1.0), std::numbers::pi * std::numbers::pi / 6.0, 1e-14);
  const double fd = derivative([](double t) { return digamma(t); }, 1.0, 1e-3);
  EXPECT_NEAR(trigamma(1.0), fd, 1e-9);
  EXPECT_NEAR(trigamma(2.0), trigamma(1.0) - 1.0, 1e-14);
  // asymptotic series at 100
  const double x = 100.0;
  const double asym = 1.0 / x + 1.0 / (2 * x * x) + 1.0 / (6 * std::pow(x, 3)) - 1.0 / (30 * std::pow(x, 5)) +
                      1.0 / (42 * std::pow(x, 7)) - 1.0 / (30 * std::pow(x, 9));
  EXPECT_NEAR(trigamma(100.0), asym, 1e-15);
}

TEST(Trigamma, RecurrenceAndRange) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> lx(std::log(1e-2), std::log(1e6));
  for (int i = 0; i < 5000; ++i) {
    const double x = std::exp(lx(rng));
    EXPECT_NEAR(trigamma(x + 1.0) - trigamma(x), -1.0 / (x * x), 1e-9 * std::max(1.0, 1.0 / (x * x))) << x;
  }
  // 1e-9 absolute, relaxed to relative precision where psi1 ~ 1/x^2 is huge.
  for (double x : log_grid(1e-6, 1e8, 400)) {
    expect_close(trigamma(x), boost::math::trigamma(x), 1e-9, 1e-14);
  }
  EXPECT_THROW(trigamma(-3.0), std::domain_error);
}

TEST(LogChoose, Examples) {
  EXPECT_EQ(log_choose(10, 0), 0.0);
  EXPECT_NEAR(log_choose(4, 2), std::log(6.0), 1e-14);
  EXPECT_THROW(log_choose(3, 4), std::domain_error);
  EXPECT_THROW(log_choose(-1, 0), std::domain_error);
}

TEST(LogChoose, PrimeFactorizationOracle) {
  // Legendre: exponent of p in M! is sum_k floor(M / p^k).
  auto exponent = [](std::int64_t m, std::int64_t p) {
    std::int64_t e = 0;
    for (std::int64_t q = p; q <= m; q *= p) e += m / q;
    return e;
  };
  auto exact = [&](std::int64_t M, std::int64_t W) {
    long double s = 0.0L;
    for (std::int64_t p = 2; p <= M; ++p) {
      bool prime = true;
      for (std::int64_t d = 2; d * d <= p; ++d) {
        if (p % d == 0) {
          prime = false;
          break;
        }
      }
      if (!prime) continue;
      const auto e = exponent(M, p) - exponent(W, p) - exponent(M - W, p);
      s += static_cast<long double>(e) * std::log(static_cast<long double>(p));
    }
    return static_cast<double>(s);
  };
  const double ref = exact(2000, 15);
  EXPECT_NEAR(log_choose(2000, 15), ref, 1e-12 * ref);
  for (auto [M, W] : std::vector<std::pair<int, int>>{{50, 25}, {1000, 1}, {5000, 2500}, {30, 7}}) {
    const double r = exact(M, W);
    EXPECT_NEAR(log_choose(M, W), r, 1e-12 * std::max(1.0, r)) << M << "," << W;
  }
}

TEST(Chi2, Examples) {
  EXPECT_EQ(chi2_sf(0.0, 1), 1.0);
  EXPECT_EQ(chi2_sf(0.0, 7), 1.0);
  // P(chi2_1 >= t) = 2 (1 - Phi(sqrt t)) = 2 * integral_{sqrt t}^inf of the normal density
  const double t = 3.841459;
  auto phi = [](double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); };
  const double lower = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(phi, 0.0, std::sqrt(t), 15, 1e-15);
  const double ref = 2.0 * (0.5 - lower);
  EXPECT_NEAR(chi2_sf(t, 1), ref, 1e-10);
  EXPECT_NEAR(chi2_sf(t, 1), 0.05, 1e-6);
  EXPECT_NEAR(chi2_sf(5.991465, 2), std::exp(-5.991465 / 2.0), 1e-12);
  EXPECT_THROW(chi2_sf(-1.0, 1), std::domain_error);
  EXPECT_THROW(chi2_sf(1.0, 0), std::domain_error);
}

TEST(Chi2, TwoDfIsExponentialAndMonotone) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 80.0);
  for (int i = 0; i < 1000; ++i) {
    const double t = u(rng);
    EXPECT_NEAR(chi2_sf(t, 2), std::exp(-t / 2.0), 1e-12);
  }
  for (int r = 1; r <= 12; ++r) {
    double prev = 1.0;
    for (double t = 0.0; t < 60.0; t += 0.25) {
      const double p = chi2_sf(t, r);
      EXPECT_LE(p, prev);
      EXPECT_GE(p, 0.0);
      prev = p;
      EXPECT_NEAR(p, boost::math::gamma_q(0.5 * r, 0.5 * t), 1e-10);
    }
  }
}

TEST(Differences, MatchHighPrecisionReference) {
  using mp = boost::multiprecision::cpp_bin_float_50;
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> lx(std::log(1e-4), std::log(1e12));
  std::uniform_int_distribution<std::int64_t> ud(0, 60000);
  for (int i = 0; i < 400; ++i) {
    const double x = std::exp(lx(rng));
    const std::int64_t d = i % 5 == 0 ? i / 5 : ud(rng);
    const mp X(x);
    const mp Y = X + d;
    const auto lg = static_cast<double>(boost::math::lgamma(Y) - boost::math::lgamma(X));
    const auto dg = static_cast<double>(boost::math::digamma(Y) - boost::math::digamma(X));
    const auto tg = static_cast<double>(boost::math::trigamma(X) - boost::math::trigamma(Y));
    EXPECT_NEAR(log_gamma_ratio(x, d), lg, 1e-12 * std::max(1.0, std::abs(lg))) << x << " " << d;
    EXPECT_NEAR(digamma_diff(x, d), dg, 1e-12 * std::abs(dg) + 1e-300) << x << " " << d;
    EXPECT_NEAR(trigamma_diff(x, d), tg, 1e-12 * std::abs(tg) + 1e-300) << x << " " << d;
  }
}
