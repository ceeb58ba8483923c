#pragma once

// Trust-region Newton maximization of the beta-binomial log-likelihood,
// unrestricted and subject to linear equality constraints A theta = b.
//
// Each iteration minimizes the quadratic model of the negative
// log-likelihood inside a ball, solving the subproblem exactly through an
// eigendecomposition of the Hessian (More-Sorensen, including the hard
// case). The log-likelihood is not concave, so indefinite Hessians are
// routine.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bbreg/model.hpp"

namespace bbreg {

struct TrustConfig {
  double initial_radius = 1.0;
  double max_radius = 100.0;
  double accept_threshold = 0.1;
  double expand_threshold = 0.75;
  double shrink_factor = 0.25;
  double expand_factor = 2.0;
  double grad_tol = 1e-8;
  double step_tol = 1e-12;
  int max_iter = 300;
  int n_starts = 3;
  /// A stationary point with some unclamped |eta| beyond this is treated as
  /// a divergent estimate; iteration continues toward the clamp.
  double divergence_threshold = 20.0;

  void validate() const {
    auto fail = [](const char* what) { throw std::invalid_argument(std::string("TrustConfig: ") + what); };
    if (!(initial_radius > 0.0)) fail("initial_radius must be positive");
    if (!(max_radius >= initial_radius)) fail("max_radius must be >= initial_radius");
    if (!(accept_threshold > 0.0 && accept_threshold < 1.0)) fail("accept_threshold must lie in (0,1)");
    if (!(expand_threshold > 0.0 && expand_threshold < 1.0)) fail("expand_threshold must lie in (0,1)");
    if (!(accept_threshold < expand_threshold)) fail("accept_threshold must be < expand_threshold");
    if (!(shrink_factor > 0.0 && shrink_factor < 1.0)) fail("shrink_factor must lie in (0,1)");
    if (!(expand_factor > 1.0)) fail("expand_factor must be > 1");
    if (!(grad_tol > 0.0) || !(step_tol > 0.0)) fail("tolerances must be positive");
    if (max_iter < 1) fail("max_iter must be positive");
    if (n_starts < 1) fail("n_starts must be positive");
    if (!(divergence_threshold > 0.0 && divergence_threshold <= kPredictorClamp)) {
      fail("divergence_threshold must lie in (0, clamp]");
    }
  }
};

/// Linear hypothesis A theta = b.
struct ConstraintSpec {
  Matrix A;
  Vector b;

  [[nodiscard]] int rows() const { return static_cast<int>(A.rows()); }

  /// Constraint fixing the listed coordinates of theta to zero.
  static ConstraintSpec select(int dim, const std::vector<int>& coords) {
    ConstraintSpec c{Matrix::Zero(static_cast<Eigen::Index>(coords.size()), dim),
                     Vector::Zero(static_cast<Eigen::Index>(coords.size()))};
    for (std::size_t r = 0; r < coords.size(); ++r) {
      if (coords[r] < 0 || coords[r] >= dim) throw std::out_of_range("ConstraintSpec::select: bad coordinate");
      c.A(static_cast<Eigen::Index>(r), coords[r]) = 1.0;
    }
    return c;
  }

  void validate(int dim) const {
    if (A.cols() != dim) throw std::invalid_argument("ConstraintSpec: A has the wrong number of columns");
    if (A.rows() < 1 || A.rows() >= dim) throw std::invalid_argument("ConstraintSpec: need 1 <= r < dim");
    if (b.size() != A.rows()) throw std::invalid_argument("ConstraintSpec: b has the wrong length");
    if (!A.allFinite() || !b.allFinite()) throw std::invalid_argument("ConstraintSpec: non-finite entries");
  }
};

struct FitResult {
  Theta theta_hat;
  double loglik = -std::numeric_limits<double>::infinity();
  /// -H(theta_hat) / n; empty for restricted fits.
  Matrix observed_info;
  bool converged = false;
  int iterations = 0;
  int n_starts_used = 0;
  bool boundary_flag = false;
  std::vector<double> start_logliks;
  double gradient_norm = std::numeric_limits<double>::infinity();
  bool restricted = false;
  std::uint64_t data_fingerprint = 0;
};

// ---------------------------------------------------------------------------
// Generic trust-region core
// ---------------------------------------------------------------------------

struct SubproblemStep {
  Vector step;
  double predicted_gain = 0.0;  // model increase of the objective
  bool on_boundary = false;
};

/// Minimize g's + s'Bs/2 subject to |s| <= radius. B is symmetric.
inline SubproblemStep solve_trust_subproblem(const Vector& g, const Matrix& B, double radius) {
  const Eigen::Index p = g.size();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(B);
  const Vector& lam = eig.eigenvalues();  // ascending
  const Matrix& Q = eig.eigenvectors();
  const Vector gt = Q.transpose() * g;
  const double lam_min = lam[0];
  const double scale = std::max(1.0, lam.cwiseAbs().maxCoeff());
  const double gnorm = g.norm();

  auto step_norm_sq = [&](double shift) {
    double s2 = 0.0;
    for (Eigen::Index i = 0; i < p; ++i) {
      const double den = lam[i] + shift;
      s2 += gt[i] * gt[i] / (den * den);
    }
    return s2;
  };
  auto make_step = [&](double shift) {
    Vector coef(p);
    for (Eigen::Index i = 0; i < p; ++i) coef[i] = -gt[i] / (lam[i] + shift);
    return Vector(Q * coef);
  };
  auto finish = [&](Vector s, bool boundary) {
    SubproblemStep out;
    out.predicted_gain = -(g.dot(s) + 0.5 * s.dot(B * s));
    out.step = std::move(s);
    out.on_boundary = boundary;
    return out;
  };

  const double degenerate_tol = 1e-12 * scale;
  if (lam_min > degenerate_tol) {
    if (step_norm_sq(0.0) <= radius * radius) return finish(make_step(0.0), false);
  }

  const double lo = std::max(0.0, -lam_min);
  // Hard case: g has (numerically) no component along the lowest eigenspace.
  bool hard = true;
  for (Eigen::Index i = 0; i < p; ++i) {
    if (lam[i] - lam_min <= degenerate_tol && std::abs(gt[i]) > 1e-10 * std::max(gnorm, 1e-300)) {
      hard = false;
      break;
    }
  }
  if (gnorm == 0.0) hard = true;
  if (hard && lam_min <= degenerate_tol) {
    Vector coef = Vector::Zero(p);
    for (Eigen::Index i = 0; i < p; ++i) {
      if (lam[i] - lam_min > degenerate_tol) coef[i] = -gt[i] / (lam[i] + lo);
    }
    const double partial = coef.squaredNorm();
    if (partial <= radius * radius) {
      coef[0] += std::sqrt(radius * radius - partial);
      return finish(Vector(Q * coef), true);
    }
  }

  // Root of 1/|s(shift)| = 1/radius; the left side increases with shift.
  double a = lo;
  double b = lo + gnorm / radius + scale;
  while (step_norm_sq(b) > radius * radius) b *= 2.0;
  double shift = b;
  for (int it = 0; it < 200; ++it) {
    const double s2 = step_norm_sq(shift);
    const double snorm = std::sqrt(s2);
    if (std::abs(snorm - radius) <= 1e-12 * radius) break;
    const double psi = 1.0 / snorm - 1.0 / radius;
    if (psi < 0.0) {
      a = shift;
    } else {
      b = shift;
    }
    double d3 = 0.0;
    for (Eigen::Index i = 0; i < p; ++i) {
      const double den = lam[i] + shift;
      d3 += gt[i] * gt[i] / (den * den * den);
    }
    double next = shift - psi * s2 * snorm / d3;
    if (!(next > a && next < b)) next = 0.5 * (a + b);
    shift = next;
    if (b - a <= 1e-15 * std::max(1.0, b)) break;
  }
  if (shift <= lo) shift = std::nextafter(lo, std::numeric_limits<double>::infinity());
  return finish(make_step(shift), true);
}

namespace detail {

inline double rounding_noise(const Evaluation& ev) {
  return 64.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(ev.loglik) + ev.rounding_scale);
}

}  // namespace detail

struct TrustOutcome {
  Vector x;
  Evaluation eval;
  int iterations = 0;
  bool converged = false;
  bool boundary = false;
};

/// Maximize an objective with analytic gradient and Hessian. The callable
/// receives (x, Order) and returns an Evaluation whose loglik field is the
/// objective value; it may throw on infeasible points, which are rejected.
template <class Objective, class Observer>
TrustOutcome trust_region_maximize(Objective&& objective, Vector x, const TrustConfig& config,
                                   Observer&& on_accept) {
  config.validate();
  TrustOutcome out;
  out.eval = objective(x, Order::hessian);
  out.boundary = out.eval.clamped;
  on_accept(x, out.eval.loglik);
  double radius = config.initial_radius;

  auto stationary = [&](const Evaluation& ev) {
    return ev.gradient.norm() < config.grad_tol && ev.max_abs_predictor <= config.divergence_threshold;
  };

  for (int iter = 0; iter < config.max_iter; ++iter) {
    if (stationary(out.eval)) {
      out.converged = true;
      break;
    }
    ++out.iterations;
    // Minimize the negative objective.
    const Vector g = -out.eval.gradient;
    const Matrix B = -out.eval.hessian;
    auto sub = solve_trust_subproblem(g, B, radius);
    const double step_norm = sub.step.norm();
    if (step_norm < config.step_tol || !(sub.predicted_gain > 0.0)) break;

    const Vector trial = x + sub.step;
    double trial_value = -std::numeric_limits<double>::infinity();
    try {
      trial_value = objective(trial, Order::value).loglik;
    } catch (const std::exception&) {
      // outside the domain: reject
    }
    const double actual_gain = trial_value - out.eval.loglik;
    const double rho = actual_gain / sub.predicted_gain;
    // Below this the change in objective is lost in rounding and rho says
    // nothing; fall back to requiring a smaller gradient.
    const double noise = detail::rounding_noise(out.eval);
    bool accept = std::isfinite(trial_value) && rho >= config.accept_threshold && actual_gain >= 0.0;
    std::optional<Evaluation> trial_eval;
    if (!accept && std::isfinite(trial_value) && sub.predicted_gain < noise && actual_gain > -noise) {
      trial_eval = objective(trial, Order::hessian);
      accept = trial_eval->gradient.norm() < out.eval.gradient.norm();
    }

    if (accept) {
      x = trial;
      out.eval = trial_eval ? std::move(*trial_eval) : objective(x, Order::hessian);
      out.boundary = out.boundary || out.eval.clamped;
      on_accept(x, out.eval.loglik);
      if (rho > config.expand_threshold && sub.on_boundary) {
        radius = std::min(config.expand_factor * radius, config.max_radius);
      }
    } else {
      radius = config.shrink_factor * std::min(radius, step_norm);
      if (radius < config.step_tol) break;
    }
  }
  if (!out.converged && stationary(out.eval)) out.converged = true;
  out.x = std::move(x);
  return out;
}

template <class Objective>
TrustOutcome trust_region_maximize(Objective&& objective, Vector x, const TrustConfig& config) {
  return trust_region_maximize(std::forward<Objective>(objective), std::move(x), config,
                               [](const Vector&, double) {});
}

// ---------------------------------------------------------------------------
// Beta-binomial fits
// ---------------------------------------------------------------------------

/// Hash of the data and design, used to check that two fits describe the same data.
inline std::uint64_t fingerprint(const Dataset& data, const DesignPair& design) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int byte = 0; byte < 8; ++byte) {
      h ^= (v >> (8 * byte)) & 0xffU;
      h *= 1099511628211ULL;
    }
  };
  for (std::size_t i = 0; i < data.size(); ++i) {
    mix(static_cast<std::uint64_t>(data.count(i)));
    mix(static_cast<std::uint64_t>(data.depth(i)));
  }
  auto mix_matrix = [&](const Matrix& m) {
    mix(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        std::uint64_t bits;
        const double v = m(r, c);
        std::memcpy(&bits, &v, sizeof bits);
        mix(bits);
      }
    }
  };
  mix_matrix(design.X());
  mix_matrix(design.Xstar());
  return h;
}

/// Deterministic start points: a pooled-proportion anchor, then the anchor
/// with both intercepts shifted by +-0.5, +-1.0, ...
inline std::vector<Theta> default_starts(const Dataset& data, const DesignPair& design, int n_starts) {
  double w = 0.0;
  double m = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    w += static_cast<double>(data.count(i));
    m += static_cast<double>(data.depth(i));
  }
  const double pooled = std::clamp(w / m, 1e-10, 1.0 - 1e-10);
  Theta anchor = Theta::zeros(design.k(), design.kstar());
  anchor[Theta::index_beta0()] = link(pooled);
  anchor[anchor.index_beta0star()] = link(0.05);
  std::vector<Theta> starts{anchor};
  for (int j = 2; j <= n_starts; ++j) {
    const double magnitude = 0.5 * (j / 2);
    const double offset = (j % 2 == 0) ? magnitude : -magnitude;
    Theta t = anchor;
    t[Theta::index_beta0()] += offset;
    t[t.index_beta0star()] += offset;
    starts.push_back(t);
  }
  return starts;
}

using IterateObserver = std::function<void(const Theta&, double)>;

namespace detail {

// Runs every start through the same reparameterized problem and keeps the best.
template <class ToTheta, class Objective>
FitResult multi_start(const std::vector<Vector>& starts, ToTheta&& to_theta, Objective&& objective,
                      const TrustConfig& config, const IterateObserver& observer) {
  FitResult best;
  std::vector<double> logliks;
  bool have_best = false;
  for (const auto& z0 : starts) {
    auto outcome = trust_region_maximize(objective, z0, config, [&](const Vector& z, double value) {
      if (observer) observer(to_theta(z), value);
    });
    logliks.push_back(outcome.eval.loglik);
    // Log-likelihoods within rounding noise count as tied; then prefer
    // converged runs and smaller gradients.
    const double noise = rounding_noise(outcome.eval);
    const double gnorm = outcome.eval.gradient.norm();
    bool better = !have_best || outcome.eval.loglik > best.loglik + noise;
    if (have_best && !better && outcome.eval.loglik >= best.loglik - noise) {
      better = outcome.converged != best.converged ? outcome.converged : gnorm < best.gradient_norm;
    }
    if (better) {
      have_best = true;
      best.theta_hat = to_theta(outcome.x);
      best.loglik = outcome.eval.loglik;
      best.converged = outcome.converged;
      best.iterations = outcome.iterations;
      best.boundary_flag = outcome.boundary;
      best.gradient_norm = gnorm;
    }
  }
  best.start_logliks = std::move(logliks);
  best.n_starts_used = static_cast<int>(starts.size());
  return best;
}

}  // namespace detail

/// Unrestricted maximum-likelihood fit. Additional start points, if given,
/// are tried after the default ones.
inline FitResult fit(const Dataset& data, const DesignPair& design, const TrustConfig& config = {},
                     const std::vector<Theta>& extra_starts = {}, const IterateObserver& observer = {}) {
  detail::check_rows(data, design);
  config.validate();
  const int k = design.k();
  const int ks = design.kstar();
  std::vector<Vector> starts;
  for (const auto& t : default_starts(data, design, config.n_starts)) starts.push_back(t.values());
  for (const auto& t : extra_starts) {
    detail::check_dims(t, design);
    starts.push_back(t.values());
  }
  auto to_theta = [&](const Vector& x) { return Theta(x, k, ks); };
  auto objective = [&](const Vector& x, Order order) { return evaluate(Theta(x, k, ks), data, design, order); };
  FitResult res = detail::multi_start(starts, to_theta, objective, config, observer);
  const auto ev = evaluate(res.theta_hat, data, design, Order::hessian);
  res.observed_info = -ev.hessian / static_cast<double>(data.size());
  res.data_fingerprint = fingerprint(data, design);
  return res;
}

/// Affine parameterization theta = particular + basis * z of {A theta = b}.
struct NullSpaceMap {
  Vector particular;
  Matrix basis;  // orthonormal columns spanning ker(A)

  explicit NullSpaceMap(const ConstraintSpec& c) {
    Eigen::JacobiSVD<Matrix> svd(c.A, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vector& sv = svd.singularValues();
    const Eigen::Index r = c.A.rows();
    const Eigen::Index p = c.A.cols();
    if (sv.size() < r || sv[r - 1] <= 1e-12 * std::max(1.0, sv[0])) {
      throw std::invalid_argument("ConstraintSpec: A is rank deficient");
    }
    const Matrix& V = svd.matrixV();
    const Matrix& U = svd.matrixU();
    particular = V.leftCols(r) * (sv.head(r).cwiseInverse().asDiagonal() * (U.transpose() * c.b));
    basis = V.rightCols(p - r);
  }

  [[nodiscard]] Vector to_full(const Vector& z) const { return particular + basis * z; }
  [[nodiscard]] Vector to_reduced(const Vector& theta) const { return basis.transpose() * (theta - particular); }
};

/// Maximum-likelihood fit restricted to A theta = b.
inline FitResult fit_restricted(const Dataset& data, const DesignPair& design, const ConstraintSpec& constraint,
                                const TrustConfig& config = {}, const std::vector<Theta>& extra_starts = {},
                                const IterateObserver& observer = {}) {
  detail::check_rows(data, design);
  config.validate();
  constraint.validate(design.dim());
  const NullSpaceMap map(constraint);
  const int k = design.k();
  const int ks = design.kstar();

  std::vector<Vector> starts;
  for (const auto& t : default_starts(data, design, config.n_starts)) starts.push_back(map.to_reduced(t.values()));
  for (const auto& t : extra_starts) {
    detail::check_dims(t, design);
    starts.push_back(map.to_reduced(t.values()));
  }
  auto to_theta = [&](const Vector& z) { return Theta(map.to_full(z), k, ks); };
  auto objective = [&](const Vector& z, Order order) {
    Evaluation ev = evaluate(Theta(map.to_full(z), k, ks), data, design, order);
    if (order != Order::value) ev.gradient = map.basis.transpose() * ev.gradient;
    if (order == Order::hessian) ev.hessian = map.basis.transpose() * ev.hessian * map.basis;
    return ev;
  };
  FitResult res = detail::multi_start(starts, to_theta, objective, config, observer);
  res.restricted = true;
  res.data_fingerprint = fingerprint(data, design);
  return res;
}

}  // namespace bbreg
