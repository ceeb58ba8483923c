#pragma once

// Beta-binomial regression model: W_i | Z_i ~ Binomial(M_i, Z_i),
// Z_i ~ Beta(a1_i, a2_i), with logit links on the mean mu_i and on the
// within-sample correlation phi_i. Log-likelihood, gradient and Hessian
// are evaluated together in a single pass over the samples.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bbreg/special_functions.hpp"

namespace bbreg {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Linear predictors are clamped to this magnitude before the inverse link.
inline constexpr double kPredictorClamp = 30.0;

/// Observed counts W and sequencing depths M for one taxon.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<std::int64_t> counts, std::vector<std::int64_t> depths)
      : counts_(std::move(counts)), depths_(std::move(depths)) {
    if (counts_.empty()) throw std::invalid_argument("Dataset: need at least one sample");
    if (counts_.size() != depths_.size()) {
      throw std::invalid_argument("Dataset: counts and depths differ in length");
    }
    for (std::size_t i = 0; i < counts_.size(); ++i) {
      if (depths_[i] < 1) {
        throw std::invalid_argument("Dataset: depth must be positive at sample " + std::to_string(i));
      }
      if (counts_[i] < 0 || counts_[i] > depths_[i]) {
        throw std::invalid_argument("Dataset: need 0 <= W <= M at sample " + std::to_string(i));
      }
    }
  }

  [[nodiscard]] std::size_t size() const { return counts_.size(); }
  [[nodiscard]] const std::vector<std::int64_t>& counts() const { return counts_; }
  [[nodiscard]] const std::vector<std::int64_t>& depths() const { return depths_; }
  [[nodiscard]] std::int64_t count(std::size_t i) const { return counts_[i]; }
  [[nodiscard]] std::int64_t depth(std::size_t i) const { return depths_[i]; }

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  std::vector<std::int64_t> counts_;
  std::vector<std::int64_t> depths_;
};

/// Covariates for the mean (X) and overdispersion (X*) submodels. Both
/// intercepts are implicit; X and X* never carry a column of ones.
class DesignPair {
 public:
  DesignPair() = default;
  DesignPair(Matrix X, Matrix Xstar) : X_(std::move(X)), Xstar_(std::move(Xstar)) {
    if (X_.rows() != Xstar_.rows()) {
      throw std::invalid_argument("DesignPair: X and X* have different row counts");
    }
    if (X_.rows() < 1) throw std::invalid_argument("DesignPair: need at least one row");
    if (!X_.allFinite() || !Xstar_.allFinite()) {
      throw std::invalid_argument("DesignPair: covariates must be finite");
    }
    check_rank(X_, "X");
    check_rank(Xstar_, "X*");
  }

  static DesignPair intercept_only(std::size_t n) {
    const auto rows = static_cast<Eigen::Index>(n);
    return {Matrix(rows, 0), Matrix(rows, 0)};
  }

  [[nodiscard]] std::size_t rows() const { return static_cast<std::size_t>(X_.rows()); }
  [[nodiscard]] int k() const { return static_cast<int>(X_.cols()); }
  [[nodiscard]] int kstar() const { return static_cast<int>(Xstar_.cols()); }
  /// Length of the stacked parameter vector, k + k* + 2.
  [[nodiscard]] int dim() const { return k() + kstar() + 2; }
  [[nodiscard]] const Matrix& X() const { return X_; }
  [[nodiscard]] const Matrix& Xstar() const { return Xstar_; }

  /// Design with sample rows selected in the given order. The rank check is
  /// skipped: a subset of an identifiable design need not be identifiable.
  [[nodiscard]] DesignPair subset(const std::vector<std::size_t>& idx) const {
    Matrix X(static_cast<Eigen::Index>(idx.size()), X_.cols());
    Matrix Xs(static_cast<Eigen::Index>(idx.size()), Xstar_.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      X.row(static_cast<Eigen::Index>(r)) = X_.row(static_cast<Eigen::Index>(idx[r]));
      Xs.row(static_cast<Eigen::Index>(r)) = Xstar_.row(static_cast<Eigen::Index>(idx[r]));
    }
    DesignPair out;
    out.X_ = std::move(X);
    out.Xstar_ = std::move(Xs);
    return out;
  }

 private:
  static void check_rank(const Matrix& M, const char* name) {
    Matrix aug(M.rows(), M.cols() + 1);
    aug.col(0).setOnes();
    aug.rightCols(M.cols()) = M;
    if (aug.cols() > aug.rows()) {
      throw std::invalid_argument(std::string("DesignPair: [1 ") + name +
                                  "] has more columns than rows");
    }
    Eigen::ColPivHouseholderQR<Matrix> qr(aug);
    if (qr.rank() < aug.cols()) {
      throw std::invalid_argument(std::string("DesignPair: [1 ") + name +
                                  "] is not of full column rank");
    }
  }

  Matrix X_;
  Matrix Xstar_;
};

/// Stacked coefficients (beta0, beta, beta0*, beta*).
class Theta {
 public:
  Theta() = default;
  Theta(Vector values, int k, int kstar) : values_(std::move(values)), k_(k), kstar_(kstar) {
    if (k < 0 || kstar < 0 || values_.size() != k + kstar + 2) {
      throw std::invalid_argument("Theta: length must equal k + k* + 2");
    }
    if (!values_.allFinite()) throw std::invalid_argument("Theta: entries must be finite");
  }
  Theta(double beta0, const Vector& beta, double beta0star, const Vector& betastar)
      : Theta(stack(beta0, beta, beta0star, betastar), static_cast<int>(beta.size()),
              static_cast<int>(betastar.size())) {}

  static Theta zeros(int k, int kstar) { return {Vector::Zero(k + kstar + 2), k, kstar}; }

  [[nodiscard]] int k() const { return k_; }
  [[nodiscard]] int kstar() const { return kstar_; }
  [[nodiscard]] int dim() const { return k_ + kstar_ + 2; }
  [[nodiscard]] const Vector& values() const { return values_; }

  [[nodiscard]] double beta0() const { return values_[0]; }
  [[nodiscard]] Vector beta() const { return values_.segment(1, k_); }
  [[nodiscard]] double beta0star() const { return values_[k_ + 1]; }
  [[nodiscard]] Vector betastar() const { return values_.segment(k_ + 2, kstar_); }

  // Positions inside the stacked vector.
  [[nodiscard]] static int index_beta0() { return 0; }
  [[nodiscard]] int index_beta(int j) const { return 1 + j; }
  [[nodiscard]] int index_beta0star() const { return k_ + 1; }
  [[nodiscard]] int index_betastar(int j) const { return k_ + 2 + j; }

  double& operator[](Eigen::Index i) { return values_[i]; }
  double operator[](Eigen::Index i) const { return values_[i]; }

 private:
  static Vector stack(double beta0, const Vector& beta, double beta0star, const Vector& betastar) {
    Vector v(beta.size() + betastar.size() + 2);
    v << beta0, beta, beta0star, betastar;
    return v;
  }

  Vector values_;
  int k_ = 0;
  int kstar_ = 0;
};

/// logit(p).
inline double link(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::domain_error("link: probability must lie in (0, 1), got " + std::to_string(p));
  }
  return std::log(p) - std::log1p(-p);
}

/// Logistic function; never evaluates exp of a positive argument.
inline double inv_link(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

struct LinkedParams {
  Vector mu;
  Vector phi;
  Vector gamma;  // phi / (1 - phi)
  Vector a1;
  Vector a2;
  bool clamped = false;  // some linear predictor hit the clamp
};

namespace detail {

inline void check_dims(const Theta& theta, const DesignPair& design) {
  if (theta.k() != design.k() || theta.kstar() != design.kstar()) {
    throw std::invalid_argument("parameter dimensions do not match the design");
  }
}

inline void check_rows(const Dataset& data, const DesignPair& design) {
  if (data.size() != design.rows()) {
    throw std::invalid_argument("dataset and design have different sample counts");
  }
}

struct Predictors {
  Vector eta;
  Vector eta_star;
  std::vector<bool> eta_clamped;
  std::vector<bool> eta_star_clamped;
  bool any_clamped = false;
};

inline Predictors predictors(const Theta& theta, const DesignPair& design) {
  check_dims(theta, design);
  Predictors p;
  const Eigen::Index n = design.X().rows();
  p.eta = Vector::Constant(n, theta.beta0());
  if (design.k() > 0) p.eta += design.X() * theta.beta();
  p.eta_star = Vector::Constant(n, theta.beta0star());
  if (design.kstar() > 0) p.eta_star += design.Xstar() * theta.betastar();
  p.eta_clamped.assign(static_cast<std::size_t>(n), false);
  p.eta_star_clamped.assign(static_cast<std::size_t>(n), false);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(p.eta[i]) > kPredictorClamp) {
      p.eta[i] = std::clamp(p.eta[i], -kPredictorClamp, kPredictorClamp);
      p.eta_clamped[static_cast<std::size_t>(i)] = true;
      p.any_clamped = true;
    }
    if (std::abs(p.eta_star[i]) > kPredictorClamp) {
      p.eta_star[i] = std::clamp(p.eta_star[i], -kPredictorClamp, kPredictorClamp);
      p.eta_star_clamped[static_cast<std::size_t>(i)] = true;
      p.any_clamped = true;
    }
  }
  return p;
}

}  // namespace detail

inline LinkedParams linked_params(const Theta& theta, const DesignPair& design) {
  const auto pred = detail::predictors(theta, design);
  const Eigen::Index n = pred.eta.size();
  LinkedParams lp;
  lp.mu.resize(n);
  lp.phi.resize(n);
  lp.gamma.resize(n);
  lp.a1.resize(n);
  lp.a2.resize(n);
  lp.clamped = pred.any_clamped;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = inv_link(pred.eta[i]);
    const double one_minus_mu = inv_link(-pred.eta[i]);
    const double inv_gamma = std::exp(-pred.eta_star[i]);
    lp.mu[i] = mu;
    lp.phi[i] = inv_link(pred.eta_star[i]);
    lp.gamma[i] = std::exp(pred.eta_star[i]);
    lp.a1[i] = mu * inv_gamma;
    lp.a2[i] = one_minus_mu * inv_gamma;
  }
  return lp;
}

/// How much of the (value, gradient, Hessian) triple to compute.
enum class Order { value, gradient, hessian };

struct Evaluation {
  double loglik = 0.0;
  Vector gradient;
  Matrix hessian;
  bool clamped = false;
  /// Largest |eta| or |eta*| over samples that did not hit the clamp.
  double max_abs_predictor = 0.0;
  /// Sum of magnitudes of the theta-dependent terms; loglik carries
  /// rounding error of a few ulps of this.
  double rounding_scale = 0.0;
};

/// Log-likelihood and (optionally) its first and second derivatives in theta.
/// Samples whose predictor is clamped contribute no derivative through it.
inline Evaluation evaluate(const Theta& theta, const Dataset& data, const DesignPair& design,
                           Order order = Order::hessian) {
  detail::check_rows(data, design);
  const auto pred = detail::predictors(theta, design);
  const int k = design.k();
  const int ks = design.kstar();
  const int p = design.dim();
  const bool want_grad = order != Order::value;
  const bool want_hess = order == Order::hessian;

  Evaluation ev;
  ev.clamped = pred.any_clamped;
  if (want_grad) ev.gradient = Vector::Zero(p);
  if (want_hess) ev.hessian = Matrix::Zero(p, p);

  Vector z(k + 1);
  Vector zs(ks + 1);
  double ll = 0.0;
  const auto n = static_cast<Eigen::Index>(data.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto si = static_cast<std::size_t>(i);
    const std::int64_t W = data.count(si);
    const std::int64_t M = data.depth(si);
    const double eta = pred.eta[i];
    const double eta_s = pred.eta_star[i];
    if (!pred.eta_clamped[si]) ev.max_abs_predictor = std::max(ev.max_abs_predictor, std::abs(eta));
    if (!pred.eta_star_clamped[si]) {
      ev.max_abs_predictor = std::max(ev.max_abs_predictor, std::abs(eta_s));
    }

    const double mu = inv_link(eta);
    const double one_minus_mu = inv_link(-eta);
    const double g = std::exp(eta_s);        // gamma
    const double inv_g = std::exp(-eta_s);   // 1 / gamma
    const double u = mu * inv_g;             // a1
    const double v = one_minus_mu * inv_g;   // a2
    const double s = inv_g;                  // a1 + a2

    const double lA = log_gamma_ratio(u, W);
    const double lB = log_gamma_ratio(v, M - W);
    const double lS = log_gamma_ratio(s, M);
    ll += log_choose(M, W) + lA + lB - lS;
    ev.rounding_scale += std::abs(lA) + std::abs(lB) + std::abs(lS);
    if (!want_grad) continue;

    // psi(u + W) - psi(u), psi(v + M - W) - psi(v), psi(s + M) - psi(s)
    const double dA = digamma_diff(u, W);
    const double dB = digamma_diff(v, M - W);
    const double dS = digamma_diff(s, M);

    const double mu_var = mu * one_minus_mu;
    const double dmu_scale = pred.eta_clamped[si] ? 0.0 : 1.0;
    const double dgam_scale = pred.eta_star_clamped[si] ? 0.0 : 1.0;

    z[0] = 1.0;
    if (k > 0) z.tail(k) = design.X().row(i).transpose();
    zs[0] = 1.0;
    if (ks > 0) zs.tail(ks) = design.Xstar().row(i).transpose();

    const double grad_eta = dmu_scale * inv_g * mu_var * (dA - dB);
    const double bracket_star = dS + (mu - 1.0) * dB - mu * dA;
    const double grad_eta_s = dgam_scale * inv_g * bracket_star;
    ev.gradient.head(k + 1) += grad_eta * z;
    ev.gradient.tail(ks + 1) += grad_eta_s * zs;
    if (!want_hess) continue;

    // psi1(u) - psi1(u + W), etc. (all nonnegative)
    const double TA = trigamma_diff(u, W);
    const double TB = trigamma_diff(v, M - W);
    const double TS = trigamma_diff(s, M);

    const double ig2 = inv_g * inv_g;
    const double ig3 = ig2 * inv_g;
    const double ig4 = ig2 * ig2;
    const double c1 = -(TA + TB) * ig2;
    const double c2 = (g * dB - g * dA + (mu - 1.0) * TB + mu * TA) * ig3;
    const double c3 = (-2.0 * g * dS + TS - (mu - 1.0) * (mu - 1.0) * TB -
                       2.0 * g * (mu - 1.0) * dB - mu * mu * TA + 2.0 * g * mu * dA) *
                      ig4;
    const double c4 = (dA - dB) * inv_g;
    const double c5 = bracket_star * ig2;

    const double h_mm = dmu_scale * (c1 * mu_var * mu_var + c4 * mu_var * (1.0 - 2.0 * mu));
    const double h_ms = dmu_scale * dgam_scale * c2 * mu_var * g;
    const double h_ss = dgam_scale * (c3 * g * g + c5 * g);

    ev.hessian.topLeftCorner(k + 1, k + 1).noalias() += h_mm * z * z.transpose();
    ev.hessian.bottomRightCorner(ks + 1, ks + 1).noalias() += h_ss * zs * zs.transpose();
    ev.hessian.topRightCorner(k + 1, ks + 1).noalias() += h_ms * z * zs.transpose();
  }
  ev.loglik = ll;
  if (want_hess) {
    ev.hessian.bottomLeftCorner(ks + 1, k + 1) = ev.hessian.topRightCorner(k + 1, ks + 1).transpose();
  }
  if (!std::isfinite(ev.loglik) || (want_grad && !ev.gradient.allFinite()) ||
      (want_hess && !ev.hessian.allFinite())) {
    throw std::runtime_error("beta-binomial evaluation produced a non-finite value");
  }
  return ev;
}

inline double log_likelihood(const Theta& theta, const Dataset& data, const DesignPair& design) {
  return evaluate(theta, data, design, Order::value).loglik;
}

inline Vector gradient(const Theta& theta, const Dataset& data, const DesignPair& design) {
  return evaluate(theta, data, design, Order::gradient).gradient;
}

inline Matrix hessian(const Theta& theta, const Dataset& data, const DesignPair& design) {
  return evaluate(theta, data, design, Order::hessian).hessian;
}

struct Moments {
  Vector mean;
  Vector variance;
  Vector correlation;
};

/// E(W|M) = M mu, Var(W|M) = M mu (1 - mu)(1 + (M - 1) phi), Corr(Y_ij, Y_ij') = phi.
inline Moments moments(const Theta& theta, const DesignPair& design,
                       const std::vector<std::int64_t>& depths) {
  if (depths.size() != design.rows()) {
    throw std::invalid_argument("moments: depth vector length does not match the design");
  }
  const auto lp = linked_params(theta, design);
  const auto n = static_cast<Eigen::Index>(depths.size());
  Moments m{Vector(n), Vector(n), lp.phi};
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto M = static_cast<double>(depths[static_cast<std::size_t>(i)]);
    m.mean[i] = M * lp.mu[i];
    m.variance[i] = M * lp.mu[i] * (1.0 - lp.mu[i]) * (1.0 + (M - 1.0) * lp.phi[i]);
  }
  return m;
}

}  // namespace bbreg
