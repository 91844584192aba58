#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "sysrisk/error.hpp"
#include "sysrisk/parallel.hpp"
#include "sysrisk/rng.hpp"
#include "sysrisk/special_functions.hpp"

namespace sysrisk {

/// Row-major sample matrix: one row per scenario, one column per institution.
using Samples = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Marginals
// ---------------------------------------------------------------------------

struct BetaMarginal {
  double a;
  double b;
};

struct LognormalMarginal {
  double mu;     ///< log-mean
  double sigma;  ///< log-standard-deviation
};

using MarginalSpec = std::variant<BetaMarginal, LognormalMarginal>;

struct Moments {
  double mean;
  double variance;
};

inline void validate(const MarginalSpec& m) {
  std::visit(
      [](const auto& spec) {
        using T = std::decay_t<decltype(spec)>;
        if constexpr (std::is_same_v<T, BetaMarginal>) {
          if (!(spec.a > 0.0 && spec.b > 0.0 && std::isfinite(spec.a) && std::isfinite(spec.b)))
            throw DomainError("beta marginal requires a > 0 and b > 0");
        } else {
          if (!std::isfinite(spec.mu)) throw DomainError("lognormal marginal requires finite mu");
          if (!(spec.sigma > 0.0 && std::isfinite(spec.sigma)))
            throw DomainError("lognormal marginal requires sigma > 0");
        }
      },
      m);
}

inline Moments beta_moments(double a, double b) {
  if (!(a > 0.0 && b > 0.0)) throw DomainError("beta_moments: a and b must be positive");
  const double s = a + b;
  return {a / s, a * b / (s * s * (s + 1.0))};
}

/// Log-normal parameters reproducing the given mean and variance.
inline LognormalMarginal lognormal_params_from_moments(double mean, double variance) {
  if (!(mean > 0.0 && variance > 0.0))
    throw DomainError("lognormal_params_from_moments: mean and variance must be positive");
  const double sigma2 = std::log1p(variance / (mean * mean));
  return {std::log(mean) - 0.5 * sigma2, std::sqrt(sigma2)};
}

inline Moments moments(const MarginalSpec& m) {
  if (const auto* b = std::get_if<BetaMarginal>(&m)) return beta_moments(b->a, b->b);
  const auto& ln = std::get<LognormalMarginal>(m);
  const double s2 = ln.sigma * ln.sigma;
  return {std::exp(ln.mu + 0.5 * s2), std::expm1(s2) * std::exp(2.0 * ln.mu + s2)};
}

/// Quantile function F^{-1}(u) of the marginal.
inline double inverse_cdf(const MarginalSpec& m, double u) {
  if (!(u > 0.0 && u < 1.0)) throw DomainError("inverse_cdf: u must lie in (0,1)");
  if (const auto* b = std::get_if<BetaMarginal>(&m))
    return special::inverse_incomplete_beta(u, b->a, b->b);
  const auto& ln = std::get<LognormalMarginal>(m);
  return std::exp(ln.mu + ln.sigma * special::normal_quantile(u));
}

namespace detail {

// Maps a standard normal score through the marginal quantile without
// round-tripping the upper tail through Phi(z) ~ 1.
inline double from_normal_score(const MarginalSpec& m, double z) {
  if (const auto* ln = std::get_if<LognormalMarginal>(&m)) return std::exp(ln->mu + ln->sigma * z);
  const auto& b = std::get<BetaMarginal>(m);
  if (z <= 0.0) {
    const double u = special::normal_cdf(z);
    if (u <= 0.0) return 0.0;
    return special::inverse_incomplete_beta(u, b.a, b.b);
  }
  const double upper = special::normal_cdf(-z);
  if (upper <= 0.0) return 1.0;
  return 1.0 - special::inverse_incomplete_beta(upper, b.b, b.a);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Correlation
// ---------------------------------------------------------------------------

/// Gaussian-copula correlation over the stacked vector (X^1..X^d, S^1..S^d).
class CorrelationMatrix {
 public:
  CorrelationMatrix() = default;

  explicit CorrelationMatrix(Eigen::MatrixXd m) : m_(std::move(m)) {
    if (m_.rows() != m_.cols() || m_.rows() == 0) throw ValidationError("correlation matrix must be square");
    for (Eigen::Index i = 0; i < m_.rows(); ++i) {
      if (m_(i, i) != 1.0) throw ValidationError("correlation matrix must have unit diagonal");
      for (Eigen::Index j = 0; j < m_.cols(); ++j) {
        if (!(m_(i, j) >= -1.0 && m_(i, j) <= 1.0))
          throw ValidationError("correlation entry (" + std::to_string(i) + "," + std::to_string(j) +
                                ") outside [-1,1]");
        if (m_(i, j) != m_(j, i))
          throw ValidationError("correlation matrix must be symmetric at (" + std::to_string(i) + "," +
                                std::to_string(j) + ")");
      }
    }
  }

  static CorrelationMatrix identity(Eigen::Index n) {
    return CorrelationMatrix(Eigen::MatrixXd::Identity(n, n));
  }

  /// Returns a copy with the symmetric pair (i, j) set to rho.
  CorrelationMatrix with(Eigen::Index i, Eigen::Index j, double rho) const {
    Eigen::MatrixXd m = m_;
    if (i == j) throw ValidationError("cannot set a diagonal correlation entry");
    m(i, j) = rho;
    m(j, i) = rho;
    return CorrelationMatrix(std::move(m));
  }

  const Eigen::MatrixXd& matrix() const noexcept { return m_; }
  Eigen::Index size() const noexcept { return m_.rows(); }

  /// Factor A with A A^T = C. Cholesky first; semidefinite matrices go
  /// through a pivoted LDL^T. Throws MatrixError if C is not PSD.
  Eigen::MatrixXd factor() const {
    Eigen::LLT<Eigen::MatrixXd> llt(m_);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(m_);
    if (ldlt.info() != Eigen::Success) throw MatrixError("correlation matrix factorisation failed");
    Eigen::VectorXd diag = ldlt.vectorD();
    for (Eigen::Index i = 0; i < diag.size(); ++i) {
      if (diag(i) < -1e-10) throw MatrixError("correlation matrix is not positive semidefinite");
      diag(i) = std::max(0.0, diag(i));
    }
    Eigen::MatrixXd lower = ldlt.matrixL();
    Eigen::MatrixXd a = ldlt.transpositionsP().transpose() * (lower * diag.cwiseSqrt().asDiagonal());
    if (!(a * a.transpose()).isApprox(m_, 1e-9))
      throw MatrixError("correlation matrix is not positive semidefinite");
    return a;
  }

 private:
  Eigen::MatrixXd m_;
};

// ---------------------------------------------------------------------------
// Scenario data
// ---------------------------------------------------------------------------

/// N x d matrix of nonnegative terminal values under the empirical measure.
class ScenarioSet {
 public:
  ScenarioSet() = default;

  explicit ScenarioSet(Samples values) : values_(std::move(values)) {
    if (values_.rows() < 1) throw ValidationError("scenario set needs at least one row");
    if (values_.cols() < 1) throw ValidationError("scenario set needs at least one column");
    for (Eigen::Index i = 0; i < values_.size(); ++i) {
      const double v = values_.data()[i];
      if (!(v >= 0.0) || !std::isfinite(v))
        throw ValidationError("scenario entry " + std::to_string(i) + " is negative or not finite");
    }
  }

  Eigen::Index n() const noexcept { return values_.rows(); }
  Eigen::Index d() const noexcept { return values_.cols(); }
  const Samples& values() const noexcept { return values_; }

  bool operator==(const ScenarioSet& other) const {
    return values_.rows() == other.values_.rows() && values_.cols() == other.values_.cols() &&
           values_ == other.values_;
  }

 private:
  Samples values_;
};

struct MarketModel {
  Vector x0;
  ScenarioSet xt;
  Vector s0;
  ScenarioSet st;

  Eigen::Index d() const noexcept { return x0.size(); }
  Eigen::Index n() const noexcept { return xt.n(); }

  void validate() const {
    const auto d = x0.size();
    if (d < 1) throw ValidationError("market needs at least one institution");
    if (s0.size() != d || xt.d() != d || st.d() != d)
      throw ValidationError("market dimensions are inconsistent");
    if (xt.n() != st.n()) throw ValidationError("position and eligible scenario counts differ");
    if (!(x0.array() > 0.0).all()) throw ValidationError("x0 must be strictly positive");
    if (!(s0.array() > 0.0).all()) throw ValidationError("s0 must be strictly positive");
  }
};

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

struct MarketConfig {
  std::vector<MarginalSpec> x_marginals;
  std::vector<MarginalSpec> s_marginals;
  CorrelationMatrix correlation;
  double expected_return_x = 1.15;  ///< E[X_T] = expected_return_x * x0
  double expected_return_s = 1.1;   ///< E[S_T] = expected_return_s * s0
  std::size_t n = 100000;
  std::uint64_t seed = 1;

  std::size_t d() const noexcept { return x_marginals.size(); }

  void validate() const {
    if (x_marginals.empty()) throw ValidationError("market config needs at least one institution");
    if (s_marginals.size() != x_marginals.size())
      throw ValidationError("need one eligible-asset marginal per institution");
    if (static_cast<std::size_t>(correlation.size()) != 2 * d())
      throw ValidationError("correlation matrix must be 2d x 2d");
    if (n < 1) throw ValidationError("sample count N must be >= 1");
    if (!(expected_return_x > 0.0 && expected_return_s > 0.0))
      throw ValidationError("expected returns must be positive");
    for (const auto& m : x_marginals) sysrisk::validate(m);
    for (const auto& m : s_marginals) sysrisk::validate(m);
  }
};

/// Base two-asset-class model: Beta(a,b) positions, eligible log-normals with
/// the same mean and `variance_ratio` times the variance, independent copula.
inline MarketConfig base_market_config(std::size_t d, std::size_t n, std::uint64_t seed, double a = 2.0,
                                       double b = 5.0, double variance_ratio = 0.2) {
  MarketConfig cfg;
  const Moments mx = beta_moments(a, b);
  const LognormalMarginal ln = lognormal_params_from_moments(mx.mean, variance_ratio * mx.variance);
  cfg.x_marginals.assign(d, BetaMarginal{a, b});
  cfg.s_marginals.assign(d, ln);
  cfg.correlation = CorrelationMatrix::identity(static_cast<Eigen::Index>(2 * d));
  cfg.n = n;
  cfg.seed = seed;
  return cfg;
}

/// Draws N joint scenarios via the Gaussian copula. The i.i.d. normal scores
/// depend only on (seed, N, d), so changing the correlation or the marginals
/// under a fixed seed re-uses the same underlying randomness.
inline MarketModel sample_market(const MarketConfig& cfg, unsigned threads = 1) {
  cfg.validate();
  const auto d = static_cast<Eigen::Index>(cfg.d());
  const Eigen::Index dim = 2 * d;
  const auto n = static_cast<Eigen::Index>(cfg.n);
  const Eigen::MatrixXd factor = cfg.correlation.factor();
  const CounterRng rng(cfg.seed);

  Samples x(n, d);
  Samples s(n, d);
  parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t begin, std::size_t end) {
    Eigen::VectorXd z(dim);
    Eigen::VectorXd y(dim);
    for (auto row = static_cast<Eigen::Index>(begin); row < static_cast<Eigen::Index>(end); ++row) {
      for (Eigen::Index j = 0; j < dim; ++j)
        z(j) = special::normal_quantile(rng.uniform_open(static_cast<std::uint64_t>(row * dim + j)));
      y.noalias() = factor * z;
      for (Eigen::Index k = 0; k < d; ++k) {
        x(row, k) = detail::from_normal_score(cfg.x_marginals[static_cast<std::size_t>(k)], y(k));
        s(row, k) = detail::from_normal_score(cfg.s_marginals[static_cast<std::size_t>(k)], y(d + k));
      }
    }
  });

  MarketModel market;
  market.x0.resize(d);
  market.s0.resize(d);
  for (Eigen::Index k = 0; k < d; ++k) {
    market.x0(k) = moments(cfg.x_marginals[static_cast<std::size_t>(k)]).mean / cfg.expected_return_x;
    market.s0(k) = moments(cfg.s_marginals[static_cast<std::size_t>(k)]).mean / cfg.expected_return_s;
  }
  market.xt = ScenarioSet(std::move(x));
  market.st = ScenarioSet(std::move(s));
  market.validate();
  return market;
}

/// Normal scores underlying a sampled market (correlated, before the
/// marginal transform). Used to check copula fidelity.
inline Samples copula_scores(const MarketConfig& cfg) {
  cfg.validate();
  const auto dim = static_cast<Eigen::Index>(2 * cfg.d());
  const auto n = static_cast<Eigen::Index>(cfg.n);
  const Eigen::MatrixXd factor = cfg.correlation.factor();
  const CounterRng rng(cfg.seed);
  Samples out(n, dim);
  Eigen::VectorXd z(dim);
  for (Eigen::Index row = 0; row < n; ++row) {
    for (Eigen::Index j = 0; j < dim; ++j)
      z(j) = special::normal_quantile(rng.uniform_open(static_cast<std::uint64_t>(row * dim + j)));
    out.row(row) = (factor * z).transpose();
  }
  return out;
}

}  // namespace sysrisk
