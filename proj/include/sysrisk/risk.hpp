#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sysrisk/error.hpp"
#include "sysrisk/rng.hpp"

namespace sysrisk {

enum class RiskKind { var, es };

inline std::string to_string(RiskKind k) { return k == RiskKind::var ? "VaR" : "ES"; }

/// Acceptability: risk functional at level alpha is <= 0.
struct AcceptanceCriterion {
  RiskKind kind = RiskKind::es;
  double alpha = 0.05;

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("acceptance level alpha must lie in (0,1)");
  }
};

/// A single position or eligible asset: initial price and terminal samples.
struct ScalarPosition {
  double x0 = 1.0;
  std::vector<double> samples;
};

namespace detail {

inline void check_samples(std::span<const double> samples, double alpha, bool allow_one) {
  if (samples.empty()) throw DomainError("risk estimator: empty sample");
  if (!(alpha > 0.0 && (alpha < 1.0 || (allow_one && alpha == 1.0))))
    throw DomainError("risk estimator: alpha must lie in (0,1)");
}

inline std::size_t tail_count(double alpha, std::size_t n) {
  // Guard against alpha*N landing a hair below an integer.
  const double an = alpha * static_cast<double>(n);
  const double rounded = std::round(an);
  const double fl = std::abs(an - rounded) < 1e-9 * std::max(1.0, an) ? rounded : std::floor(an);
  return static_cast<std::size_t>(fl);
}

}  // namespace detail

/// Empirical Value-at-Risk: -x_(floor(alpha N) + 1) with ascending order
/// statistics, i.e. the smallest m with #{x_i + m < 0} / N <= alpha.
inline double empirical_var(std::span<const double> samples, double alpha) {
  detail::check_samples(samples, alpha, false);
  std::vector<double> work(samples.begin(), samples.end());
  const std::size_t k = detail::tail_count(alpha, work.size());
  std::nth_element(work.begin(), work.begin() + static_cast<std::ptrdiff_t>(k), work.end());
  return -work[k];
}

/// Empirical Expected Shortfall with fractional tail weighting:
///   ES = [sum_{i<=m} -x_(i) + (alpha N - m) (-x_(m+1))] / (alpha N),  m = floor(alpha N).
/// alpha = 1 is accepted and gives the mean loss.
inline double empirical_es(std::span<const double> samples, double alpha) {
  detail::check_samples(samples, alpha, true);
  std::vector<double> work(samples.begin(), samples.end());
  const std::size_t n = work.size();
  const std::size_t m = detail::tail_count(alpha, n);
  const double an = alpha * static_cast<double>(n);
  double tail = 0.0;
  if (m >= n) {
    tail = std::accumulate(work.begin(), work.end(), 0.0);
    return -tail / static_cast<double>(n);
  }
  std::nth_element(work.begin(), work.begin() + static_cast<std::ptrdiff_t>(m), work.end());
  // Sort the tail so the summation order (and hence the result) is canonical.
  std::sort(work.begin(), work.begin() + static_cast<std::ptrdiff_t>(m));
  for (std::size_t i = 0; i < m; ++i) tail += work[i];
  const double frac = an - static_cast<double>(m);
  if (frac > 0.0) tail += frac * work[m];
  return -tail / an;
}

inline double risk_value(std::span<const double> samples, const AcceptanceCriterion& c) {
  return c.kind == RiskKind::var ? empirical_var(samples, c.alpha) : empirical_es(samples, c.alpha);
}

/// Closed acceptance set: a risk value of exactly 0 is acceptable.
inline bool is_acceptable(std::span<const double> samples, const AcceptanceCriterion& c) {
  return risk_value(samples, c) <= 0.0;
}

// ---------------------------------------------------------------------------
// Scalar monetary and intrinsic measures
// ---------------------------------------------------------------------------

namespace detail {

inline void check_pair(const ScalarPosition& x, const ScalarPosition& s) {
  if (x.samples.size() != s.samples.size() || x.samples.empty())
    throw DomainError("position and eligible asset need the same nonzero sample count");
  if (!(x.x0 > 0.0 && s.x0 > 0.0)) throw DomainError("initial prices must be strictly positive");
}

}  // namespace detail

/// inf{ m : X_T + (m / s0) S_T acceptable }.
///
/// Returns nullopt when no finite m makes the position acceptable; returns
/// -infinity if every m is acceptable.
inline std::optional<double> scalar_monetary_rho(const ScalarPosition& x, const ScalarPosition& s,
                                                 const AcceptanceCriterion& c, double tol = 1e-9) {
  detail::check_pair(x, s);
  c.validate();
  if (!(tol > 0.0)) throw DomainError("scalar_monetary_rho: tolerance must be positive");
  for (double v : s.samples)
    if (v < 0.0) throw DomainError("eligible asset payoff must be nonnegative");
  if (std::all_of(s.samples.begin(), s.samples.end(), [](double v) { return v == 0.0; }))
    throw DomainError("eligible asset payoff is identically zero");

  std::vector<double> work(x.samples.size());
  auto acceptable = [&](double m) {
    for (std::size_t i = 0; i < work.size(); ++i) work[i] = x.samples[i] + m / s.x0 * s.samples[i];
    return is_acceptable(work, c);
  };

  constexpr int kMaxDoublings = 80;
  double lo = 0.0;
  double hi = 0.0;
  if (acceptable(0.0)) {
    double step = 1.0;
    lo = -step;
    int k = 0;
    while (acceptable(lo)) {
      hi = lo;
      step *= 2.0;
      lo = -step;
      if (++k > kMaxDoublings) return -std::numeric_limits<double>::infinity();
    }
  } else {
    double step = 1.0;
    hi = step;
    int k = 0;
    while (!acceptable(hi)) {
      lo = hi;
      step *= 2.0;
      hi = step;
      if (++k > kMaxDoublings) return std::nullopt;
    }
  }
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (acceptable(mid))
      hi = mid;
    else
      lo = mid;
  }
  return hi;
}

struct IntrinsicOptions {
  double tol = 1e-9;
  /// Scan [0,1] at `scan_step` first; if acceptability is not monotone along
  /// the segment, return the leftmost acceptable scan point refined by bisection
  /// against its left neighbour.
  bool verify_monotone = false;
  double scan_step = 1e-3;
};

/// Smallest lambda in [0,1] with (1 - lambda) X_T + lambda (x0/s0) S_T acceptable.
/// nullopt when lambda = 1 is unacceptable.
inline std::optional<double> scalar_intrinsic_rho(const ScalarPosition& x, const ScalarPosition& s,
                                                  const AcceptanceCriterion& c, IntrinsicOptions opt = {}) {
  detail::check_pair(x, s);
  c.validate();
  if (!(opt.tol > 0.0)) throw DomainError("scalar_intrinsic_rho: tolerance must be positive");
  std::vector<double> work(x.samples.size());
  const double ratio = x.x0 / s.x0;
  auto acceptable = [&](double lambda) {
    for (std::size_t i = 0; i < work.size(); ++i)
      work[i] = (1.0 - lambda) * x.samples[i] + lambda * ratio * s.samples[i];
    return is_acceptable(work, c);
  };

  if (acceptable(0.0)) return 0.0;
  double lo = 0.0;
  double hi = 1.0;
  if (opt.verify_monotone) {
    const auto steps = static_cast<std::size_t>(std::ceil(1.0 / opt.scan_step));
    std::optional<std::size_t> first;
    for (std::size_t k = 1; k <= steps; ++k) {
      const double lambda = std::min(1.0, static_cast<double>(k) * opt.scan_step);
      if (acceptable(lambda)) {
        first = k;
        break;
      }
    }
    if (!first) return std::nullopt;
    hi = std::min(1.0, static_cast<double>(*first) * opt.scan_step);
    lo = static_cast<double>(*first - 1) * opt.scan_step;
  } else if (!acceptable(1.0)) {
    return std::nullopt;
  }
  while (hi - lo > opt.tol) {
    const double mid = 0.5 * (lo + hi);
    if (acceptable(mid))
      hi = mid;
    else
      lo = mid;
  }
  return hi;
}

// ---------------------------------------------------------------------------
// Finite-sample ES dual
// ---------------------------------------------------------------------------

/// Atom probabilities of a reweighting density w.r.t. the empirical measure.
struct DualCertificate {
  std::vector<double> q;

  /// q >= 0, sum q = 1, q_i <= 1 / (alpha N) (up to `slack`).
  bool feasible(double alpha, double slack = 1e-12) const {
    const double cap = 1.0 / (alpha * static_cast<double>(q.size()));
    double sum = 0.0;
    for (double v : q) {
      if (v < -slack || v > cap + slack) return false;
      sum += v;
    }
    return std::abs(sum - 1.0) <= 1e-9;
  }

  double value(std::span<const double> samples) const {
    double v = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) v -= q[i] * samples[i];
    return v;
  }
};

struct EsDualResult {
  double max_over_trials;
  double exact_max;
  DualCertificate vertex;
};

/// Random feasible certificate: q_i = min(c u_i, cap) with c chosen so that
/// sum q = 1.
inline DualCertificate random_es_certificate(std::size_t n, double alpha, const CounterRng& rng,
                                             std::uint64_t stream) {
  const double cap = 1.0 / (alpha * static_cast<double>(n));
  std::vector<double> u(n);
  for (std::size_t i = 0; i < n; ++i) u[i] = rng.uniform_open(stream * n + i);
  auto mass = [&](double c) {
    double s = 0.0;
    for (double v : u) s += std::min(c * v, cap);
    return s;
  };
  double lo = 0.0;
  double hi = 1.0;
  while (mass(hi) < 1.0) hi *= 2.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mass(mid) < 1.0 ? lo : hi) = mid;
  }
  DualCertificate out;
  out.q.resize(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += (out.q[i] = std::min(hi * u[i], cap));
  for (double& v : out.q) v /= total;
  return out;
}

/// sup over densities bounded by 1/alpha of E_Q[-X]. The maximiser places
/// mass 1/(alpha N) on the worst scenarios and the remainder on the next one.
inline EsDualResult es_dual_max(std::span<const double> samples, double alpha, std::size_t trials,
                                std::uint64_t seed) {
  detail::check_samples(samples, alpha, true);
  const std::size_t n = samples.size();
  if (alpha * static_cast<double>(n) < 1.0 - 1e-12) throw DomainError("es_dual_max requires alpha N >= 1");
  const double cap = 1.0 / (alpha * static_cast<double>(n));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return samples[a] < samples[b]; });

  EsDualResult out{};
  out.vertex.q.assign(n, 0.0);
  double remaining = 1.0;
  for (std::size_t r = 0; r < n && remaining > 0.0; ++r) {
    const double w = std::min(cap, remaining);
    out.vertex.q[order[r]] = w;
    remaining -= w;
    if (remaining < 1e-15) remaining = 0.0;
  }
  out.exact_max = out.vertex.value(samples);

  const CounterRng rng(seed);
  out.max_over_trials = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < trials; ++t)
    out.max_over_trials = std::max(out.max_over_trials, random_es_certificate(n, alpha, rng, t).value(samples));
  return out;
}

}  // namespace sysrisk
