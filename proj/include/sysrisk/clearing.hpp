#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sysrisk/error.hpp"
#include "sysrisk/parallel.hpp"
#include "sysrisk/scenario.hpp"

namespace sysrisk {

/// Validated Eisenberg-Noe liability matrix with society as node 0.
///
/// `nominal()` is the raw (d+1)x(d+1) matrix; `relative()` is the d x d block
/// of relative liabilities between institutions (row i, column j is Pi_ij for
/// institutions i, j in 1..d, zero-based here) and `to_society()` is Pi_i0.
class LiabilityStructure {
 public:
  LiabilityStructure() = default;

  std::size_t d() const noexcept { return totals_.size(); }
  const Eigen::MatrixXd& nominal() const noexcept { return nominal_; }
  const std::vector<double>& totals() const noexcept { return totals_; }
  const std::vector<double>& to_society() const noexcept { return to_society_; }
  /// Pi_ij, institutions only, row-major d x d.
  double relative(std::size_t i, std::size_t j) const noexcept { return relative_[i * d() + j]; }
  const std::vector<double>& relative_row_major() const noexcept { return relative_; }
  /// Sum of nominal liabilities owed to society.
  double society_claims() const noexcept { return society_claims_; }

  friend LiabilityStructure validate_liabilities(const Eigen::MatrixXd& raw);

 private:
  Eigen::MatrixXd nominal_;
  std::vector<double> totals_;
  std::vector<double> to_society_;
  std::vector<double> relative_;
  double society_claims_ = 0.0;
};

inline LiabilityStructure validate_liabilities(const Eigen::MatrixXd& raw) {
  if (raw.rows() != raw.cols()) throw ValidationError("liability matrix must be square");
  if (raw.rows() < 3) throw ValidationError("liability matrix must be (d+1)x(d+1) with d >= 2");
  const auto size = raw.rows();
  auto entry = [](Eigen::Index i, Eigen::Index j) {
    return "L[" + std::to_string(i) + "][" + std::to_string(j) + "]";
  };
  for (Eigen::Index i = 0; i < size; ++i) {
    for (Eigen::Index j = 0; j < size; ++j) {
      const double v = raw(i, j);
      if (!std::isfinite(v) || v < 0.0) throw ValidationError(entry(i, j) + " must be finite and >= 0");
      if (i == j && v != 0.0) throw ValidationError(entry(i, j) + ": self-liabilities must be zero");
      if (i == 0 && v != 0.0) throw ValidationError(entry(i, j) + ": society (node 0) owes nothing");
    }
  }
  for (Eigen::Index i = 1; i < size; ++i)
    if (!(raw(i, 0) > 0.0)) throw ValidationError(entry(i, 0) + ": every institution must owe society");

  LiabilityStructure out;
  const auto d = static_cast<std::size_t>(size - 1);
  out.nominal_ = raw;
  out.totals_.resize(d);
  out.to_society_.resize(d);
  out.relative_.assign(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    const auto row = static_cast<Eigen::Index>(i + 1);
    const double total = raw.row(row).sum();
    out.totals_[i] = total;
    out.to_society_[i] = raw(row, 0) / total;
    out.society_claims_ += raw(row, 0);
    for (std::size_t j = 0; j < d; ++j) out.relative_[i * d + j] = raw(row, static_cast<Eigen::Index>(j + 1)) / total;
  }
  return out;
}

/// Symmetric network: every institution owes `bilateral` to every other one
/// and `society` to node 0.
inline LiabilityStructure uniform_liabilities(std::size_t d, double bilateral, double society) {
  Eigen::MatrixXd raw = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d + 1), static_cast<Eigen::Index>(d + 1));
  for (std::size_t i = 1; i <= d; ++i) {
    raw(static_cast<Eigen::Index>(i), 0) = society;
    for (std::size_t j = 1; j <= d; ++j)
      if (i != j) raw(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = bilateral;
  }
  return validate_liabilities(raw);
}

struct ClearingVector {
  std::vector<double> p;
  double residual = 0.0;
  std::vector<std::size_t> defaulting_set;
  std::size_t iterations = 0;
};

struct AggregationSpec {
  LiabilityStructure liabilities;
  double beta = 0.5;

  void validate() const {
    if (!(beta > 0.0 && beta < 1.0)) throw ValidationError("beta must lie in (0,1)");
    if (liabilities.d() < 2) throw ValidationError("aggregation needs a validated liability structure");
  }
  /// Lower and upper bound of the aggregate for nonnegative wealth.
  double lower_bound() const noexcept { return -beta * liabilities.society_claims(); }
  double upper_bound() const noexcept { return (1.0 - beta) * liabilities.society_claims(); }
};

enum class ClearingEngine { picard, fictitious_default };

/// sup_i |p_i - min{Lhat_i, x_i + (Pi^T p)_i}|
inline double clearing_residual(std::span<const double> x, std::span<const double> p, const LiabilityStructure& l) {
  const std::size_t d = l.d();
  double worst = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    double inflow = 0.0;
    for (std::size_t j = 0; j < d; ++j) inflow += l.relative(j, i) * p[j];
    worst = std::max(worst, std::abs(p[i] - std::min(l.totals()[i], x[i] + inflow)));
  }
  return worst;
}

namespace detail {

inline void check_wealth(std::span<const double> x, const LiabilityStructure& l) {
  if (x.size() != l.d())
    throw ValidationError("wealth vector has " + std::to_string(x.size()) + " entries, network has " +
                          std::to_string(l.d()));
  for (double v : x)
    if (!std::isfinite(v)) throw DomainError("wealth entries must be finite");
}

inline std::vector<std::size_t> defaults_of(std::span<const double> p, const LiabilityStructure& l) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < l.d(); ++i)
    if (p[i] < l.totals()[i]) out.push_back(i);
  return out;
}

}  // namespace detail

/// Greatest clearing vector by monotone Picard iteration from p = Lhat.
///
/// Wealth may be any finite vector; for x >= 0 the payments stay in [0, Lhat].
inline ClearingVector clearing_picard(std::span<const double> x, const LiabilityStructure& l, double tol = 1e-12,
                                      std::size_t max_iter = 10000) {
  detail::check_wealth(x, l);
  if (!(tol > 0.0)) throw DomainError("clearing_picard: tolerance must be positive");
  const std::size_t d = l.d();
  std::vector<double> p(l.totals());
  std::vector<double> next(d);
  for (std::size_t it = 1; it <= max_iter; ++it) {
    double step = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      double inflow = 0.0;
      for (std::size_t j = 0; j < d; ++j) inflow += l.relative(j, i) * p[j];
      next[i] = std::min(l.totals()[i], x[i] + inflow);
      step = std::max(step, std::abs(next[i] - p[i]));
    }
    p.swap(next);
    if (step < tol) {
      ClearingVector out;
      out.residual = clearing_residual(x, p, l);
      out.defaulting_set = detail::defaults_of(p, l);
      out.iterations = it;
      out.p = std::move(p);
      return out;
    }
  }
  throw ConvergenceError("clearing_picard: no convergence within " + std::to_string(max_iter) + " iterations",
                         std::move(p));
}

/// Reusable scratch space for the fictitious default algorithm; lets batch
/// aggregation run without per-scenario allocation.
class FictitiousDefaultSolver {
 public:
  explicit FictitiousDefaultSolver(const LiabilityStructure& l)
      : l_(&l), p_(l.d()), inflow_(l.d()), in_default_(l.d()), index_(l.d()), a_(l.d() * l.d()), rhs_(l.d()) {}

  /// Solves for the clearing vector; result is left in `payments()`.
  /// Returns the number of rounds used.
  std::size_t solve(std::span<const double> x) {
    const LiabilityStructure& l = *l_;
    const std::size_t d = l.d();
    const auto& totals = l.totals();
    std::copy(totals.begin(), totals.end(), p_.begin());
    std::fill(in_default_.begin(), in_default_.end(), char{0});
    std::size_t defaults = 0;
    for (std::size_t round = 1; round <= d + 1; ++round) {
      compute_inflow();
      bool grew = false;
      for (std::size_t i = 0; i < d; ++i) {
        if (!in_default_[i] && x[i] + inflow_[i] < totals[i]) {
          in_default_[i] = 1;
          ++defaults;
          grew = true;
        }
      }
      if (!grew) return round;
      solve_defaulters(x, defaults);
    }
    throw NumericalError("fictitious default algorithm exceeded d rounds");
  }

  std::span<const double> payments() const noexcept { return p_; }
  bool in_default(std::size_t i) const noexcept { return in_default_[i] != 0; }

 private:
  void compute_inflow() {
    const LiabilityStructure& l = *l_;
    const std::size_t d = l.d();
    const auto& pi = l.relative_row_major();
    std::fill(inflow_.begin(), inflow_.end(), 0.0);
    for (std::size_t j = 0; j < d; ++j) {
      const double pj = p_[j];
      const double* row = pi.data() + j * d;
      for (std::size_t i = 0; i < d; ++i) inflow_[i] += row[i] * pj;
    }
  }

  // Defaulters pay x_i + inflow_i; solvent institutions pay in full:
  //   p_D - Pi_DD^T p_D = x_D + Pi_ND^T Lhat_N
  void solve_defaulters(std::span<const double> x, std::size_t m) {
    const LiabilityStructure& l = *l_;
    const std::size_t d = l.d();
    const auto& totals = l.totals();
    std::size_t k = 0;
    for (std::size_t i = 0; i < d; ++i)
      if (in_default_[i]) index_[k++] = i;

    for (std::size_t r = 0; r < m; ++r) {
      const std::size_t i = index_[r];
      double rhs = x[i];
      for (std::size_t j = 0; j < d; ++j)
        if (!in_default_[j]) rhs += l.relative(j, i) * totals[j];
      rhs_[r] = rhs;
      for (std::size_t c = 0; c < m; ++c) a_[r * m + c] = (r == c ? 1.0 : 0.0) - l.relative(index_[c], i);
    }

    // Gaussian elimination with partial pivoting on the m x m system.
    for (std::size_t col = 0; col < m; ++col) {
      std::size_t pivot = col;
      for (std::size_t r = col + 1; r < m; ++r)
        if (std::abs(a_[r * m + col]) > std::abs(a_[pivot * m + col])) pivot = r;
      if (std::abs(a_[pivot * m + col]) < 1e-14) {
        std::string set;
        for (std::size_t r = 0; r < m; ++r) set += (r ? "," : "") + std::to_string(index_[r] + 1);
        throw NumericalError("fictitious default: singular system for defaulting set {" + set + "}");
      }
      if (pivot != col) {
        for (std::size_t c = 0; c < m; ++c) std::swap(a_[col * m + c], a_[pivot * m + c]);
        std::swap(rhs_[col], rhs_[pivot]);
      }
      const double diag = a_[col * m + col];
      for (std::size_t r = col + 1; r < m; ++r) {
        const double f = a_[r * m + col] / diag;
        if (f == 0.0) continue;
        for (std::size_t c = col; c < m; ++c) a_[r * m + c] -= f * a_[col * m + c];
        rhs_[r] -= f * rhs_[col];
      }
    }
    for (std::size_t r = m; r-- > 0;) {
      double v = rhs_[r];
      for (std::size_t c = r + 1; c < m; ++c) v -= a_[r * m + c] * rhs_[c];
      rhs_[r] = v / a_[r * m + r];
    }
    for (std::size_t r = 0; r < m; ++r) p_[index_[r]] = rhs_[r];
  }

  const LiabilityStructure* l_;
  std::vector<double> p_;
  std::vector<double> inflow_;
  std::vector<char> in_default_;
  std::vector<std::size_t> index_;
  std::vector<double> a_;
  std::vector<double> rhs_;
};

/// Clearing vector via the fictitious default algorithm (at most d rounds).
inline ClearingVector clearing_fictitious_default(std::span<const double> x, const LiabilityStructure& l) {
  detail::check_wealth(x, l);
  FictitiousDefaultSolver solver(l);
  ClearingVector out;
  out.iterations = solver.solve(x);
  out.p.assign(solver.payments().begin(), solver.payments().end());
  for (std::size_t i = 0; i < l.d(); ++i)
    if (solver.in_default(i)) out.defaulting_set.push_back(i);
  out.residual = clearing_residual(x, out.p, l);
  return out;
}

/// Society's net equity: sum_i Pi_i0 p_i(x) - beta * sum_i L_i0.
inline double aggregate(std::span<const double> x, const AggregationSpec& spec,
                        ClearingEngine engine = ClearingEngine::fictitious_default) {
  const ClearingVector cv = engine == ClearingEngine::picard ? clearing_picard(x, spec.liabilities)
                                                             : clearing_fictitious_default(x, spec.liabilities);
  double paid = 0.0;
  for (std::size_t i = 0; i < spec.liabilities.d(); ++i) paid += spec.liabilities.to_society()[i] * cv.p[i];
  return paid - spec.beta * spec.liabilities.society_claims();
}

/// Row-wise aggregate over a sample matrix; output order follows the rows.
inline std::vector<double> aggregate_scenarios(const Samples& xt, const AggregationSpec& spec, unsigned threads = 1,
                                               ClearingEngine engine = ClearingEngine::fictitious_default) {
  const LiabilityStructure& l = spec.liabilities;
  if (static_cast<std::size_t>(xt.cols()) != l.d())
    throw ValidationError("scenario columns do not match the network size");
  const auto n = static_cast<std::size_t>(xt.rows());
  std::vector<double> out(n);
  const double claims = spec.beta * l.society_claims();
  const auto& to_society = l.to_society();
  parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
    FictitiousDefaultSolver solver(l);
    for (std::size_t r = begin; r < end; ++r) {
      const std::span<const double> x(xt.data() + r * l.d(), l.d());
      std::span<const double> p;
      ClearingVector picard;
      if (engine == ClearingEngine::picard) {
        picard = clearing_picard(x, l);
        p = picard.p;
      } else {
        solver.solve(x);
        p = solver.payments();
      }
      double paid = 0.0;
      for (std::size_t i = 0; i < l.d(); ++i) paid += to_society[i] * p[i];
      out[r] = paid - claims;
    }
  });
  return out;
}

inline std::vector<double> aggregate_scenarios(const ScenarioSet& xt, const AggregationSpec& spec, unsigned threads = 1,
                                               ClearingEngine engine = ClearingEngine::fictitious_default) {
  return aggregate_scenarios(xt.values(), spec, threads, engine);
}

}  // namespace sysrisk
