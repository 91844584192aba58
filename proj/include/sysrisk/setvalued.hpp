#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sysrisk/clearing.hpp"
#include "sysrisk/error.hpp"
#include "sysrisk/risk.hpp"
#include "sysrisk/scenario.hpp"

namespace sysrisk {

// ---------------------------------------------------------------------------
// Strong vector types
// ---------------------------------------------------------------------------

/// Fractions sold into the eligible assets, one per institution, in [0,1].
class LambdaVector {
 public:
  explicit LambdaVector(Vector v) : v_(std::move(v)) {
    for (Eigen::Index i = 0; i < v_.size(); ++i)
      if (!(v_(i) >= 0.0 && v_(i) <= 1.0))
        throw DomainError("lambda_" + std::to_string(i + 1) + " = " + std::to_string(v_(i)) + " outside [0,1]");
  }
  static LambdaVector constant(Eigen::Index d, double value) { return LambdaVector(Vector::Constant(d, value)); }
  const Vector& values() const noexcept { return v_; }

 private:
  Vector v_;
};

/// Capital injections (currency), one per institution.
class CapitalVector {
 public:
  explicit CapitalVector(Vector v) : v_(std::move(v)) {
    for (Eigen::Index i = 0; i < v_.size(); ++i)
      if (!std::isfinite(v_(i))) throw DomainError("capital entries must be finite");
  }
  static CapitalVector constant(Eigen::Index d, double value) { return CapitalVector(Vector::Constant(d, value)); }
  const Vector& values() const noexcept { return v_; }

 private:
  Vector v_;
};

// ---------------------------------------------------------------------------
// Transformed systems and membership
// ---------------------------------------------------------------------------

/// (1 - lambda) . X_T + lambda . x0 . S_T / s0, row-wise.
inline ScenarioSet intrinsic_system(const MarketModel& m, const LambdaVector& lambda) {
  const Vector& l = lambda.values();
  if (l.size() != m.d()) throw ValidationError("lambda dimension does not match the market");
  Samples out(m.n(), m.d());
  const Samples& x = m.xt.values();
  const Samples& s = m.st.values();
  for (Eigen::Index k = 0; k < m.d(); ++k) {
    const double keep = 1.0 - l(k);
    const double swap = l(k) * m.x0(k) / m.s0(k);
    out.col(k) = keep * x.col(k) + swap * s.col(k);
  }
  return ScenarioSet(std::move(out));
}

/// X_T + k . S_T / s0, row-wise. Entries may be negative when k < 0.
inline Samples monetary_system(const MarketModel& m, const CapitalVector& k) {
  const Vector& kv = k.values();
  if (kv.size() != m.d()) throw ValidationError("capital dimension does not match the market");
  Samples out = m.xt.values();
  const Samples& s = m.st.values();
  for (Eigen::Index c = 0; c < m.d(); ++c) out.col(c) += (kv(c) / m.s0(c)) * s.col(c);
  return out;
}

/// Bundles the frozen market, aggregation, and acceptance criterion that
/// every membership test of one algorithm run shares.
class SystemicRiskProblem {
 public:
  SystemicRiskProblem(const MarketModel& market, AggregationSpec agg, AcceptanceCriterion criterion,
                      unsigned threads = 1)
      : market_(&market), agg_(std::move(agg)), criterion_(criterion), threads_(threads) {
    market.validate();
    agg_.validate();
    criterion_.validate();
    if (static_cast<std::size_t>(market.d()) != agg_.liabilities.d())
      throw ValidationError("market has " + std::to_string(market.d()) + " institutions, network has " +
                            std::to_string(agg_.liabilities.d()));
  }
  // Holds a pointer to the market; temporaries would dangle.
  SystemicRiskProblem(MarketModel&&, AggregationSpec, AcceptanceCriterion, unsigned = 1) = delete;

  const MarketModel& market() const noexcept { return *market_; }
  const AggregationSpec& aggregation() const noexcept { return agg_; }
  const AcceptanceCriterion& criterion() const noexcept { return criterion_; }
  unsigned threads() const noexcept { return threads_; }
  Eigen::Index d() const noexcept { return market_->d(); }
  std::size_t evaluations() const noexcept { return evaluations_; }

  std::vector<double> intrinsic_aggregate(const LambdaVector& lambda) const {
    ++evaluations_;
    return aggregate_scenarios(intrinsic_system(*market_, lambda), agg_, threads_);
  }
  std::vector<double> monetary_aggregate(const CapitalVector& k) const {
    ++evaluations_;
    return aggregate_scenarios(monetary_system(*market_, k), agg_, threads_);
  }

  double intrinsic_risk(const LambdaVector& lambda) const { return risk_value(intrinsic_aggregate(lambda), criterion_); }
  double monetary_risk(const CapitalVector& k) const { return risk_value(monetary_aggregate(k), criterion_); }

  bool is_member_intrinsic(const LambdaVector& lambda) const { return intrinsic_risk(lambda) <= 0.0; }
  bool is_member_monetary(const CapitalVector& k) const { return monetary_risk(k) <= 0.0; }

  /// Whether lambda = 1 (every institution fully in its eligible asset) is acceptable.
  bool all_eligible_acceptable() const { return is_member_intrinsic(LambdaVector::constant(d(), 1.0)); }

 private:
  const MarketModel* market_;
  AggregationSpec agg_;
  AcceptanceCriterion criterion_;
  unsigned threads_;
  mutable std::size_t evaluations_ = 0;
};

inline bool is_member_intrinsic(const LambdaVector& lambda, const MarketModel& m, const AggregationSpec& agg,
                                const AcceptanceCriterion& c) {
  return SystemicRiskProblem(m, agg, c).is_member_intrinsic(lambda);
}

inline bool is_member_monetary(const CapitalVector& k, const MarketModel& m, const AggregationSpec& agg,
                               const AcceptanceCriterion& c) {
  return SystemicRiskProblem(m, agg, c).is_member_monetary(k);
}

// ---------------------------------------------------------------------------
// Grids and ray bisection
// ---------------------------------------------------------------------------

/// lo, lo + step, ..., with hi appended if the step does not land on it.
inline std::vector<double> axis_lattice(double lo, double hi, double step) {
  if (!(step > 0.0)) throw DomainError("grid step must be positive");
  if (!(hi > lo)) throw DomainError("grid interval must be non-degenerate");
  std::vector<double> out;
  const double span = hi - lo;
  const auto m = static_cast<std::size_t>(std::floor(span / step + 1e-9));
  for (std::size_t j = 0; j <= m; ++j) out.push_back(j == m && std::abs(m * step - span) < 1e-9 ? hi : lo + j * step);
  if (out.back() < hi - 1e-12) out.push_back(hi);
  return out;
}

/// Visits every multi-index of a d-dimensional lattice with `levels` values
/// per axis in lexicographic order (last index fastest).
template <class Fn>
void for_each_lattice_index(std::size_t d, std::size_t levels, Fn&& fn) {
  std::vector<std::size_t> idx(d, 0);
  while (true) {
    fn(idx);
    std::size_t pos = d;
    while (pos > 0) {
      --pos;
      if (++idx[pos] < levels) break;
      idx[pos] = 0;
      if (pos == 0) return;
    }
    if (d == 0) return;
  }
}

/// Lattice points of the box [lo,hi]^d lying on one of the d faces that
/// contain lo * 1. Enumeration order is the lexicographic lattice order.
inline std::vector<Vector> face_grid(std::size_t d, double lo, double hi, double step) {
  const std::vector<double> axis = axis_lattice(lo, hi, step);
  std::vector<Vector> out;
  for_each_lattice_index(d, axis.size(), [&](const std::vector<std::size_t>& idx) {
    if (std::find(idx.begin(), idx.end(), std::size_t{0}) == idx.end()) return;
    Vector p(static_cast<Eigen::Index>(d));
    for (std::size_t k = 0; k < d; ++k) p(static_cast<Eigen::Index>(k)) = axis[idx[k]];
    out.push_back(std::move(p));
  });
  return out;
}

struct BoundaryPoint {
  std::size_t origin_index = 0;
  Vector origin;
  Vector inner;  ///< last unacceptable bracket end (equals origin for direct members)
  Vector outer;  ///< certified member; the reported approximation
  std::size_t n_iter = 0;
  double bracket_width = 0.0;
  bool origin_member = false;
};

struct BoundaryApproximation {
  std::vector<BoundaryPoint> points;
  Vector target;
  double grid_step = 0.0;
  double epsilon = 0.0;
  bool feasible_flag = false;
};

/// Bisection on the segment from an unacceptable `origin` to an acceptable
/// `target` until the bracket is shorter than epsilon (Euclidean norm).
template <class Member>
BoundaryPoint bisect_ray(const Vector& origin, const Vector& target, double epsilon, Member&& is_member) {
  BoundaryPoint out;
  out.origin = origin;
  Vector a = origin;
  Vector b = target;
  std::size_t n = 0;
  while ((b - a).norm() >= epsilon) {
    Vector mid = 0.5 * (a + b);
    if (is_member(mid))
      b = std::move(mid);
    else
      a = std::move(mid);
    ++n;
  }
  out.inner = std::move(a);
  out.outer = std::move(b);
  out.n_iter = n;
  out.bracket_width = (out.outer - out.inner).norm();
  return out;
}

/// Face-grid boundary search toward `target`, generic in the membership oracle.
/// Step 1: grid points that are members are recorded directly. Steps 2-5:
/// the rest are bisected along the segment to `target`.
template <class Member>
BoundaryApproximation boundary_search(const std::vector<Vector>& origins, const Vector& target, double epsilon,
                                      Member&& is_member) {
  if (!(epsilon > 0.0)) throw DomainError("bisection threshold epsilon must be positive");
  BoundaryApproximation out;
  out.target = target;
  out.epsilon = epsilon;
  for (std::size_t i = 0; i < origins.size(); ++i) {
    BoundaryPoint bp;
    if (is_member(origins[i])) {
      bp.origin = origins[i];
      bp.inner = origins[i];
      bp.outer = origins[i];
      bp.origin_member = true;
    } else {
      bp = bisect_ray(origins[i], target, epsilon, is_member);
    }
    bp.origin_index = i;
    out.points.push_back(std::move(bp));
  }
  return out;
}

/// Inner approximation of the boundary of the intrinsic risk set from the
/// faces of [0,1]^d containing 0. Requires lambda = 1 to be a member.
inline BoundaryApproximation boundary_intrinsic(const SystemicRiskProblem& problem, double grid_step, double epsilon) {
  if (!(grid_step > 0.0 && grid_step <= 1.0)) throw DomainError("grid_step must lie in (0,1]");
  const auto d = problem.d();
  const Vector ones = Vector::Ones(d);
  if (!problem.all_eligible_acceptable())
    throw AlgorithmError("infeasible",
                         "all-eligible system is unacceptable; lambda = 1 is not a member, use full_grid_scan");
  auto member = [&](const Vector& l) { return problem.is_member_intrinsic(LambdaVector(l.cwiseMax(0.0).cwiseMin(1.0))); };
  BoundaryApproximation out =
      boundary_search(face_grid(static_cast<std::size_t>(d), 0.0, 1.0, grid_step), ones, epsilon, member);
  out.grid_step = grid_step;
  out.feasible_flag = true;
  return out;
}

struct MonetaryBox {
  double lo;
  double hi;
};

/// Default search box [-2 max(x0), 2 max(x0)]^d.
inline MonetaryBox default_monetary_box(const MarketModel& m) {
  const double r = 2.0 * m.x0.maxCoeff();
  return {-r, r};
}

/// Boundary of the monetary risk set inside a box, bisecting from the faces
/// containing lo * 1 toward hi * 1.
inline BoundaryApproximation boundary_monetary(const SystemicRiskProblem& problem, double grid_step, double epsilon,
                                               MonetaryBox box) {
  if (!(grid_step > 0.0)) throw DomainError("grid_step must be positive");
  if (!(box.hi > box.lo)) throw DomainError("monetary box must satisfy lo < hi");
  const auto d = problem.d();
  const Vector target = Vector::Constant(d, box.hi);
  auto member = [&](const Vector& k) { return problem.is_member_monetary(CapitalVector(k)); };
  if (!member(target))
    throw AlgorithmError("box_error", "k_hi * 1 = " + std::to_string(box.hi) +
                                          " * 1 is not a member; enlarge the monetary search box");
  BoundaryApproximation out =
      boundary_search(face_grid(static_cast<std::size_t>(d), box.lo, box.hi, grid_step), target, epsilon, member);
  out.grid_step = grid_step;
  out.feasible_flag = problem.all_eligible_acceptable();
  return out;
}

struct GridScanResult {
  std::vector<Vector> members;
  std::size_t tested = 0;
};

/// Exhaustive membership over the lattice of [0,1]^d.
template <class Member>
GridScanResult full_grid_search(std::size_t d, double grid_step, Member&& is_member) {
  if (!(grid_step > 0.0 && grid_step <= 1.0)) throw DomainError("grid_step must lie in (0,1]");
  const std::vector<double> axis = axis_lattice(0.0, 1.0, grid_step);
  GridScanResult out;
  for_each_lattice_index(d, axis.size(), [&](const std::vector<std::size_t>& idx) {
    Vector p(static_cast<Eigen::Index>(d));
    for (std::size_t k = 0; k < d; ++k) p(static_cast<Eigen::Index>(k)) = axis[idx[k]];
    ++out.tested;
    if (is_member(p)) out.members.push_back(std::move(p));
  });
  return out;
}

inline GridScanResult full_grid_scan(const SystemicRiskProblem& problem, double grid_step) {
  return full_grid_search(static_cast<std::size_t>(problem.d()), grid_step,
                          [&](const Vector& l) { return problem.is_member_intrinsic(LambdaVector(l)); });
}

// ---------------------------------------------------------------------------
// Minimal points
// ---------------------------------------------------------------------------

/// Orthonormal basis (columns) of the complement of 1 in R^d, by Gram-Schmidt
/// on e_1 - e_2, ..., e_1 - e_d in that order.
inline Eigen::MatrixXd complement_basis(Eigen::Index d) {
  Eigen::MatrixXd basis(d, d - 1);
  for (Eigen::Index j = 1; j < d; ++j) {
    Vector v = Vector::Zero(d);
    v(0) = 1.0;
    v(j) = -1.0;
    for (Eigen::Index c = 0; c < j - 1; ++c) v -= basis.col(c).dot(v) * basis.col(c);
    basis.col(j - 1) = v.normalized();
  }
  return basis;
}

struct PruneResult {
  bool premise_holds = false;
  std::vector<Vector> survivors;
};

/// Convexity-based pruning test between two parallel planes E_k and
/// E_{k - epsilon}: the premise holds when every member found on the lower
/// plane lies (within `match_tol` in sup-norm) in the members of the upper
/// plane shifted by -(epsilon/d) 1. Survivors are the lower-plane members to
/// which all later, lower planes can be restricted.
inline PruneResult convex_prune(const std::vector<Vector>& current_plane_members,
                                const std::vector<Vector>& candidate_plane_members, double epsilon_shift,
                                double match_tol) {
  PruneResult out;
  if (candidate_plane_members.empty()) {
    out.premise_holds = true;
    return out;
  }
  const Eigen::Index d = candidate_plane_members.front().size();
  const Vector shift = Vector::Constant(d, epsilon_shift / static_cast<double>(d));
  for (const Vector& cand : candidate_plane_members) {
    bool matched = false;
    for (const Vector& cur : current_plane_members) {
      if ((cand - (cur - shift)).cwiseAbs().maxCoeff() <= match_tol) {
        matched = true;
        break;
      }
    }
    if (!matched) {
      out.premise_holds = false;
      out.survivors = candidate_plane_members;
      return out;
    }
  }
  out.premise_holds = true;
  out.survivors = candidate_plane_members;
  return out;
}

struct MinimalPointOptions {
  double plane_grid_step = 0.05;
  double delta = 1e-4;
  std::optional<Vector> weights;  ///< strictly positive; absent means 1
  bool prune = false;
};

struct MinimalPointResult {
  double k_min = 0.0;  ///< upper bracket end: smallest tested plane offset with members
  double k_a = 0.0;
  double k_b = 0.0;
  std::vector<Vector> minimal_points;  ///< in lambda coordinates
  std::vector<double> weighted_norms;
  std::size_t planes_tested = 0;
  std::size_t evaluations = 0;
  bool pruning_engaged = false;
};

/// Bisection over plane offsets k in [0, w^T 1] for the first plane
/// {mu : mu^T 1 = k} that meets w . R, with R given by `is_member` over
/// [0,1]^d. Each plane is sampled by a lattice on the complement of 1
/// (anchored at the diagonal) translated by (k/d) 1 and clipped to the box.
template <class Member>
MinimalPointResult minimal_point_search(std::size_t d_, const MinimalPointOptions& opt, Member&& is_member) {
  const auto d = static_cast<Eigen::Index>(d_);
  if (d < 1) throw DomainError("dimension must be positive");
  if (!(opt.plane_grid_step > 0.0)) throw DomainError("plane_grid_step must be positive");
  if (!(opt.delta > 0.0)) throw DomainError("delta must be positive");
  Vector w = opt.weights.value_or(Vector::Ones(d));
  if (w.size() != d) throw DomainError("weights dimension mismatch");
  for (Eigen::Index i = 0; i < d; ++i)
    if (!(w(i) > 0.0)) throw DomainError("weights must be strictly positive");

  MinimalPointResult out;
  auto member_mu = [&](const Vector& mu) {
    ++out.evaluations;
    return is_member(Vector(mu.cwiseQuotient(w).cwiseMax(0.0).cwiseMin(1.0)));
  };
  if (member_mu(Vector::Zero(d))) {
    out.minimal_points.push_back(Vector::Zero(d));
    out.weighted_norms.push_back(0.0);
    return out;
  }

  // Lattice coordinates t (integer multiples of the step, per basis vector)
  // covering the projection of the box [0,w].
  const Eigen::MatrixXd basis = complement_basis(d);
  const double h = opt.plane_grid_step;
  std::vector<std::pair<long, long>> ranges;
  for (Eigen::Index c = 0; c < d - 1; ++c) {
    double lo = 0.0;
    double hi = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) {
      const double v = basis(i, c) * w(i);
      lo += std::min(v, 0.0);
      hi += std::max(v, 0.0);
    }
    ranges.emplace_back(static_cast<long>(std::floor(lo / h - 1e-9)), static_cast<long>(std::ceil(hi / h + 1e-9)));
  }
  std::vector<Vector> offsets;  // B t for every lattice coordinate vector t
  {
    std::vector<long> t(static_cast<std::size_t>(d - 1));
    for (std::size_t c = 0; c < t.size(); ++c) t[c] = ranges[c].first;
    while (true) {
      Vector o = Vector::Zero(d);
      for (std::size_t c = 0; c < t.size(); ++c) o += static_cast<double>(t[c]) * h * basis.col(static_cast<Eigen::Index>(c));
      offsets.push_back(std::move(o));
      std::size_t pos = t.size();
      bool done = true;
      while (pos > 0) {
        --pos;
        if (++t[pos] <= ranges[pos].second) {
          done = false;
          break;
        }
        t[pos] = ranges[pos].first;
      }
      if (done) break;
    }
  }

  constexpr double kBoxTol = 1e-12;
  auto plane_point = [&](double k, const Vector& offset) -> std::optional<Vector> {
    Vector mu = Vector::Constant(d, k / static_cast<double>(d)) + offset;
    for (Eigen::Index i = 0; i < d; ++i) {
      if (mu(i) < -kBoxTol || mu(i) > w(i) + kBoxTol) return std::nullopt;
      mu(i) = std::clamp(mu(i), 0.0, w(i));
    }
    return mu;
  };
  struct PlaneMembers {
    std::vector<std::size_t> offset_ids;
    std::vector<Vector> points;
  };
  std::optional<std::vector<std::size_t>> active;  // offsets surviving pruning
  auto test_plane = [&](double k) {
    ++out.planes_tested;
    PlaneMembers pm;
    auto visit = [&](std::size_t id) {
      if (auto mu = plane_point(k, offsets[id]); mu && member_mu(*mu)) {
        pm.offset_ids.push_back(id);
        pm.points.push_back(std::move(*mu));
      }
    };
    if (active)
      for (std::size_t id : *active) visit(id);
    else
      for (std::size_t id = 0; id < offsets.size(); ++id) visit(id);
    return pm;
  };

  double ka = 0.0;
  double kb = w.sum();
  // The top plane meets the box only at w, which the lattice misses for
  // non-uniform weights.
  PlaneMembers upper;
  ++out.planes_tested;
  if (member_mu(w)) upper.points.push_back(w);
  if (upper.points.empty())
    throw AlgorithmError("resolution_error",
                         "no lattice point on the top plane is a member; lambda = 1 is not acceptable or the plane "
                         "grid is too coarse");

  while (kb - ka >= opt.delta) {
    const double k = 0.5 * (ka + kb);
    PlaneMembers lower = test_plane(k);
    if (lower.points.empty()) {
      ka = k;
      continue;
    }
    if (opt.prune) {
      if (active) {
        active = lower.offset_ids;
      } else {
        const PruneResult pr = convex_prune(upper.points, lower.points, kb - k, 0.5 * h);
        if (pr.premise_holds) {
          active = lower.offset_ids;
          out.pruning_engaged = true;
        }
      }
    }
    kb = k;
    upper = std::move(lower);
  }

  out.k_a = ka;
  out.k_b = kb;
  out.k_min = kb;
  for (const Vector& mu : upper.points) {
    out.weighted_norms.push_back(mu.sum());
    out.minimal_points.push_back(mu.cwiseQuotient(w));
  }
  return out;
}

/// Minimal (weighted) 1-norm points of the intrinsic risk set.
inline MinimalPointResult minimal_points(const SystemicRiskProblem& problem, const MinimalPointOptions& opt) {
  if (!problem.all_eligible_acceptable())
    throw AlgorithmError("infeasible", "lambda = 1 is not a member; minimal point search needs a non-empty set");
  return minimal_point_search(static_cast<std::size_t>(problem.d()), opt,
                              [&](const Vector& l) { return problem.is_member_intrinsic(LambdaVector(l)); });
}

}  // namespace sysrisk
