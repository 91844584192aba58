#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "property_checks.hpp"
#include "sysrisk/setvalued.hpp"

using namespace sysrisk;

namespace {

const AcceptanceCriterion kEs{};

MarketModel base_market(std::size_t n, std::uint64_t seed = 1, std::size_t d = 2) {
  return sample_market(base_market_config(d, n, seed));
}

AggregationSpec base_agg(double beta = 0.9, std::size_t d = 2) { return {uniform_liabilities(d, 0.6, 0.2), beta}; }

MarketModel swap_columns(const MarketModel& m) {
  MarketModel out = m;
  auto swap = [](const Samples& s) {
    Samples t = s;
    t.col(0) = s.col(1);
    t.col(1) = s.col(0);
    return t;
  };
  out.xt = ScenarioSet(swap(m.xt.values()));
  out.st = ScenarioSet(swap(m.st.values()));
  std::swap(out.x0(0), out.x0(1));
  std::swap(out.s0(0), out.s0(1));
  return out;
}

}  // namespace

TEST(IntrinsicSystem, Endpoints) {
  const MarketModel m = base_market(100);
  EXPECT_EQ(intrinsic_system(m, LambdaVector::constant(2, 0.0)).values(), m.xt.values());
  const Samples all = intrinsic_system(m, LambdaVector::constant(2, 1.0)).values();
  for (Eigen::Index c = 0; c < 2; ++c)
    EXPECT_NEAR((all.col(c) - m.st.values().col(c) * (m.x0(c) / m.s0(c))).cwiseAbs().maxCoeff(), 0.0, 1e-15);
  MarketModel cash = m;
  cash.st = ScenarioSet(Samples(m.st.values().array() * 0.0 + 1.0));
  cash.s0 = Vector::Ones(2);
  const Samples half = intrinsic_system(cash, LambdaVector::constant(2, 0.5)).values();
  for (Eigen::Index c = 0; c < 2; ++c)
    EXPECT_NEAR((half.col(c).array() - (0.5 * m.xt.values().col(c).array() + 0.5 * m.x0(c))).abs().maxCoeff(), 0.0,
                1e-15);
  EXPECT_THROW(LambdaVector::constant(2, 1.5), DomainError);
}

TEST(Membership, Basics) {
  const MarketModel m = base_market(5000);
  const AggregationSpec agg = base_agg();
  EXPECT_TRUE(is_member_intrinsic(LambdaVector::constant(2, 1.0), m, agg, kEs));
  EXPECT_FALSE(is_member_intrinsic(LambdaVector::constant(2, 0.0), m, agg, kEs));
  EXPECT_TRUE(is_member_monetary(CapitalVector::constant(2, 1.0), m, agg, kEs));
  EXPECT_FALSE(is_member_monetary(CapitalVector::constant(2, 0.0), m, agg, kEs));
}

TEST(BoundaryIntrinsic, Certificates) {
  const MarketModel m = base_market(5000);
  const SystemicRiskProblem p(m, base_agg(), kEs);
  const double eps = 1e-5;
  const auto b = boundary_intrinsic(p, 0.1, eps);
  EXPECT_TRUE(b.feasible_flag);
  EXPECT_EQ(b.points.size(), 21u);
  for (const auto& pt : b.points) {
    EXPECT_TRUE(p.is_member_intrinsic(LambdaVector(pt.outer)));
    if (pt.origin_member) continue;
    EXPECT_FALSE(p.is_member_intrinsic(LambdaVector(pt.inner)));
    EXPECT_LT(pt.bracket_width, eps);
    const double expected = std::ldexp((Vector::Ones(2) - pt.origin).norm(), -static_cast<int>(pt.n_iter));
    EXPECT_NEAR(pt.bracket_width, expected, 1e-15);
    // The bracket lies on the segment to 1 with the inner end closer to the origin.
    EXPECT_TRUE(((pt.outer - pt.inner).array() >= -1e-15).all());
  }
}

TEST(BoundaryIntrinsic, AcceptableOriginShortCircuits) {
  const MarketModel m = base_market(2000);
  const SystemicRiskProblem p(m, base_agg(0.2), kEs);
  ASSERT_TRUE(p.is_member_intrinsic(LambdaVector::constant(2, 0.0)));
  const auto b = boundary_intrinsic(p, 0.25, 1e-6);
  for (const auto& pt : b.points) {
    EXPECT_TRUE(pt.origin_member);
    EXPECT_EQ(pt.n_iter, 0u);
    EXPECT_EQ(pt.outer, pt.origin);
  }
}

TEST(BoundaryIntrinsic, InfeasibleDirectsToGridScan) {
  MarketModel m = base_market(1000);
  m.st = ScenarioSet(Samples(m.st.values() * 0.0));
  const SystemicRiskProblem p(m, base_agg(), kEs);
  try {
    boundary_intrinsic(p, 0.1, 1e-6);
    FAIL();
  } catch (const AlgorithmError& e) {
    EXPECT_EQ(e.kind(), "infeasible");
  }
  EXPECT_TRUE(full_grid_scan(p, 0.25).members.empty());
}

TEST(BoundaryIntrinsic, MirrorSymmetryUnderIndexPermutation) {
  const MarketModel m = base_market(5000, 3);
  const MarketModel mirrored = swap_columns(m);
  const SystemicRiskProblem p(m, base_agg(), kEs);
  const SystemicRiskProblem q(mirrored, base_agg(), kEs);
  const double eps = 1e-6;
  const double step = 0.1;
  const auto a = boundary_intrinsic(p, step, eps);
  const auto b = boundary_intrinsic(q, step, eps);
  ASSERT_EQ(a.points.size(), b.points.size());
  for (const auto& pa : a.points) {
    const Vector target(Vector{{pa.origin(1), pa.origin(0)}});
    const auto it = std::find_if(b.points.begin(), b.points.end(),
                                 [&](const BoundaryPoint& pb) { return (pb.origin - target).norm() < 1e-12; });
    ASSERT_NE(it, b.points.end());
    EXPECT_NEAR(pa.outer(0), it->outer(1), 2 * eps);
    EXPECT_NEAR(pa.outer(1), it->outer(0), 2 * eps);
  }
}

TEST(BoundaryMonetary, CertificatesAndBoxErrors) {
  const MarketModel m = base_market(5000);
  const SystemicRiskProblem p(m, base_agg(), kEs);
  const double eps = 1e-5;
  const auto box = default_monetary_box(m);
  EXPECT_NEAR(box.hi, 2 * m.x0.maxCoeff(), 1e-15);
  const auto b = boundary_monetary(p, 0.05, eps, box);
  for (const auto& pt : b.points) {
    EXPECT_TRUE(p.is_member_monetary(CapitalVector(pt.outer)));
    if (pt.origin_member) continue;
    EXPECT_FALSE(p.is_member_monetary(CapitalVector(pt.inner)));
    EXPECT_NEAR(pt.bracket_width,
                std::ldexp((Vector::Constant(2, box.hi) - pt.origin).norm(), -static_cast<int>(pt.n_iter)), 1e-15);
  }
  try {
    boundary_monetary(p, 0.05, eps, {-0.1, 0.0});
    FAIL();
  } catch (const AlgorithmError& e) {
    EXPECT_EQ(e.kind(), "box_error");
  }
  const auto inside = boundary_monetary(p, 0.5, eps, {1.0, 2.0});
  for (const auto& pt : inside.points) EXPECT_TRUE(pt.origin_member);
}

TEST(BoundaryMonetary, MirrorSymmetry) {
  const MarketModel m = base_market(4000, 5);
  const SystemicRiskProblem p(m, base_agg(), kEs);
  const MarketModel mirrored = swap_columns(m);
  const SystemicRiskProblem q(mirrored, base_agg(), kEs);
  const double eps = 1e-6;
  const auto a = boundary_monetary(p, 0.1, eps, default_monetary_box(m));
  const auto b = boundary_monetary(q, 0.1, eps, default_monetary_box(m));
  for (const auto& pa : a.points) {
    const Vector target(Vector{{pa.origin(1), pa.origin(0)}});
    const auto it = std::find_if(b.points.begin(), b.points.end(),
                                 [&](const BoundaryPoint& pb) { return (pb.origin - target).norm() < 1e-12; });
    ASSERT_NE(it, b.points.end());
    EXPECT_NEAR(pa.outer(0), it->outer(1), 2 * eps);
  }
}

TEST(FullGridScan, AgreesWithBoundaryMembership) {
  const MarketModel m = base_market(3000);
  const SystemicRiskProblem p(m, base_agg(), kEs);
  const auto g = full_grid_scan(p, 0.25);
  EXPECT_EQ(g.tested, 25u);
  for (const auto& v : g.members) EXPECT_TRUE(p.is_member_intrinsic(LambdaVector(v)));
  const auto b = boundary_intrinsic(p, 0.25, 1e-6);
  for (const auto& pt : b.points)
    if (pt.origin_member)
      EXPECT_TRUE(std::any_of(g.members.begin(), g.members.end(), [&](const Vector& v) { return v == pt.origin; }));
  const SystemicRiskProblem easy(m, base_agg(0.1), kEs);
  EXPECT_EQ(full_grid_scan(easy, 0.25).members.size(), 25u);
}

TEST(Lattice, FaceGridAndAxis) {
  EXPECT_EQ(axis_lattice(0, 1, 0.05).size(), 21u);
  EXPECT_EQ(axis_lattice(0, 1, 0.3).back(), 1.0);
  EXPECT_EQ(face_grid(2, 0, 1, 0.05).size(), 41u);
  EXPECT_EQ(face_grid(3, 0, 1, 0.5).size(), 27u - 8u);
  const auto b = complement_basis(4);
  EXPECT_NEAR((b.transpose() * b - Eigen::MatrixXd::Identity(3, 3)).norm(), 0.0, 1e-14);
  EXPECT_NEAR((b.transpose() * Vector::Ones(4)).norm(), 0.0, 1e-14);
}

TEST(ConvexPrune, EmptyCandidates) {
  const auto r = convex_prune({Vector::Ones(2)}, {}, 0.1, 0.01);
  EXPECT_TRUE(r.premise_holds);
  EXPECT_TRUE(r.survivors.empty());
}

TEST(ConvexPrune, HalfspaceOracle) {
  // {x : x^T 1 >= c} within [0,1]^2 on a 0.01 lattice along each plane.
  const double c = 0.6;
  const double h = 0.01 * std::sqrt(2.0);
  const Vector dir = complement_basis(2).col(0);
  auto member = [&](const Vector& x) { return x.sum() >= c - 1e-12; };
  auto plane = [&](double k) {
    std::vector<Vector> out;
    for (int t = -200; t <= 200; ++t) {
      const Vector x = Vector::Constant(2, k / 2) + t * h * dir;
      if ((x.array() >= -1e-12).all() && (x.array() <= 1 + 1e-12).all() && member(x)) out.push_back(x);
    }
    return out;
  };
  int premises = 0;
  for (double k : {0.8, 0.9, 1.0})
    for (double eps : {0.02, 0.1, 0.2}) {
      const auto upper = plane(k);
      const auto lower = plane(k - eps);
      const auto r = convex_prune(upper, lower, eps, 0.5 * 0.01);
      EXPECT_TRUE(r.premise_holds) << k << ' ' << eps;
      premises += r.premise_holds;
      // Every true member on a lower plane is a translate of a survivor.
      for (double kk = c; kk < k - eps; kk += 0.01) {
        for (const auto& x : plane(kk)) {
          const Vector shift = Vector::Constant(2, (k - eps - kk) / 2);
          const bool covered = std::any_of(r.survivors.begin(), r.survivors.end(), [&](const Vector& s) {
            return ((s - shift) - x).cwiseAbs().maxCoeff() <= 0.01 + 1e-9;
          });
          EXPECT_TRUE(covered) << kk;
        }
      }
    }
  EXPECT_EQ(premises, 9);
  // Planes above the box's mid diagonal grow as k falls: the premise must fail.
  EXPECT_FALSE(convex_prune(plane(1.8), plane(1.5), 0.3, 0.005).premise_holds);
}

TEST(MinimalPoints, ZeroMember) {
  const auto r = minimal_point_search(3, {}, [](const Vector&) { return true; });
  EXPECT_EQ(r.k_min, 0.0);
  ASSERT_EQ(r.minimal_points.size(), 1u);
  EXPECT_EQ(r.minimal_points[0], Vector::Zero(3));
}

TEST(MinimalPoints, ResolutionError) {
  try {
    minimal_point_search(2, {}, [](const Vector&) { return false; });
    FAIL();
  } catch (const AlgorithmError& e) {
    EXPECT_EQ(e.kind(), "resolution_error");
  }
}

TEST(MinimalPoints, HalfspaceAndWeights) {
  auto halfspace = [](const Vector& x) { return x.sum() >= 0.7; };
  MinimalPointOptions o;
  o.delta = 1e-6;
  const auto r = minimal_point_search(2, o, halfspace);
  EXPECT_NEAR(r.k_min, 0.7, 1e-6);
  EXPECT_LE(r.k_b - r.k_a, 1e-6);
  for (const auto& v : r.minimal_points) EXPECT_TRUE(halfspace(v));
  o.prune = true;
  const auto rp = minimal_point_search(2, o, halfspace);
  EXPECT_NEAR(rp.k_min, r.k_min, o.delta);
  EXPECT_TRUE(rp.pruning_engaged);
  EXPECT_LE(rp.evaluations, r.evaluations);
  // Weighted: minimise 2 x1 + x2 over x1 + x2 >= 0.7 in [0,1]^2 -> (0, 0.7).
  MinimalPointOptions w;
  w.delta = 1e-6;
  w.plane_grid_step = 0.01;
  w.weights = Vector{{2.0, 1.0}};
  const auto rw = minimal_point_search(2, w, halfspace);
  EXPECT_NEAR(rw.k_min, 0.7, 0.02);
  for (const auto& v : rw.minimal_points) EXPECT_LT(v(0), 0.02);
  w.weights = Vector{{1.0, 0.0}};
  EXPECT_THROW(minimal_point_search(2, w, halfspace), DomainError);
}

TEST(MinimalPoints, BaseCaseConsistency) {
  const MarketModel m = base_market(5000);
  const SystemicRiskProblem p(m, base_agg(), kEs);
  MinimalPointOptions o;
  const auto r = minimal_points(p, o);
  EXPECT_LE(r.k_b - r.k_a, o.delta);
  for (const auto& v : r.minimal_points) {
    EXPECT_TRUE(p.is_member_intrinsic(LambdaVector(v)));
    EXPECT_NEAR(v.sum(), r.k_min, 1e-9);
    EXPECT_LE(std::abs(v(0) - v(1)), 0.05 + 1e-12);
  }
  const auto b = boundary_intrinsic(p, 0.05, 1e-6);
  double best = 1e9;
  for (const auto& pt : b.points) best = std::min(best, pt.outer.sum());
  EXPECT_LE(std::abs(best - r.k_min), 0.05 + o.delta);
  o.prune = true;
  EXPECT_NEAR(minimal_points(p, o).k_min, r.k_min, o.delta);
}

TEST(Properties, RandomisedInstances) {
  std::mt19937_64 gen(99);
  props::PropertyReport rep;
  for (int t = 0; t < 4; ++t) props::check_properties(props::random_instance(gen, 2000), gen, rep);
  for (const auto& [name, tally] : rep) {
    EXPECT_GT(tally.checked, 0u) << name;
    EXPECT_EQ(tally.failed, 0u) << name;
  }
}
