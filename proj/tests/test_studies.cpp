#include <gtest/gtest.h>

#include <filesystem>

#include "sysrisk/io.hpp"
#include "sysrisk/studies.hpp"

using namespace sysrisk;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sysrisk_test_" + name);
  fs::remove_all(p);
  return p;
}

StudyConfig small_study(StudyKind kind, std::vector<double> values) {
  StudyConfig c;
  c.kind = kind;
  c.values = std::move(values);
  c.n = 2000;
  c.seed = 17;
  c.grid_step = 0.25;
  c.epsilon = 1e-4;
  return c;
}

}  // namespace

TEST(Diagonal, AcceptableAtZero) {
  const MarketModel m = sample_market(base_market_config(2, 2000, 1));
  const SystemicRiskProblem p(m, {uniform_liabilities(2, 0.6, 0.2), 0.2}, AcceptanceCriterion{});
  const auto r = diagonal_requirements(p, 1e-6);
  ASSERT_TRUE(r.lambda_star && r.k_star);
  EXPECT_EQ(*r.lambda_star, 0.0);
  EXPECT_LE(*r.k_star, 0.0);
  EXPECT_FALSE(p.is_member_monetary(CapitalVector::constant(2, r.k_inner)));
}

TEST(Diagonal, Certificates) {
  const MarketModel m = sample_market(base_market_config(2, 4000, 1));
  const SystemicRiskProblem p(m, {uniform_liabilities(2, 0.6, 0.2), 0.9}, AcceptanceCriterion{});
  const double tol = 1e-6;
  const auto r = diagonal_requirements(p, tol);
  ASSERT_TRUE(r.lambda_star && r.k_star);
  EXPECT_TRUE(p.is_member_intrinsic(LambdaVector::constant(2, *r.lambda_star)));
  EXPECT_FALSE(p.is_member_intrinsic(LambdaVector::constant(2, r.lambda_inner)));
  EXPECT_LT(*r.lambda_star - r.lambda_inner, tol);
  EXPECT_TRUE(p.is_member_monetary(CapitalVector::constant(2, *r.k_star)));
  EXPECT_FALSE(p.is_member_monetary(CapitalVector::constant(2, r.k_inner)));
  EXPECT_LT(*r.k_star - r.k_inner, tol);
}

TEST(Histogram, SummaryInvariantsAndEsConsistency) {
  const MarketModel m = sample_market(base_market_config(2, 4000, 2));
  const SystemicRiskProblem p(m, {uniform_liabilities(2, 0.6, 0.2), 0.9}, AcceptanceCriterion{});
  const auto diag = diagonal_requirements(p, 1e-6);
  const auto rep = histogram_report(p, LambdaVector::constant(2, *diag.lambda_star),
                                    CapitalVector::constant(2, *diag.k_star), 0.01);
  ASSERT_EQ(rep.size(), 4u);
  for (const auto& h : rep) {
    EXPECT_LE(h.summary.support_min, h.summary.mean);
    EXPECT_LE(h.summary.mean, h.summary.support_max);
    EXPECT_GE(h.summary.variance, 0.0);
    std::size_t total = 0;
    for (auto c : h.summary.counts) total += c;
    EXPECT_EQ(total, h.aggregates.size());
    EXPECT_NEAR(empirical_es(h.aggregates, 0.05), h.summary.es, 1e-12);
  }
  EXPECT_EQ(rep[3].system, "all_eligible");
  EXPECT_LT(rep[3].summary.es, 0.0);
  EXPECT_NEAR(rep[1].summary.es, 0.0, 5e-3);
  EXPECT_NEAR(rep[2].summary.es, 0.0, 5e-3);
}

TEST(Costs, ZeroAndMonotone) {
  const MarketModel m = sample_market(base_market_config(2, 3000, 3));
  const SystemicRiskProblem p(m, {uniform_liabilities(2, 0.6, 0.2), 0.9}, AcceptanceCriterion{});
  const LambdaVector lam = LambdaVector::constant(2, 0.4);
  const CapitalVector k = CapitalVector::constant(2, 0.1);
  const CostSpec zero{0.0, 0.0};
  EXPECT_EQ(apply_costs(p, lam, zero), p.intrinsic_aggregate(lam));
  EXPECT_EQ(apply_costs(p, k, zero), p.monetary_aggregate(k));
  const auto base_l = p.intrinsic_aggregate(lam);
  const auto cost_l = apply_costs(p, lam, CostSpec{});
  const auto base_k = p.monetary_aggregate(k);
  const auto cost_k = apply_costs(p, k, CostSpec{});
  for (std::size_t i = 0; i < base_l.size(); ++i) {
    EXPECT_LE(cost_l[i], base_l[i] + 1e-15);
    EXPECT_LE(cost_k[i], base_k[i] + 1e-15);
  }
  EXPECT_THROW(apply_costs(p, lam, CostSpec{-1.0, 0.0}), ValidationError);
}

TEST(StudyConfig, JsonRoundTripAndValidation) {
  nlohmann::json j = {{"kind", "corr_S"}, {"values", {0.1, 0.2}}, {"beta", 0.9}, {"N", 500}, {"seed", 3}};
  const StudyConfig c = study_config_from_json(j);
  EXPECT_EQ(c.kind, StudyKind::corr_S);
  EXPECT_EQ(c.n, 500u);
  const StudyConfig back = study_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  j.erase("beta");
  EXPECT_THROW(study_config_from_json(j), ValidationError);
  j["beta"] = 0.9;
  j["values"] = {1.5};
  EXPECT_THROW(study_config_from_json(j), ValidationError);
  j["kind"] = "nonsense";
  EXPECT_THROW(study_config_from_json(j), ValidationError);
}

TEST(RunStudy, CorrXWritesArtifactsDeterministically) {
  const StudyConfig c = small_study(StudyKind::corr_X, {-0.3, 0.0, 0.3});
  const fs::path a = scratch("corrx_a");
  const fs::path b = scratch("corrx_b");
  const StudyResult r = run_study(c, a);
  run_study(c, b);
  for (const char* f : {"manifest.json", "boundary_rho_X=-0.3.csv", "boundary_rho_X=0.csv", "boundary_rho_X=0.3.csv",
                        "boundary_monetary_rho_X=0.3.csv"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(io::read_text(a / f), io::read_text(b / f)) << f;
  }
  const std::string csv = io::read_text(a / "boundary_rho_X=0.csv");
  EXPECT_EQ(csv.rfind("# {", 0), 0u);
  EXPECT_NE(csv.find("origin_index,lambda_1,lambda_2,bracket_width,n_iter"), std::string::npos);
  const auto manifest = nlohmann::json::parse(io::read_text(a / "manifest.json"));
  EXPECT_TRUE(manifest.contains("nestedness_pass"));
  EXPECT_EQ(manifest["config"]["seed"], 17);
  EXPECT_EQ(r.nestedness.size(), 4u);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(RunStudy, CorrSFallsBackToGridScan) {
  StudyConfig c = small_study(StudyKind::corr_S, {0.0, 0.9});
  c.monetary = false;
  const StudyResult r = run_study(c);
  ASSERT_EQ(r.sweep.size(), 2u);
  for (const auto& s : r.sweep) EXPECT_EQ(s.all_eligible_acceptable, s.intrinsic.has_value());
  for (const auto& s : r.sweep) EXPECT_EQ(!s.all_eligible_acceptable, s.grid_scan.has_value());
}

TEST(RunStudy, HistogramsAndCosts) {
  StudyConfig c;
  c.kind = StudyKind::costs;
  c.n = 2000;
  c.setups = {{4, 0.6, 0.23}};
  const fs::path dir = scratch("costs");
  const StudyResult r = run_study(c, dir);
  ASSERT_EQ(r.setups.size(), 1u);
  EXPECT_EQ(r.setups[0].histograms.size(), 4u);
  EXPECT_EQ(r.setups[0].with_costs.size(), 2u);
  EXPECT_TRUE(fs::exists(dir / "histogram_intrinsic_d=4.csv"));
  EXPECT_TRUE(fs::exists(dir / "aggregate_monetary_costs_d=4.csv"));
  const auto manifest = nlohmann::json::parse(io::read_text(dir / "manifest.json"));
  EXPECT_TRUE(manifest["setups"][0].contains("cost_deltas"));
  // ES recomputed from the emitted raw aggregates.
  const auto raw = io::read_sample_column(dir / "aggregate_intrinsic_d=4.csv", "lambda_value");
  EXPECT_NEAR(empirical_es(raw, 0.05), r.setups[0].histograms[1].summary.es, 1e-12);
  fs::remove_all(dir);
}

TEST(Io, ScenarioCsvRoundTrip) {
  const MarketModel m = sample_market(base_market_config(3, 50, 4));
  const fs::path dir = scratch("io");
  io::write_scenarios_csv(dir / "x.csv", m.xt);
  const std::string text = io::read_text(dir / "x.csv");
  EXPECT_EQ(text.rfind("scenario,asset_1,asset_2,asset_3\n", 0), 0u);
  EXPECT_TRUE(io::read_scenarios_csv(dir / "x.csv") == m.xt);
  fs::remove_all(dir);
}

TEST(Io, MarketAndLiabilityJson) {
  const nlohmann::json j = {
      {"base", {{"d", 2}}},
      {"correlation", {{{"pair", {"X1", "S1"}}, {"rho", 0.25}}}},
      {"N", 10},
      {"seed", 5}};
  const MarketConfig cfg = io::market_from_json(j);
  EXPECT_EQ(cfg.correlation.matrix()(0, 2), 0.25);
  EXPECT_EQ(cfg.n, 10u);
  const nlohmann::json ln = {{"kind", "lognormal"}, {"mean", 2.0 / 7.0}, {"variance", 0.2 * 10.0 / 392.0}};
  const auto spec = std::get<LognormalMarginal>(io::marginal_from_json(ln));
  EXPECT_NEAR(spec.mu, -1.283075, 1e-5);
  const auto l = io::liabilities_from_json({{"matrix", {{0, 0, 0}, {0.2, 0, 0.6}, {0.2, 0.6, 0}}}});
  EXPECT_DOUBLE_EQ(l.relative(0, 1), 0.75);
  EXPECT_THROW(io::liabilities_from_json({{"matrix", {{0, 0, 0}, {0.2, 0.1, 0.6}, {0.2, 0.6, 0}}}}), ValidationError);
  EXPECT_THROW(io::copula_index("Y1", 2), ValidationError);
  EXPECT_THROW(io::copula_index("X3", 2), ValidationError);
}
