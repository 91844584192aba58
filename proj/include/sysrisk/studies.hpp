#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sysrisk/clearing.hpp"
#include "sysrisk/error.hpp"
#include "sysrisk/io.hpp"
#include "sysrisk/risk.hpp"
#include "sysrisk/scenario.hpp"
#include "sysrisk/setvalued.hpp"

#ifndef SYSRISK_VERSION
#define SYSRISK_VERSION "0.1.0"
#endif

namespace sysrisk {

// ---------------------------------------------------------------------------
// Diagonal requirements
// ---------------------------------------------------------------------------

struct DiagonalRequirements {
  std::optional<double> lambda_star;  ///< smallest member lambda * 1
  double lambda_inner = 0.0;          ///< largest tested non-member below lambda_star
  std::optional<double> k_star;       ///< smallest member k * 1
  double k_inner = 0.0;
};

/// Scalar bisections along the diagonal for lambda * 1 in [0,1] and k * 1 in R.
inline DiagonalRequirements diagonal_requirements(const SystemicRiskProblem& problem, double tol = 1e-6) {
  if (!(tol > 0.0)) throw DomainError("diagonal tolerance must be positive");
  const auto d = problem.d();
  DiagonalRequirements out;

  auto lam_member = [&](double v) { return problem.is_member_intrinsic(LambdaVector::constant(d, v)); };
  if (lam_member(0.0)) {
    out.lambda_star = 0.0;
  } else if (lam_member(1.0)) {
    double lo = 0.0;
    double hi = 1.0;
    while (hi - lo >= tol) {
      const double mid = 0.5 * (lo + hi);
      (lam_member(mid) ? hi : lo) = mid;
    }
    out.lambda_star = hi;
    out.lambda_inner = lo;
  }

  auto k_member = [&](double v) { return problem.is_member_monetary(CapitalVector::constant(d, v)); };
  const double scale = std::max(problem.market().x0.maxCoeff(), 1e-3);
  constexpr int kMaxDoublings = 60;
  double lo = 0.0;
  double hi = 0.0;
  bool bracketed = false;
  if (k_member(0.0)) {
    double step = scale;
    for (int i = 0; i < kMaxDoublings; ++i, step *= 2.0) {
      if (!k_member(-step)) {
        lo = -step;
        bracketed = true;
        break;
      }
      hi = -step;
    }
  } else {
    double step = scale;
    for (int i = 0; i < kMaxDoublings; ++i, step *= 2.0) {
      if (k_member(step)) {
        hi = step;
        bracketed = true;
        break;
      }
      lo = step;
    }
  }
  if (bracketed) {
    while (hi - lo >= tol) {
      const double mid = 0.5 * (lo + hi);
      (k_member(mid) ? hi : lo) = mid;
    }
    out.k_star = hi;
    out.k_inner = lo;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Histograms
// ---------------------------------------------------------------------------

struct HistogramSummary {
  double support_min = 0.0;
  double support_max = 0.0;
  double mean = 0.0;
  double variance = 0.0;
  double skewness = 0.0;
  double es = 0.0;
  double bin_width = 0.0;
  double bin_origin = 0.0;  ///< left edge of bin 0
  std::vector<std::size_t> counts;
};

inline HistogramSummary summarize(std::span<const double> v, double alpha, double bin_width) {
  if (v.empty()) throw DomainError("cannot summarise an empty sample");
  if (!(bin_width > 0.0)) throw DomainError("bin width must be positive");
  HistogramSummary s;
  const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  s.support_min = *mn;
  s.support_max = *mx;
  const double n = static_cast<double>(v.size());
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = std::clamp(sum / n, s.support_min, s.support_max);
  double m2 = 0.0;
  double m3 = 0.0;
  for (double x : v) {
    const double c = x - s.mean;
    m2 += c * c;
    m3 += c * c * c;
  }
  m2 /= n;
  m3 /= n;
  s.variance = m2;
  s.skewness = m2 > 0.0 ? m3 / std::pow(m2, 1.5) : 0.0;
  s.es = empirical_es(v, alpha);
  s.bin_width = bin_width;
  s.bin_origin = std::floor(s.support_min / bin_width) * bin_width;
  const auto bins = static_cast<std::size_t>(std::floor((s.support_max - s.bin_origin) / bin_width)) + 1;
  s.counts.assign(bins, 0);
  for (double x : v) {
    auto b = static_cast<std::size_t>(std::floor((x - s.bin_origin) / bin_width));
    ++s.counts[std::min(b, bins - 1)];
  }
  return s;
}

inline nlohmann::json to_json(const HistogramSummary& s) {
  return {{"support_min", s.support_min}, {"support_max", s.support_max}, {"mean", s.mean},
          {"variance", s.variance},       {"skewness", s.skewness},       {"es", s.es},
          {"bin_width", s.bin_width},     {"bin_origin", s.bin_origin}};
}

struct HistogramEntry {
  std::string system;
  std::vector<double> aggregates;
  HistogramSummary summary;
};

/// Original, intrinsic, monetary and all-eligible aggregates over the same scenarios.
inline std::vector<HistogramEntry> histogram_report(const SystemicRiskProblem& problem, const LambdaVector& lambda,
                                                    const CapitalVector& k, double bin_width = 0.01) {
  const auto d = problem.d();
  const double alpha = problem.criterion().alpha;
  std::vector<HistogramEntry> out;
  auto add = [&](std::string name, std::vector<double> agg) {
    HistogramSummary s = summarize(agg, alpha, bin_width);
    out.push_back({std::move(name), std::move(agg), std::move(s)});
  };
  add("original", problem.intrinsic_aggregate(LambdaVector::constant(d, 0.0)));
  add("intrinsic", problem.intrinsic_aggregate(lambda));
  add("monetary", problem.monetary_aggregate(k));
  add("all_eligible", problem.intrinsic_aggregate(LambdaVector::constant(d, 1.0)));
  return out;
}

inline void write_histogram_csv(const std::filesystem::path& path, const HistogramSummary& s,
                                const nlohmann::json& meta) {
  auto out = io::open_out(path);
  nlohmann::json m = meta;
  m["summary"] = to_json(s);
  io::write_meta_line(out, m);
  out << "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < s.counts.size(); ++b) {
    const double lo = s.bin_origin + static_cast<double>(b) * s.bin_width;
    out << io::fmt(lo) << ',' << io::fmt(lo + s.bin_width) << ',' << s.counts[b] << '\n';
  }
}

// ---------------------------------------------------------------------------
// Costs
// ---------------------------------------------------------------------------

struct CostSpec {
  double transaction_cost_bps = 50.0;
  double cost_of_debt = 0.0264;

  void validate() const {
    if (!(transaction_cost_bps >= 0.0 && cost_of_debt >= 0.0)) throw ValidationError("costs must be nonnegative");
  }
  double rate() const noexcept { return transaction_cost_bps * 1e-4; }
};

/// Intrinsic action with sell and buy legs charged on lambda . x0.
inline std::vector<double> apply_costs(const SystemicRiskProblem& problem, const LambdaVector& lambda,
                                       const CostSpec& costs) {
  costs.validate();
  Samples w = intrinsic_system(problem.market(), lambda).values();
  const Vector charge = 2.0 * costs.rate() * lambda.values().cwiseProduct(problem.market().x0);
  for (Eigen::Index c = 0; c < w.cols(); ++c) w.col(c).array() -= charge(c);
  return aggregate_scenarios(w, problem.aggregation(), problem.threads());
}

/// Monetary action: buy leg plus cost of debt on the injected capital.
inline std::vector<double> apply_costs(const SystemicRiskProblem& problem, const CapitalVector& k,
                                       const CostSpec& costs) {
  costs.validate();
  Samples w = monetary_system(problem.market(), k);
  const Vector charge = (costs.rate() + costs.cost_of_debt) * k.values();
  for (Eigen::Index c = 0; c < w.cols(); ++c) w.col(c).array() -= charge(c);
  return aggregate_scenarios(w, problem.aggregation(), problem.threads());
}

// ---------------------------------------------------------------------------
// Study configuration
// ---------------------------------------------------------------------------

enum class StudyKind { corr_X, corr_X1S1, corr_S, liab_society, liab_bilateral, volatility, histograms, costs };

inline std::string to_string(StudyKind k) {
  switch (k) {
    case StudyKind::corr_X: return "corr_X";
    case StudyKind::corr_X1S1: return "corr_X1S1";
    case StudyKind::corr_S: return "corr_S";
    case StudyKind::liab_society: return "liab_society";
    case StudyKind::liab_bilateral: return "liab_bilateral";
    case StudyKind::volatility: return "volatility";
    case StudyKind::histograms: return "histograms";
    case StudyKind::costs: return "costs";
  }
  return "?";
}

inline StudyKind study_kind_from_string(const std::string& s) {
  for (StudyKind k : {StudyKind::corr_X, StudyKind::corr_X1S1, StudyKind::corr_S, StudyKind::liab_society,
                      StudyKind::liab_bilateral, StudyKind::volatility, StudyKind::histograms, StudyKind::costs})
    if (to_string(k) == s) return k;
  throw ValidationError("unknown study kind '" + s + "'");
}

/// Name of the swept parameter as it appears in output file names.
inline std::string sweep_parameter(StudyKind k) {
  switch (k) {
    case StudyKind::corr_X: return "rho_X";
    case StudyKind::corr_X1S1: return "rho_X1S1";
    case StudyKind::corr_S: return "rho_S";
    case StudyKind::liab_society: return "L_i0";
    case StudyKind::liab_bilateral: return "L_ij";
    case StudyKind::volatility: return "kappa";
    default: return "d";
  }
}

/// One network for the histogram and cost studies.
struct HistogramSetup {
  std::size_t d = 4;
  double bilateral = 0.6;
  double society = 0.23;
};

struct StudyConfig {
  StudyKind kind = StudyKind::corr_X;
  std::vector<double> values;
  std::size_t d = 2;
  double a = 2.0;
  double b = 5.0;
  double variance_ratio = 0.2;
  double bilateral = 0.6;
  double society = 0.2;
  std::size_t n = 100000;
  std::uint64_t seed = 1;
  double grid_step = 0.05;
  double epsilon = 1e-6;
  double beta = 0.9;
  AcceptanceCriterion criterion{};
  std::optional<MonetaryBox> monetary_box;
  bool monetary = true;
  bool minimal = false;
  double plane_grid_step = 0.05;
  double delta = 1e-4;
  double nest_slack = 1e-3;
  double bin_width = 0.01;
  double diag_tol = 1e-6;
  std::vector<HistogramSetup> setups;
  CostSpec costs{};
  unsigned threads = 1;

  void validate() const {
    if (n < 1) throw ValidationError("N must be at least 1");
    if (d < 2) throw ValidationError("d must be at least 2");
    if (!(beta > 0.0 && beta < 1.0)) throw ValidationError("beta must lie in (0,1)");
    criterion.validate();
    costs.validate();
    if (!(grid_step > 0.0 && grid_step <= 1.0)) throw ValidationError("grid_step must lie in (0,1]");
    if (!(epsilon > 0.0 && delta > 0.0 && plane_grid_step > 0.0)) throw ValidationError("tolerances must be positive");
    const bool sweep = kind != StudyKind::histograms && kind != StudyKind::costs;
    if (sweep && values.empty()) throw ValidationError("sweep study needs at least one value");
    if (!sweep && setups.empty()) throw ValidationError("histogram/cost study needs at least one setup");
    for (double v : values) {
      const std::string where = sweep_parameter(kind) + " = " + io::fmt(v);
      switch (kind) {
        case StudyKind::corr_X:
        case StudyKind::corr_X1S1:
        case StudyKind::corr_S:
          if (!(v > -1.0 && v < 1.0)) throw ValidationError(where + ": correlation must lie in (-1,1)");
          break;
        case StudyKind::liab_society:
        case StudyKind::volatility:
          if (!(v > 0.0)) throw ValidationError(where + ": must be positive");
          break;
        case StudyKind::liab_bilateral:
          if (!(v >= 0.0)) throw ValidationError(where + ": must be nonnegative");
          break;
        default:
          break;
      }
    }
  }
};

inline StudyConfig study_config_from_json(const nlohmann::json& j) {
  StudyConfig c;
  c.kind = study_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("values")) c.values = j.at("values").get<std::vector<double>>();
  if (j.contains("base")) {
    const auto& b = j.at("base");
    c.d = b.value("d", c.d);
    c.a = b.value("a", c.a);
    c.b = b.value("b", c.b);
    c.variance_ratio = b.value("variance_ratio", c.variance_ratio);
  }
  if (j.contains("liabilities")) {
    c.bilateral = j.at("liabilities").value("bilateral", c.bilateral);
    c.society = j.at("liabilities").value("society", c.society);
  }
  if (!j.contains("beta")) throw ValidationError("study config requires 'beta'");
  c.beta = j.at("beta").get<double>();
  c.n = j.value("N", c.n);
  c.seed = j.value("seed", c.seed);
  c.grid_step = j.value("grid_step", c.grid_step);
  c.epsilon = j.value("epsilon", c.epsilon);
  if (j.contains("criterion")) c.criterion = io::criterion_from_json(j.at("criterion"));
  if (j.contains("alpha")) c.criterion.alpha = j.at("alpha").get<double>();
  if (j.contains("monetary_box")) {
    const auto& bx = j.at("monetary_box");
    c.monetary_box = MonetaryBox{bx.at(0).get<double>(), bx.at(1).get<double>()};
  }
  c.monetary = j.value("monetary", c.monetary);
  c.minimal = j.value("minimal", c.minimal);
  c.plane_grid_step = j.value("plane_grid_step", c.plane_grid_step);
  c.delta = j.value("delta", c.delta);
  c.nest_slack = j.value("nest_slack", c.nest_slack);
  c.bin_width = j.value("bin_width", c.bin_width);
  c.diag_tol = j.value("diag_tol", c.diag_tol);
  if (j.contains("setups"))
    for (const auto& s : j.at("setups"))
      c.setups.push_back({s.at("d").get<std::size_t>(), s.at("bilateral").get<double>(), s.at("society").get<double>()});
  if (j.contains("costs")) {
    c.costs.transaction_cost_bps = j.at("costs").value("transaction_cost_bps", c.costs.transaction_cost_bps);
    c.costs.cost_of_debt = j.at("costs").value("cost_of_debt", c.costs.cost_of_debt);
  }
  c.threads = j.value("threads", c.threads);
  c.validate();
  return c;
}

inline nlohmann::json to_json(const StudyConfig& c) {
  nlohmann::json j = {{"kind", to_string(c.kind)},
                      {"values", c.values},
                      {"base", {{"d", c.d}, {"a", c.a}, {"b", c.b}, {"variance_ratio", c.variance_ratio}}},
                      {"liabilities", {{"bilateral", c.bilateral}, {"society", c.society}}},
                      {"beta", c.beta},
                      {"N", c.n},
                      {"seed", c.seed},
                      {"grid_step", c.grid_step},
                      {"epsilon", c.epsilon},
                      {"criterion", io::to_json(c.criterion)},
                      {"monetary", c.monetary},
                      {"minimal", c.minimal},
                      {"plane_grid_step", c.plane_grid_step},
                      {"delta", c.delta},
                      {"nest_slack", c.nest_slack},
                      {"bin_width", c.bin_width},
                      {"diag_tol", c.diag_tol},
                      {"costs", {{"transaction_cost_bps", c.costs.transaction_cost_bps},
                                 {"cost_of_debt", c.costs.cost_of_debt}}}};
  if (c.monetary_box) j["monetary_box"] = {c.monetary_box->lo, c.monetary_box->hi};
  j["setups"] = nlohmann::json::array();
  for (const auto& s : c.setups) j["setups"].push_back({{"d", s.d}, {"bilateral", s.bilateral}, {"society", s.society}});
  return j;
}

/// Market for one sweep value; every value shares the configured seed.
inline MarketConfig study_market_config(const StudyConfig& c, double value) {
  MarketConfig m = base_market_config(c.d, c.n, c.seed, c.a, c.b, c.variance_ratio);
  const auto d = static_cast<Eigen::Index>(c.d);
  switch (c.kind) {
    case StudyKind::corr_X: m.correlation = m.correlation.with(0, 1, value); break;
    case StudyKind::corr_X1S1: m.correlation = m.correlation.with(0, d, value); break;
    case StudyKind::corr_S: m.correlation = m.correlation.with(d, d + 1, value); break;
    case StudyKind::volatility:
      // Shapes scaled together: mean fixed, variance falls as value grows.
      m.x_marginals[0] = BetaMarginal{c.a * value, c.b * value};
      break;
    default: break;
  }
  return m;
}

inline AggregationSpec study_aggregation(const StudyConfig& c, double value) {
  double bil = c.bilateral;
  double soc = c.society;
  if (c.kind == StudyKind::liab_society) soc = value;
  if (c.kind == StudyKind::liab_bilateral) bil = value;
  return AggregationSpec{uniform_liabilities(c.d, bil, soc), c.beta};
}

// ---------------------------------------------------------------------------
// Running a study
// ---------------------------------------------------------------------------

struct SweepRecord {
  double value = 0.0;
  bool all_eligible_acceptable = false;
  std::optional<BoundaryApproximation> intrinsic;
  std::optional<GridScanResult> grid_scan;
  std::optional<BoundaryApproximation> monetary;
  std::optional<MinimalPointResult> minimal;
  std::vector<std::string> errors;
};

struct NestednessCheck {
  std::string system;  ///< "intrinsic" or "monetary"
  double from = 0.0;   ///< sweep value whose points are re-tested
  double to = 0.0;     ///< sweep value whose measurement must contain them
  std::size_t checked = 0;
  std::size_t violations = 0;
  double worst_risk = -std::numeric_limits<double>::infinity();
  bool pass() const noexcept { return violations == 0; }
};

struct SetupRecord {
  HistogramSetup setup;
  DiagonalRequirements diagonal;
  std::vector<HistogramEntry> histograms;
  std::vector<HistogramEntry> with_costs;  ///< intrinsic and monetary, costs study only
  std::vector<std::string> errors;
};

struct StudyResult {
  StudyConfig config;
  std::vector<SweepRecord> sweep;
  std::vector<NestednessCheck> nestedness;
  std::optional<std::pair<double, double>> acceptability_flip;  ///< adjacent sweep values bracketing a flip
  std::vector<SetupRecord> setups;
  nlohmann::json manifest;
};

namespace detail {

inline std::string value_tag(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

/// Sweep order: `from` points must be members at `to`.
inline std::vector<std::pair<std::size_t, std::size_t>> nesting_pairs(const StudyConfig& c) {
  std::vector<std::size_t> order(c.values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return c.values[a] < c.values[b]; });
  bool higher_into_lower = false;
  switch (c.kind) {
    case StudyKind::corr_X:
    case StudyKind::liab_society: higher_into_lower = true; break;
    case StudyKind::liab_bilateral:
    case StudyKind::volatility: higher_into_lower = false; break;
    default: return {};
  }
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i + 1 < order.size(); ++i) {
    if (higher_into_lower)
      out.emplace_back(order[i + 1], order[i]);
    else
      out.emplace_back(order[i], order[i + 1]);
  }
  return out;
}

}  // namespace detail

/// Re-tests certified points of one sweep value against another sweep value's
/// scenario set, counting risk values above `slack` as violations.
inline NestednessCheck check_nested(const SweepRecord& from, const SystemicRiskProblem& to_problem, double to_value,
                                    bool monetary, double slack) {
  NestednessCheck out;
  out.system = monetary ? "monetary" : "intrinsic";
  out.from = from.value;
  out.to = to_value;
  const auto& approx = monetary ? from.monetary : from.intrinsic;
  if (!approx) return out;
  for (const auto& p : approx->points) {
    const double r = monetary ? to_problem.monetary_risk(CapitalVector(p.outer))
                              : to_problem.intrinsic_risk(LambdaVector(p.outer.cwiseMax(0.0).cwiseMin(1.0)));
    ++out.checked;
    out.worst_risk = std::max(out.worst_risk, r);
    if (r > slack) ++out.violations;
  }
  return out;
}

inline nlohmann::json csv_meta(const StudyConfig& c, const AggregationSpec& agg, bool feasible, const std::string& method,
                               std::optional<double> value) {
  nlohmann::json m = {{"seed", c.seed},           {"N", c.n},
                      {"grid_step", c.grid_step}, {"epsilon", c.epsilon},
                      {"criterion", io::to_json(c.criterion)},
                      {"beta", agg.beta},         {"feasible_flag", feasible},
                      {"method", method},         {"study", to_string(c.kind)}};
  if (value) {
    m["param"] = sweep_parameter(c.kind);
    m["value"] = *value;
  }
  return m;
}

inline StudyResult run_sweep(const StudyConfig& c, const std::filesystem::path& out_dir) {
  StudyResult res;
  res.config = c;
  const std::string param = sweep_parameter(c.kind);
  std::vector<MarketModel> markets;
  std::vector<AggregationSpec> aggs;
  markets.reserve(c.values.size());
  for (double v : c.values) {
    markets.push_back(sample_market(study_market_config(c, v), c.threads));
    aggs.push_back(study_aggregation(c, v));
  }
  std::vector<SystemicRiskProblem> problems;
  for (std::size_t i = 0; i < c.values.size(); ++i) problems.emplace_back(markets[i], aggs[i], c.criterion, c.threads);

  for (std::size_t i = 0; i < c.values.size(); ++i) {
    const double v = c.values[i];
    const auto& problem = problems[i];
    SweepRecord rec;
    rec.value = v;
    rec.all_eligible_acceptable = problem.all_eligible_acceptable();
    const std::string tag = param + "=" + detail::value_tag(v);
    if (rec.all_eligible_acceptable) {
      rec.intrinsic = boundary_intrinsic(problem, c.grid_step, c.epsilon);
      if (!out_dir.empty())
        io::write_boundary_csv(out_dir / ("boundary_" + tag + ".csv"), *rec.intrinsic, "lambda",
                               csv_meta(c, aggs[i], true, "boundary_intrinsic", v));
    } else {
      rec.grid_scan = full_grid_scan(problem, c.grid_step);
      if (!out_dir.empty())
        io::write_grid_scan_csv(out_dir / ("boundary_" + tag + ".csv"), *rec.grid_scan, problem.d(),
                                csv_meta(c, aggs[i], false, "full_grid_scan", v));
    }
    if (c.monetary) {
      try {
        rec.monetary = boundary_monetary(problem, c.grid_step, c.epsilon,
                                         c.monetary_box.value_or(default_monetary_box(markets[i])));
        if (!out_dir.empty())
          io::write_boundary_csv(out_dir / ("boundary_monetary_" + tag + ".csv"), *rec.monetary, "k",
                                 csv_meta(c, aggs[i], rec.all_eligible_acceptable, "boundary_monetary", v));
      } catch (const AlgorithmError& e) {
        rec.errors.push_back(std::string(e.kind()) + ": " + e.what());
      }
    }
    if (c.minimal && rec.all_eligible_acceptable) {
      MinimalPointOptions mo;
      mo.plane_grid_step = c.plane_grid_step;
      mo.delta = c.delta;
      try {
        rec.minimal = minimal_points(problem, mo);
        if (!out_dir.empty())
          io::write_minimal_csv(out_dir / ("minimal_" + tag + ".csv"), *rec.minimal, problem.d(),
                                csv_meta(c, aggs[i], true, "minimal_points", v));
      } catch (const AlgorithmError& e) {
        rec.errors.push_back(std::string(e.kind()) + ": " + e.what());
      }
    }
    res.sweep.push_back(std::move(rec));
  }

  for (auto [from, to] : detail::nesting_pairs(c)) {
    res.nestedness.push_back(check_nested(res.sweep[from], problems[to], c.values[to], false, c.nest_slack));
    if (c.monetary)
      res.nestedness.push_back(check_nested(res.sweep[from], problems[to], c.values[to], true, c.nest_slack));
  }

  {
    std::vector<std::size_t> order(c.values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return c.values[a] < c.values[b]; });
    for (std::size_t i = 0; i + 1 < order.size(); ++i)
      if (res.sweep[order[i]].all_eligible_acceptable != res.sweep[order[i + 1]].all_eligible_acceptable) {
        res.acceptability_flip = std::make_pair(c.values[order[i]], c.values[order[i + 1]]);
        break;
      }
  }
  return res;
}

inline StudyResult run_histograms(const StudyConfig& c, const std::filesystem::path& out_dir) {
  StudyResult res;
  res.config = c;
  for (const auto& s : c.setups) {
    SetupRecord rec;
    rec.setup = s;
    const MarketModel market = sample_market(base_market_config(s.d, c.n, c.seed, c.a, c.b, c.variance_ratio), c.threads);
    const AggregationSpec agg{uniform_liabilities(s.d, s.bilateral, s.society), c.beta};
    const SystemicRiskProblem problem(market, agg, c.criterion, c.threads);
    rec.diagonal = diagonal_requirements(problem, c.diag_tol);
    if (!rec.diagonal.lambda_star || !rec.diagonal.k_star) {
      rec.errors.push_back("infeasible: no member on the diagonal");
      res.setups.push_back(std::move(rec));
      continue;
    }
    const auto d = static_cast<Eigen::Index>(s.d);
    const LambdaVector lam = LambdaVector::constant(d, *rec.diagonal.lambda_star);
    const CapitalVector cap = CapitalVector::constant(d, *rec.diagonal.k_star);
    rec.histograms = histogram_report(problem, lam, cap, c.bin_width);
    if (c.kind == StudyKind::costs) {
      for (auto [name, agg_values] : {std::pair{std::string("intrinsic_costs"), apply_costs(problem, lam, c.costs)},
                                      std::pair{std::string("monetary_costs"), apply_costs(problem, cap, c.costs)}}) {
        HistogramSummary sm = summarize(agg_values, c.criterion.alpha, c.bin_width);
        rec.with_costs.push_back({name, std::move(agg_values), std::move(sm)});
      }
    }
    if (!out_dir.empty()) {
      const std::string tag = "d=" + std::to_string(s.d);
      nlohmann::json meta = csv_meta(c, agg, problem.all_eligible_acceptable(), "histogram_report", std::nullopt);
      meta["d"] = s.d;
      meta["lambda_star"] = *rec.diagonal.lambda_star;
      meta["k_star"] = *rec.diagonal.k_star;
      auto emit = [&](const HistogramEntry& h) {
        nlohmann::json m = meta;
        m["system"] = h.system;
        write_histogram_csv(out_dir / ("histogram_" + h.system + "_" + tag + ".csv"), h.summary, m);
        io::write_aggregate_csv(out_dir / ("aggregate_" + h.system + "_" + tag + ".csv"), h.aggregates, m);
      };
      for (const auto& h : rec.histograms) emit(h);
      for (const auto& h : rec.with_costs) emit(h);
    }
    res.setups.push_back(std::move(rec));
  }
  return res;
}

inline nlohmann::json build_manifest(const StudyResult& r) {
  using nlohmann::json;
  json m;
  m["library_version"] = SYSRISK_VERSION;
  m["config"] = to_json(r.config);
  const std::string param = sweep_parameter(r.config.kind);
  json sweep = json::array();
  for (const auto& s : r.sweep) {
    json e = {{"value", s.value}, {"all_eligible_acceptable", s.all_eligible_acceptable}};
    const std::string tag = param + "=" + detail::value_tag(s.value);
    if (s.intrinsic) e["intrinsic"] = {{"file", "boundary_" + tag + ".csv"}, {"points", s.intrinsic->points.size()}};
    if (s.grid_scan)
      e["intrinsic"] = {{"file", "boundary_" + tag + ".csv"},
                        {"method", "full_grid_scan"},
                        {"members", s.grid_scan->members.size()},
                        {"tested", s.grid_scan->tested}};
    if (s.monetary)
      e["monetary"] = {{"file", "boundary_monetary_" + tag + ".csv"}, {"points", s.monetary->points.size()}};
    if (s.minimal)
      e["minimal"] = {{"file", "minimal_" + tag + ".csv"}, {"k_min", s.minimal->k_min}, {"k_a", s.minimal->k_a},
                      {"k_b", s.minimal->k_b}, {"points", s.minimal->minimal_points.size()}};
    e["errors"] = s.errors;
    sweep.push_back(e);
  }
  m["sweep"] = sweep;
  json nest = json::array();
  bool all_pass = true;
  for (const auto& n : r.nestedness) {
    nest.push_back({{"system", n.system},
                    {"from", n.from},
                    {"to", n.to},
                    {"checked", n.checked},
                    {"violations", n.violations},
                    {"worst_risk", n.checked ? json(n.worst_risk) : json()},
                    {"pass", n.pass()}});
    all_pass = all_pass && n.pass();
  }
  m["nestedness"] = nest;
  if (!r.nestedness.empty()) m["nestedness_pass"] = all_pass;
  if (r.config.kind == StudyKind::corr_S)
    m["acceptability_flip"] =
        r.acceptability_flip ? json{r.acceptability_flip->first, r.acceptability_flip->second} : json();
  json setups = json::array();
  for (const auto& s : r.setups) {
    json e = {{"d", s.setup.d}, {"bilateral", s.setup.bilateral}, {"society", s.setup.society}};
    if (s.diagonal.lambda_star) e["lambda_star"] = *s.diagonal.lambda_star;
    if (s.diagonal.k_star) e["k_star"] = *s.diagonal.k_star;
    json h = json::object();
    for (const auto& x : s.histograms) h[x.system] = to_json(x.summary);
    for (const auto& x : s.with_costs) h[x.system] = to_json(x.summary);
    e["summaries"] = h;
    if (!s.with_costs.empty()) {
      json delta = json::object();
      for (const auto& x : s.with_costs) {
        const std::string base = x.system.substr(0, x.system.find("_costs"));
        const auto it = std::find_if(s.histograms.begin(), s.histograms.end(),
                                     [&](const HistogramEntry& h0) { return h0.system == base; });
        if (it == s.histograms.end()) continue;
        delta[base] = {{"mean", x.summary.mean - it->summary.mean},
                       {"variance", x.summary.variance - it->summary.variance},
                       {"es", x.summary.es - it->summary.es},
                       {"support_min", x.summary.support_min - it->summary.support_min}};
      }
      e["cost_deltas"] = delta;
    }
    e["errors"] = s.errors;
    setups.push_back(e);
  }
  if (!r.setups.empty()) m["setups"] = setups;
  return m;
}

/// Runs the configured study, writing CSVs and a manifest into `out_dir`
/// (nothing is written when `out_dir` is empty).
inline StudyResult run_study(const StudyConfig& c, const std::filesystem::path& out_dir = {}) {
  c.validate();
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  StudyResult r = (c.kind == StudyKind::histograms || c.kind == StudyKind::costs) ? run_histograms(c, out_dir)
                                                                                 : run_sweep(c, out_dir);
  r.manifest = build_manifest(r);
  if (!out_dir.empty()) {
    auto out = io::open_out(out_dir / "manifest.json");
    out << r.manifest.dump(2) << '\n';
  }
  return r;
}

}  // namespace sysrisk
