#pragma once

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <charconv>
#include <string>
#include <vector>

#include "sysrisk/clearing.hpp"
#include "sysrisk/error.hpp"
#include "sysrisk/io.hpp"
#include "sysrisk/risk.hpp"
#include "sysrisk/scenario.hpp"
#include "sysrisk/setvalued.hpp"
#include "sysrisk/studies.hpp"

namespace sysrisk::cli {

using nlohmann::json;

/// Environment beats flag beats config.
inline std::optional<std::uint64_t> resolve_seed(std::optional<std::uint64_t> flag) {
  if (const char* env = std::getenv("SYSRISK_SEED"); env && *env) {
    std::uint64_t v = 0;
    const std::string s(env);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
      throw ValidationError("SYSRISK_SEED must be an unsigned 64-bit integer");
    return v;
  }
  return flag;
}

/// Problem document used by `boundary` and `minimal`:
/// {"market": {...}, "liabilities": {...}, "beta": .., "criterion": {...}, ...}
struct ProblemConfig {
  MarketConfig market;
  AggregationSpec agg;
  AcceptanceCriterion criterion;
  double grid_step = 0.05;
  double epsilon = 1e-6;
  std::optional<MonetaryBox> box;
  MinimalPointOptions minimal;
  json raw;
};

inline AggregationSpec aggregation_from_json(const json& j, const std::filesystem::path& base_dir) {
  if (!j.contains("liabilities")) throw ValidationError("config requires 'liabilities'");
  if (!j.contains("beta")) throw ValidationError("config requires 'beta'");
  AggregationSpec agg{io::liabilities_from_json(j.at("liabilities"), base_dir), j.at("beta").get<double>()};
  agg.validate();
  return agg;
}

inline ProblemConfig problem_from_json(const json& j, const std::filesystem::path& base_dir) {
  ProblemConfig p;
  p.raw = j;
  p.market = io::market_from_json(j.at("market"));
  p.agg = aggregation_from_json(j, base_dir);
  if (j.contains("criterion")) p.criterion = io::criterion_from_json(j.at("criterion"));
  p.grid_step = j.value("grid_step", p.grid_step);
  p.epsilon = j.value("epsilon", p.epsilon);
  if (j.contains("monetary_box"))
    p.box = MonetaryBox{j.at("monetary_box").at(0).get<double>(), j.at("monetary_box").at(1).get<double>()};
  p.minimal.plane_grid_step = j.value("plane_grid_step", p.minimal.plane_grid_step);
  p.minimal.delta = j.value("delta", p.minimal.delta);
  p.minimal.prune = j.value("prune", p.minimal.prune);
  if (j.contains("weights")) {
    const auto w = j.at("weights").get<std::vector<double>>();
    p.minimal.weights = Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
  }
  return p;
}

inline std::vector<double> parse_vector(const std::string& s) {
  std::vector<double> out;
  for (const auto& cell : io::detail::split(s)) {
    double v = 0.0;
    if (!io::detail::parse_double(cell, v)) throw ValidationError("'" + s + "' is not a comma-separated list of numbers");
    out.push_back(v);
  }
  return out;
}

inline json vec_json(const Vector& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

/// Built-in configuration for `study --kind K` without `--config`.
inline StudyConfig default_study_config(StudyKind kind) {
  StudyConfig c;
  c.kind = kind;
  switch (kind) {
    case StudyKind::corr_X:
    case StudyKind::corr_X1S1: c.values = {-0.3, 0.0, 0.3}; break;
    case StudyKind::corr_S: c.values = {0.0, 0.1, 0.2, 0.3, 0.4}; break;
    case StudyKind::liab_society: c.values = {0.1, 0.15, 0.2}; break;
    case StudyKind::liab_bilateral: c.values = {0.2, 0.4, 0.6, 0.8}; break;
    case StudyKind::volatility: c.values = {1.0, 2.0, 4.0}; break;
    case StudyKind::histograms:
    case StudyKind::costs:
      c.n = 20000;
      c.setups = {{4, 0.6, 0.23}, {20, 0.2, 0.25}};
      break;
  }
  return c;
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  unsigned threads = 1;
};

inline json load_config(const Common& c) {
  if (c.config.empty()) throw ValidationError("--config is required");
  return io::read_json(c.config);
}

inline std::filesystem::path config_dir(const Common& c) {
  return std::filesystem::path(c.config).parent_path();
}

inline int run_simulate(const Common& c) {
  json j = load_config(c);
  MarketConfig cfg = io::market_from_json(j.contains("market") ? j.at("market") : j);
  if (auto s = resolve_seed(c.seed)) cfg.seed = *s;
  const MarketModel m = sample_market(cfg, c.threads);
  json summary = {{"N", cfg.n}, {"seed", cfg.seed}, {"d", m.d()}, {"x0", vec_json(m.x0)}, {"s0", vec_json(m.s0)}};
  if (!c.out.empty()) {
    const std::filesystem::path dir(c.out);
    const json meta = {{"seed", cfg.seed}, {"N", cfg.n}};
    io::write_scenarios_csv(dir / "X_T.csv", m.xt, meta);
    io::write_scenarios_csv(dir / "S_T.csv", m.st, meta);
    json market = summary;
    market["config"] = io::to_json(cfg);
    auto out = io::open_out(dir / "market.json");
    out << market.dump(2) << '\n';
  }
  std::cout << summary.dump() << '\n';
  return 0;
}

inline int run_clear(const Common& c, const std::string& x_arg, const std::string& scenarios, const std::string& engine) {
  json j = load_config(c);
  const AggregationSpec agg = aggregation_from_json(j, config_dir(c));
  ClearingEngine eng = ClearingEngine::fictitious_default;
  if (engine == "picard")
    eng = ClearingEngine::picard;
  else if (engine != "fda")
    throw ValidationError("--engine must be 'picard' or 'fda'");
  if (!x_arg.empty()) {
    const auto xs = parse_vector(x_arg);
    const std::vector<double>& x = xs;
    if (x.size() != agg.liabilities.d())
      throw ValidationError("--x has " + std::to_string(x.size()) + " entries, network has " +
                            std::to_string(agg.liabilities.d()));
    const ClearingVector cv =
        eng == ClearingEngine::picard ? clearing_picard(x, agg.liabilities) : clearing_fictitious_default(x, agg.liabilities);
    std::vector<std::size_t> defaults;
    for (auto i : cv.defaulting_set) defaults.push_back(i + 1);
    std::cout << json{{"p", cv.p},
                      {"defaulting_set", defaults},
                      {"residual", cv.residual},
                      {"aggregate", aggregate(x, agg, eng)}}
                     .dump()
              << '\n';
    return 0;
  }
  if (scenarios.empty()) throw ValidationError("clear needs --x or --scenarios");
  const ScenarioSet s = io::read_scenarios_csv(scenarios);
  const auto values = aggregate_scenarios(s, agg, c.threads, eng);
  if (c.out.empty()) {
    for (double v : values) std::cout << io::fmt(v) << '\n';
  } else {
    io::write_aggregate_csv(c.out, values, json{{"beta", agg.beta}});
  }
  return 0;
}

inline int run_risk(const std::string& samples, const std::string& column, const std::string& kind, double alpha) {
  AcceptanceCriterion crit = io::criterion_from_json(json{{"kind", kind}, {"alpha", alpha}});
  const auto v = io::read_sample_column(samples, column);
  std::cout << io::fmt(risk_value(v, crit)) << '\n';
  return 0;
}

inline int run_boundary(const Common& c, const std::string& type) {
  json j = load_config(c);
  ProblemConfig p = problem_from_json(j, config_dir(c));
  if (auto s = resolve_seed(c.seed)) p.market.seed = *s;
  const MarketModel m = sample_market(p.market, c.threads);
  const SystemicRiskProblem problem(m, p.agg, p.criterion, c.threads);
  const bool feasible = problem.all_eligible_acceptable();
  json meta = {{"seed", p.market.seed}, {"N", p.market.n},  {"grid_step", p.grid_step},
               {"epsilon", p.epsilon},  {"criterion", io::to_json(p.criterion)}, {"beta", p.agg.beta},
               {"feasible_flag", feasible}};
  const std::filesystem::path dir(c.out.empty() ? "." : c.out);
  json summary = {{"feasible_flag", feasible}};
  if (type == "intrinsic") {
    if (feasible) {
      const auto b = boundary_intrinsic(problem, p.grid_step, p.epsilon);
      meta["method"] = "boundary_intrinsic";
      io::write_boundary_csv(dir / "boundary_intrinsic.csv", b, "lambda", meta);
      summary["points"] = b.points.size();
      summary["file"] = (dir / "boundary_intrinsic.csv").string();
    } else {
      const auto g = full_grid_scan(problem, p.grid_step);
      meta["method"] = "full_grid_scan";
      io::write_grid_scan_csv(dir / "boundary_intrinsic.csv", g, problem.d(), meta);
      summary["members"] = g.members.size();
      summary["file"] = (dir / "boundary_intrinsic.csv").string();
    }
  } else if (type == "monetary") {
    const auto b = boundary_monetary(problem, p.grid_step, p.epsilon, p.box.value_or(default_monetary_box(m)));
    meta["method"] = "boundary_monetary";
    io::write_boundary_csv(dir / "boundary_monetary.csv", b, "k", meta);
    summary["points"] = b.points.size();
    summary["file"] = (dir / "boundary_monetary.csv").string();
  } else if (type == "grid") {
    const auto g = full_grid_scan(problem, p.grid_step);
    meta["method"] = "full_grid_scan";
    io::write_grid_scan_csv(dir / "grid_scan.csv", g, problem.d(), meta);
    summary["members"] = g.members.size();
    summary["file"] = (dir / "grid_scan.csv").string();
  } else {
    throw ValidationError("--type must be intrinsic, monetary or grid");
  }
  std::cout << summary.dump() << '\n';
  return 0;
}

inline int run_minimal(const Common& c) {
  json j = load_config(c);
  ProblemConfig p = problem_from_json(j, config_dir(c));
  if (auto s = resolve_seed(c.seed)) p.market.seed = *s;
  const MarketModel m = sample_market(p.market, c.threads);
  const SystemicRiskProblem problem(m, p.agg, p.criterion, c.threads);
  const MinimalPointResult r = minimal_points(problem, p.minimal);
  const std::filesystem::path dir(c.out.empty() ? "." : c.out);
  json meta = {{"seed", p.market.seed},
               {"N", p.market.n},
               {"plane_grid_step", p.minimal.plane_grid_step},
               {"delta", p.minimal.delta},
               {"criterion", io::to_json(p.criterion)},
               {"beta", p.agg.beta},
               {"k_min", r.k_min},
               {"k_a", r.k_a},
               {"k_b", r.k_b},
               {"method", "minimal_points"}};
  io::write_minimal_csv(dir / "minimal_points.csv", r, problem.d(), meta);
  json pts = json::array();
  for (const auto& v : r.minimal_points) pts.push_back(vec_json(v));
  std::cout << json{{"k_min", r.k_min}, {"k_a", r.k_a}, {"k_b", r.k_b}, {"minimal_points", pts},
                    {"pruning_engaged", r.pruning_engaged}}
                   .dump()
            << '\n';
  return 0;
}

inline int run_study_cmd(const Common& c, const std::string& kind, bool histogram_only) {
  StudyConfig cfg;
  if (!c.config.empty()) {
    json j = io::read_json(c.config);
    if (!kind.empty()) j["kind"] = kind;
    if (histogram_only && !j.contains("kind")) j["kind"] = "histograms";
    cfg = study_config_from_json(j);
  } else {
    const std::string k = !kind.empty() ? kind : (histogram_only ? "histograms" : "");
    if (k.empty()) throw ValidationError("study needs --config or --kind");
    cfg = default_study_config(study_kind_from_string(k));
  }
  if (histogram_only && cfg.kind != StudyKind::histograms && cfg.kind != StudyKind::costs)
    throw ValidationError("histogram needs a study of kind 'histograms' or 'costs'");
  if (auto s = resolve_seed(c.seed)) cfg.seed = *s;
  cfg.threads = c.threads;
  const std::filesystem::path dir(c.out.empty() ? "study_" + to_string(cfg.kind) : c.out);
  const StudyResult r = run_study(cfg, dir);
  json summary = {{"out", dir.string()}, {"kind", to_string(cfg.kind)}};
  if (r.manifest.contains("nestedness_pass")) summary["nestedness_pass"] = r.manifest["nestedness_pass"];
  if (r.manifest.contains("acceptability_flip")) summary["acceptability_flip"] = r.manifest["acceptability_flip"];
  std::cout << summary.dump() << '\n';
  return 0;
}

inline void print_error(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << '\n';
}

}  // namespace sysrisk::cli

namespace sysrisk {

inline int cli_main(int argc, char** argv) {
  using namespace sysrisk::cli;
  CLI::App app{"Set-valued systemic risk measures for simulated clearing networks"};
  app.set_version_flag("--version", std::string(SYSRISK_VERSION));
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub, bool with_config = true) {
    if (with_config) sub->add_option("--config", common.config, "JSON configuration file");
    sub->add_option("--seed", common.seed, "RNG seed (SYSRISK_SEED overrides)");
    sub->add_option("--out", common.out, "output directory or file");
    sub->add_option("--threads", common.threads, "worker threads")->check(CLI::PositiveNumber);
  };

  auto* simulate = app.add_subcommand("simulate", "sample a market and export scenario CSVs");
  add_common(simulate);

  std::string x_arg;
  std::string scenarios;
  std::string engine = "fda";
  auto* clear = app.add_subcommand("clear", "clearing vector and aggregate for one wealth vector or a scenario CSV");
  add_common(clear);
  clear->add_option("--x", x_arg, "comma-separated wealth vector");
  clear->add_option("--scenarios", scenarios, "scenario CSV (scenario,asset_1..asset_d)");
  clear->add_option("--engine", engine, "picard | fda");

  std::string samples;
  std::string column;
  std::string risk_kind = "ES";
  double alpha = 0.05;
  auto* risk = app.add_subcommand("risk", "empirical VaR or ES of a sample column");
  risk->add_option("--samples", samples, "CSV with samples")->required();
  risk->add_option("--column", column, "column name (default: last column)");
  risk->add_option("--kind", risk_kind, "ES | VaR");
  risk->add_option("--alpha", alpha, "level in (0,1)");

  std::string boundary_type = "intrinsic";
  auto* boundary = app.add_subcommand("boundary", "boundary approximation of the intrinsic or monetary risk set");
  add_common(boundary);
  boundary->add_option("--type", boundary_type, "intrinsic | monetary | grid");

  auto* minimal = app.add_subcommand("minimal", "minimal 1-norm points of the intrinsic risk set");
  add_common(minimal);

  std::string study_kind;
  auto* study = app.add_subcommand("study", "run a parameter sweep or histogram study");
  add_common(study);
  study->add_option("--kind", study_kind, "study kind (overrides the config)");

  auto* histogram = app.add_subcommand("histogram", "aggregate-outcome histograms along the diagonal");
  add_common(histogram);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage_error", e.what());
    return 2;
  }

  try {
    if (*simulate) return run_simulate(common);
    if (*clear) return run_clear(common, x_arg, scenarios, engine);
    if (*risk) return run_risk(samples, column, risk_kind, alpha);
    if (*boundary) return run_boundary(common, boundary_type);
    if (*minimal) return run_minimal(common);
    if (*study) return run_study_cmd(common, study_kind, false);
    if (*histogram) return run_study_cmd(common, {}, true);
  } catch (const Error& e) {
    print_error(e.kind(), e.what());
    return 1;
  } catch (const nlohmann::json::exception& e) {
    print_error("validation_error", std::string("config: ") + e.what());
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    print_error("io_error", e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("error", e.what());
    return 1;
  }
  return 2;
}

}  // namespace sysrisk
