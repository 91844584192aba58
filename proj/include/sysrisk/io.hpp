#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sysrisk/clearing.hpp"
#include "sysrisk/error.hpp"
#include "sysrisk/risk.hpp"
#include "sysrisk/scenario.hpp"
#include "sysrisk/setvalued.hpp"

namespace sysrisk::io {

using nlohmann::json;

/// 17 significant digits: round-trips every double.
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json read_json(const std::filesystem::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw ValidationError("malformed JSON in '" + path.string() + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

namespace detail {

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, sep)) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    std::size_t lead = 0;
    while (lead < cell.size() && cell[lead] == ' ') ++lead;
    out.push_back(cell.substr(lead));
  }
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

inline bool parse_double(const std::string& s, double& v) {
  if (s.empty()) return false;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  return ec == std::errc() && ptr == last;
}

}  // namespace detail

/// Numeric CSV with an optional header row; lines starting with '#' are skipped.
inline CsvTable read_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  CsvTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto cells = detail::split(line);
    std::vector<double> row;
    row.reserve(cells.size());
    bool numeric = true;
    for (const auto& c : cells) {
      double v = 0.0;
      if (!detail::parse_double(c, v)) {
        numeric = false;
        break;
      }
      row.push_back(v);
    }
    if (!numeric) {
      if (table.header.empty() && table.rows.empty()) {
        table.header = cells;
        continue;
      }
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": non-numeric cell");
    }
    if (!table.rows.empty() && row.size() != table.rows.front().size())
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": ragged row");
    table.rows.push_back(std::move(row));
  }
  return table;
}

inline Eigen::MatrixXd to_matrix(const CsvTable& t) {
  if (t.rows.empty()) return {};
  Eigen::MatrixXd m(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(t.rows.front().size()));
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    for (std::size_t c = 0; c < t.rows[r].size(); ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = t.rows[r][c];
  return m;
}

inline void write_meta_line(std::ostream& out, const json& meta) {
  if (!meta.is_null()) out << "# " << meta.dump() << '\n';
}

/// `scenario,asset_1..asset_d`
inline void write_scenarios_csv(const std::filesystem::path& path, const ScenarioSet& s, const json& meta = {}) {
  auto out = open_out(path);
  write_meta_line(out, meta);
  out << "scenario";
  for (Eigen::Index c = 0; c < s.d(); ++c) out << ",asset_" << (c + 1);
  out << '\n';
  const Samples& v = s.values();
  for (Eigen::Index r = 0; r < s.n(); ++r) {
    out << r;
    for (Eigen::Index c = 0; c < s.d(); ++c) out << ',' << fmt(v(r, c));
    out << '\n';
  }
}

/// Reads a scenario CSV written by `write_scenarios_csv` (leading scenario
/// column dropped when the header says so) or a bare numeric matrix.
inline ScenarioSet read_scenarios_csv(const std::filesystem::path& path) {
  CsvTable t = read_csv(path);
  Eigen::MatrixXd m = to_matrix(t);
  if (!t.header.empty() && t.header.front() == "scenario") m = m.rightCols(m.cols() - 1).eval();
  return ScenarioSet(Samples(m));
}

/// `scenario,lambda_value`
inline void write_aggregate_csv(const std::filesystem::path& path, const std::vector<double>& values,
                                const json& meta = {}) {
  auto out = open_out(path);
  write_meta_line(out, meta);
  out << "scenario,lambda_value\n";
  for (std::size_t r = 0; r < values.size(); ++r) out << r << ',' << fmt(values[r]) << '\n';
}

/// One column of samples: the column named `column`, else the last column.
inline std::vector<double> read_sample_column(const std::filesystem::path& path, const std::string& column = {}) {
  CsvTable t = read_csv(path);
  if (t.rows.empty()) throw ValidationError("no samples in '" + path.string() + "'");
  std::size_t col = t.rows.front().size() - 1;
  if (!column.empty()) {
    auto it = std::find(t.header.begin(), t.header.end(), column);
    if (it == t.header.end()) throw ValidationError("column '" + column + "' not found in '" + path.string() + "'");
    col = static_cast<std::size_t>(it - t.header.begin());
  }
  std::vector<double> out;
  out.reserve(t.rows.size());
  for (const auto& r : t.rows) out.push_back(r[col]);
  return out;
}

/// `origin_index,<prefix>_1..<prefix>_d,bracket_width,n_iter`
inline void write_boundary_csv(const std::filesystem::path& path, const BoundaryApproximation& b,
                               const std::string& prefix, const json& meta) {
  auto out = open_out(path);
  write_meta_line(out, meta);
  const Eigen::Index d = b.target.size();
  out << "origin_index";
  for (Eigen::Index c = 0; c < d; ++c) out << ',' << prefix << '_' << (c + 1);
  out << ",bracket_width,n_iter\n";
  for (const auto& p : b.points) {
    out << p.origin_index;
    for (Eigen::Index c = 0; c < d; ++c) out << ',' << fmt(p.outer(c));
    out << ',' << fmt(p.bracket_width) << ',' << p.n_iter << '\n';
  }
}

inline void write_grid_scan_csv(const std::filesystem::path& path, const GridScanResult& g, Eigen::Index d,
                                const json& meta) {
  auto out = open_out(path);
  write_meta_line(out, meta);
  out << "origin_index";
  for (Eigen::Index c = 0; c < d; ++c) out << ",lambda_" << (c + 1);
  out << ",bracket_width,n_iter\n";
  for (std::size_t i = 0; i < g.members.size(); ++i) {
    out << i;
    for (Eigen::Index c = 0; c < d; ++c) out << ',' << fmt(g.members[i](c));
    out << ",0,0\n";
  }
}

/// `point_index,lambda_1..lambda_d,weighted_norm`
inline void write_minimal_csv(const std::filesystem::path& path, const MinimalPointResult& r, Eigen::Index d,
                              const json& meta) {
  auto out = open_out(path);
  write_meta_line(out, meta);
  out << "point_index";
  for (Eigen::Index c = 0; c < d; ++c) out << ",lambda_" << (c + 1);
  out << ",weighted_norm\n";
  for (std::size_t i = 0; i < r.minimal_points.size(); ++i) {
    out << i;
    for (Eigen::Index c = 0; c < d; ++c) out << ',' << fmt(r.minimal_points[i](c));
    out << ',' << fmt(r.weighted_norms[i]) << '\n';
  }
}

// ---------------------------------------------------------------------------
// JSON <-> domain objects
// ---------------------------------------------------------------------------

inline json to_json(const MarginalSpec& m) {
  if (const auto* b = std::get_if<BetaMarginal>(&m)) return {{"kind", "beta"}, {"a", b->a}, {"b", b->b}};
  const auto& ln = std::get<LognormalMarginal>(m);
  return {{"kind", "lognormal"}, {"mu", ln.mu}, {"sigma", ln.sigma}};
}

/// {"kind":"beta","a":..,"b":..} | {"kind":"lognormal","mu":..,"sigma":..}
/// | {"kind":"lognormal","mean":..,"variance":..}
inline MarginalSpec marginal_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  MarginalSpec m;
  if (kind == "beta") {
    m = BetaMarginal{j.at("a").get<double>(), j.at("b").get<double>()};
  } else if (kind == "lognormal") {
    if (j.contains("mean"))
      m = lognormal_params_from_moments(j.at("mean").get<double>(), j.at("variance").get<double>());
    else
      m = LognormalMarginal{j.at("mu").get<double>(), j.at("sigma").get<double>()};
  } else {
    throw ValidationError("unknown marginal kind '" + kind + "'");
  }
  validate(m);
  return m;
}

/// Variable name "X3" / "S1" -> stacked copula index (zero-based).
inline Eigen::Index copula_index(const std::string& name, std::size_t d) {
  if (name.size() < 2 || (name[0] != 'X' && name[0] != 'S'))
    throw ValidationError("correlation variable '" + name + "' must look like X<k> or S<k>");
  std::size_t k = 0;
  const auto [ptr, ec] = std::from_chars(name.data() + 1, name.data() + name.size(), k);
  if (ec != std::errc() || ptr != name.data() + name.size() || k < 1 || k > d)
    throw ValidationError("correlation variable '" + name + "' has an invalid index");
  return static_cast<Eigen::Index>((name[0] == 'X' ? 0 : d) + k - 1);
}

/// Market section. Either explicit marginals or a "base" block
/// ({"d":2,"a":2,"b":5,"variance_ratio":0.2}) describing the two-class model.
inline MarketConfig market_from_json(const json& j) {
  MarketConfig cfg;
  if (j.contains("base")) {
    const json& b = j.at("base");
    cfg = base_market_config(b.value("d", std::size_t{2}), 1, 1, b.value("a", 2.0), b.value("b", 5.0),
                             b.value("variance_ratio", 0.2));
  }
  if (j.contains("x_marginals")) {
    cfg.x_marginals.clear();
    for (const auto& m : j.at("x_marginals")) cfg.x_marginals.push_back(marginal_from_json(m));
  }
  if (j.contains("s_marginals")) {
    cfg.s_marginals.clear();
    for (const auto& m : j.at("s_marginals")) cfg.s_marginals.push_back(marginal_from_json(m));
  }
  const std::size_t d = cfg.x_marginals.size();
  if (d == 0) throw ValidationError("market needs either 'base' or 'x_marginals'");
  cfg.correlation = CorrelationMatrix::identity(static_cast<Eigen::Index>(2 * d));
  if (j.contains("correlation")) {
    const json& c = j.at("correlation");
    if (c.is_array() && !c.empty() && c.front().is_array()) {
      Eigen::MatrixXd m(static_cast<Eigen::Index>(c.size()), static_cast<Eigen::Index>(c.size()));
      for (std::size_t r = 0; r < c.size(); ++r) {
        if (c[r].size() != c.size()) throw ValidationError("correlation matrix must be square");
        for (std::size_t col = 0; col < c.size(); ++col)
          m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(col)) = c[r][col].get<double>();
      }
      cfg.correlation = CorrelationMatrix(std::move(m));
    } else {
      for (const auto& e : c) {
        const auto pair = e.at("pair");
        cfg.correlation = cfg.correlation.with(copula_index(pair.at(0).get<std::string>(), d),
                                               copula_index(pair.at(1).get<std::string>(), d),
                                               e.at("rho").get<double>());
      }
    }
  }
  cfg.expected_return_x = j.value("expected_return_x", cfg.expected_return_x);
  cfg.expected_return_s = j.value("expected_return_s", cfg.expected_return_s);
  cfg.n = j.value("N", std::size_t{100000});
  cfg.seed = j.value("seed", std::uint64_t{1});
  cfg.validate();
  return cfg;
}

inline json to_json(const MarketConfig& cfg) {
  json j;
  j["x_marginals"] = json::array();
  for (const auto& m : cfg.x_marginals) j["x_marginals"].push_back(to_json(m));
  j["s_marginals"] = json::array();
  for (const auto& m : cfg.s_marginals) j["s_marginals"].push_back(to_json(m));
  json c = json::array();
  const auto& m = cfg.correlation.matrix();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index col = 0; col < m.cols(); ++col) row.push_back(m(r, col));
    c.push_back(row);
  }
  j["correlation"] = c;
  j["expected_return_x"] = cfg.expected_return_x;
  j["expected_return_s"] = cfg.expected_return_s;
  j["N"] = cfg.n;
  j["seed"] = cfg.seed;
  return j;
}

/// {"matrix": [[...]]} | {"csv": "path"} | {"uniform": {"d":2,"bilateral":0.6,"society":0.2}}
inline LiabilityStructure liabilities_from_json(const json& j, const std::filesystem::path& base_dir = {}) {
  if (j.contains("matrix")) {
    const json& m = j.at("matrix");
    Eigen::MatrixXd raw(static_cast<Eigen::Index>(m.size()), static_cast<Eigen::Index>(m.size()));
    for (std::size_t r = 0; r < m.size(); ++r) {
      if (m[r].size() != m.size()) throw ValidationError("liability matrix must be square");
      for (std::size_t c = 0; c < m.size(); ++c)
        raw(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = m[r][c].get<double>();
    }
    return validate_liabilities(raw);
  }
  if (j.contains("csv")) {
    std::filesystem::path p = j.at("csv").get<std::string>();
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    return validate_liabilities(to_matrix(read_csv(p)));
  }
  if (j.contains("uniform")) {
    const json& u = j.at("uniform");
    return uniform_liabilities(u.value("d", std::size_t{2}), u.at("bilateral").get<double>(),
                               u.at("society").get<double>());
  }
  throw ValidationError("liabilities need one of 'matrix', 'csv' or 'uniform'");
}

inline json to_json(const LiabilityStructure& l) {
  json m = json::array();
  for (Eigen::Index r = 0; r < l.nominal().rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < l.nominal().cols(); ++c) row.push_back(l.nominal()(r, c));
    m.push_back(row);
  }
  return {{"matrix", m}};
}

inline AcceptanceCriterion criterion_from_json(const json& j) {
  AcceptanceCriterion c;
  const std::string kind = j.value("kind", std::string("ES"));
  if (kind == "ES" || kind == "es")
    c.kind = RiskKind::es;
  else if (kind == "VaR" || kind == "var")
    c.kind = RiskKind::var;
  else
    throw ValidationError("unknown criterion kind '" + kind + "'");
  c.alpha = j.value("alpha", 0.05);
  c.validate();
  return c;
}

inline json to_json(const AcceptanceCriterion& c) { return {{"kind", to_string(c.kind)}, {"alpha", c.alpha}}; }

}  // namespace sysrisk::io
