#ifndef SPACINGS_IO_HPP
#define SPACINGS_IO_HPP

// CSV ingestion and JSON serialization of reports, summaries and harness
// configurations. Depends on nlohmann/json (single header).

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "spacings/errors.hpp"
#include "spacings/harness.hpp"
#include "spacings/multivariate.hpp"
#include "spacings/phi.hpp"
#include "spacings/report.hpp"

namespace spacings::io {

using Json = nlohmann::ordered_json;

inline constexpr const char* kSchemaVersion = "1";

// ---------------------------------------------------------------------------
// CSV

struct Table {
  int dim = 0;
  std::size_t rows = 0;
  std::vector<double> values;  // row-major
  bool had_header = false;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

inline bool parse_number(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

}  // namespace detail

/// Parses CSV text with `expected_dim` numeric columns. A first row that is
/// not numeric is taken as a header; any later non-numeric row is an error
/// naming its line. Blank lines are skipped.
inline Table parse_csv(std::istream& in, int expected_dim) {
  if (expected_dim < 1) fail(ErrorKind::configuration, "csv: expected dimension must be >= 1");
  Table t;
  t.dim = expected_dim;
  std::string line;
  std::size_t line_no = 0;
  bool first = true;
  std::vector<std::size_t> bad_lines;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split(line);
    std::vector<double> row;
    bool numeric = true;
    for (auto c : cells) {
      double v = 0.0;
      if (!detail::parse_number(c, v)) {
        numeric = false;
        break;
      }
      row.push_back(v);
    }
    if (!numeric) {
      if (first) {
        t.had_header = true;
        first = false;
        if (static_cast<int>(cells.size()) != expected_dim)
          fail(ErrorKind::data, "csv: header has " + std::to_string(cells.size()) + " columns, expected " +
                                    std::to_string(expected_dim));
        continue;
      }
      bad_lines.push_back(line_no);
      continue;
    }
    first = false;
    if (static_cast<int>(row.size()) != expected_dim)
      fail(ErrorKind::data, "csv: line " + std::to_string(line_no) + " has " + std::to_string(row.size()) +
                                " columns, expected " + std::to_string(expected_dim));
    t.values.insert(t.values.end(), row.begin(), row.end());
    ++t.rows;
  }
  if (!bad_lines.empty()) {
    std::string msg = "csv: non-numeric cells on line";
    msg += bad_lines.size() > 1 ? "s" : "";
    for (std::size_t i = 0; i < bad_lines.size() && i < 20; ++i) msg += (i ? ", " : " ") + std::to_string(bad_lines[i]);
    if (bad_lines.size() > 20) msg += ", ...";
    fail(ErrorKind::data, msg);
  }
  if (t.rows == 0) fail(ErrorKind::data, "csv: no data rows");
  return t;
}

inline Table ingest_csv(const std::string& path, int expected_dim) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::data, "csv: cannot open '" + path + "'");
  return parse_csv(in, expected_dim);
}

// ---------------------------------------------------------------------------
// JSON

inline Json to_json(const TestDiagnostics& d) {
  Json j;
  j["iterations"] = d.iterations;
  j["evaluations"] = d.evaluations;
  j["restarts"] = d.restarts;
  j["converged"] = d.converged;
  j["stationarity"] = d.stationarity;
  j["ties"] = d.ties;
  if (d.mc_reps > 0) j["mc_reps"] = d.mc_reps;
  return j;
}

inline Json to_json(const TestReport& r) {
  Json j;
  j["schema"] = kSchemaVersion;
  j["kind"] = r.kind;
  j["n"] = r.n;
  j["raw_T"] = r.raw_T;
  j["T_tilde"] = r.T_tilde;
  j["df"] = r.df;
  j["p_value"] = r.p_value;
  j["critical_value"] = r.critical_value;
  j["estimate"] = r.estimate;
  if (r.restricted_estimate) j["restricted_estimate"] = *r.restricted_estimate;
  if (r.theta0) j["theta0"] = *r.theta0;
  j["m"] = r.m;
  j["phi"] = r.phi;
  if (r.phi_estimate) j["phi_estimate"] = *r.phi_estimate;
  j["sigma2"] = r.sigma2;
  j["e2"] = r.e2;
  j["decision"] = r.decision();
  j["level"] = r.level;
  if (r.b_phi) j["b_phi"] = *r.b_phi;
  if (r.sigma_q2) j["sigma_q2"] = *r.sigma_q2;
  if (r.dimension) j["dimension"] = *r.dimension;
  j["diagnostics"] = to_json(r.diagnostics);
  return j;
}

inline Json to_json(const SpacingConstants& c, const std::string& phi) {
  Json j;
  j["schema"] = kSchemaVersion;
  j["phi"] = phi;
  j["m"] = c.m;
  j["mu_phi_m"] = c.mu_phi_m;
  j["e2"] = c.e2;
  j["var_q"] = c.var_q;
  j["e_cross"] = c.e_cross;
  j["sigma2"] = c.sigma2;
  return j;
}

inline Json to_json(const SigmaQ& s) {
  Json j;
  j["value"] = s.value;
  j["coarse"] = s.coarse;
  j["relative_change"] = s.relative_change;
  j["t_max"] = s.t_max;
  j["levels"] = s.levels;
  j["nodes_per_panel"] = s.nodes_per_panel;
  j["shell_nodes"] = s.shell_nodes;
  return j;
}

inline Json to_json(const McSummary& s) {
  Json j;
  j["rate"] = s.rate;
  j["se"] = s.se;
  j["rejections"] = s.rejections;
  j["completed"] = s.completed;
  j["failures"] = s.failures;
  j["failure_messages"] = s.failure_messages;
  return j;
}

inline Json to_json(const MoptReport& r) {
  Json j;
  j["schema"] = kSchemaVersion;
  j["m_opt"] = r.m_opt;
  j["B"] = r.B;
  j["level"] = r.level;
  j["theta_hat"] = r.theta_hat;
  Json rows = Json::array();
  for (std::size_t k = 0; k < r.candidates.size(); ++k) {
    Json row;
    row["m"] = r.candidates[k];
    row["rate"] = r.rates[k];
    row["se"] = r.ses[k];
    row["failures"] = r.failures[k];
    rows.push_back(row);
  }
  j["candidates"] = rows;
  return j;
}

// ---------------------------------------------------------------------------
// Harness configuration files

inline AffineConstraint constraint_from_json(const Json& j) {
  const auto rows = j.at("A").get<std::vector<std::vector<double>>>();
  const auto rhs = j.at("c").get<std::vector<double>>();
  if (rows.empty() || rows.size() != rhs.size())
    fail(ErrorKind::configuration, "constraint: A and c must have the same non-zero row count");
  AffineConstraint con;
  con.A.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  con.c.resize(static_cast<Eigen::Index>(rhs.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.front().size()) fail(ErrorKind::configuration, "constraint: ragged A");
    for (std::size_t k = 0; k < rows[i].size(); ++k)
      con.A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
    con.c[static_cast<Eigen::Index>(i)] = rhs[i];
  }
  return con;
}

/// Keys: model, theta_true, theta0, phi, phi2, m, n, reps, level, seed,
/// kind, constraint {A, c}, delta, workers. Unknown keys are rejected.
inline McConfig config_from_json(const Json& j) {
  static const std::vector<std::string> known = {"model", "theta_true", "theta0", "phi",   "phi2",
                                                 "m",     "n",          "reps",   "level", "seed",
                                                 "kind",  "constraint", "delta",  "workers", "alternatives",
                                                 "lrt"};
  if (!j.is_object()) fail(ErrorKind::configuration, "config: top level must be an object");
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      fail(ErrorKind::configuration, "config: unknown key '" + key + "'");
  McConfig c;
  try {
    if (j.contains("model")) c.model = j["model"].get<std::string>();
    if (j.contains("theta_true")) c.theta_true = j["theta_true"].get<Params>();
    if (j.contains("theta0")) c.theta0 = j["theta0"].get<Params>();
    if (j.contains("phi")) c.phi = j["phi"].get<std::string>();
    if (j.contains("phi2")) c.phi2 = j["phi2"].get<std::string>();
    if (j.contains("m")) c.m = j["m"].get<int>();
    if (j.contains("n")) c.n = j["n"].get<std::size_t>();
    if (j.contains("reps")) c.reps = j["reps"].get<int>();
    if (j.contains("level")) c.level = j["level"].get<double>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("kind")) c.kind = parse_test_kind(j["kind"].get<std::string>());
    if (j.contains("constraint")) c.constraint = constraint_from_json(j["constraint"]);
    if (j.contains("delta")) c.delta = j["delta"].get<Params>();
    if (j.contains("workers")) c.workers = j["workers"].get<int>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::configuration, std::string("config: ") + e.what());
  }
  return c;
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::configuration, "cannot open config '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::configuration, "config '" + path + "': " + e.what());
  }
}

}  // namespace spacings::io

#endif  // SPACINGS_IO_HPP
