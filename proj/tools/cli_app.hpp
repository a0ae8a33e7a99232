#ifndef SPACINGS_TOOLS_CLI_APP_HPP
#define SPACINGS_TOOLS_CLI_APP_HPP

// Command-line front end. `run` parses arguments, dispatches to the library
// and writes JSON or CSV. It never calls exit(), so tests drive it in-process.

#include <chrono>
#include <ctime>
#include <fstream>
#include <charconv>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spacings/harness.hpp"
#include "spacings/io.hpp"
#include "spacings/multivariate.hpp"
#include "spacings/univariate.hpp"

namespace spacings::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kNumerical = 4 };

inline int exit_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::configuration:
    case ErrorKind::capability:
    case ErrorKind::parameter_domain:
    case ErrorKind::invalid_phi:
    case ErrorKind::unsupported_phi:
    case ErrorKind::constraint:
      return kUsage;
    case ErrorKind::data:
    case ErrorKind::degenerate_geometry:
      return kData;
    case ErrorKind::domain:
    case ErrorKind::accuracy:
    case ErrorKind::estimation_failure:
    case ErrorKind::internal_consistency:
    case ErrorKind::information_singular:
    case ErrorKind::harness:
    case ErrorKind::non_convergence:
      return kNumerical;
  }
  return kNumerical;
}

namespace detail {

using io::Json;

inline void write_error(std::ostream& err, const std::string& kind, const std::string& message, int code) {
  Json j;
  j["schema"] = io::kSchemaVersion;
  j["error"] = {{"kind", kind}, {"message", message}, {"exit_code", code}};
  err << j.dump() << '\n';
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Options shared by every subcommand.
struct Common {
  std::string out;
  bool no_meta = false;
  int workers = 1;
};

inline void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--out", c.out, "Write the result here instead of stdout");
  sub->add_flag("--no-meta", c.no_meta, "Omit the meta block (timestamps) for byte-stable output");
  sub->add_option("--workers", c.workers, "Worker threads for Monte-Carlo work")->check(CLI::PositiveNumber);
}

class Emitter {
 public:
  Emitter(std::ostream& out, const Common& c, std::string subcommand, std::vector<std::string> argv)
      : out_(out), c_(c), sub_(std::move(subcommand)), argv_(std::move(argv)) {}

  void json(Json j) const {
    if (!c_.no_meta)
      j["meta"] = {{"tool", "spacings"}, {"version", kVersion}, {"subcommand", sub_}, {"timestamp", utc_timestamp()},
                   {"argv", argv_}};
    text(j.dump(2) + "\n");
  }

  void text(const std::string& s) const {
    if (c_.out.empty()) {
      out_ << s;
      return;
    }
    std::ofstream f(c_.out, std::ios::binary);
    if (!f) fail(ErrorKind::configuration, "cannot write '" + c_.out + "'");
    f << s;
  }

 private:
  std::ostream& out_;
  const Common& c_;
  std::string sub_;
  std::vector<std::string> argv_;
};

/// Shortest decimal text that round-trips to the same double.
inline std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline Params parse_vector(const std::string& text, const char* what) {
  Params v;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    double x = 0.0;
    const auto t = io::detail::trim(cell);
    if (!io::detail::parse_number(t, x)) fail(ErrorKind::configuration, std::string(what) + ": bad number '" + cell + "'");
    v.push_back(x);
  }
  if (v.empty()) fail(ErrorKind::configuration, std::string(what) + ": empty list");
  return v;
}

/// Rows written "a1,a2,...=c".
inline AffineConstraint parse_constraint(const std::vector<std::string>& rows) {
  if (rows.empty()) fail(ErrorKind::configuration, "constraint: no rows given");
  std::vector<Params> coef;
  Params rhs;
  for (const auto& row : rows) {
    const auto eq = row.find('=');
    if (eq == std::string::npos) fail(ErrorKind::configuration, "constraint row '" + row + "' lacks '=c'");
    coef.push_back(parse_vector(row.substr(0, eq), "constraint"));
    const Params c = parse_vector(row.substr(eq + 1), "constraint");
    if (c.size() != 1) fail(ErrorKind::configuration, "constraint row '" + row + "': one right-hand side expected");
    rhs.push_back(c[0]);
  }
  AffineConstraint con;
  const auto r = static_cast<Eigen::Index>(coef.size());
  const auto p = static_cast<Eigen::Index>(coef.front().size());
  con.A.resize(r, p);
  con.c.resize(r);
  for (Eigen::Index i = 0; i < r; ++i) {
    if (static_cast<Eigen::Index>(coef[static_cast<std::size_t>(i)].size()) != p)
      fail(ErrorKind::configuration, "constraint rows have different lengths");
    for (Eigen::Index k = 0; k < p; ++k) con.A(i, k) = coef[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
    con.c[i] = rhs[static_cast<std::size_t>(i)];
  }
  return con;
}

inline Params require_dim(const Params& v, const ParametricModel& model, const char* what) {
  if (static_cast<int>(v.size()) != model.param_dim())
    fail(ErrorKind::configuration, std::string(what) + " needs " + std::to_string(model.param_dim()) +
                                       " value(s) for model '" + model.name() + "'");
  return v;
}

struct Flags {
  std::string model, phi = "neglog", phi2, data, params, theta0, theta_true, delta, kind, config, candidates;
  std::vector<std::string> constraint, alternatives;
  int m = 1, reps = 0, B = 1000;
  std::size_t n = 0;
  double level = 0.05;
  std::optional<std::uint64_t> seed;
  bool lrt = false, mv = false;
  int dim = 2;
  std::string summary;
};

inline Json gse_json(const GseResult& g, const ParametricModel& model, const std::string& phi, int m, std::size_t n) {
  Json j;
  j["schema"] = io::kSchemaVersion;
  j["model"] = model.name();
  j["phi"] = phi;
  if (model.obs_dim() == 1) j["m"] = m;
  j["n"] = n;
  j["estimate"] = g.theta;
  j["objective"] = g.value;
  TestDiagnostics d;
  d.iterations = g.optimizer.iterations;
  d.evaluations = g.optimizer.evaluations;
  d.restarts = g.optimizer.restarts;
  d.converged = g.optimizer.converged;
  d.stationarity = g.optimizer.stationarity;
  j["diagnostics"] = io::to_json(d);
  return j;
}

/// Builds a harness configuration from --config plus flag overrides.
inline McConfig harness_config(const Flags& f, const Common& c, CLI::App* sub) {
  McConfig cfg;
  bool seeded = false;
  if (!f.config.empty()) {
    const Json j = io::read_json_file(f.config);
    cfg = io::config_from_json(j);
    seeded = j.contains("seed");
  }
  auto given = [&](const char* name) {
    const CLI::Option* o = sub->get_option_no_throw(name);
    return o != nullptr && o->count() > 0;
  };
  if (given("--model")) cfg.model = f.model;
  if (given("--phi")) cfg.phi = f.phi;
  if (given("--phi2")) cfg.phi2 = f.phi2;
  if (given("--m")) cfg.m = f.m;
  if (given("--n")) cfg.n = f.n;
  if (given("--reps")) cfg.reps = f.reps;
  if (given("--level")) cfg.level = f.level;
  if (given("--kind")) cfg.kind = parse_test_kind(f.kind);
  if (given("--theta0")) cfg.theta0 = parse_vector(f.theta0, "--theta0");
  if (given("--theta-true")) cfg.theta_true = parse_vector(f.theta_true, "--theta-true");
  if (given("--delta")) cfg.delta = parse_vector(f.delta, "--delta");
  if (given("--constraint")) cfg.constraint = parse_constraint(f.constraint);
  if (f.seed) {
    cfg.seed = *f.seed;
    seeded = true;
  }
  if (!seeded) fail(ErrorKind::configuration, "randomized subcommand: --seed (or a config seed) is required");
  if (given("--workers") || f.config.empty()) cfg.workers = c.workers;
  if (cfg.theta0.empty()) fail(ErrorKind::configuration, "--theta0 (or config theta0) is required");
  return cfg;
}

inline Json config_json(const McConfig& c) {
  Json j;
  j["model"] = c.model;
  j["kind"] = to_string(c.kind);
  j["phi"] = c.phi;
  if (!c.phi2.empty()) j["phi2"] = c.phi2;
  j["m"] = c.m;
  j["n"] = c.n;
  j["reps"] = c.reps;
  j["level"] = c.level;
  j["seed"] = c.seed;
  j["theta0"] = c.theta0;
  if (!c.theta_true.empty()) j["theta_true"] = c.theta_true;
  if (c.delta) j["delta"] = *c.delta;
  return j;
}

}  // namespace detail

/// Runs one invocation; args exclude the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace detail;
  CLI::App app{"Sample-spacings parametric tests", "spacings"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", kVersion);

  Flags f;
  Common common;

  auto add_model = [&](CLI::App* s, bool required) {
    auto* o = s->add_option("--model", f.model, "exp, normal, normal-scale-mix, bvn-mean, bvn-corr-mix, uniform");
    if (required) o->required();
  };
  auto add_phi = [&](CLI::App* s) {
    s->add_option("--phi", f.phi, "neglog, greenwood, xlogx, neglog-affine, gamma:<v>, kimball:<r>, rao:<r>");
  };
  auto add_data = [&](CLI::App* s) { s->add_option("--data", f.data, "CSV file of observations")->required(); };
  auto add_level = [&](CLI::App* s) { s->add_option("--level", f.level, "Significance level"); };
  auto add_seed = [&](CLI::App* s) { s->add_option("--seed", f.seed, "Random seed (required)"); };

  auto* test = app.add_subcommand("test", "Simple hypothesis test (one or two phi functions)");
  add_model(test, true);
  add_phi(test);
  test->add_option("--phi2", f.phi2, "Estimating phi for the two-phi test");
  test->add_option("--params", f.params, "Optimizer start for the estimate (default: theta0)");
  test->add_option("--theta0", f.theta0, "Hypothesized parameter")->required();
  test->add_option("--m", f.m, "Spacing step")->check(CLI::PositiveNumber);
  add_level(test);
  add_data(test);

  auto* comp = app.add_subcommand("test-composite", "Affine-constrained univariate test");
  add_model(comp, true);
  add_phi(comp);
  comp->add_option("--params", f.params, "Optimizer start");
  comp->add_option("--constraint", f.constraint, "Constraint row a1,...,ap=c (repeatable)")->required();
  comp->add_option("--m", f.m, "Spacing step")->check(CLI::PositiveNumber);
  add_level(comp);
  add_data(comp);

  auto* mv = app.add_subcommand("test-mv", "Nearest-neighbour-ball test (simple or constrained)");
  add_model(mv, true);
  add_phi(mv);
  mv->add_option("--params", f.params, "Optimizer start");
  auto* mv_theta0 = mv->add_option("--theta0", f.theta0, "Hypothesized parameter");
  auto* mv_con = mv->add_option("--constraint", f.constraint, "Constraint row a1,...,ap=c (repeatable)");
  mv_theta0->excludes(mv_con);
  add_level(mv);
  add_data(mv);

  auto* est = app.add_subcommand("estimate", "Generalized spacings estimate");
  add_model(est, true);
  add_phi(est);
  est->add_option("--params", f.params, "Optimizer start (default: model reference point)");
  est->add_option("--m", f.m, "Spacing step (univariate)")->check(CLI::PositiveNumber);
  add_data(est);

  auto* uni = app.add_subcommand("uniformity", "Test against a fully specified F0 with a simulated null");
  add_model(uni, true);
  add_phi(uni);
  uni->add_option("--params", f.params, "Parameters fixing F0")->required();
  uni->add_option("--m", f.m, "Spacing step")->check(CLI::PositiveNumber);
  uni->add_option("--reps", f.reps, "Null replicates")->required()->check(CLI::PositiveNumber);
  add_seed(uni);
  add_level(uni);
  add_data(uni);

  auto* mopt = app.add_subcommand("mopt", "Bootstrap choice of the spacing step");
  add_model(mopt, true);
  add_phi(mopt);
  mopt->add_option("--params", f.params, "Optimizer start");
  mopt->add_option("--B", f.B, "Bootstrap samples (>= 500)");
  mopt->add_option("--candidates", f.candidates, "Comma list of m values (default 1..n/10)");
  add_seed(mopt);
  add_level(mopt);
  add_data(mopt);

  auto add_harness = [&](CLI::App* s) {
    s->add_option("--config", f.config, "JSON experiment config; flags override its keys");
    add_model(s, false);
    add_phi(s);
    s->add_option("--phi2", f.phi2, "Estimating phi (two-phi kind)");
    s->add_option("--kind", f.kind, "simple, two-phi, composite, mv-simple, mv-composite, lrt");
    s->add_option("--theta0", f.theta0, "Tested parameter");
    s->add_option("--theta-true", f.theta_true, "Data-generating parameter");
    s->add_option("--constraint", f.constraint, "Constraint row a1,...,ap=c (repeatable)");
    s->add_option("--m", f.m, "Spacing step")->check(CLI::PositiveNumber);
    s->add_option("--n", f.n, "Sample size");
    s->add_option("--reps", f.reps, "Replicates (>= 100)");
    add_level(s);
    add_seed(s);
  };

  auto* type1 = app.add_subcommand("type1", "Monte-Carlo rejection rate at the data parameter");
  add_harness(type1);

  auto* power = app.add_subcommand("power", "Monte-Carlo power curve (CSV)");
  add_harness(power);
  power->add_option("--alt", f.alternatives, "Alternative parameter a1,...,ap (repeatable)");
  power->add_flag("--lrt", f.lrt, "Also run the likelihood-ratio baseline");

  auto* qq = app.add_subcommand("qq", "Q-Q pairs of the calibrated statistic against its chi-square law (CSV)");
  add_harness(qq);
  qq->add_option("--delta", f.delta, "Local alternative: data at theta0 + delta/sqrt(n)");
  qq->add_option("--summary", f.summary, "Also write a JSON summary (KS distance, df, noncentrality) here");

  auto* sig = app.add_subcommand("sigma-constants", "Calibration constants for a phi function");
  add_phi(sig);
  sig->add_option("--m", f.m, "Spacing step")->check(CLI::PositiveNumber);
  sig->add_flag("--mv", f.mv, "Include multivariate constants b_phi and sigma_q^2");
  sig->add_option("--dim", f.dim, "Dimension for sigma_q^2")->check(CLI::PositiveNumber);

  for (auto* s : {test, comp, mv, est, uni, mopt, type1, power, qq, sig}) add_common(s, common);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << '\n';
    return kOk;
  } catch (const CLI::ParseError& e) {
    write_error(err, "usage", e.what(), kUsage);
    return kUsage;
  }

  CLI::App* active = app.get_subcommands().front();
  const Emitter emit(out, common, active->get_name(), args);

  try {
    if (active == sig) {
      const PhiFunction phi = parse_phi(f.phi);
      Json j = io::to_json(spacing_constants(phi, f.m), phi.label);
      if (f.mv) {
        const MvPhiConstants c = mv_constants(phi);
        j["b_phi"] = c.b_phi;
        j["q0"] = c.q0;
        j["dim"] = f.dim;
        j["sigma_q2"] = io::to_json(sigma_q_squared(phi, f.dim));
      }
      emit.json(j);
      return kOk;
    }

    if (active == type1 || active == power || active == qq) {
      const McConfig cfg = harness_config(f, common, active);
      const auto model = make_model(cfg.model);
      if (active == type1) {
        const McSummary s = type1_rate(cfg);
        Json j;
        j["schema"] = io::kSchemaVersion;
        j["config"] = config_json(cfg);
        j["summary"] = io::to_json(s);
        emit.json(j);
        return kOk;
      }
      if (active == power) {
        std::vector<Params> alts;
        for (const auto& a : f.alternatives) alts.push_back(require_dim(parse_vector(a, "--alt"), *model, "--alt"));
        if (alts.empty() && !f.config.empty()) {
          const Json j = io::read_json_file(f.config);
          if (j.contains("alternatives")) alts = j["alternatives"].get<std::vector<Params>>();
        }
        if (alts.empty()) fail(ErrorKind::configuration, "power: at least one --alt is required");
        bool with_lrt = f.lrt;
        if (!with_lrt && !f.config.empty()) {
          const Json j = io::read_json_file(f.config);
          with_lrt = j.value("lrt", false);
        }
        const auto curve = power_curve(cfg, alts, with_lrt);
        std::ostringstream csv;
        for (int k = 0; k < model->param_dim(); ++k) csv << "theta_" << (k + 1) << ',';
        csv << "rate,se,rejections,completed,failures";
        if (with_lrt) csv << ",lrt_rate,lrt_se";
        csv << '\n';
        for (const auto& pt : curve) {
          for (double v : pt.theta) csv << fmt(v) << ',';
          csv << fmt(pt.spacings.rate) << ',' << fmt(pt.spacings.se) << ',' << pt.spacings.rejections << ','
              << pt.spacings.completed << ',' << pt.spacings.failures;
          if (pt.lrt) csv << ',' << fmt(pt.lrt->rate) << ',' << fmt(pt.lrt->se);
          csv << '\n';
        }
        emit.text(csv.str());
        return kOk;
      }
      McConfig qc = cfg;
      if (active->count("--delta")) qc.delta = parse_vector(f.delta, "--delta");
      const QqData q = qq_data(qc);
      std::ostringstream csv;
      csv << "empirical,reference\n";
      for (std::size_t i = 0; i < q.empirical.size(); ++i) csv << fmt(q.empirical[i]) << ',' << fmt(q.reference[i]) << '\n';
      emit.text(csv.str());
      if (!f.summary.empty()) {
        Json j;
        j["schema"] = io::kSchemaVersion;
        j["config"] = config_json(qc);
        j["df"] = q.df;
        j["noncentrality"] = q.noncentrality;
        j["ks"] = q.ks;
        j["summary"] = io::to_json(q.summary);
        std::ofstream s(f.summary, std::ios::binary);
        if (!s) fail(ErrorKind::configuration, "cannot write '" + f.summary + "'");
        s << j.dump(2) << '\n';
      }
      return kOk;
    }

    // Data-driven subcommands.
    const auto model = make_model(f.model);
    const PhiFunction phi = parse_phi(f.phi);
    std::optional<Params> init;
    if (!f.params.empty()) init = require_dim(parse_vector(f.params, "--params"), *model, "--params");
    const bool univariate = model->obs_dim() == 1;
    if ((active == test || active == comp || active == uni || active == mopt) && !univariate)
      fail(ErrorKind::configuration, "'" + active->get_name() + "' needs a univariate model; use test-mv");
    if (active == mv && univariate) fail(ErrorKind::configuration, "test-mv needs a multivariate model");
    if (active == mv && !active->count("--theta0") && !active->count("--constraint"))
      fail(ErrorKind::configuration, "test-mv needs --theta0 or --constraint");
    if (active == uni && !model->has_cdf()) fail(ErrorKind::capability, model->name() + " has no CDF");
    std::optional<Params> theta0;
    if (!f.theta0.empty()) theta0 = require_dim(parse_vector(f.theta0, "--theta0"), *model, "--theta0");
    std::optional<AffineConstraint> con;
    if (!f.constraint.empty()) con = parse_constraint(f.constraint);
    if ((active == uni || active == mopt) && !f.seed)
      fail(ErrorKind::configuration, "randomized subcommand: --seed is required");
    std::optional<PhiFunction> phi2;
    if (!f.phi2.empty()) phi2 = parse_phi(f.phi2);

    const io::Table table = io::ingest_csv(f.data, model->obs_dim());

    if (active == test) {
      const SortedSample s(table.values);
      const TestReport r = phi2 ? test_two_phi(s, *model, *theta0, phi, *phi2, f.m, f.level, init)
                                : test_simple(s, *model, *theta0, phi, f.m, f.level, init);
      emit.json(io::to_json(r));
      return kOk;
    }
    if (active == comp) {
      const SortedSample s(table.values);
      emit.json(io::to_json(test_composite(s, *model, *con, phi, f.m, f.level, init)));
      return kOk;
    }
    if (active == mv) {
      const PointSet pts(table.values, model->obs_dim());
      const TestReport r = con ? mv_test_composite(pts, *model, *con, phi, f.level, init)
                               : mv_test_simple(pts, *model, *theta0, phi, f.level, init);
      emit.json(io::to_json(r));
      return kOk;
    }
    if (active == est) {
      const Params start = init ? *init : model->reference_params();
      if (univariate) {
        const SortedSample s(table.values);
        emit.json(gse_json(estimate_gse(s, *model, phi, f.m, start), *model, phi.label, f.m, s.size()));
      } else {
        const PointSet pts(table.values, model->obs_dim());
        emit.json(gse_json(mv_estimate_gse(pts, *model, phi, start), *model, phi.label, f.m, pts.size()));
      }
      return kOk;
    }
    if (active == uni) {
      const SortedSample s(table.values);
      const Params p = *init;
      check_params(*model, p);
      const auto F0 = [&](double x) { return model->cdf(p, x); };
      Json j = io::to_json(test_uniformity(s, F0, phi, f.m, f.reps, f.level, *f.seed));
      j["params"] = p;
      emit.json(j);
      return kOk;
    }
    if (active == mopt) {
      const SortedSample s(table.values);
      MoptOptions o;
      o.B = f.B;
      o.level = f.level;
      o.seed = *f.seed;
      o.workers = common.workers;
      if (!f.candidates.empty())
        for (double v : parse_vector(f.candidates, "--candidates")) {
          if (v != std::floor(v)) fail(ErrorKind::configuration, "--candidates must be integers");
          o.candidates.push_back(static_cast<int>(v));
        }
      emit.json(io::to_json(select_m_opt(s, *model, phi, o, init)));
      return kOk;
    }
    fail(ErrorKind::configuration, "unhandled subcommand");
  } catch (const Error& e) {
    const int code = exit_code_for(e.kind());
    write_error(err, to_string(e.kind()), e.what(), code);
    return code;
  } catch (const nlohmann::json::exception& e) {
    write_error(err, "configuration", e.what(), kUsage);
    return kUsage;
  } catch (const std::exception& e) {
    write_error(err, "internal", e.what(), kNumerical);
    return kNumerical;
  }
}

}  // namespace spacings::cli

#endif  // SPACINGS_TOOLS_CLI_APP_HPP
