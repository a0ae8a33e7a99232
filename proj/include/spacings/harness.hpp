#ifndef SPACINGS_HARNESS_HPP
#define SPACINGS_HARNESS_HPP

// Monte-Carlo experiments: type-I rates, power curves, Q-Q exports, the
// likelihood-ratio baseline and bootstrap selection of m.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "spacings/errors.hpp"
#include "spacings/models.hpp"
#include "spacings/multivariate.hpp"
#include "spacings/optimize.hpp"
#include "spacings/phi.hpp"
#include "spacings/report.hpp"
#include "spacings/rng.hpp"
#include "spacings/special_functions.hpp"
#include "spacings/univariate.hpp"

namespace spacings {

// ---------------------------------------------------------------------------
// Parallel replicate execution

/// Runs body(i) for i in [0, count) on `workers` threads. Work is handed out
/// by index and results are written by index, so the output does not depend
/// on the worker count. Exceptions are captured per index.
template <class Body>
std::vector<std::exception_ptr> run_indexed(std::size_t count, int workers, Body&& body) {
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto loop = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int w = std::max(1, workers);
  if (w == 1 || count < 2) {
    loop();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(w));
    for (int k = 0; k < w; ++k) pool.emplace_back(loop);
    for (auto& t : pool) t.join();
  }
  return errors;
}

inline std::string describe(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const Error& err) {
    return std::string(to_string(err.kind())) + ": " + err.what();
  } catch (const std::exception& err) {
    return err.what();
  } catch (...) {
    return "unknown error";
  }
}

// ---------------------------------------------------------------------------
// Configuration

enum class TestKind { simple, two_phi, composite, mv_simple, mv_composite, lrt };

inline const char* to_string(TestKind k) {
  switch (k) {
    case TestKind::simple: return "simple";
    case TestKind::two_phi: return "two-phi";
    case TestKind::composite: return "composite";
    case TestKind::mv_simple: return "mv-simple";
    case TestKind::mv_composite: return "mv-composite";
    case TestKind::lrt: return "lrt";
  }
  return "unknown";
}

inline TestKind parse_test_kind(const std::string& s) {
  for (TestKind k : {TestKind::simple, TestKind::two_phi, TestKind::composite, TestKind::mv_simple,
                     TestKind::mv_composite, TestKind::lrt})
    if (s == to_string(k)) return k;
  fail(ErrorKind::configuration, "unknown test kind '" + s + "'");
}

struct McConfig {
  std::string model = "exp";
  Params theta_true;               // data-generating parameter (empty: theta0)
  Params theta0;                   // tested parameter (simple kinds) or optimizer start
  std::string phi = "neglog";
  std::string phi2;                // two-phi: estimating phi
  int m = 1;
  std::size_t n = 100;
  int reps = 1000;
  double level = 0.05;
  std::uint64_t seed = 1;
  TestKind kind = TestKind::simple;
  std::optional<AffineConstraint> constraint;
  /// Local alternative: data drawn at theta0 + delta / sqrt(n).
  std::optional<Params> delta;
  int workers = 1;
  GseOptions gse;
};

namespace detail {

inline bool is_multivariate(TestKind k) { return k == TestKind::mv_simple || k == TestKind::mv_composite; }
inline bool is_composite(TestKind k) { return k == TestKind::composite || k == TestKind::mv_composite; }

inline void validate(const McConfig& c, const ParametricModel& model) {
  if (c.reps < 100) fail(ErrorKind::configuration, "reps must be >= 100");
  check_level(c.level);
  if (c.n < 2) fail(ErrorKind::configuration, "n must be >= 2");
  if (static_cast<int>(c.theta0.size()) != model.param_dim())
    fail(ErrorKind::configuration, "theta0 must have " + std::to_string(model.param_dim()) + " entries");
  if (!c.theta_true.empty()) check_params(model, c.theta_true);
  check_params(model, c.theta0);
  if (is_composite(c.kind) && !c.constraint)
    fail(ErrorKind::configuration, "composite experiments need a constraint");
  if (c.kind == TestKind::two_phi && c.phi2.empty())
    fail(ErrorKind::configuration, "two-phi experiments need phi2");
  if (is_multivariate(c.kind) != (model.obs_dim() > 1))
    fail(ErrorKind::configuration, "test kind does not match the model dimension");
}

}  // namespace detail

/// Parameter the replicate data are drawn from.
inline Params data_parameter(const McConfig& c) {
  if (c.delta) {
    if (c.delta->size() != c.theta0.size()) fail(ErrorKind::configuration, "delta has the wrong length");
    Params t = c.theta0;
    for (std::size_t j = 0; j < t.size(); ++j) t[j] += (*c.delta)[j] / std::sqrt(static_cast<double>(c.n));
    return t;
  }
  return c.theta_true.empty() ? c.theta0 : c.theta_true;
}

inline TestReport lrt_baseline(const ParametricModel& model, ParamView theta0, const std::vector<double>& data,
                               double level);

/// Runs the configured test on `data` (flat, row-major for d > 1).
inline TestReport run_configured_test(const McConfig& c, const ParametricModel& model,
                                      const std::vector<double>& data) {
  switch (c.kind) {
    case TestKind::simple:
      return test_simple(SortedSample(data), model, c.theta0, parse_phi(c.phi), c.m, c.level, std::nullopt, c.gse);
    case TestKind::two_phi:
      return test_two_phi(SortedSample(data), model, c.theta0, parse_phi(c.phi), parse_phi(c.phi2), c.m, c.level,
                          std::nullopt, c.gse);
    case TestKind::composite:
      return test_composite(SortedSample(data), model, *c.constraint, parse_phi(c.phi), c.m, c.level, c.theta0,
                            c.gse);
    case TestKind::mv_simple:
      return mv_test_simple(PointSet(data, model.obs_dim()), model, c.theta0, parse_phi(c.phi), c.level, std::nullopt, c.gse);
    case TestKind::mv_composite:
      return mv_test_composite(PointSet(data, model.obs_dim()), model, *c.constraint, parse_phi(c.phi), c.level,
                               c.theta0, c.gse);
    case TestKind::lrt:
      return lrt_baseline(model, c.theta0, data, c.level);
  }
  fail(ErrorKind::configuration, "unknown test kind");
}

/// Data for replicate `rep`: keyed by (seed, rep, "data"), so alternatives
/// in a power curve share common random numbers.
inline std::vector<double> replicate_data(const ParametricModel& model, ParamView theta, std::size_t n,
                                          std::uint64_t seed, std::size_t rep) {
  RandomStream rng(seed, rep, StreamTag("data"));
  return sample(model, theta, n, rng);
}

// ---------------------------------------------------------------------------
// Type-I rate and power

struct McSummary {
  double rate = 0.0;
  double se = 0.0;
  int rejections = 0;
  int completed = 0;
  int failures = 0;
  std::vector<std::string> failure_messages;  // first few, for diagnosis
};

struct ReplicateOutcomes {
  std::vector<TestReport> reports;  // valid where ok[i]
  std::vector<char> ok;
  McSummary summary;
};

namespace detail {

inline void finish_summary(McSummary& s, int reps) {
  s.completed = reps - s.failures;
  if (s.failures * 100 > reps)
    fail(ErrorKind::harness, std::to_string(s.failures) + " of " + std::to_string(reps) +
                                 " replicates failed (> 1%); first: " +
                                 (s.failure_messages.empty() ? std::string("?") : s.failure_messages.front()));
  if (s.completed > 0) {
    s.rate = static_cast<double>(s.rejections) / s.completed;
    s.se = std::sqrt(s.rate * (1.0 - s.rate) / s.completed);
  }
}

}  // namespace detail

/// Runs every replicate of `c` with data drawn at `theta`.
inline ReplicateOutcomes run_replicates(const McConfig& c, ParamView theta) {
  const auto model = make_model(c.model);
  detail::validate(c, *model);
  check_params(*model, theta);
  const std::size_t reps = static_cast<std::size_t>(c.reps);
  ReplicateOutcomes out;
  out.reports.resize(reps);
  out.ok.assign(reps, 0);
  const auto errors = run_indexed(reps, c.workers, [&](std::size_t r) {
    out.reports[r] = run_configured_test(c, *model, replicate_data(*model, theta, c.n, c.seed, r));
    out.ok[r] = 1;
  });
  for (std::size_t r = 0; r < reps; ++r) {
    if (out.ok[r]) {
      out.summary.rejections += out.reports[r].reject ? 1 : 0;
    } else {
      ++out.summary.failures;
      if (out.summary.failure_messages.size() < 5)
        out.summary.failure_messages.push_back("replicate " + std::to_string(r) + ": " + describe(errors[r]));
    }
  }
  detail::finish_summary(out.summary, c.reps);
  return out;
}

/// Rejection frequency with data drawn at the tested null.
inline McSummary type1_rate(const McConfig& c) {
  if (!c.theta_true.empty() && !detail::is_composite(c.kind) && c.theta_true != c.theta0)
    fail(ErrorKind::configuration, "type1_rate: theta_true must equal theta0");
  if (c.delta) fail(ErrorKind::configuration, "type1_rate: delta must be unset");
  Params theta = data_parameter(c);
  if (detail::is_composite(c.kind) && c.constraint) {
    const Eigen::Map<const Eigen::VectorXd> t(theta.data(), static_cast<Eigen::Index>(theta.size()));
    if ((c.constraint->A * t - c.constraint->c).cwiseAbs().maxCoeff() > 1e-9)
      fail(ErrorKind::configuration, "type1_rate: theta_true violates the constraint");
  }
  return run_replicates(c, theta).summary;
}

struct PowerPoint {
  Params theta;
  McSummary spacings;
  std::optional<McSummary> lrt;
};

/// Rejection frequency at each alternative; optionally the likelihood-ratio
/// test on the same replicate samples.
inline std::vector<PowerPoint> power_curve(const McConfig& c, const std::vector<Params>& alternatives,
                                           bool with_lrt = false) {
  std::vector<PowerPoint> out;
  for (const Params& alt : alternatives) {
    PowerPoint pt;
    pt.theta = alt;
    pt.spacings = run_replicates(c, alt).summary;
    if (with_lrt) {
      McConfig lc = c;
      lc.kind = TestKind::lrt;
      pt.lrt = run_replicates(lc, alt).summary;
    }
    out.push_back(std::move(pt));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Q-Q data and distribution checks

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
inline double ks_distance(std::vector<double> values, const std::function<double(double)>& cdf) {
  if (values.empty()) fail(ErrorKind::configuration, "ks_distance: empty sample");
  std::sort(values.begin(), values.end());
  const double N = static_cast<double>(values.size());
  double d = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double F = cdf(values[i]);
    d = std::max({d, F - static_cast<double>(i) / N, static_cast<double>(i + 1) / N - F});
  }
  return d;
}

struct QqData {
  std::vector<double> empirical;  // sorted calibrated statistics
  std::vector<double> reference;  // chi-square quantiles at (i - 0.5) / N
  int df = 0;
  double noncentrality = 0.0;
  double ks = 0.0;                // KS distance of the statistics from the reference law
  McSummary summary;
};

/// Reference noncentrality for a local alternative under the configured test.
inline double reference_noncentrality(const McConfig& c, const ParametricModel& model) {
  if (!c.delta) return 0.0;
  if (detail::is_multivariate(c.kind)) return mv_local_noncentrality(model, c.theta0, *c.delta, parse_phi(c.phi));
  const PhiFunction est = c.kind == TestKind::two_phi ? parse_phi(c.phi2) : parse_phi(c.phi);
  return local_noncentrality(model, c.theta0, *c.delta, spacing_constants(est, c.m).sigma2);
}

inline QqData qq_data(const McConfig& c) {
  const auto model = make_model(c.model);
  const ReplicateOutcomes run = run_replicates(c, data_parameter(c));
  QqData q;
  q.summary = run.summary;
  for (std::size_t r = 0; r < run.reports.size(); ++r)
    if (run.ok[r]) {
      q.empirical.push_back(run.reports[r].T_tilde);
      q.df = run.reports[r].df;
    }
  if (q.empirical.empty()) fail(ErrorKind::harness, "qq_data: no replicate completed");
  std::sort(q.empirical.begin(), q.empirical.end());
  q.noncentrality = reference_noncentrality(c, *model);
  const ChiSquareSpec law{q.df, q.noncentrality};
  const double N = static_cast<double>(q.empirical.size());
  q.reference.resize(q.empirical.size());
  for (std::size_t i = 0; i < q.reference.size(); ++i)
    q.reference[i] = chisq_quantile((static_cast<double>(i) + 0.5) / N, law);
  q.ks = ks_distance(q.empirical, [&](double x) { return x <= 0.0 ? 0.0 : chisq_cdf(x, law); });
  return q;
}

// ---------------------------------------------------------------------------
// Likelihood-ratio baseline

/// 2 (sup log L - log L(theta0)) against chi2_p. Closed forms for the
/// exponential, normal and bivariate-normal-mean families; otherwise the
/// likelihood is maximized numerically. Families whose likelihood is
/// unbounded are refused.
inline TestReport lrt_baseline(const ParametricModel& model, ParamView theta0, const std::vector<double>& data,
                               double level) {
  detail::check_level(level);
  check_params(model, theta0);
  if (!model.likelihood_bounded())
    fail(ErrorKind::capability, model.name() + ": likelihood is unbounded; the likelihood ratio test breaks down");
  const int d = model.obs_dim();
  if (data.empty() || data.size() % static_cast<std::size_t>(d) != 0)
    fail(ErrorKind::data, "lrt: data size does not match the model dimension");
  const std::size_t n = data.size() / static_cast<std::size_t>(d);
  const double nd = static_cast<double>(n);
  auto loglik = [&](ParamView t) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      s += model.log_pdf(t, std::span<const double>(data.data() + i * d, static_cast<std::size_t>(d)));
    return s;
  };
  TestReport r;
  r.kind = "lrt";
  r.n = n;
  r.df = model.param_dim();
  r.level = level;
  r.phi = "loglik";
  r.theta0 = Params(theta0.begin(), theta0.end());
  const std::string name = model.name();
  if (name == "exp") {
    double mean = 0.0;
    for (double v : data) mean += v;
    mean /= nd;
    const double u = theta0[0] * mean;
    r.estimate = {1.0 / mean};
    r.T_tilde = 2.0 * nd * (u - 1.0 - std::log(u));
  } else if (name == "normal") {
    double mean = 0.0;
    for (double v : data) mean += v;
    mean /= nd;
    double ss = 0.0;
    for (double v : data) ss += (v - mean) * (v - mean);
    const double sigma_hat = std::sqrt(ss / nd);
    r.estimate = {mean, sigma_hat};
    r.T_tilde = 2.0 * (loglik(r.estimate) - loglik(theta0));
  } else if (name == "bvn-mean") {
    if (theta0.size() != 2) fail(ErrorKind::configuration, "lrt: bvn-mean takes two parameters");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      mx += data[2 * i];
      my += data[2 * i + 1];
    }
    mx /= nd;
    my /= nd;
    r.estimate = {mx, my};
    r.T_tilde = nd * ((mx - theta0[0]) * (mx - theta0[0]) + (my - theta0[1]) * (my - theta0[1]));
  } else {
    const Objective neg = [&](ParamView t) { return -loglik(t); };
    const Bounds b = model.bounds();
    const OptimizeResult best = best_of_starts(
        perturbed_starts(theta0, b, 5), [&](const Params& s) { return minimize(neg, s, b); }, "lrt");
    r.estimate = best.minimizer;
    r.T_tilde = 2.0 * (-best.value - loglik(theta0));
    r.diagnostics.iterations = best.iterations;
    r.diagnostics.evaluations = best.evaluations;
  }
  r.T_tilde = std::max(r.T_tilde, 0.0);
  r.raw_T = 0.5 * r.T_tilde;
  detail::fill_chisq(r);
  return r;
}

// ---------------------------------------------------------------------------
// Bootstrap choice of m

struct MoptReport {
  int m_opt = 1;
  std::vector<int> candidates;
  std::vector<double> rates;
  std::vector<double> ses;
  std::vector<int> failures;
  int B = 0;
  Params theta_hat;  // m = 1 estimate the bootstrap samples are drawn from
  double level = 0.05;
};

struct MoptOptions {
  int B = 1000;
  double level = 0.05;
  std::vector<int> candidates;  // empty: 1..max(1, floor(n/10))
  std::uint64_t seed = 1;
  int workers = 1;
  GseOptions gse;
};

/// Step I: GSE with m = 1. Step II: B parametric bootstrap samples from the
/// fitted law, each tested at the fitted value for every candidate m.
/// Step III: the m whose rejection rate is closest to the level, ties to the
/// smallest m.
inline MoptReport select_m_opt(const SortedSample& data, const ParametricModel& model, const PhiFunction& phi,
                               const MoptOptions& o, std::optional<Params> init = std::nullopt) {
  if (o.B < 500) fail(ErrorKind::configuration, "select_m_opt: B must be >= 500");
  detail::check_level(o.level);
  const std::size_t n = data.size();
  MoptReport rep;
  rep.B = o.B;
  rep.level = o.level;
  rep.candidates = o.candidates;
  if (rep.candidates.empty())
    for (int m = 1; m <= std::max<int>(1, static_cast<int>(n / 10)); ++m) rep.candidates.push_back(m);
  std::sort(rep.candidates.begin(), rep.candidates.end());
  rep.candidates.erase(std::unique(rep.candidates.begin(), rep.candidates.end()), rep.candidates.end());
  for (int m : rep.candidates)
    if (m < 1 || static_cast<std::size_t>(m) > n) fail(ErrorKind::configuration, "select_m_opt: bad candidate m");

  const Params start = init ? *init : model.reference_params();
  rep.theta_hat = estimate_gse(data, model, phi, 1, start, o.gse).theta;

  const std::size_t K = rep.candidates.size();
  const std::size_t B = static_cast<std::size_t>(o.B);
  // outcome[b*K + k]: 1 reject, 0 accept, -1 failed.
  std::vector<signed char> outcome(B * K, -1);
  run_indexed(B, o.workers, [&](std::size_t b) {
    RandomStream rng(o.seed, b, StreamTag("bootstrap"));
    const SortedSample boot(sample(model, rep.theta_hat, n, rng));
    for (std::size_t k = 0; k < K; ++k) {
      try {
        outcome[b * K + k] =
            test_simple(boot, model, rep.theta_hat, phi, rep.candidates[k], o.level, std::nullopt, o.gse).reject ? 1 : 0;
      } catch (const Error&) {
        outcome[b * K + k] = -1;
      }
    }
  });
  double best_gap = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < K; ++k) {
    int rej = 0, fails = 0;
    for (std::size_t b = 0; b < B; ++b) {
      const signed char v = outcome[b * K + k];
      if (v < 0) ++fails;
      else rej += v;
    }
    const int done = static_cast<int>(B) - fails;
    const double rate = done > 0 ? static_cast<double>(rej) / done : std::numeric_limits<double>::quiet_NaN();
    rep.rates.push_back(rate);
    rep.ses.push_back(done > 0 ? std::sqrt(rate * (1.0 - rate) / done) : 0.0);
    rep.failures.push_back(fails);
    const double gap = std::abs(rate - o.level);
    if (gap < best_gap - 1e-12) {
      best_gap = gap;
      rep.m_opt = rep.candidates[k];
    }
  }
  if (!std::isfinite(best_gap)) fail(ErrorKind::harness, "select_m_opt: every bootstrap test failed");
  return rep;
}

}  // namespace spacings

#endif  // SPACINGS_HARNESS_HPP
