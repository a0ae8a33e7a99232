#ifndef SPACINGS_OPTIMIZE_HPP
#define SPACINGS_OPTIMIZE_HPP

// Bounded Nelder-Mead and affine-constrained minimization.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spacings/errors.hpp"
#include "spacings/models.hpp"

namespace spacings {

using Objective = std::function<double(ParamView)>;

struct OptimizeOptions {
  double xtol_rel = 1e-9;    // simplex diameter < xtol_rel * (1 + |x|)
  double ftol_abs = 1e-12;   // value spread across the simplex
  int max_evaluations = 100000;
  int max_restarts = 5;
  double step_fraction = 0.05;
  /// Overrides the per-coordinate initial simplex step.
  std::optional<std::vector<double>> initial_steps;
  bool record_trace = false;
};

struct TracePoint {
  Params theta;
  double value;
};

struct OptimizeResult {
  Params minimizer;
  double value = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  double stationarity = 0.0;  // finite-difference gradient norm at the minimizer
  int restarts = 0;
  std::vector<TracePoint> trace;
};

/// Thrown when the evaluation cap is hit; carries the best point so far.
class NonConvergenceError : public Error {
 public:
  NonConvergenceError(const std::string& what, OptimizeResult best)
      : Error(ErrorKind::non_convergence, what), best_(std::move(best)) {}
  const OptimizeResult& best() const noexcept { return best_; }

 private:
  OptimizeResult best_;
};

/// Default simplex step: a fraction of the bound range, or of the
/// coordinate's magnitude when the range is unbounded or very wide.
inline std::vector<double> default_steps(const Bounds& bounds, ParamView init, double fraction) {
  std::vector<double> steps(init.size());
  for (std::size_t j = 0; j < init.size(); ++j) {
    const double range = bounds.upper[j] - bounds.lower[j];
    steps[j] = (std::isfinite(range) && range <= 100.0) ? fraction * range
                                                         : fraction * std::max(1.0, std::abs(init[j]));
  }
  return steps;
}

namespace detail {

class CountingObjective {
 public:
  CountingObjective(const Objective& f, const Bounds& b, const OptimizeOptions& o, OptimizeResult& r)
      : f_(f), bounds_(b), opts_(o), res_(r) {}

  Params project(Params x) const {
    for (std::size_t j = 0; j < x.size(); ++j) x[j] = std::clamp(x[j], bounds_.lower[j], bounds_.upper[j]);
    return x;
  }

  double operator()(const Params& x) {
    if (res_.evaluations >= opts_.max_evaluations)
      throw NonConvergenceError("minimize: evaluation cap reached", res_);
    double v = f_(x);
    ++res_.evaluations;
    if (!std::isfinite(v)) v = std::numeric_limits<double>::infinity();
    if (opts_.record_trace) res_.trace.push_back({x, v});
    if (v < res_.value) {
      res_.value = v;
      res_.minimizer = x;
    }
    return v;
  }

 private:
  const Objective& f_;
  const Bounds& bounds_;
  const OptimizeOptions& opts_;
  OptimizeResult& res_;
};

// One Nelder-Mead descent from x0; returns true on convergence.
inline bool nelder_mead_pass(CountingObjective& fn, const Params& x0, const std::vector<double>& steps,
                             const OptimizeOptions& opts, int& iterations) {
  const std::size_t p = x0.size();
  std::vector<Params> simplex(p + 1, x0);
  std::vector<double> values(p + 1);
  values[0] = fn(x0);
  for (std::size_t j = 0; j < p; ++j) {
    Params x = x0;
    x[j] += steps[j];
    x = fn.project(x);
    if (x[j] == x0[j]) x[j] = x0[j] - steps[j];
    simplex[j + 1] = fn.project(x);
    values[j + 1] = fn(simplex[j + 1]);
  }
  std::vector<std::size_t> order(p + 1);
  auto centroid_without_worst = [&](std::size_t worst) {
    Params c(p, 0.0);
    for (std::size_t i = 0; i <= p; ++i)
      if (i != worst)
        for (std::size_t j = 0; j < p; ++j) c[j] += simplex[i][j];
    for (auto& v : c) v /= static_cast<double>(p);
    return c;
  };
  auto along = [&](const Params& c, const Params& w, double t) {
    Params x(p);
    for (std::size_t j = 0; j < p; ++j) x[j] = c[j] + t * (w[j] - c[j]);
    return fn.project(x);
  };
  for (;;) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[p - 1];
    double diameter = 0.0, norm = 0.0;
    for (std::size_t j = 0; j < p; ++j) norm += simplex[best][j] * simplex[best][j];
    for (std::size_t i = 0; i <= p; ++i) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < p; ++j) {
        const double d = simplex[i][j] - simplex[best][j];
        d2 += d * d;
      }
      diameter = std::max(diameter, std::sqrt(d2));
    }
    const double spread = values[worst] - values[best];
    const double xtol = opts.xtol_rel * (1.0 + std::sqrt(norm));
    if (diameter < xtol && spread < opts.ftol_abs) return true;
    // Objectives built on adaptive quadrature carry rounding-level noise, so a
    // fully collapsed simplex is accepted when its spread is at that level.
    if (diameter < 1e-3 * xtol) return spread <= 1e-9 * (1.0 + std::abs(values[best]));
    ++iterations;
    const Params c = centroid_without_worst(worst);
    const Params xr = along(c, simplex[worst], -1.0);
    const double fr = fn(xr);
    if (fr < values[best]) {
      const Params xe = along(c, simplex[worst], -2.0);
      const double fe = fn(xe);
      if (fe < fr) {
        simplex[worst] = xe;
        values[worst] = fe;
      } else {
        simplex[worst] = xr;
        values[worst] = fr;
      }
      continue;
    }
    if (fr < values[second]) {
      simplex[worst] = xr;
      values[worst] = fr;
      continue;
    }
    const bool outside = fr < values[worst];
    const Params xc = outside ? along(c, xr, 0.5) : along(c, simplex[worst], 0.5);
    const double fc = fn(xc);
    if (fc < (outside ? fr : values[worst])) {
      simplex[worst] = xc;
      values[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i <= p; ++i) {
      if (i == best) continue;
      simplex[i] = along(simplex[best], simplex[i], 0.5);
      values[i] = fn(simplex[i]);
    }
  }
}

inline double fd_gradient_norm(const Objective& f, const Bounds& bounds, const Params& x) {
  double g2 = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double h = 1e-6 * (1.0 + std::abs(x[j]));
    Params up = x, dn = x;
    up[j] = std::min(x[j] + h, bounds.upper[j]);
    dn[j] = std::max(x[j] - h, bounds.lower[j]);
    if (up[j] == dn[j]) continue;
    const double g = (f(up) - f(dn)) / (up[j] - dn[j]);
    if (std::isfinite(g)) g2 += g * g;
  }
  return std::sqrt(g2);
}

}  // namespace detail

/// Nelder-Mead with projection onto the bound box, followed by up to
/// max_restarts fresh simplices at the best point while they still improve.
inline OptimizeResult minimize(const Objective& objective, ParamView init, const Bounds& bounds,
                               const OptimizeOptions& opts = {}) {
  if (init.empty()) fail(ErrorKind::configuration, "minimize: empty parameter vector");
  if (!bounds.contains(init)) fail(ErrorKind::configuration, "minimize: init outside bounds");
  OptimizeResult res;
  res.value = std::numeric_limits<double>::infinity();
  res.minimizer.assign(init.begin(), init.end());
  detail::CountingObjective fn(objective, bounds, opts, res);
  const Params x0(init.begin(), init.end());
  const double f0 = fn(x0);
  if (!std::isfinite(f0)) fail(ErrorKind::domain, "minimize: objective not finite at init");
  const std::vector<double> steps =
      opts.initial_steps ? *opts.initial_steps : default_steps(bounds, init, opts.step_fraction);
  bool converged = detail::nelder_mead_pass(fn, x0, steps, opts, res.iterations);
  for (int r = 0; r < opts.max_restarts; ++r) {
    const double before = res.value;
    const Params start = res.minimizer;
    converged = detail::nelder_mead_pass(fn, start, steps, opts, res.iterations) && converged;
    ++res.restarts;
    if (!(res.value < before - opts.ftol_abs)) break;
  }
  res.converged = converged;
  res.stationarity = detail::fd_gradient_norm(objective, bounds, res.minimizer);
  return res;
}

/// Full-row-rank affine constraint A theta = c.
struct AffineConstraint {
  Eigen::MatrixXd A;
  Eigen::VectorXd c;

  int rows() const { return static_cast<int>(A.rows()); }
};

/// Throws a constraint error unless A is r x p with full row rank r <= p.
inline void check_constraint(const AffineConstraint& con, int p) {
  const Eigen::Index r = con.A.rows();
  if (con.A.cols() != p || con.c.size() != r || r == 0)
    fail(ErrorKind::constraint, "constraint: A must be r x p with matching c");
  if (r > p) fail(ErrorKind::constraint, "constraint: more rows than parameters");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(con.A);
  qr.setThreshold(1e-12);
  if (qr.rank() < r) fail(ErrorKind::constraint, "constraint: A is rank deficient");
}

/// Minimizes over {theta : A theta = c} by writing theta = theta_p + N beta
/// with N an orthonormal basis of null(A).
inline OptimizeResult minimize_constrained(const Objective& objective, const AffineConstraint& con,
                                           ParamView init, const Bounds& bounds,
                                           const OptimizeOptions& opts = {}) {
  const Eigen::Index p = static_cast<Eigen::Index>(init.size());
  const Eigen::Index r = con.A.rows();
  check_constraint(con, static_cast<int>(p));

  const Eigen::Map<const Eigen::VectorXd> x0(init.data(), p);
  if (r == p) {
    const Eigen::VectorXd sol = con.A.fullPivLu().solve(con.c);
    Params theta(sol.data(), sol.data() + p);
    if (!bounds.contains(theta)) fail(ErrorKind::constraint, "constraint: infeasible within bounds");
    OptimizeResult res;
    res.minimizer = theta;
    res.value = objective(theta);
    res.evaluations = 1;
    res.converged = true;
    return res;
  }
  const Eigen::MatrixXd At = con.A.transpose();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(At);
  const Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(p, p);
  const Eigen::MatrixXd N = Q.rightCols(p - r);
  const Eigen::VectorXd resid = con.A * x0 - con.c;
  const Eigen::VectorXd theta_p = x0 - At * (con.A * At).ldlt().solve(resid);
  {
    Params tp(theta_p.data(), theta_p.data() + p);
    if (!bounds.contains(tp))
      fail(ErrorKind::constraint, "constraint: no feasible point near init within bounds");
  }
  auto to_theta = [&](ParamView beta) {
    const Eigen::Map<const Eigen::VectorXd> b(beta.data(), static_cast<Eigen::Index>(beta.size()));
    const Eigen::VectorXd t = theta_p + N * b;
    return Params(t.data(), t.data() + p);
  };
  Objective reduced = [&](ParamView beta) {
    const Params t = to_theta(beta);
    if (!bounds.contains(t)) return std::numeric_limits<double>::infinity();
    return objective(t);
  };
  const std::vector<double> theta_steps = default_steps(bounds, init, opts.step_fraction);
  std::vector<double> beta_steps(p - r, 0.0);
  for (Eigen::Index k = 0; k < p - r; ++k)
    for (Eigen::Index j = 0; j < p; ++j) beta_steps[k] += std::abs(N(j, k)) * theta_steps[j];
  OptimizeOptions reduced_opts = opts;
  reduced_opts.initial_steps = beta_steps;
  reduced_opts.record_trace = false;
  Bounds free{std::vector<double>(p - r, -kInf), std::vector<double>(p - r, kInf)};
  const Params beta0(p - r, 0.0);
  OptimizeResult res = minimize(reduced, beta0, free, reduced_opts);
  res.minimizer = to_theta(res.minimizer);
  res.stationarity = 0.0;
  return res;
}

/// Deterministic multi-start points: init followed by sign patterns of the
/// default step (all +, all -, alternating), clamped into the bounds.
inline std::vector<Params> perturbed_starts(ParamView init, const Bounds& bounds, int count,
                                            double fraction = 0.05) {
  std::vector<Params> starts;
  starts.emplace_back(init.begin(), init.end());
  const std::vector<double> steps = default_steps(bounds, init, fraction);
  for (int k = 1; k < count; ++k) {
    const int pattern = (k - 1) % 4;
    const double scale = 1.0 + (k - 1) / 4;
    Params x(init.begin(), init.end());
    for (std::size_t j = 0; j < x.size(); ++j) {
      double sign = pattern == 0 ? 1.0 : pattern == 1 ? -1.0 : ((j % 2 == 0) == (pattern == 2) ? 1.0 : -1.0);
      x[j] = std::clamp(x[j] + sign * scale * steps[j], bounds.lower[j], bounds.upper[j]);
    }
    starts.push_back(std::move(x));
  }
  return starts;
}

/// Runs `run(start)` from every start and keeps the lowest converged value.
/// Throws an estimation failure when no start converges.
template <class Run>
OptimizeResult best_of_starts(const std::vector<Params>& starts, Run&& run, const std::string& what) {
  std::optional<OptimizeResult> best;
  std::string failures;
  for (std::size_t i = 0; i < starts.size(); ++i) {
    try {
      OptimizeResult r = run(starts[i]);
      if (!r.converged) {
        failures += " start " + std::to_string(i) + ": not converged (value " + std::to_string(r.value) + ");";
        continue;
      }
      if (!best || r.value < best->value) best = std::move(r);
    } catch (const NonConvergenceError& e) {
      failures += " start " + std::to_string(i) + ": " + e.what() + ";";
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::domain && e.kind() != ErrorKind::constraint) throw;
      failures += " start " + std::to_string(i) + ": " + e.what() + ";";
    }
  }
  if (!best) fail(ErrorKind::estimation_failure, what + ": no start converged;" + failures);
  return std::move(*best);
}

}  // namespace spacings

#endif  // SPACINGS_OPTIMIZE_HPP
