#ifndef SPACINGS_UNIVARIATE_HPP
#define SPACINGS_UNIVARIATE_HPP

// m-step spacings, the spacing statistic, generalized spacings estimation and
// the univariate tests built on them.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spacings/errors.hpp"
#include "spacings/models.hpp"
#include "spacings/optimize.hpp"
#include "spacings/phi.hpp"
#include "spacings/report.hpp"
#include "spacings/rng.hpp"
#include "spacings/special_functions.hpp"

namespace spacings {

/// Spacings (and xi values) at or below this are floored before phi.
inline constexpr double kSpacingFloor = 1e-12;

class SortedSample {
 public:
  explicit SortedSample(std::vector<double> values) : x_(std::move(values)) {
    if (x_.size() < 2) fail(ErrorKind::data, "sample: need at least 2 observations");
    for (double v : x_)
      if (!std::isfinite(v)) fail(ErrorKind::data, "sample: non-finite observation");
    std::sort(x_.begin(), x_.end());
  }

  std::size_t size() const noexcept { return x_.size(); }
  const std::vector<double>& values() const noexcept { return x_; }
  /// 1-based order statistic X_{i:n}.
  double order_stat(std::size_t i) const { return x_.at(i - 1); }

 private:
  std::vector<double> x_;
};

struct SpacingsVector {
  int m = 1;
  std::vector<double> values;  // D_1..D_M, unfloored
  int ties = 0;                // entries at or below kSpacingFloor

  std::size_t count() const noexcept { return values.size(); }
};

namespace detail {

inline void check_step(std::size_t n, int m) {
  if (m < 1) fail(ErrorKind::configuration, "m must be >= 1");
  if (static_cast<std::size_t>(m) > n)
    fail(ErrorKind::configuration, "m = " + std::to_string(m) + " exceeds n = " + std::to_string(n));
}

// Upper CDF values F(X_{jm:n}) for j = 1..M are produced by `cdf_at(j)`;
// indices past n are the upper boundary 1.
template <class CdfAt>
SpacingsVector spacings_from(std::size_t n, int m, CdfAt&& cdf_at) {
  const std::size_t M = (n + 1) / static_cast<std::size_t>(m);
  SpacingsVector s;
  s.m = m;
  s.values.resize(M);
  double prev = 0.0;
  for (std::size_t j = 1; j <= M; ++j) {
    const std::size_t idx = j * static_cast<std::size_t>(m);
    const double cur = idx <= n ? cdf_at(idx) : 1.0;
    s.values[j - 1] = cur - prev;
    if (s.values[j - 1] <= kSpacingFloor) ++s.ties;
    prev = cur;
  }
  return s;
}

}  // namespace detail

/// D_j = F(X_{jm:n}) - F(X_{(j-1)m:n}), j = 1..floor((n+1)/m), with the
/// boundary conventions F(X_{0:n}) = 0 and F(X_{k:n}) = 1 for k > n.
inline SpacingsVector compute_spacings(const SortedSample& sample, const ParametricModel& model,
                                       ParamView theta, int m) {
  detail::check_step(sample.size(), m);
  check_params(model, theta);
  if (!model.has_cdf()) fail(ErrorKind::capability, model.name() + ": no univariate CDF");
  return detail::spacings_from(sample.size(), m,
                               [&](std::size_t i) { return model.cdf(theta, sample.order_stat(i)); });
}

/// Spacings of values already on the probability scale (sorted, in [0,1]).
inline SpacingsVector spacings_of_uniforms(const std::vector<double>& sorted_u, int m) {
  detail::check_step(sorted_u.size(), m);
  return detail::spacings_from(sorted_u.size(), m, [&](std::size_t i) { return sorted_u[i - 1]; });
}

/// S = (1/M) sum_j phi(M D_j), with D_j floored at kSpacingFloor.
inline double spacing_statistic(const SpacingsVector& spacings, const PhiFunction& phi) {
  const double M = static_cast<double>(spacings.count());
  if (spacings.count() == 0) fail(ErrorKind::configuration, "spacing_statistic: no spacings");
  double sum = 0.0;
  for (double d : spacings.values) sum += phi(M * std::max(d, kSpacingFloor));
  if (!std::isfinite(sum)) fail(ErrorKind::invalid_phi, "phi '" + phi.label + "' not finite on the spacings");
  return sum / M;
}

/// theta -> S(theta) for a fixed sample. Only the M order statistics that
/// bound spacings are kept, so each evaluation costs M CDF calls.
class SpacingsObjective {
 public:
  SpacingsObjective(const SortedSample& sample, const ParametricModel& model, const PhiFunction& phi, int m)
      : model_(model), phi_(phi), n_(sample.size()), m_(m) {
    detail::check_step(n_, m);
    if (!model.has_cdf()) fail(ErrorKind::capability, model.name() + ": no univariate CDF");
    const std::size_t M = (n_ + 1) / static_cast<std::size_t>(m);
    for (std::size_t j = 1; j <= M; ++j) {
      const std::size_t idx = j * static_cast<std::size_t>(m);
      if (idx <= n_) knots_.push_back(sample.order_stat(idx));
    }
    M_ = M;
  }

  SpacingsVector spacings(ParamView theta) const {
    return detail::spacings_from(n_, m_, [&](std::size_t idx) {
      return model_.cdf(theta, knots_[idx / static_cast<std::size_t>(m_) - 1]);
    });
  }

  double operator()(ParamView theta) const {
    const double M = static_cast<double>(M_);
    double prev = 0.0, sum = 0.0;
    for (double x : knots_) {
      const double cur = model_.cdf(theta, x);
      sum += phi_(M * std::max(cur - prev, kSpacingFloor));
      prev = cur;
    }
    if (knots_.size() < M_) sum += phi_(M * std::max(1.0 - prev, kSpacingFloor));
    return sum / M;
  }

  std::size_t spacing_count() const noexcept { return M_; }

 private:
  const ParametricModel& model_;
  const PhiFunction& phi_;
  std::size_t n_;
  int m_;
  std::size_t M_ = 0;
  std::vector<double> knots_;
};

struct GseOptions {
  int starts = 5;  // init plus starts-1 perturbed points
  OptimizeOptions optimizer;
};

struct GseResult {
  Params theta;
  double value = 0.0;
  OptimizeResult optimizer;
};

inline void require_regular_model(const ParametricModel& model) {
  if (model.support_depends_on_parameter())
    fail(ErrorKind::capability, model.name() + ": support depends on the parameter; GSE regularity fails");
}

/// Generalized spacings estimator: argmin_theta S(theta), multi-start.
inline GseResult estimate_gse(const SortedSample& sample, const ParametricModel& model, const PhiFunction& phi,
                              int m, ParamView init, const GseOptions& opts = {}) {
  require_regular_model(model);
  check_params(model, init);
  const SpacingsObjective objective(sample, model, phi, m);
  const Bounds bounds = model.bounds();
  const Objective f = [&](ParamView t) { return objective(t); };
  OptimizeResult best = best_of_starts(
      perturbed_starts(init, bounds, opts.starts),
      [&](const Params& start) { return minimize(f, start, bounds, opts.optimizer); }, "estimate_gse");
  return {best.minimizer, best.value, std::move(best)};
}

namespace detail {

inline void check_level(double level) {
  if (!(level > 0.0 && level < 1.0)) fail(ErrorKind::configuration, "level must lie in (0,1)");
}

inline void require_calibrated(const PhiFunction& phi) {
  if (!phi.calibrated)
    fail(ErrorKind::unsupported_phi, "phi '" + phi.label + "' is descriptive only; no calibrated test");
}

inline void fill_chisq(TestReport& r) {
  r.critical_value = chisq_quantile(1.0 - r.level, {r.df, 0.0});
  r.p_value = r.T_tilde > 0.0 ? chisq_sf(r.T_tilde, {r.df, 0.0}) : 1.0;
  r.reject = r.T_tilde > r.critical_value;
}

inline void fill_optimizer(TestDiagnostics& d, const OptimizeResult& o) {
  d.iterations += o.iterations;
  d.evaluations += o.evaluations;
  d.restarts += o.restarts;
  d.converged = d.converged && o.converged;
  d.stationarity = o.stationarity;
}

inline double checked_gap(double gap, const char* what) {
  if (gap < -1e-8) fail(ErrorKind::internal_consistency, std::string(what) + ": negative statistic gap");
  return std::max(gap, 0.0);
}

}  // namespace detail

/// Simple hypothesis theta = theta0. T~ = 2n (S(theta0) - S(theta_hat)) / (e2 sigma2), chi2_p.
inline TestReport test_simple(const SortedSample& sample, const ParametricModel& model, ParamView theta0,
                              const PhiFunction& phi, int m, double level, std::optional<Params> init = std::nullopt,
                              const GseOptions& opts = {}) {
  detail::check_level(level);
  detail::require_calibrated(phi);
  check_params(model, theta0);
  const SpacingConstants c = spacing_constants(phi, m);
  const GseResult fit = estimate_gse(sample, model, phi, m, init ? ParamView(*init) : theta0, opts);
  const SpacingsObjective objective(sample, model, phi, m);
  TestReport r;
  r.kind = "simple";
  r.n = sample.size();
  r.raw_T = detail::checked_gap(objective(theta0) - fit.value, "test_simple");
  r.T_tilde = 2.0 * static_cast<double>(r.n) * r.raw_T / (c.e2 * c.sigma2);
  r.df = model.param_dim();
  r.level = level;
  r.m = m;
  r.phi = phi.label;
  r.sigma2 = c.sigma2;
  r.e2 = c.e2;
  r.estimate = fit.theta;
  r.theta0 = Params(theta0.begin(), theta0.end());
  detail::fill_optimizer(r.diagnostics, fit.optimizer);
  r.diagnostics.ties = objective.spacings(fit.theta).ties;
  detail::fill_chisq(r);
  return r;
}

/// Estimate with phi2, measure the gap with phi1:
/// T~ = 2n (S_phi1(theta0) - S_phi1(theta_hat_phi2)) / (e2(phi1) sigma2(phi2)).
/// The gap is not an infimum gap here and can be negative; p = 1 then.
inline TestReport test_two_phi(const SortedSample& sample, const ParametricModel& model, ParamView theta0,
                               const PhiFunction& phi1, const PhiFunction& phi2, int m, double level,
                               std::optional<Params> init = std::nullopt, const GseOptions& opts = {}) {
  detail::check_level(level);
  detail::require_calibrated(phi1);
  detail::require_calibrated(phi2);
  check_params(model, theta0);
  const SpacingConstants c1 = spacing_constants(phi1, m);
  const SpacingConstants c2 = spacing_constants(phi2, m);
  const GseResult fit = estimate_gse(sample, model, phi2, m, init ? ParamView(*init) : theta0, opts);
  const SpacingsObjective s1(sample, model, phi1, m);
  TestReport r;
  r.kind = "two-phi";
  r.n = sample.size();
  r.raw_T = s1(theta0) - s1(fit.theta);
  r.T_tilde = 2.0 * static_cast<double>(r.n) * r.raw_T / (c1.e2 * c2.sigma2);
  r.df = model.param_dim();
  r.level = level;
  r.m = m;
  r.phi = phi1.label;
  r.phi_estimate = phi2.label;
  r.sigma2 = c2.sigma2;
  r.e2 = c1.e2;
  r.estimate = fit.theta;
  r.theta0 = Params(theta0.begin(), theta0.end());
  detail::fill_optimizer(r.diagnostics, fit.optimizer);
  r.diagnostics.ties = s1.spacings(fit.theta).ties;
  detail::fill_chisq(r);
  return r;
}

/// Restricted GSE under A theta = c, multi-start.
inline GseResult estimate_gse_constrained(const SortedSample& sample, const ParametricModel& model,
                                          const PhiFunction& phi, int m, const AffineConstraint& con,
                                          ParamView init, const GseOptions& opts = {}) {
  require_regular_model(model);
  check_params(model, init);
  check_constraint(con, model.param_dim());
  const SpacingsObjective objective(sample, model, phi, m);
  const Bounds bounds = model.bounds();
  const Objective f = [&](ParamView t) { return objective(t); };
  OptimizeResult best = best_of_starts(
      perturbed_starts(init, bounds, opts.starts),
      [&](const Params& start) { return minimize_constrained(f, con, start, bounds, opts.optimizer); },
      "estimate_gse (restricted)");
  return {best.minimizer, best.value, std::move(best)};
}

/// Composite hypothesis A theta = c (r rows). The unrestricted fit starts from
/// the restricted optimum so the gap is an infimum difference; chi2_r.
inline TestReport test_composite(const SortedSample& sample, const ParametricModel& model,
                                 const AffineConstraint& con, const PhiFunction& phi, int m, double level,
                                 std::optional<Params> init = std::nullopt, const GseOptions& opts = {}) {
  detail::check_level(level);
  detail::require_calibrated(phi);
  const int p = model.param_dim();
  check_constraint(con, p);
  if (con.rows() == p) {
    const Eigen::VectorXd sol = con.A.fullPivLu().solve(con.c);
    const Params theta0(sol.data(), sol.data() + p);
    if (!model.bounds().contains(theta0)) fail(ErrorKind::constraint, "constraint: infeasible within bounds");
    TestReport r = test_simple(sample, model, theta0, phi, m, level, std::nullopt, opts);
    r.kind = "composite";
    r.restricted_estimate = theta0;
    return r;
  }
  const Params start = init ? *init : model.reference_params();
  const SpacingConstants c = spacing_constants(phi, m);
  const GseResult restricted = estimate_gse_constrained(sample, model, phi, m, con, start, opts);
  const GseResult full = estimate_gse(sample, model, phi, m, restricted.theta, opts);
  TestReport r;
  r.kind = "composite";
  r.n = sample.size();
  r.raw_T = detail::checked_gap(restricted.value - full.value, "test_composite");
  r.T_tilde = 2.0 * static_cast<double>(r.n) * r.raw_T / (c.e2 * c.sigma2);
  r.df = con.rows();
  r.level = level;
  r.m = m;
  r.phi = phi.label;
  r.sigma2 = c.sigma2;
  r.e2 = c.e2;
  r.estimate = full.theta;
  r.restricted_estimate = restricted.theta;
  detail::fill_optimizer(r.diagnostics, restricted.optimizer);
  detail::fill_optimizer(r.diagnostics, full.optimizer);
  r.diagnostics.ties = SpacingsObjective(sample, model, phi, m).spacings(full.theta).ties;
  detail::fill_chisq(r);
  return r;
}

// ---------------------------------------------------------------------------
// Uniformity test for a fully specified F0

/// Simulated null distribution of S - phi(1) for n uniforms.
struct UniformityNull {
  std::size_t n = 0;
  int m = 1;
  std::string phi;
  std::vector<double> sorted_stats;
};

inline double uniformity_statistic(std::vector<double> u, const PhiFunction& phi, int m) {
  std::sort(u.begin(), u.end());
  return spacing_statistic(spacings_of_uniforms(u, m), phi) - phi(1.0);
}

inline UniformityNull simulate_uniformity_null(std::size_t n, const PhiFunction& phi, int m, int reps,
                                               std::uint64_t seed) {
  if (reps < 1) fail(ErrorKind::configuration, "uniformity: reps must be >= 1");
  detail::check_step(n, m);
  UniformityNull null{n, m, phi.label, {}};
  null.sorted_stats.resize(static_cast<std::size_t>(reps));
  std::vector<double> u(n);
  for (int r = 0; r < reps; ++r) {
    RandomStream rng(seed, static_cast<std::uint64_t>(r), StreamTag("uniformity-null"));
    for (auto& v : u) v = rng.uniform();
    null.sorted_stats[static_cast<std::size_t>(r)] = uniformity_statistic(u, phi, m);
  }
  std::sort(null.sorted_stats.begin(), null.sorted_stats.end());
  return null;
}

/// T = S(F0(X)) - phi(1), calibrated against a simulated uniform null:
/// p = (1 + #{T_sim >= T}) / (1 + reps).
inline TestReport test_uniformity(const SortedSample& sample, const std::function<double(double)>& F0,
                                  const PhiFunction& phi, int m, const UniformityNull& null, double level) {
  detail::check_level(level);
  if (null.n != sample.size() || null.m != m || null.phi != phi.label)
    fail(ErrorKind::configuration, "uniformity: null distribution built for a different configuration");
  std::vector<double> u(sample.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    u[i] = F0(sample.values()[i]);
    if (!(u[i] >= 0.0 && u[i] <= 1.0)) fail(ErrorKind::domain, "uniformity: F0 outside [0,1]");
    if (i > 0 && u[i] < u[i - 1]) fail(ErrorKind::domain, "uniformity: F0 not monotone on the data");
  }
  const SpacingsVector sp = spacings_of_uniforms(u, m);
  TestReport r;
  r.kind = "uniformity";
  r.n = sample.size();
  r.raw_T = spacing_statistic(sp, phi) - phi(1.0);
  r.T_tilde = r.raw_T;
  r.df = 0;
  r.level = level;
  r.m = m;
  r.phi = phi.label;
  r.sigma2 = 1.0;
  r.e2 = 1.0;
  const auto& pool = null.sorted_stats;
  const auto above = pool.end() - std::lower_bound(pool.begin(), pool.end(), r.raw_T);
  const double reps = static_cast<double>(pool.size());
  r.p_value = (1.0 + static_cast<double>(above)) / (1.0 + reps);
  const auto k = static_cast<std::size_t>(std::ceil((1.0 - level) * (reps + 1.0)));
  r.critical_value = pool[std::min(pool.size(), std::max<std::size_t>(k, 1)) - 1];
  r.reject = r.p_value <= level;
  r.diagnostics.ties = sp.ties;
  r.diagnostics.mc_reps = static_cast<int>(pool.size());
  return r;
}

inline TestReport test_uniformity(const SortedSample& sample, const std::function<double(double)>& F0,
                                  const PhiFunction& phi, int m, int mc_reps, double level, std::uint64_t seed) {
  return test_uniformity(sample, F0, phi, m, simulate_uniformity_null(sample.size(), phi, m, mc_reps, seed),
                         level);
}

// ---------------------------------------------------------------------------
// Asymptotic local power

struct LocalPower {
  double power = 0.0;
  double noncentrality = 0.0;
  double critical_value = 0.0;
  int df = 0;
};

/// Noncentrality Delta' I(theta0) Delta / sigma2.
inline double local_noncentrality(const ParametricModel& model, ParamView theta0, ParamView delta,
                                  double sigma2, const FisherOptions& fopts = {}) {
  if (static_cast<int>(delta.size()) != model.param_dim())
    fail(ErrorKind::configuration, "local power: Delta has the wrong length");
  const FisherMatrix info = fisher_information(model, theta0, fopts);
  const Eigen::Map<const Eigen::VectorXd> d(delta.data(), static_cast<Eigen::Index>(delta.size()));
  return d.dot(info.matrix * d) / sigma2;
}

/// Limiting power at theta0 + Delta / sqrt(n): P(chi2_p(delta) > c_alpha).
inline LocalPower local_power(const ParametricModel& model, ParamView theta0, ParamView delta,
                              const PhiFunction& phi, int m, double level, const FisherOptions& fopts = {}) {
  detail::check_level(level);
  detail::require_calibrated(phi);
  const SpacingConstants c = spacing_constants(phi, m);
  LocalPower lp;
  lp.df = model.param_dim();
  lp.noncentrality = local_noncentrality(model, theta0, delta, c.sigma2, fopts);
  lp.critical_value = chisq_quantile(1.0 - level, {lp.df, 0.0});
  lp.power = lp.noncentrality == 0.0 ? level : chisq_sf(lp.critical_value, {lp.df, lp.noncentrality});
  return lp;
}

}  // namespace spacings

#endif  // SPACINGS_UNIVARIATE_HPP
