#ifndef SPACINGS_MULTIVARIATE_HPP
#define SPACINGS_MULTIVARIATE_HPP

// Nearest-neighbour-ball spacings: geometry, xi values, the statistic and its
// estimator, the covariance kernel k(s,t) behind sigma_q^2, and the tests.

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/special_functions/beta.hpp>
#include <Eigen/Dense>

#include "spacings/errors.hpp"
#include "spacings/models.hpp"
#include "spacings/optimize.hpp"
#include "spacings/phi.hpp"
#include "spacings/quadrature.hpp"
#include "spacings/report.hpp"
#include "spacings/univariate.hpp"

namespace spacings {

/// n points in R^d, stored row-major.
class PointSet {
 public:
  PointSet(std::vector<double> coords, int dim) : x_(std::move(coords)), d_(dim) {
    if (dim < 1) fail(ErrorKind::data, "points: dimension must be >= 1");
    if (x_.size() % static_cast<std::size_t>(dim) != 0)
      fail(ErrorKind::data, "points: coordinate count is not a multiple of the dimension");
    for (double v : x_)
      if (!std::isfinite(v)) fail(ErrorKind::data, "points: non-finite coordinate");
    if (size() < 2) fail(ErrorKind::data, "points: need at least 2 points");
  }

  std::size_t size() const noexcept { return x_.size() / static_cast<std::size_t>(d_); }
  int dim() const noexcept { return d_; }
  std::span<const double> point(std::size_t i) const {
    return {x_.data() + i * static_cast<std::size_t>(d_), static_cast<std::size_t>(d_)};
  }
  const std::vector<double>& coords() const noexcept { return x_; }

 private:
  std::vector<double> x_;
  int d_;
};

struct NnGeometry {
  std::vector<double> radius;         // R_n(i)
  std::vector<std::size_t> neighbor;  // argmin, smallest index on ties
};

enum class NnMethod { brute_force, sweep };

namespace detail {

inline double euclidean(const PointSet& pts, std::size_t i, std::size_t j) {
  const auto a = pts.point(i), b = pts.point(j);
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return std::sqrt(s);
}

inline void offer(double dist, std::size_t j, double& best, std::size_t& best_j) {
  if (dist < best || (dist == best && j < best_j)) {
    best = dist;
    best_j = j;
  }
}

inline void check_distinct(const NnGeometry& g) {
  for (std::size_t i = 0; i < g.radius.size(); ++i)
    if (g.radius[i] == 0.0)
      fail(ErrorKind::degenerate_geometry, "points " + std::to_string(i) + " and " +
                                               std::to_string(g.neighbor[i]) + " coincide");
}

}  // namespace detail

/// Exact nearest neighbours under the Euclidean metric. The sweep method
/// sorts on the first coordinate and scans outward until the coordinate gap
/// exceeds the current best; it returns exactly the brute-force answer.
inline NnGeometry nn_distances(const PointSet& pts, NnMethod method = NnMethod::sweep) {
  const std::size_t n = pts.size();
  NnGeometry g;
  g.radius.assign(n, std::numeric_limits<double>::infinity());
  g.neighbor.assign(n, n);
  if (method == NnMethod::brute_force) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) detail::offer(detail::euclidean(pts, i, j), j, g.radius[i], g.neighbor[i]);
  } else {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return pts.point(a)[0] < pts.point(b)[0]; });
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t i = order[k];
      const double xi = pts.point(i)[0];
      double& best = g.radius[i];
      std::size_t& best_j = g.neighbor[i];
      // The slack keeps candidates whose rounded distance ties the best.
      auto beyond = [&](std::size_t j) { return std::abs(pts.point(j)[0] - xi) > best * (1.0 + 1e-12); };
      for (std::size_t r = k + 1; r < n && !beyond(order[r]); ++r)
        detail::offer(detail::euclidean(pts, i, order[r]), order[r], best, best_j);
      for (std::size_t l = k; l-- > 0 && !beyond(order[l]);)
        detail::offer(detail::euclidean(pts, i, order[l]), order[l], best, best_j);
    }
  }
  detail::check_distinct(g);
  return g;
}

struct XiVector {
  std::vector<double> values;
  int floored = 0;  // entries at or below kSpacingFloor
};

/// xi_i = n P_theta(B(X_i, R_n(i))).
inline XiVector xi_values(const PointSet& pts, const NnGeometry& geom, const ParametricModel& model,
                          ParamView theta) {
  if (pts.dim() != model.obs_dim())
    fail(ErrorKind::data, "points have dimension " + std::to_string(pts.dim()) + ", model expects " +
                              std::to_string(model.obs_dim()));
  if (model.obs_dim() < 2) fail(ErrorKind::capability, model.name() + ": ball probabilities need d >= 2");
  check_params(model, theta);
  const double n = static_cast<double>(pts.size());
  XiVector xi;
  xi.values.resize(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double r = geom.radius[i];
    if (!std::isfinite(r) || r < 0.0) fail(ErrorKind::domain, "xi_values: invalid radius");
    xi.values[i] = r == 0.0 ? 0.0 : n * model.ball_probability_impl(theta, pts.point(i), r);
    if (xi.values[i] <= kSpacingFloor) ++xi.floored;
  }
  return xi;
}

/// S = (1/n) sum phi(xi_i), xi floored at kSpacingFloor.
inline double mv_spacing_statistic(const XiVector& xi, const PhiFunction& phi) {
  if (xi.values.empty()) fail(ErrorKind::configuration, "mv_spacing_statistic: empty xi vector");
  double sum = 0.0;
  for (double v : xi.values) sum += phi(std::max(v, kSpacingFloor));
  if (!std::isfinite(sum)) fail(ErrorKind::invalid_phi, "phi '" + phi.label + "' not finite on xi");
  return sum / static_cast<double>(xi.values.size());
}

/// theta -> S(theta); the geometry is fixed, only ball probabilities change.
class MvObjective {
 public:
  MvObjective(const PointSet& pts, const ParametricModel& model, const PhiFunction& phi)
      : pts_(pts), model_(model), phi_(phi), geom_(nn_distances(pts)) {
    if (pts.dim() != model.obs_dim())
      fail(ErrorKind::data, "points have dimension " + std::to_string(pts.dim()) + ", model expects " +
                                std::to_string(model.obs_dim()));
  }

  double operator()(ParamView theta) const {
    return mv_spacing_statistic(xi_values(pts_, geom_, model_, theta), phi_);
  }
  XiVector xi(ParamView theta) const { return xi_values(pts_, geom_, model_, theta); }
  const NnGeometry& geometry() const noexcept { return geom_; }

 private:
  const PointSet& pts_;
  const ParametricModel& model_;
  const PhiFunction& phi_;
  NnGeometry geom_;
};

inline GseResult mv_estimate_gse(const PointSet& pts, const ParametricModel& model, const PhiFunction& phi,
                                 ParamView init, const GseOptions& opts = {}) {
  require_regular_model(model);
  check_params(model, init);
  const MvObjective objective(pts, model, phi);
  const Bounds bounds = model.bounds();
  const Objective f = [&](ParamView t) { return objective(t); };
  OptimizeResult best = best_of_starts(
      perturbed_starts(init, bounds, opts.starts),
      [&](const Params& start) { return minimize(f, start, bounds, opts.optimizer); }, "mv_estimate_gse");
  return {best.minimizer, best.value, std::move(best)};
}

inline GseResult mv_estimate_gse_constrained(const PointSet& pts, const ParametricModel& model,
                                             const PhiFunction& phi, const AffineConstraint& con,
                                             ParamView init, const GseOptions& opts = {}) {
  require_regular_model(model);
  check_params(model, init);
  check_constraint(con, model.param_dim());
  const MvObjective objective(pts, model, phi);
  const Bounds bounds = model.bounds();
  const Objective f = [&](ParamView t) { return objective(t); };
  OptimizeResult best = best_of_starts(
      perturbed_starts(init, bounds, opts.starts),
      [&](const Params& start) { return minimize_constrained(f, con, start, bounds, opts.optimizer); },
      "mv_estimate_gse (restricted)");
  return {best.minimizer, best.value, std::move(best)};
}

// ---------------------------------------------------------------------------
// Ball geometry and the kernel k(s,t)

/// Volume of the unit ball in R^d.
inline double unit_ball_volume(int d) {
  return std::pow(std::numbers::pi, 0.5 * d) / std::tgamma(0.5 * d + 1.0);
}

/// Radius of the d-ball with the given volume.
inline double ball_radius(double volume, int d) { return std::pow(volume / unit_ball_volume(d), 1.0 / d); }

namespace detail {

// Volume of the cap of a radius-r ball cut off at signed distance a from its
// centre (the part beyond the hyperplane).
inline double cap_volume(double r, double a, int d) {
  const double full = unit_ball_volume(d) * std::pow(r, d);
  if (a >= r) return 0.0;
  if (a <= -r) return full;
  const double x = std::max(0.0, 1.0 - (a * a) / (r * r));
  const double half_cap = 0.5 * full * boost::math::ibeta(0.5 * (d + 1), 0.5, x);
  return a >= 0.0 ? half_cap : full - half_cap;
}

inline double circle_segment(double r, double a) {
  // Area of the disk of radius r beyond the chord at distance a (|a| <= r).
  const double c = std::clamp(a / r, -1.0, 1.0);
  return r * r * std::acos(c) - a * std::sqrt(std::max(0.0, r * r - a * a));
}

}  // namespace detail

/// Volume of B(0, r1) intersected with B(x, r2), with r1, r2 the radii of
/// balls of volume t and s and `dist` = |x|. Exact lens area in the plane,
/// hyperspherical caps (regularized incomplete beta) otherwise.
inline double ball_intersection_volume(double s, double t, double dist, int d) {
  if (d < 1) fail(ErrorKind::configuration, "ball_intersection_volume: d must be >= 1");
  if (!(s >= 0.0) || !(t >= 0.0) || !(dist >= 0.0))
    fail(ErrorKind::domain, "ball_intersection_volume: arguments must be non-negative");
  if (s == 0.0 || t == 0.0) return 0.0;
  const double r1 = ball_radius(t, d), r2 = ball_radius(s, d);
  if (dist >= r1 + r2) return 0.0;
  if (dist <= std::abs(r1 - r2)) return std::min(s, t);
  const double a1 = (dist * dist + r1 * r1 - r2 * r2) / (2.0 * dist);
  const double a2 = dist - a1;
  if (d == 2) return detail::circle_segment(r1, a1) + detail::circle_segment(r2, a2);
  if (d == 1) return std::max(0.0, std::min(r1, dist + r2) - std::max(-r1, dist - r2));
  return detail::cap_volume(r1, a1, d) + detail::cap_volume(r2, a2, d);
}

namespace detail {

// Surface area of the unit sphere in R^d.
inline double unit_sphere_area(int d) {
  return 2.0 * std::pow(std::numbers::pi, 0.5 * d) / std::tgamma(0.5 * d);
}

// Integral over the shell r1 <= |x| <= r1 + r2 of (e^{beta} - 1), as
// S_{d-1} int rho^{d-1} (e^{beta(rho)} - 1) d rho with rho = r1 + r2 (1 - w^2),
// which absorbs the (r1 + r2 - rho)^{3/2} contact behaviour of beta.
inline double shell_integral(double s, double t, int d, int nodes) {
  if (s == 0.0) return 0.0;
  const double r1 = ball_radius(t, d), r2 = ball_radius(s, d);
  const double value = quadrature::integrate_legendre(
      [&](double w) {
        const double rho = r1 + r2 * (1.0 - w * w);
        const double beta = ball_intersection_volume(s, t, rho, d);
        return std::pow(rho, d - 1) * std::expm1(beta) * 2.0 * r2 * w;
      },
      0.0, 1.0, nodes);
  return unit_sphere_area(d) * value;
}

inline double kernel_k_impl(double s, double t, int d, int nodes) {
  if (s > t) std::swap(s, t);
  return std::exp(-t) - t * std::exp(-s - t) + std::exp(-s - t) * shell_integral(s, t, d, nodes);
}

}  // namespace detail

inline constexpr int kShellNodes = 32;

/// k(s,t) = e^{-t} - t e^{-s-t} + e^{-s-t} int_W (e^{beta} - 1) dx for s <= t,
/// extended symmetrically.
inline double kernel_k(double s, double t, int d = 2, int nodes = kShellNodes) {
  if (!(s >= 0.0) || !(t >= 0.0) || !std::isfinite(s) || !std::isfinite(t))
    fail(ErrorKind::domain, "kernel_k: s and t must be finite and non-negative");
  if (d < 1) fail(ErrorKind::configuration, "kernel_k: d must be >= 1");
  return detail::kernel_k_impl(s, t, d, nodes);
}

struct SigmaQ {
  double value = 0.0;
  double coarse = 0.0;       // same integral at half resolution
  double t_max = 0.0;
  int levels = 0;            // geometric panels toward 0 in each direction
  int nodes_per_panel = 0;
  int shell_nodes = 0;
  double relative_change = 0.0;
};

struct SigmaQOptions {
  double t_max = 40.0;
  int levels = 24;
  int nodes_per_panel = 8;
  int shell_nodes = 16;
  double tolerance = 1e-6;  // relative change allowed under node doubling
};

namespace detail {

// q0^2 + int int k dq dq + 2 q0 int k(0,t) dq(t). The double integral is
// twice the triangle s <= t, written with s = t u.
inline double sigma_q_once(const PhiFunction& phi, int d, const SigmaQOptions& o, int npp, int shell) {
  const double q0 = *phi.q0;
  const double cross = quadrature::integrate_graded(
      [&](double t) {
        const double dq = phi.dq(t);
        return dq == 0.0 ? 0.0 : kernel_k_impl(0.0, t, d, shell) * dq;
      },
      o.t_max, o.levels, npp);
  const double dbl = quadrature::integrate_graded(
      [&](double t) {
        const double dqt = phi.dq(t);
        if (dqt == 0.0) return 0.0;
        const double inner = quadrature::integrate_graded(
            [&](double u) {
              const double dqs = phi.dq(t * u);
              return dqs == 0.0 ? 0.0 : kernel_k_impl(t * u, t, d, shell) * dqs;
            },
            1.0, o.levels, npp);
        return 2.0 * t * dqt * inner;
      },
      o.t_max, o.levels, npp);
  return q0 * q0 + dbl + 2.0 * q0 * cross;
}

}  // namespace detail

/// sigma_q^2 for q(x) = x phi'(x), evaluated at the given and at doubled
/// resolution; throws AccuracyError when they differ by more than the
/// tolerance. Cached per (phi label, d) for default options.
inline SigmaQ sigma_q_squared(const PhiFunction& phi, int d = 2, const SigmaQOptions& opts = {}) {
  if (!phi.q0) fail(ErrorKind::unsupported_phi, "phi '" + phi.label + "': x phi'(x) diverges at 0");
  if (d < 1) fail(ErrorKind::configuration, "sigma_q_squared: d must be >= 1");
  static std::mutex mu;
  static std::map<std::pair<std::string, int>, SigmaQ> cache;
  const bool cacheable = opts.t_max == SigmaQOptions{}.t_max && opts.levels == SigmaQOptions{}.levels &&
                         opts.nodes_per_panel == SigmaQOptions{}.nodes_per_panel &&
                         opts.shell_nodes == SigmaQOptions{}.shell_nodes;
  const auto key = std::make_pair(phi.label, d);
  if (cacheable) {
    std::lock_guard<std::mutex> lock(mu);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  SigmaQ r;
  r.t_max = opts.t_max;
  r.levels = opts.levels;
  r.nodes_per_panel = 2 * opts.nodes_per_panel;
  r.shell_nodes = 2 * opts.shell_nodes;
  r.coarse = detail::sigma_q_once(phi, d, opts, opts.nodes_per_panel, opts.shell_nodes);
  r.value = detail::sigma_q_once(phi, d, opts, 2 * opts.nodes_per_panel, 2 * opts.shell_nodes);
  r.relative_change = std::abs(r.value - r.coarse) / std::max(std::abs(r.value), 1e-300);
  if (!std::isfinite(r.value) || !(r.value > 0.0))
    throw AccuracyError("sigma_q_squared: non-positive or non-finite value", r.coarse, r.value);
  if (r.relative_change > opts.tolerance)
    throw AccuracyError("sigma_q_squared: refinement did not settle", r.coarse, r.value);
  if (cacheable) {
    std::lock_guard<std::mutex> lock(mu);
    cache.emplace(key, r);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Tests

namespace detail {

inline TestReport mv_report(const char* kind, std::size_t n, double gap, int df, double level,
                            const PhiFunction& phi, const MvPhiConstants& c, const SigmaQ& sq, int dim) {
  TestReport r;
  r.kind = kind;
  r.n = n;
  r.raw_T = gap;
  r.T_tilde = 2.0 * static_cast<double>(n) * c.b_phi / sq.value * gap;
  r.df = df;
  r.level = level;
  r.m = 1;
  r.phi = phi.label;
  r.sigma2 = sq.value;
  r.e2 = c.b_phi;
  r.b_phi = c.b_phi;
  r.sigma_q2 = sq.value;
  r.dimension = dim;
  return r;
}

}  // namespace detail

/// T~ = (2n b_phi / sigma_q^2) (S(theta0) - S(theta_hat)), chi2_p.
inline TestReport mv_test_simple(const PointSet& pts, const ParametricModel& model, ParamView theta0,
                                 const PhiFunction& phi, double level, std::optional<Params> init = std::nullopt,
                                 const GseOptions& opts = {}) {
  detail::check_level(level);
  detail::require_calibrated(phi);
  check_params(model, theta0);
  const MvPhiConstants c = mv_constants(phi);
  const SigmaQ sq = sigma_q_squared(phi, pts.dim());
  const GseResult fit = mv_estimate_gse(pts, model, phi, init ? ParamView(*init) : theta0, opts);
  const MvObjective objective(pts, model, phi);
  const double gap = detail::checked_gap(objective(theta0) - fit.value, "mv_test_simple");
  TestReport r = detail::mv_report("mv-simple", pts.size(), gap, model.param_dim(), level, phi, c, sq, pts.dim());
  r.estimate = fit.theta;
  r.theta0 = Params(theta0.begin(), theta0.end());
  detail::fill_optimizer(r.diagnostics, fit.optimizer);
  r.diagnostics.ties = objective.xi(fit.theta).floored;
  detail::fill_chisq(r);
  return r;
}

/// Restricted versus unrestricted multivariate GSE under A theta = c, chi2_r.
inline TestReport mv_test_composite(const PointSet& pts, const ParametricModel& model,
                                    const AffineConstraint& con, const PhiFunction& phi, double level,
                                    std::optional<Params> init = std::nullopt, const GseOptions& opts = {}) {
  detail::check_level(level);
  detail::require_calibrated(phi);
  const int p = model.param_dim();
  check_constraint(con, p);
  if (con.rows() == p) {
    const Eigen::VectorXd sol = con.A.fullPivLu().solve(con.c);
    const Params theta0(sol.data(), sol.data() + p);
    if (!model.bounds().contains(theta0)) fail(ErrorKind::constraint, "constraint: infeasible within bounds");
    TestReport r = mv_test_simple(pts, model, theta0, phi, level, std::nullopt, opts);
    r.kind = "mv-composite";
    r.restricted_estimate = theta0;
    return r;
  }
  const Params start = init ? *init : model.reference_params();
  const MvPhiConstants c = mv_constants(phi);
  const SigmaQ sq = sigma_q_squared(phi, pts.dim());
  const GseResult restricted = mv_estimate_gse_constrained(pts, model, phi, con, start, opts);
  const GseResult full = mv_estimate_gse(pts, model, phi, restricted.theta, opts);
  const double gap = detail::checked_gap(restricted.value - full.value, "mv_test_composite");
  TestReport r = detail::mv_report("mv-composite", pts.size(), gap, con.rows(), level, phi, c, sq, pts.dim());
  r.estimate = full.theta;
  r.restricted_estimate = restricted.theta;
  detail::fill_optimizer(r.diagnostics, restricted.optimizer);
  detail::fill_optimizer(r.diagnostics, full.optimizer);
  r.diagnostics.ties = MvObjective(pts, model, phi).xi(full.theta).floored;
  detail::fill_chisq(r);
  return r;
}

/// Noncentrality (b_phi^2 / sigma_q^2) Delta' I(theta0) Delta for local alternatives.
inline double mv_local_noncentrality(const ParametricModel& model, ParamView theta0, ParamView delta,
                                     const PhiFunction& phi, const FisherOptions& fopts = {}) {
  const MvPhiConstants c = mv_constants(phi);
  const SigmaQ sq = sigma_q_squared(phi, model.obs_dim());
  return local_noncentrality(model, theta0, delta, sq.value / (c.b_phi * c.b_phi), fopts);
}

}  // namespace spacings

#endif  // SPACINGS_MULTIVARIATE_HPP
