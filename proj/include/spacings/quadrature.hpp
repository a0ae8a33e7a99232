#ifndef SPACINGS_QUADRATURE_HPP
#define SPACINGS_QUADRATURE_HPP

// Gauss-Legendre and Gauss-Laguerre rules, computed once per node count and
// cached. Laguerre weights are stored in log form because the far nodes carry
// weights far below the double range.

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

#include <Eigen/Eigenvalues>

#include "spacings/errors.hpp"

namespace spacings::quadrature {

struct Rule {
  std::vector<double> nodes;
  std::vector<double> weights;  // Legendre: plain weights on [-1, 1]
};

struct LogRule {
  std::vector<double> nodes;
  std::vector<double> log_weights;  // Laguerre: log w_i, weight e^{-x}
};

namespace detail {

inline Rule compute_legendre(int n) {
  Rule r;
  r.nodes.resize(n);
  r.weights.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int k = 1; k <= n; ++k) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p2) / k;
      }
      dp = n * (x * p0 - p1) / (x * x - 1.0);
      const double dx = p0 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    // Recompute derivative at the polished node.
    double p0 = 1.0, p1 = 0.0;
    for (int k = 1; k <= n; ++k) {
      const double p2 = p1;
      p1 = p0;
      p0 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p2) / k;
    }
    dp = n * (x * p0 - p1) / (x * x - 1.0);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    r.nodes[i] = -x;
    r.nodes[n - 1 - i] = x;
    r.weights[i] = w;
    r.weights[n - 1 - i] = w;
  }
  return r;
}

// Evaluates L_n(x) and L_{n-1}(x) with running rescaling; returns the log of
// the common scale factor that was divided out.
inline double laguerre_pair(int n, double x, double& ln, double& lnm1) {
  double p0 = 1.0, p1 = 0.0, log_scale = 0.0;
  for (int k = 1; k <= n; ++k) {
    const double p2 = p1;
    p1 = p0;
    p0 = ((2.0 * k - 1.0 - x) * p1 - (k - 1.0) * p2) / k;
    const double mag = std::abs(p0);
    if (mag > 1e150) {
      p0 /= mag;
      p1 /= mag;
      log_scale += std::log(mag);
    }
  }
  ln = p0;
  lnm1 = p1;
  return log_scale;
}

inline LogRule compute_laguerre(int n) {
  // Golub-Welsch for starting values, then Newton polish on the recurrence.
  Eigen::VectorXd diag(n), sub(n - 1);
  for (int i = 0; i < n; ++i) diag[i] = 2.0 * i + 1.0;
  for (int i = 1; i < n; ++i) sub[i - 1] = i;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
  solver.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
  LogRule r;
  r.nodes.resize(n);
  r.log_weights.resize(n);
  for (int i = 0; i < n; ++i) {
    double x = solver.eigenvalues()[i];
    for (int it = 0; it < 50; ++it) {
      double ln, lnm1;
      laguerre_pair(n, x, ln, lnm1);
      const double dln = n * (ln - lnm1) / x;
      const double dx = ln / dln;
      x -= dx;
      if (std::abs(dx) <= 1e-15 * std::max(1.0, x)) break;
    }
    // w_i = x_i / ((n+1)^2 L_{n+1}(x_i)^2), evaluated in log space.
    double lnp1, ln;
    const double log_scale = laguerre_pair(n + 1, x, lnp1, ln);
    r.nodes[i] = x;
    r.log_weights[i] = std::log(x) - 2.0 * std::log(n + 1.0) -
                       2.0 * (std::log(std::abs(lnp1)) + log_scale);
  }
  return r;
}

}  // namespace detail

/// Gauss-Legendre rule on [-1, 1].
inline const Rule& legendre(int n) {
  static std::mutex mu;
  static std::map<int, std::unique_ptr<Rule>> cache;
  if (n < 1) fail(ErrorKind::domain, "legendre: node count must be positive");
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<Rule>(detail::compute_legendre(n));
  return *slot;
}

/// Gauss-Laguerre rule for weight e^{-x} on [0, inf).
inline const LogRule& laguerre(int n) {
  static std::mutex mu;
  static std::map<int, std::unique_ptr<LogRule>> cache;
  if (n < 2) fail(ErrorKind::domain, "laguerre: node count must be at least 2");
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<LogRule>(detail::compute_laguerre(n));
  return *slot;
}

/// Integrates f over [a, b] with an n-point Gauss-Legendre rule.
template <class F>
double integrate_legendre(F&& f, double a, double b, int n) {
  const Rule& r = legendre(n);
  const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += r.weights[i] * f(mid + half * r.nodes[i]);
  return sum * half;
}

/// Composite rule on [0, b] with panels refined geometrically toward 0, so
/// integrable algebraic or logarithmic endpoint singularities converge.
template <class F>
double integrate_graded(F&& f, double b, int levels, int n_per_panel) {
  double sum = 0.0;
  double hi = b;
  for (int l = 0; l < levels; ++l) {
    const double lo = hi * 0.5;
    sum += integrate_legendre(f, lo, hi, n_per_panel);
    hi = lo;
  }
  sum += integrate_legendre(f, 0.0, hi, n_per_panel);
  return sum;
}

}  // namespace spacings::quadrature

#endif  // SPACINGS_QUADRATURE_HPP
