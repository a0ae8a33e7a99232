#ifndef SPACINGS_SPECIAL_FUNCTIONS_HPP
#define SPACINGS_SPECIAL_FUNCTIONS_HPP

// Chi-square distribution functions (central and noncentral) and Gamma
// expectations E[g(zeta_m)], zeta_m ~ Gamma(m, 1) / m.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include <boost/math/special_functions/gamma.hpp>

#include "spacings/errors.hpp"
#include "spacings/quadrature.hpp"

namespace spacings {

struct ChiSquareSpec {
  int df = 1;
  double noncentrality = 0.0;

  void validate() const {
    if (df < 1) fail(ErrorKind::domain, "chi-square: df must be >= 1");
    if (!(noncentrality >= 0.0) || !std::isfinite(noncentrality))
      fail(ErrorKind::domain, "chi-square: noncentrality must be finite and >= 0");
  }
};

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

namespace detail {

inline constexpr double kPoissonTail = 1e-12;

// Sums w_j * term(j) over the Poisson(lambda) weights, starting at the mode
// and walking outward until the unvisited weight drops below kPoissonTail.
template <class Term>
double poisson_mixture(double lambda, Term&& term) {
  if (lambda == 0.0) return term(0);
  const long mode = static_cast<long>(std::floor(lambda));
  const double log_w_mode = -lambda + mode * std::log(lambda) - std::lgamma(mode + 1.0);
  const double w_mode = std::exp(log_w_mode);
  double sum = w_mode * term(mode);
  double mass = w_mode;
  long up = mode + 1, down = mode - 1;
  double w_up = w_mode * lambda / static_cast<double>(up);
  double w_down = down >= 0 ? w_mode * static_cast<double>(mode) / lambda : 0.0;
  while (1.0 - mass >= kPoissonTail) {
    if (down >= 0 && w_down >= w_up) {
      sum += w_down * term(down);
      mass += w_down;
      w_down = down > 0 ? w_down * static_cast<double>(down) / lambda : 0.0;
      --down;
    } else {
      if (w_up == 0.0 && down < 0) break;
      sum += w_up * term(up);
      mass += w_up;
      ++up;
      w_up *= lambda / static_cast<double>(up);
    }
    if (up - mode > 100000) break;
  }
  return sum;
}

inline void check_x(double x) {
  if (!std::isfinite(x)) fail(ErrorKind::domain, "chi-square: x must be finite");
  if (x < 0.0) fail(ErrorKind::domain, "chi-square: x must be non-negative");
}

}  // namespace detail

/// P(chi2_df(delta) <= x).
inline double chisq_cdf(double x, const ChiSquareSpec& law) {
  law.validate();
  detail::check_x(x);
  if (x == 0.0) return 0.0;
  return detail::poisson_mixture(0.5 * law.noncentrality, [&](long j) {
    return boost::math::gamma_p(0.5 * law.df + j, 0.5 * x);
  });
}

/// P(chi2_df(delta) > x), accurate in the upper tail.
inline double chisq_sf(double x, const ChiSquareSpec& law) {
  law.validate();
  detail::check_x(x);
  if (x == 0.0) return 1.0;
  return detail::poisson_mixture(0.5 * law.noncentrality, [&](long j) {
    return boost::math::gamma_q(0.5 * law.df + j, 0.5 * x);
  });
}

inline double chisq_pdf(double x, const ChiSquareSpec& law) {
  law.validate();
  detail::check_x(x);
  if (x == 0.0) {
    if (law.df == 1) return std::numeric_limits<double>::infinity();
    if (law.df == 2) return 0.5 * std::exp(-0.5 * law.noncentrality);
    return 0.0;
  }
  return detail::poisson_mixture(0.5 * law.noncentrality, [&](long j) {
    return 0.5 * boost::math::gamma_p_derivative(0.5 * law.df + j, 0.5 * x);
  });
}

/// Inverse CDF by bracketing plus safeguarded Newton steps.
inline double chisq_quantile(double p, const ChiSquareSpec& law) {
  law.validate();
  if (!(p > 0.0 && p < 1.0)) fail(ErrorKind::domain, "chi-square quantile: p must lie in (0,1)");
  const double df = law.df, delta = law.noncentrality;
  double lo = 0.0;
  double hi = df + delta + 40.0 * std::sqrt(2.0 * df + 4.0 * delta);
  while (chisq_cdf(hi, law) < p) {
    lo = hi;
    hi *= 2.0;
  }
  double x = std::clamp(df + delta, lo, hi);
  for (int it = 0; it < 200; ++it) {
    const double f = chisq_cdf(x, law) - p;
    if (std::abs(f) <= 1e-14) return x;
    if (f < 0.0) lo = x; else hi = x;
    if (hi - lo <= 1e-15 * std::max(1.0, hi)) break;
    const double dens = chisq_pdf(x, law);
    double next = (dens > 0.0 && std::isfinite(dens)) ? x - f / dens : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    x = next;
  }
  return x;
}

inline constexpr int kDefaultGammaNodes = 128;

namespace detail {

// One evaluation of E[g(zeta_m)] with n nodes per piece. The Gamma(m,1)
// integral in z = m*zeta is split at z = 1: Gauss-Legendre under z = v^4 on
// [0, 1] absorbs algebraic and log behaviour at the origin, Gauss-Laguerre
// on the shifted tail [1, inf).
struct GammaIntegral {
  double value = 0.0;
  double abs_mass = 0.0;  // same rule applied to |g|, the scale for cancellation
};

template <class G>
GammaIntegral gamma_expectation_once(G&& g, int m, int n) {
  constexpr double split = 1.0;
  const double log_norm = std::lgamma(static_cast<double>(m));
  const double md = m;
  double left = 0.0, mass = 0.0;
  const quadrature::Rule& leg = quadrature::legendre(n);
  for (int i = 0; i < n; ++i) {
    const double v = 0.5 * (leg.nodes[i] + 1.0);
    if (v <= 0.0) continue;
    const double z = split * v * v * v * v;
    const double jac = 4.0 * split * v * v * v;
    const double dens = std::exp((md - 1.0) * std::log(z) - z - log_norm);
    const double w = 0.5 * leg.weights[i] * jac * dens;
    if (w == 0.0) continue;
    const double gv = g(z / md);
    left += w * gv;
    mass += w * std::abs(gv);
  }
  double right = 0.0;
  const quadrature::LogRule& lag = quadrature::laguerre(n);
  for (int i = 0; i < n; ++i) {
    const double z = split + lag.nodes[i];
    const double w = std::exp(lag.log_weights[i] + (md - 1.0) * std::log(z) - split - log_norm);
    if (w == 0.0) continue;
    const double gv = g(z / md);
    right += w * gv;
    mass += w * std::abs(gv);
  }
  return {left + right, mass};
}

}  // namespace detail

/// E[g(zeta_m)] with zeta_m ~ Gamma(m,1)/m. Evaluates with node_count and
/// 2*node_count nodes and throws AccuracyError when they disagree by more
/// than 1e-8 relative, unless the difference is at rounding level for E|g|.
template <class G>
double gamma_expectation(G&& g, int m, int node_count = kDefaultGammaNodes) {
  if (m < 1) fail(ErrorKind::domain, "gamma_expectation: m must be >= 1");
  if (node_count < 64) fail(ErrorKind::domain, "gamma_expectation: node_count must be >= 64");
  const auto lo = detail::gamma_expectation_once(g, m, node_count);
  const auto hi = detail::gamma_expectation_once(g, m, 2 * node_count);
  const double coarse = lo.value, fine = hi.value;
  if (!std::isfinite(coarse) || !std::isfinite(fine))
    throw AccuracyError("gamma_expectation: non-finite integral", coarse, fine);
  const double diff = std::abs(fine - coarse);
  if (diff > 1e-8 * std::max(std::abs(coarse), std::abs(fine)) && diff > std::max(1e-13, 1e-12 * hi.abs_mass))
    throw AccuracyError("gamma_expectation: refinement did not settle", coarse, fine);
  return fine;
}

}  // namespace spacings

#endif  // SPACINGS_SPECIAL_FUNCTIONS_HPP
