#ifndef SPACINGS_PHI_HPP
#define SPACINGS_PHI_HPP

// Convex phi functions and the calibration constants derived from them.

#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <utility>

#include "spacings/errors.hpp"
#include "spacings/special_functions.hpp"

namespace spacings {

using RealFn = std::function<double(double)>;

/// A convex phi on (0, inf) with derivatives up to third order.
///
/// `q` is x * phi'(x) and `dq` its derivative; they are supplied in closed
/// form so that, e.g., the constant q of -log integrates to exactly zero
/// variation. `q0` is the limit q(0+) when it is finite.
struct PhiFunction {
  std::string label;
  RealFn eval, d1, d2, d3;
  RealFn q, dq;
  std::optional<double> q0;
  /// False for phi admitted only for descriptive statistics (Rao's |x-1|^r).
  bool calibrated = true;

  double operator()(double x) const { return eval(x); }
};

namespace detail {

inline std::string format_real(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

inline PhiFunction make_neglog() {
  PhiFunction phi;
  phi.label = "neglog";
  phi.eval = [](double x) { return -std::log(x); };
  phi.d1 = [](double x) { return -1.0 / x; };
  phi.d2 = [](double x) { return 1.0 / (x * x); };
  phi.d3 = [](double x) { return -2.0 / (x * x * x); };
  phi.q = [](double) { return -1.0; };
  phi.dq = [](double) { return 0.0; };
  phi.q0 = -1.0;
  return phi;
}

inline PhiFunction make_xlogx() {
  PhiFunction phi;
  phi.label = "xlogx";
  phi.eval = [](double x) { return x * std::log(x); };
  phi.d1 = [](double x) { return std::log(x) + 1.0; };
  phi.d2 = [](double x) { return 1.0 / x; };
  phi.d3 = [](double x) { return -1.0 / (x * x); };
  phi.q = [](double x) { return x * (std::log(x) + 1.0); };
  phi.dq = [](double x) { return std::log(x) + 2.0; };
  phi.q0 = 0.0;
  return phi;
}

/// The power family: (x^{g+1} - 1) / (g (g+1)), with -log x at g = -1 and
/// x log x at g = 0.
inline PhiFunction make_phi_gamma(double gamma) {
  if (!std::isfinite(gamma)) fail(ErrorKind::invalid_phi, "gamma must be finite");
  if (gamma == -1.0) {
    PhiFunction phi = make_neglog();
    phi.label = "gamma:-1";
    return phi;
  }
  if (gamma == 0.0) {
    PhiFunction phi = make_xlogx();
    phi.label = "gamma:0";
    return phi;
  }
  const double g = gamma;
  PhiFunction phi;
  phi.label = "gamma:" + detail::format_real(g);
  phi.eval = [g](double x) { return (std::pow(x, g + 1.0) - 1.0) / (g * (1.0 + g)); };
  phi.d1 = [g](double x) { return std::pow(x, g) / g; };
  phi.d2 = [g](double x) { return std::pow(x, g - 1.0); };
  phi.d3 = [g](double x) { return (g - 1.0) * std::pow(x, g - 2.0); };
  phi.q = [g](double x) { return std::pow(x, g + 1.0) / g; };
  phi.dq = [g](double x) { return (g + 1.0) * std::pow(x, g) / g; };
  if (g > -1.0) phi.q0 = 0.0;
  return phi;
}

inline PhiFunction make_greenwood() {
  PhiFunction phi;
  phi.label = "greenwood";
  phi.eval = [](double x) { return x * x; };
  phi.d1 = [](double x) { return 2.0 * x; };
  phi.d2 = [](double) { return 2.0; };
  phi.d3 = [](double) { return 0.0; };
  phi.q = [](double x) { return 2.0 * x * x; };
  phi.dq = [](double x) { return 4.0 * x; };
  phi.q0 = 0.0;
  return phi;
}

/// Kimball's x^r, sign-flipped for 0 < r < 1 so that it stays convex.
inline PhiFunction make_kimball(double r) {
  if (!(r > 0.0) || r == 1.0 || !std::isfinite(r))
    fail(ErrorKind::invalid_phi, "kimball: r must be positive and != 1");
  const double s = r > 1.0 ? 1.0 : -1.0;
  PhiFunction phi;
  phi.label = "kimball:" + detail::format_real(r);
  phi.eval = [r, s](double x) { return s * std::pow(x, r); };
  phi.d1 = [r, s](double x) { return s * r * std::pow(x, r - 1.0); };
  phi.d2 = [r, s](double x) { return s * r * (r - 1.0) * std::pow(x, r - 2.0); };
  phi.d3 = [r, s](double x) { return s * r * (r - 1.0) * (r - 2.0) * std::pow(x, r - 3.0); };
  phi.q = [r, s](double x) { return s * r * std::pow(x, r); };
  phi.dq = [r, s](double x) { return s * r * r * std::pow(x, r - 1.0); };
  phi.q0 = 0.0;
  return phi;
}

/// Rao's |x-1|^r. Needs r > 3 for three continuous derivatives; even then
/// phi'' vanishes at 1, so it is only admitted for descriptive statistics.
inline PhiFunction make_rao(double r) {
  if (!(r > 3.0) || !std::isfinite(r))
    fail(ErrorKind::invalid_phi, "rao: r must exceed 3 (three continuous derivatives)");
  auto sgn = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
  PhiFunction phi;
  phi.label = "rao:" + detail::format_real(r);
  phi.eval = [r](double x) { return std::pow(std::abs(x - 1.0), r); };
  phi.d1 = [r, sgn](double x) { return r * std::pow(std::abs(x - 1.0), r - 1.0) * sgn(x - 1.0); };
  phi.d2 = [r](double x) { return r * (r - 1.0) * std::pow(std::abs(x - 1.0), r - 2.0); };
  phi.d3 = [r, sgn](double x) {
    return r * (r - 1.0) * (r - 2.0) * std::pow(std::abs(x - 1.0), r - 3.0) * sgn(x - 1.0);
  };
  phi.q = [r, sgn](double x) { return x * r * std::pow(std::abs(x - 1.0), r - 1.0) * sgn(x - 1.0); };
  phi.dq = [r, sgn](double x) {
    const double a = std::abs(x - 1.0);
    return r * std::pow(a, r - 1.0) * sgn(x - 1.0) + x * r * (r - 1.0) * std::pow(a, r - 2.0);
  };
  phi.q0 = 0.0;
  phi.calibrated = false;
  return phi;
}

/// phi(x) + a*x + c. Tests built on phi are unchanged by the affine part.
inline PhiFunction add_affine(const PhiFunction& base, double a, double c, std::string label = {}) {
  PhiFunction phi = base;
  phi.label = label.empty() ? base.label + "+affine(" + detail::format_real(a) + "," +
                                  detail::format_real(c) + ")"
                            : std::move(label);
  phi.eval = [f = base.eval, a, c](double x) { return f(x) + a * x + c; };
  phi.d1 = [f = base.d1, a](double x) { return f(x) + a; };
  phi.q = [f = base.q, a](double x) { return f(x) + a * x; };
  phi.dq = [f = base.dq, a](double x) { return f(x) + a; };
  return phi;
}

/// -log x + x - 1: non-negative with minimum 0 at x = 1.
inline PhiFunction make_neglog_affine() { return add_affine(make_neglog(), 1.0, -1.0, "neglog-affine"); }

/// Resolves the names accepted on the command line: "neglog", "greenwood",
/// "xlogx", "neglog-affine", "gamma:<v>", "kimball:<r>", "rao:<r>".
inline PhiFunction parse_phi(const std::string& name) {
  auto number_after = [&](std::size_t pos) {
    const std::string tail = name.substr(pos);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tail, &used);
    } catch (const std::exception&) {
      fail(ErrorKind::configuration, "phi '" + name + "': bad numeric argument");
    }
    if (used != tail.size()) fail(ErrorKind::configuration, "phi '" + name + "': bad numeric argument");
    return v;
  };
  if (name == "neglog") return make_neglog();
  if (name == "greenwood") return make_greenwood();
  if (name == "xlogx") return make_xlogx();
  if (name == "neglog-affine") return make_neglog_affine();
  if (name.rfind("gamma:", 0) == 0) return make_phi_gamma(number_after(6));
  if (name.rfind("kimball:", 0) == 0) return make_kimball(number_after(8));
  if (name.rfind("rao:", 0) == 0) return make_rao(number_after(4));
  fail(ErrorKind::configuration, "unknown phi '" + name + "'");
}

// ---------------------------------------------------------------------------
// Calibration constants

/// Moments of zeta_m ~ Gamma(m,1)/m entering the univariate calibration.
struct SpacingConstants {
  int m = 1;
  double mu_phi_m = 0.0;  // E(zeta phi'(zeta))
  double e2 = 0.0;        // E(zeta^2 phi''(zeta))
  double var_q = 0.0;     // Var(zeta phi'(zeta))
  double e_cross = 0.0;   // E(zeta^2 phi'(zeta))
  double sigma2 = 0.0;    // variance inflation of the GSE relative to I^{-1}
};

namespace detail {

inline SpacingConstants compute_spacing_constants(const PhiFunction& phi, int m) {
  SpacingConstants c;
  c.m = m;
  c.mu_phi_m = gamma_expectation([&](double z) { return phi.q(z); }, m);
  c.e2 = gamma_expectation([&](double z) { return z * z * phi.d2(z); }, m);
  if (!(c.e2 > 0.0)) fail(ErrorKind::invalid_phi, "phi '" + phi.label + "': E(zeta^2 phi'') <= 0");
  const double mu = c.mu_phi_m;
  c.var_q = gamma_expectation([&](double z) { const double d = phi.q(z) - mu; return d * d; }, m);
  c.e_cross = gamma_expectation([&](double z) { return z * phi.q(z); }, m);
  const double md = m;
  c.sigma2 = (md * c.var_q + (2.0 * md + 1.0) * mu * mu - 2.0 * md * mu * c.e_cross) / (c.e2 * c.e2);
  if (!std::isfinite(c.sigma2)) fail(ErrorKind::invalid_phi, "phi '" + phi.label + "': non-finite sigma2");
  return c;
}

}  // namespace detail

/// Cached per (phi label, m); labels must identify the function.
inline SpacingConstants spacing_constants(const PhiFunction& phi, int m) {
  if (m < 1) fail(ErrorKind::configuration, "spacing_constants: m must be >= 1");
  static std::mutex mu;
  static std::map<std::pair<std::string, int>, SpacingConstants> cache;
  const auto key = std::make_pair(phi.label, m);
  {
    std::lock_guard<std::mutex> lock(mu);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  SpacingConstants c = detail::compute_spacing_constants(phi, m);
  std::lock_guard<std::mutex> lock(mu);
  cache.emplace(key, c);
  return c;
}

/// Constants for nearest-neighbour-ball statistics.
struct MvPhiConstants {
  double b_phi = 0.0;  // E(Z^2 phi''(Z)), Z standard exponential
  double q0 = 0.0;     // lim_{x->0+} x phi'(x)
};

inline MvPhiConstants mv_constants(const PhiFunction& phi) {
  if (!phi.q0) fail(ErrorKind::unsupported_phi, "phi '" + phi.label + "': x phi'(x) diverges at 0");
  MvPhiConstants c;
  c.b_phi = gamma_expectation([&](double z) { return z * z * phi.d2(z); }, 1);
  if (!(c.b_phi > 0.0)) fail(ErrorKind::invalid_phi, "phi '" + phi.label + "': b_phi <= 0");
  c.q0 = *phi.q0;
  return c;
}

}  // namespace spacings

#endif  // SPACINGS_PHI_HPP
