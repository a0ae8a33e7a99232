#ifndef SPACINGS_MODELS_HPP
#define SPACINGS_MODELS_HPP

// Parametric families: density, CDF, sampling, Fisher information and ball
// probabilities behind one runtime interface.

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "spacings/errors.hpp"
#include "spacings/quadrature.hpp"
#include "spacings/rng.hpp"
#include "spacings/special_functions.hpp"

namespace spacings {

using Params = std::vector<double>;
using ParamView = std::span<const double>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Closed box constraints on the parameter space.
struct Bounds {
  std::vector<double> lower;
  std::vector<double> upper;

  bool contains(ParamView theta) const {
    for (std::size_t j = 0; j < theta.size(); ++j)
      if (!(theta[j] >= lower[j] && theta[j] <= upper[j])) return false;
    return true;
  }
};

/// Common interface of every family F_theta.
///
/// Observations of dimension d are passed as spans of d doubles; samples
/// are flat row-major arrays of n * d values.
class ParametricModel {
 public:
  virtual ~ParametricModel() = default;

  virtual std::string name() const = 0;
  virtual int param_dim() const = 0;
  virtual int obs_dim() const = 0;
  virtual Bounds bounds() const = 0;
  /// A parameter value inside the box, used as a default starting point.
  virtual Params reference_params() const = 0;

  virtual bool has_cdf() const { return obs_dim() == 1; }
  /// Families whose support moves with theta violate the common-support
  /// assumption and cannot be fitted by spacings.
  virtual bool support_depends_on_parameter() const { return false; }
  virtual bool likelihood_bounded() const { return true; }

  virtual double pdf(ParamView theta, std::span<const double> x) const = 0;
  virtual double log_pdf(ParamView theta, std::span<const double> x) const {
    return std::log(pdf(theta, x));
  }
  virtual double cdf(ParamView /*theta*/, double /*x*/) const {
    fail(ErrorKind::capability, name() + ": cdf is only available for univariate models");
  }
  /// Univariate support, for quadrature over x.
  virtual std::pair<double, double> support() const { return {-kInf, kInf}; }

  virtual void sample(ParamView theta, std::size_t n, RandomStream& rng,
                      std::vector<double>& out) const = 0;

  virtual std::optional<Eigen::MatrixXd> closed_fisher(ParamView /*theta*/) const {
    return std::nullopt;
  }

  /// P_theta(B(center, radius)); the default is polar tensor Gauss-Legendre
  /// quadrature of the density (d = 2 only).
  virtual double ball_probability_impl(ParamView theta, std::span<const double> center,
                                       double radius) const;
};

inline void check_params(const ParametricModel& model, ParamView theta) {
  if (static_cast<int>(theta.size()) != model.param_dim())
    fail(ErrorKind::parameter_domain, model.name() + ": expected " +
                                          std::to_string(model.param_dim()) + " parameters, got " +
                                          std::to_string(theta.size()));
  if (!model.bounds().contains(theta))
    fail(ErrorKind::parameter_domain, model.name() + ": parameter outside bounds");
}

// ---------------------------------------------------------------------------
// Ball probabilities

namespace detail {

/// Polar tensor Gauss-Legendre quadrature of a planar density over a disk.
template <class Density>
double polar_disk_integral(Density&& f, std::span<const double> c, double radius, int radial_nodes,
                           int angular_nodes) {
  const quadrature::Rule& rr = quadrature::legendre(radial_nodes);
  const quadrature::Rule& ra = quadrature::legendre(angular_nodes);
  double sum = 0.0;
  for (int i = 0; i < radial_nodes; ++i) {
    const double rho = 0.5 * radius * (rr.nodes[i] + 1.0);
    double inner = 0.0;
    for (int k = 0; k < angular_nodes; ++k) {
      const double a = std::numbers::pi * (ra.nodes[k] + 1.0);
      const double pt[2] = {c[0] + rho * std::cos(a), c[1] + rho * std::sin(a)};
      inner += ra.weights[k] * f(std::span<const double>(pt, 2));
    }
    sum += rr.weights[i] * rho * inner * std::numbers::pi;
  }
  return sum * 0.5 * radius;
}

// erf(b) - erf(a) for a <= b without cancellation in either tail.
inline double erf_diff(double a, double b) {
  if (a >= 0.0) return std::erfc(a) - std::erfc(b);
  if (b <= 0.0) return std::erfc(-b) - std::erfc(-a);
  return std::erf(b) - std::erf(a);
}

}  // namespace detail

/// P(|X - c| <= r) for X ~ N(mean, cov) in the plane.
///
/// Along each ray from c the Gaussian radial integral has a closed form; the
/// angular integral is periodic and smooth, so the trapezoid rule converges
/// geometrically. Node counts double from 8 until successive values agree to
/// 1e-10 relative.
inline double gaussian_disk_probability(const Eigen::Vector2d& mean, const Eigen::Matrix2d& cov,
                                        std::span<const double> c, double r) {
  if (r == 0.0) return 0.0;
  const Eigen::Matrix2d prec = cov.inverse();
  const double norm = 1.0 / (2.0 * std::numbers::pi * std::sqrt(cov.determinant()));
  const Eigen::Vector2d d(c[0] - mean[0], c[1] - mean[1]);
  const double c0 = 0.5 * d.dot(prec * d);
  const Eigen::Vector2d pd = prec * d;
  auto radial = [&](double angle) {
    const Eigen::Vector2d u(std::cos(angle), std::sin(angle));
    const double A = 0.5 * u.dot(prec * u);
    const double B = u.dot(pd);
    const double h = B / (2.0 * A);
    const double sa = std::sqrt(A);
    const double t1 = std::exp(-c0) * (-std::expm1(-A * r * (r + 2.0 * h))) / (2.0 * A);
    const double t2 = h * std::sqrt(std::numbers::pi) / (2.0 * sa) * std::exp(-c0 + A * h * h) *
                      detail::erf_diff(sa * h, sa * (r + h));
    return t1 - t2;
  };
  int n = 8;
  double sum = 0.0;
  for (int k = 0; k < n; ++k) sum += radial(2.0 * std::numbers::pi * k / n);
  double prev = sum * 2.0 * std::numbers::pi / n;
  while (n < 8192) {
    double extra = 0.0;
    for (int k = 0; k < n; ++k) extra += radial(2.0 * std::numbers::pi * (k + 0.5) / n);
    sum += extra;
    n *= 2;
    const double cur = sum * 2.0 * std::numbers::pi / n;
    if (std::abs(cur - prev) <= 1e-10 * std::abs(cur) || cur == 0.0) {
      prev = cur;
      break;
    }
    prev = cur;
  }
  return std::clamp(norm * prev, 0.0, 1.0);
}

/// P(|X - c| <= r) for X ~ N(mean, I_2), i.e. the noncentral chi-square(2)
/// CDF at r^2 with noncentrality |c - mean|^2. With a = r^2/2 and
/// lambda = |c - mean|^2 / 2 this is e^{-a} sum_j Pois(j; lambda) T_j, where
/// T_j = sum_{k>j} a^k/k! is built by downward recursion (no cancellation).
inline double isotropic_disk_probability(std::span<const double> mean, std::span<const double> c, double r) {
  if (r == 0.0) return 0.0;
  const double dx = c[0] - mean[0], dy = c[1] - mean[1];
  const double lambda = 0.5 * (dx * dx + dy * dy);
  const double a = 0.5 * r * r;
  if (lambda > 600.0 || a > 600.0)
    return gaussian_disk_probability(Eigen::Vector2d(mean[0], mean[1]), Eigen::Matrix2d::Identity(), c, r);
  // Truncate once the dropped T_j can no longer move the result by 1e-20.
  const int j_cap = static_cast<int>(std::ceil(lambda + a + 12.0 * std::sqrt(lambda + a) + 30.0));
  thread_local std::vector<double> ck;
  ck.assign(1, 1.0);
  int J = 0;
  for (;; ++J) {
    ck.push_back(ck.back() * a / (J + 1));
    if (J >= j_cap || (J + 1 > a && ck.back() * (J + 2) < 1e-20)) break;
  }
  // Tail beyond J: a^{J+1}/(J+1)! (1 + a/(J+2) + ...).
  double tail = 0.0, term = ck[J + 1];
  for (int k = J + 2; term > 0.0 && term > 1e-18 * tail; ++k) {
    tail += term;
    term *= a / k;
  }
  double sum = 0.0;
  double w = std::exp(-lambda);
  thread_local std::vector<double> weights;
  weights.resize(static_cast<std::size_t>(J) + 1);
  for (int j = 0; j <= J; ++j) {
    weights[j] = w;
    w *= lambda / (j + 1);
  }
  for (int j = J; j >= 0; --j) {
    sum += weights[j] * tail;
    tail += ck[j];
  }
  return std::clamp(std::exp(-a) * sum, 0.0, 1.0);
}

inline double ParametricModel::ball_probability_impl(ParamView theta, std::span<const double> center,
                                                     double radius) const {
  if (obs_dim() != 2)
    fail(ErrorKind::capability, name() + ": no ball probability for dimension " +
                                    std::to_string(obs_dim()));
  if (radius == 0.0) return 0.0;
  const double p = detail::polar_disk_integral(
      [&](std::span<const double> x) { return pdf(theta, x); }, center, radius, 64, 64);
  return std::clamp(p, 0.0, 1.0);
}

/// P_theta(B(center, radius)).
inline double ball_probability(const ParametricModel& model, ParamView theta,
                               std::span<const double> center, double radius) {
  if (!std::isfinite(radius) || radius < 0.0)
    fail(ErrorKind::domain, "ball_probability: radius must be finite and non-negative");
  if (model.obs_dim() < 2)
    fail(ErrorKind::capability, model.name() + ": ball probabilities need d >= 2");
  if (static_cast<int>(center.size()) != model.obs_dim())
    fail(ErrorKind::domain, "ball_probability: center has wrong dimension");
  check_params(model, theta);
  if (radius == 0.0) return 0.0;
  return model.ball_probability_impl(theta, center, radius);
}

// ---------------------------------------------------------------------------
// Built-in families

class ExponentialModel final : public ParametricModel {
 public:
  std::string name() const override { return "exp"; }
  int param_dim() const override { return 1; }
  int obs_dim() const override { return 1; }
  Bounds bounds() const override { return {{1e-10}, {kInf}}; }
  Params reference_params() const override { return {1.0}; }
  std::pair<double, double> support() const override { return {0.0, kInf}; }

  double pdf(ParamView t, std::span<const double> x) const override {
    return x[0] < 0.0 ? 0.0 : t[0] * std::exp(-t[0] * x[0]);
  }
  double log_pdf(ParamView t, std::span<const double> x) const override {
    return x[0] < 0.0 ? -kInf : std::log(t[0]) - t[0] * x[0];
  }
  double cdf(ParamView t, double x) const override {
    if (x <= 0.0) return 0.0;
    const double z = t[0] * x;
    // 1 - e^{-z} loses nothing once z is away from 0; exp is much cheaper.
    return z < 0.5 ? -std::expm1(-z) : 1.0 - std::exp(-z);
  }
  void sample(ParamView t, std::size_t n, RandomStream& rng, std::vector<double>& out) const override {
    out.resize(n);
    for (auto& v : out) v = rng.exponential() / t[0];
  }
  std::optional<Eigen::MatrixXd> closed_fisher(ParamView t) const override {
    Eigen::MatrixXd m(1, 1);
    m(0, 0) = 1.0 / (t[0] * t[0]);
    return m;
  }
};

class NormalModel final : public ParametricModel {
 public:
  std::string name() const override { return "normal"; }
  int param_dim() const override { return 2; }
  int obs_dim() const override { return 1; }
  Bounds bounds() const override { return {{-kInf, 1e-10}, {kInf, kInf}}; }
  Params reference_params() const override { return {0.0, 1.0}; }

  double pdf(ParamView t, std::span<const double> x) const override {
    return normal_pdf((x[0] - t[0]) / t[1]) / t[1];
  }
  double log_pdf(ParamView t, std::span<const double> x) const override {
    const double z = (x[0] - t[0]) / t[1];
    return -0.5 * z * z - std::log(t[1]) - 0.5 * std::log(2.0 * std::numbers::pi);
  }
  double cdf(ParamView t, double x) const override { return normal_cdf((x - t[0]) / t[1]); }
  void sample(ParamView t, std::size_t n, RandomStream& rng, std::vector<double>& out) const override {
    out.resize(n);
    for (auto& v : out) v = t[0] + t[1] * rng.normal();
  }
  std::optional<Eigen::MatrixXd> closed_fisher(ParamView t) const override {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(2, 2);
    m(0, 0) = 1.0 / (t[1] * t[1]);
    m(1, 1) = 2.0 / (t[1] * t[1]);
    return m;
  }
};

/// F(x) = Phi(x - mu)/2 + Phi((x - mu)/sigma)/2. The likelihood is unbounded
/// (sigma -> 0 with mu at an observation).
class NormalScaleMixtureModel final : public ParametricModel {
 public:
  std::string name() const override { return "normal-scale-mix"; }
  int param_dim() const override { return 2; }
  int obs_dim() const override { return 1; }
  Bounds bounds() const override { return {{-kInf, 1e-10}, {kInf, kInf}}; }
  Params reference_params() const override { return {0.0, 1.0}; }
  bool likelihood_bounded() const override { return false; }

  double pdf(ParamView t, std::span<const double> x) const override {
    const double z = x[0] - t[0];
    return 0.5 * normal_pdf(z) + 0.5 * normal_pdf(z / t[1]) / t[1];
  }
  double cdf(ParamView t, double x) const override {
    const double z = x - t[0];
    return 0.5 * normal_cdf(z) + 0.5 * normal_cdf(z / t[1]);
  }
  void sample(ParamView t, std::size_t n, RandomStream& rng, std::vector<double>& out) const override {
    out.resize(n);
    for (auto& v : out) {
      const bool second = rng.uniform() >= 0.5;
      const double z = rng.normal();
      v = t[0] + (second ? t[1] : 1.0) * z;
    }
  }
};

/// N2(mu, I).
class BivariateNormalMeanModel final : public ParametricModel {
 public:
  std::string name() const override { return "bvn-mean"; }
  int param_dim() const override { return 2; }
  int obs_dim() const override { return 2; }
  Bounds bounds() const override { return {{-kInf, -kInf}, {kInf, kInf}}; }
  Params reference_params() const override { return {0.0, 0.0}; }

  double pdf(ParamView t, std::span<const double> x) const override {
    const double a = x[0] - t[0], b = x[1] - t[1];
    return std::exp(-0.5 * (a * a + b * b)) / (2.0 * std::numbers::pi);
  }
  double log_pdf(ParamView t, std::span<const double> x) const override {
    const double a = x[0] - t[0], b = x[1] - t[1];
    return -0.5 * (a * a + b * b) - std::log(2.0 * std::numbers::pi);
  }
  void sample(ParamView t, std::size_t n, RandomStream& rng, std::vector<double>& out) const override {
    out.resize(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      out[2 * i] = t[0] + rng.normal();
      out[2 * i + 1] = t[1] + rng.normal();
    }
  }
  std::optional<Eigen::MatrixXd> closed_fisher(ParamView) const override {
    return Eigen::MatrixXd::Identity(2, 2);
  }
  double ball_probability_impl(ParamView t, std::span<const double> c, double r) const override {
    return isotropic_disk_probability(t, c, r);
  }
};

/// N2(mu, I)/2 + N2(mu, [[1, rho], [rho, 1]])/2.
class BivariateNormalCorrMixtureModel final : public ParametricModel {
 public:
  std::string name() const override { return "bvn-corr-mix"; }
  int param_dim() const override { return 3; }
  int obs_dim() const override { return 2; }
  Bounds bounds() const override { return {{-kInf, -kInf, -0.9999}, {kInf, kInf, 0.9999}}; }
  Params reference_params() const override { return {0.0, 0.0, 0.0}; }
  bool likelihood_bounded() const override { return false; }

  double pdf(ParamView t, std::span<const double> x) const override {
    const double a = x[0] - t[0], b = x[1] - t[1], rho = t[2];
    const double s = 1.0 - rho * rho;
    const double f1 = std::exp(-0.5 * (a * a + b * b));
    const double f2 = std::exp(-0.5 * (a * a - 2.0 * rho * a * b + b * b) / s) / std::sqrt(s);
    return 0.5 * (f1 + f2) / (2.0 * std::numbers::pi);
  }
  void sample(ParamView t, std::size_t n, RandomStream& rng, std::vector<double>& out) const override {
    out.resize(2 * n);
    const double rho = t[2], s = std::sqrt(1.0 - rho * rho);
    for (std::size_t i = 0; i < n; ++i) {
      const bool second = rng.uniform() >= 0.5;
      const double z1 = rng.normal(), z2 = rng.normal();
      out[2 * i] = t[0] + z1;
      out[2 * i + 1] = t[1] + (second ? rho * z1 + s * z2 : z2);
    }
  }
  double ball_probability_impl(ParamView t, std::span<const double> c, double r) const override {
    const Eigen::Vector2d mean(t[0], t[1]);
    Eigen::Matrix2d corr;
    corr << 1.0, t[2], t[2], 1.0;
    return 0.5 * isotropic_disk_probability(t, c, r) +
           0.5 * gaussian_disk_probability(mean, corr, c, r);
  }
};

/// Uniform(0, theta). Registered for spacings arithmetic only: its support
/// depends on theta, so estimation refuses it.
class UniformScaleModel final : public ParametricModel {
 public:
  std::string name() const override { return "uniform"; }
  int param_dim() const override { return 1; }
  int obs_dim() const override { return 1; }
  Bounds bounds() const override { return {{1e-10}, {kInf}}; }
  Params reference_params() const override { return {1.0}; }
  bool support_depends_on_parameter() const override { return true; }
  std::pair<double, double> support() const override { return {0.0, kInf}; }

  double pdf(ParamView t, std::span<const double> x) const override {
    return (x[0] >= 0.0 && x[0] <= t[0]) ? 1.0 / t[0] : 0.0;
  }
  double cdf(ParamView t, double x) const override { return std::clamp(x / t[0], 0.0, 1.0); }
  void sample(ParamView t, std::size_t n, RandomStream& rng, std::vector<double>& out) const override {
    out.resize(n);
    for (auto& v : out) v = t[0] * rng.uniform();
  }
};

/// Looks a built-in family up by its command-line name.
inline std::shared_ptr<const ParametricModel> make_model(const std::string& name) {
  if (name == "exp") return std::make_shared<ExponentialModel>();
  if (name == "normal") return std::make_shared<NormalModel>();
  if (name == "normal-scale-mix") return std::make_shared<NormalScaleMixtureModel>();
  if (name == "bvn-mean") return std::make_shared<BivariateNormalMeanModel>();
  if (name == "bvn-corr-mix") return std::make_shared<BivariateNormalCorrMixtureModel>();
  if (name == "uniform") return std::make_shared<UniformScaleModel>();
  fail(ErrorKind::configuration, "unknown model '" + name + "'");
}

// ---------------------------------------------------------------------------
// Operations

struct Evaluation {
  double pdf = 0.0;
  double log_pdf = 0.0;
  std::optional<double> cdf;
};

inline Evaluation evaluate(const ParametricModel& model, ParamView theta, std::span<const double> x) {
  check_params(model, theta);
  if (static_cast<int>(x.size()) != model.obs_dim())
    fail(ErrorKind::domain, model.name() + ": observation has wrong dimension");
  Evaluation e;
  e.pdf = model.pdf(theta, x);
  e.log_pdf = model.log_pdf(theta, x);
  if (model.has_cdf()) e.cdf = model.cdf(theta, x[0]);
  return e;
}

inline std::vector<double> sample(const ParametricModel& model, ParamView theta, std::size_t n,
                                  RandomStream& rng) {
  check_params(model, theta);
  if (n < 1) fail(ErrorKind::configuration, "sample: n must be >= 1");
  std::vector<double> out;
  model.sample(theta, n, rng, out);
  return out;
}

struct FisherMatrix {
  Eigen::MatrixXd matrix;
  std::string method;     // "closed", "quadrature" or "monte-carlo"
  double mc_error = 0.0;  // largest entrywise standard error (monte-carlo)
};

struct FisherOptions {
  bool force_numeric = false;
  std::size_t mc_draws = 200000;
  std::uint64_t mc_seed = 0x5EEDF15Eu;
};

namespace detail {

inline double score_step(double v) { return 1e-5 * (1.0 + std::abs(v)); }

// d/dtheta_j log f by central differences.
inline Eigen::VectorXd numeric_score(const ParametricModel& model, ParamView theta,
                                     std::span<const double> x) {
  const int p = model.param_dim();
  Eigen::VectorXd s(p);
  Params t(theta.begin(), theta.end());
  for (int j = 0; j < p; ++j) {
    const double h = score_step(theta[j]);
    t[j] = theta[j] + h;
    const double up = model.log_pdf(t, x);
    t[j] = theta[j] - h;
    const double dn = model.log_pdf(t, x);
    t[j] = theta[j];
    s[j] = (up - dn) / (2.0 * h);
  }
  return s;
}

inline void require_positive_definite(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (!(lo > 1e-10 * std::max(1.0, hi)))
    fail(ErrorKind::information_singular, "Fisher information is not positive definite");
}

}  // namespace detail

/// I(theta): closed form where registered, otherwise adaptive quadrature of
/// score outer products (d = 1) or a Monte-Carlo average (d >= 2).
inline FisherMatrix fisher_information(const ParametricModel& model, ParamView theta,
                                       const FisherOptions& opts = {}) {
  check_params(model, theta);
  const int p = model.param_dim();
  FisherMatrix out;
  if (!opts.force_numeric) {
    if (auto closed = model.closed_fisher(theta)) {
      out.matrix = *closed;
      out.method = "closed";
      detail::require_positive_definite(out.matrix);
      return out;
    }
  }
  out.matrix = Eigen::MatrixXd::Zero(p, p);
  if (model.obs_dim() == 1) {
    out.method = "quadrature";
    const auto [a, b] = model.support();
    for (int j = 0; j < p; ++j) {
      for (int k = j; k < p; ++k) {
        auto integrand = [&](double x) {
          const double f = model.pdf(theta, std::span<const double>(&x, 1));
          if (!(f > 0.0) || !std::isfinite(f)) return 0.0;
          const Eigen::VectorXd s = detail::numeric_score(model, theta, std::span<const double>(&x, 1));
          return s[j] * s[k] * f;
        };
        const double v =
            boost::math::quadrature::gauss_kronrod<double, 61>::integrate(integrand, a, b, 15, 1e-10);
        out.matrix(j, k) = out.matrix(k, j) = v;
      }
    }
  } else {
    out.method = "monte-carlo";
    const std::size_t n = std::max<std::size_t>(opts.mc_draws, 200000);
    RandomStream rng(opts.mc_seed, 0, StreamTag("fisher"));
    std::vector<double> xs;
    model.sample(theta, n, rng, xs);
    const int d = model.obs_dim();
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(p, p), sumsq = Eigen::MatrixXd::Zero(p, p);
    for (std::size_t i = 0; i < n; ++i) {
      const Eigen::VectorXd s =
          detail::numeric_score(model, theta, std::span<const double>(xs.data() + i * d, d));
      const Eigen::MatrixXd o = s * s.transpose();
      sum += o;
      sumsq += o.cwiseProduct(o);
    }
    out.matrix = sum / static_cast<double>(n);
    const Eigen::MatrixXd var = sumsq / static_cast<double>(n) - out.matrix.cwiseProduct(out.matrix);
    out.mc_error = std::sqrt(var.maxCoeff() / static_cast<double>(n));
  }
  out.matrix = 0.5 * (out.matrix + out.matrix.transpose());
  detail::require_positive_definite(out.matrix);
  return out;
}

}  // namespace spacings

#endif  // SPACINGS_MODELS_HPP
