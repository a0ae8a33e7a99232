#include <gtest/gtest.h>

#include <algorithm>
#include <boost/math/tools/minima.hpp>
#include <cmath>
#include <random>

#include "spacings/univariate.hpp"
#include "test_support.hpp"

using namespace spacings;

namespace {

template <class F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorKind::harness;
}

std::vector<double> draw(const std::string& model, const Params& theta, std::size_t n, std::uint64_t seed) {
  RandomStream rng(seed, 0, StreamTag("data"));
  return sample(*make_model(model), theta, n, rng);
}

}  // namespace

TEST(Spacings, HandComputedStepOne) {
  const auto s = spacings_of_uniforms({0.1, 0.3, 0.6, 0.8}, 1);
  ASSERT_EQ(s.count(), 5u);
  const double expected[] = {0.1, 0.2, 0.3, 0.2, 0.2};
  for (int j = 0; j < 5; ++j) EXPECT_NEAR(s.values[j], expected[j], 1e-15);
  EXPECT_NEAR(spacing_statistic(s, make_neglog()), 0.05753641449035618, 1e-15);
}

TEST(Spacings, LargerStepsAndBoundaryConventions) {
  const std::vector<double> u = {0.1, 0.3, 0.6, 0.8};
  const auto two = spacings_of_uniforms(u, 2);  // M = 2, ends at X_{4:4}
  ASSERT_EQ(two.count(), 2u);
  EXPECT_NEAR(two.values[0], 0.3, 1e-15);
  EXPECT_NEAR(two.values[1], 0.5, 1e-15);
  const auto five = spacings_of_uniforms({0.1, 0.3, 0.6, 0.8, 0.9}, 3);  // M = 2, 2m = 6 > n
  ASSERT_EQ(five.count(), 2u);
  EXPECT_NEAR(five.values[0], 0.6, 1e-15);
  EXPECT_NEAR(five.values[1], 0.4, 1e-15);
  const auto whole = spacings_of_uniforms(u, 4);
  ASSERT_EQ(whole.count(), 1u);
  EXPECT_NEAR(whole.values[0], 0.8, 1e-15);
}

TEST(Spacings, SumToOneWhenStepDividesNPlusOne) {
  const auto x = draw("exp", {1.0}, 199, 3);
  const SortedSample s(x);
  for (int m : {1, 2, 4, 5, 8, 10}) {
    const auto sp = compute_spacings(s, *make_model("exp"), Params{1.3}, m);
    double sum = 0.0;
    for (double d : sp.values) {
      EXPECT_GE(d, 0.0);
      sum += d;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12) << m;
  }
}

TEST(Spacings, TiesAreCountedAndFloored) {
  const SortedSample s({1.0, 1.0, 1.0, 2.0});
  const auto sp = compute_spacings(s, *make_model("exp"), Params{1.0}, 1);
  EXPECT_EQ(sp.ties, 2);
  EXPECT_TRUE(std::isfinite(spacing_statistic(sp, make_neglog())));
}

TEST(Spacings, ObjectiveMatchesDirectStatistic) {
  const SortedSample s(draw("normal", {0.0, 1.0}, 57, 9));
  const auto model = make_model("normal");
  const auto phi = make_greenwood();
  for (int m : {1, 2, 3, 7}) {
    const SpacingsObjective f(s, *model, phi, m);
    const Params theta{0.2, 1.3};
    EXPECT_NEAR(f(theta), spacing_statistic(compute_spacings(s, *model, theta, m), phi), 1e-12) << m;
  }
}

TEST(Spacings, InputValidation) {
  EXPECT_EQ(kind_of([] { SortedSample({1.0}); }), ErrorKind::data);
  EXPECT_EQ(kind_of([] { SortedSample({1.0, std::nan("")}); }), ErrorKind::data);
  const SortedSample s({0.5, 1.0, 2.0});
  EXPECT_EQ(kind_of([&] { compute_spacings(s, *make_model("exp"), Params{1.0}, 4); }), ErrorKind::configuration);
  EXPECT_EQ(kind_of([&] { compute_spacings(s, *make_model("exp"), Params{1.0}, 0); }), ErrorKind::configuration);
  EXPECT_EQ(kind_of([&] { compute_spacings(s, *make_model("exp"), Params{-1.0}, 1); }), ErrorKind::parameter_domain);
}

TEST(Gse, MatchesIndependentBrentMinimization) {
  const SortedSample s(draw("exp", {1.0}, 150, 21));
  const auto model = make_model("exp");
  for (int m : {1, 3}) {
    const auto phi = make_neglog();
    const SpacingsObjective f(s, *model, phi, m);
    const auto brent = boost::math::tools::brent_find_minima(
        [&](double t) { return f(Params{t}); }, 0.2, 5.0, 50);
    const auto fit = estimate_gse(s, *model, phi, m, Params{1.0});
    EXPECT_NEAR(fit.theta[0], brent.first, 1e-6) << m;
    EXPECT_LE(fit.value, brent.second + 1e-14);
    EXPECT_TRUE(fit.optimizer.converged);
  }
}

TEST(Gse, RefusesParameterDependentSupport) {
  const SortedSample s({0.1, 0.5, 0.9});
  EXPECT_EQ(kind_of([&] { estimate_gse(s, *make_model("uniform"), make_neglog(), 1, Params{1.0}); }),
            ErrorKind::capability);
}

TEST(SimpleTest, CalibrationAndDecisionRule) {
  const SortedSample s(draw("exp", {1.0}, 200, 5));
  const auto r = test_simple(s, *make_model("exp"), Params{1.0}, make_neglog(), 3, 0.05);
  const auto c = spacing_constants(make_neglog(), 3);
  EXPECT_NEAR(r.T_tilde, 2.0 * 200 * r.raw_T / (c.e2 * c.sigma2), 1e-12);
  EXPECT_NEAR(r.critical_value, 3.841458820694124, 1e-9);
  EXPECT_EQ(r.reject, r.T_tilde > 3.841458820694124);
  EXPECT_NEAR(r.p_value, chisq_sf(r.T_tilde, {1, 0.0}), 1e-14);
  EXPECT_EQ(r.df, 1);
  EXPECT_EQ(r.decision(), r.reject ? "reject" : "accept");
}

TEST(SimpleTest, RejectsClearlyWrongHypothesis) {
  const SortedSample s(draw("exp", {1.0}, 300, 6));
  const auto r = test_simple(s, *make_model("exp"), Params{2.0}, make_neglog(), 2, 0.05);
  EXPECT_TRUE(r.reject);
  EXPECT_LT(r.p_value, 1e-6);
}

TEST(SimpleTest, ArgumentErrors) {
  const SortedSample s(draw("exp", {1.0}, 50, 7));
  const auto e = make_model("exp");
  EXPECT_EQ(kind_of([&] { test_simple(s, *e, Params{1.0}, make_neglog(), 1, 1.5); }), ErrorKind::configuration);
  EXPECT_EQ(kind_of([&] { test_simple(s, *e, Params{1.0}, make_rao(4.0), 1, 0.05); }), ErrorKind::unsupported_phi);
  EXPECT_EQ(kind_of([&] { test_simple(s, *e, Params{0.0}, make_neglog(), 1, 0.05); }), ErrorKind::parameter_domain);
}

TEST(SimpleTest, ExplicitStartGivesTheSameAnswer) {
  const SortedSample s(draw("normal", {0.0, 1.0}, 120, 8));
  const auto n = make_model("normal");
  const auto a = test_simple(s, *n, Params{0.0, 1.0}, make_neglog(), 2, 0.05);
  const auto b = test_simple(s, *n, Params{0.0, 1.0}, make_neglog(), 2, 0.05, Params{0.5, 2.0});
  EXPECT_NEAR(a.raw_T, b.raw_T, 1e-9);
}

TEST(TwoPhi, EqualFunctionsReduceToSimpleTest) {
  const SortedSample s(draw("exp", {1.0}, 99, 10));
  const auto e = make_model("exp");
  const auto simple = test_simple(s, *e, Params{1.0}, make_neglog(), 1, 0.05);
  const auto two = test_two_phi(s, *e, Params{1.0}, make_neglog(), make_neglog(), 1, 0.05);
  EXPECT_DOUBLE_EQ(simple.T_tilde, two.T_tilde);
  EXPECT_EQ(two.kind, "two-phi");
  EXPECT_EQ(*two.phi_estimate, "neglog");
}

TEST(TwoPhi, ScalesByBothConstants) {
  const SortedSample s(draw("exp", {1.0}, 150, 12));
  const auto r = test_two_phi(s, *make_model("exp"), Params{1.0}, make_greenwood(), make_neglog(), 2, 0.05);
  const double e2 = spacing_constants(make_greenwood(), 2).e2;
  const double s2 = spacing_constants(make_neglog(), 2).sigma2;
  EXPECT_NEAR(r.T_tilde, 2.0 * 150 * r.raw_T / (e2 * s2), 1e-12);
  if (r.T_tilde <= 0.0) {
    EXPECT_EQ(r.p_value, 1.0);
  }
}

TEST(Composite, FullRankConstraintDelegatesToSimpleTest) {
  const SortedSample s(draw("normal", {0.0, 1.0}, 80, 13));
  const auto n = make_model("normal");
  AffineConstraint con;
  con.A = Eigen::MatrixXd::Identity(2, 2);
  con.c = Eigen::Vector2d(0.1, 1.2);
  const auto comp = test_composite(s, *n, con, make_neglog(), 1, 0.05);
  const auto simple = test_simple(s, *n, Params{0.1, 1.2}, make_neglog(), 1, 0.05);
  EXPECT_DOUBLE_EQ(comp.T_tilde, simple.T_tilde);
  EXPECT_EQ(comp.kind, "composite");
}

TEST(Composite, RestrictedEstimateSatisfiesConstraint) {
  const SortedSample s(draw("normal-scale-mix", {0.3, 1.0}, 200, 14));
  const auto model = make_model("normal-scale-mix");
  AffineConstraint con;
  con.A.resize(1, 2);
  con.A << 0.0, 1.0;
  con.c.resize(1);
  con.c << 1.0;
  const auto r = test_composite(s, *model, con, make_neglog(), 2, 0.05);
  ASSERT_TRUE(r.restricted_estimate.has_value());
  EXPECT_NEAR((*r.restricted_estimate)[1], 1.0, 1e-12);
  EXPECT_GE(r.raw_T, 0.0);
  EXPECT_EQ(r.df, 1);
}

TEST(Composite, InfeasibleConstraintIsRejected) {
  const SortedSample s(draw("exp", {1.0}, 40, 15));
  AffineConstraint con;
  con.A.resize(1, 1);
  con.A << 1.0;
  con.c.resize(1);
  con.c << -2.0;
  EXPECT_EQ(kind_of([&] { test_composite(s, *make_model("exp"), con, make_neglog(), 1, 0.05); }),
            ErrorKind::constraint);
}

TEST(Uniformity, CorrectNullIsRarelyRejectedAndWrongNullIsCaught) {
  const auto e = make_model("exp");
  const auto phi = make_neglog();
  const auto null = simulate_uniformity_null(100, phi, 1, 999, 77);
  int rejections = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const SortedSample s(draw("exp", {1.0}, 100, 100 + seed));
    const auto r = test_uniformity(s, [&](double x) { return e->cdf(Params{1.0}, x); }, phi, 1, null, 0.05);
    EXPECT_GT(r.p_value, 0.0);
    EXPECT_LE(r.p_value, 1.0);
    rejections += r.reject ? 1 : 0;
  }
  EXPECT_LE(rejections, 8);
  const SortedSample s(draw("exp", {1.0}, 100, 5));
  const auto wrong = test_uniformity(s, [&](double x) { return e->cdf(Params{3.0}, x); }, phi, 1, null, 0.05);
  EXPECT_TRUE(wrong.reject);
  EXPECT_NEAR(wrong.p_value, 1.0 / 1000.0, 1e-15);
}

TEST(Uniformity, ValidatesTheHypothesizedCdf) {
  const SortedSample s({0.1, 0.2, 0.3});
  const auto null = simulate_uniformity_null(3, make_neglog(), 1, 50, 1);
  EXPECT_EQ(kind_of([&] { test_uniformity(s, [](double x) { return 1.0 - x; }, make_neglog(), 1, null, 0.05); }),
            ErrorKind::domain);
  EXPECT_EQ(kind_of([&] { test_uniformity(s, [](double x) { return 2.0 * x + 0.5; }, make_neglog(), 1, null, 0.05); }),
            ErrorKind::domain);
  EXPECT_EQ(kind_of([&] { test_uniformity(s, [](double x) { return x; }, make_neglog(), 2, null, 0.05); }),
            ErrorKind::configuration);
}

TEST(LocalPower, ReferenceValues) {
  // scipy: ncx2.sf(chi2.ppf(0.95, 1), 1, 9).
  const auto lp = local_power(*make_model("exp"), Params{1.0}, Params{3.0}, make_neglog(), 1, 0.05);
  EXPECT_NEAR(lp.noncentrality, 9.0, 1e-10);
  EXPECT_NEAR(lp.power, 0.8508387683270562, 1e-10);
  // Scale mixture with I = diag(1, 1/2): delta = 9 + 4.5.
  const auto mix = local_power(*make_model("normal-scale-mix"), Params{0.0, 1.0}, Params{3.0, 3.0}, make_neglog(), 2, 0.05);
  EXPECT_NEAR(mix.noncentrality, 13.5, 1e-5);
  EXPECT_NEAR(mix.power, 0.9185673685219555, 1e-6);
  const auto zero = local_power(*make_model("exp"), Params{1.0}, Params{0.0}, make_neglog(), 1, 0.05);
  EXPECT_DOUBLE_EQ(zero.power, 0.05);
}

// ---------------------------------------------------------------------------
// Properties

TEST(Property, MonotoneTransformInvariance) {
  // Y = X^3 under the cubed family has the same probability-scale spacings.
  const support::WeibullCubedModel cubed;
  const auto e = make_model("exp");
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto x = draw("exp", {1.0}, 120, 300 + seed);
    std::vector<double> y(x.size());
    std::transform(x.begin(), x.end(), y.begin(), [](double v) { return v * v * v; });
    for (int m : {1, 3}) {
      const auto a = test_simple(SortedSample(x), *e, Params{1.0}, make_neglog(), m, 0.05);
      const auto b = test_simple(SortedSample(y), cubed, Params{1.0}, make_neglog(), m, 0.05);
      EXPECT_NEAR(a.T_tilde, b.T_tilde, 1e-8 * (1 + a.T_tilde));
      EXPECT_NEAR(a.estimate[0], b.estimate[0], 1e-7);
    }
  }
}

TEST(Property, PermutationInvariance) {
  auto x = draw("normal", {0.0, 1.0}, 90, 40);
  const auto model = make_model("normal");
  const auto base = test_simple(SortedSample(x), *model, Params{0.0, 1.0}, make_neglog(), 2, 0.05);
  std::mt19937 g(5);
  for (int k = 0; k < 3; ++k) {
    std::shuffle(x.begin(), x.end(), g);
    const auto r = test_simple(SortedSample(x), *model, Params{0.0, 1.0}, make_neglog(), 2, 0.05);
    EXPECT_EQ(r.T_tilde, base.T_tilde);
    EXPECT_EQ(r.estimate, base.estimate);
  }
}

TEST(Property, RawStatisticIsNonNegative) {
  const std::vector<std::pair<std::string, Params>> cases = {
      {"exp", {1.0}}, {"normal", {0.0, 1.0}}, {"normal-scale-mix", {0.0, 1.5}}};
  for (const auto& [name, theta] : cases)
    for (std::uint64_t seed = 0; seed < 8; ++seed)
      for (const char* phi : {"neglog", "greenwood", "xlogx"}) {
        const auto r = test_simple(SortedSample(draw(name, theta, 60, 500 + seed)), *make_model(name), theta,
                                   parse_phi(phi), 1 + static_cast<int>(seed % 3), 0.05);
        EXPECT_GE(r.raw_T, 0.0) << name << " " << phi << " seed " << seed;
      }
}

TEST(Property, AffinePhiInvariance) {
  // With m dividing n + 1 the spacings sum to one, so phi(x) + a x + c shifts
  // S by a constant and the test is unchanged.
  const auto model = make_model("exp");
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const SortedSample s(draw("exp", {1.0}, 159, 700 + seed));
    for (int m : {1, 2, 4}) {
      const auto a = test_simple(s, *model, Params{1.0}, make_neglog(), m, 0.05);
      const auto b = test_simple(s, *model, Params{1.0}, make_neglog_affine(), m, 0.05);
      EXPECT_NEAR(a.T_tilde, b.T_tilde, 1e-7 * (1 + a.T_tilde)) << m;
      EXPECT_NEAR(a.estimate[0], b.estimate[0], 1e-6);
    }
  }
}
