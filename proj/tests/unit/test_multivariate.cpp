#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "spacings/multivariate.hpp"
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

PointSet draw_points(const std::string& model, const Params& theta, std::size_t n, std::uint64_t seed) {
  RandomStream rng(seed, 0, StreamTag("data"));
  const auto m = make_model(model);
  return PointSet(sample(*m, theta, n, rng), m->obs_dim());
}

// Volume of the intersection of two 3-balls (classic lens formula).
double sphere_lens(double r1, double r2, double d) {
  const double pi = std::numbers::pi;
  return pi * std::pow(r1 + r2 - d, 2) *
         (d * d + 2 * d * r2 - 3 * r2 * r2 + 2 * d * r1 + 6 * r1 * r2 - 3 * r1 * r1) / (12 * d);
}

}  // namespace

TEST(NearestNeighbour, HandExample) {
  const PointSet pts({0.0, 0.0, 3.0, 0.0, 3.0, 1.0, 10.0, 10.0}, 2);
  const auto g = nn_distances(pts);
  EXPECT_EQ(g.neighbor, (std::vector<std::size_t>{1, 2, 1, 2}));
  EXPECT_DOUBLE_EQ(g.radius[0], 3.0);
  EXPECT_DOUBLE_EQ(g.radius[1], 1.0);
  EXPECT_DOUBLE_EQ(g.radius[2], 1.0);
  EXPECT_DOUBLE_EQ(g.radius[3], std::hypot(7.0, 9.0));
}

TEST(NearestNeighbour, SweepEqualsBruteForceOnRandomAndLatticeData) {
  std::mt19937_64 g(17);
  for (int trial = 0; trial < 40; ++trial) {
    const int d = 2 + trial % 2;
    const std::size_t n = 20 + static_cast<std::size_t>(trial) * 7;
    std::vector<double> coords(n * d);
    if (trial % 3 == 0) {
      // Distinct points of an integer grid: many exact distance ties.
      std::vector<std::size_t> cells(n * 4);
      std::iota(cells.begin(), cells.end(), 0);
      std::shuffle(cells.begin(), cells.end(), g);
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t c = cells[i];
        for (int k = 0; k < d; ++k) {
          coords[i * d + k] = static_cast<double>(c % 5);
          c /= 5;
        }
        coords[i * d] += static_cast<double>(c) * 5.0;
      }
    } else {
      for (auto& v : coords) v = std::normal_distribution<double>()(g);
    }
    const PointSet pts(coords, d);
    const auto a = nn_distances(pts, NnMethod::sweep);
    const auto b = nn_distances(pts, NnMethod::brute_force);
    EXPECT_EQ(a.neighbor, b.neighbor) << "trial " << trial;
    EXPECT_EQ(a.radius, b.radius) << "trial " << trial;
  }
}

TEST(NearestNeighbour, DuplicatePointsAreDegenerate) {
  const PointSet pts({0.0, 0.0, 1.0, 1.0, 0.0, 0.0}, 2);
  EXPECT_EQ(kind_of([&] { nn_distances(pts); }), ErrorKind::degenerate_geometry);
}

TEST(Xi, ExactAreasUnderUnitSquareModel) {
  const support::ShiftedUnitSquareModel sq;
  const PointSet pts({0.5, 0.5, 0.5, 0.7, 0.1, 0.1}, 2);
  const auto g = nn_distances(pts);
  const auto xi = xi_values(pts, g, sq, Params{0.0, 0.0});
  const double pi = std::numbers::pi;
  EXPECT_NEAR(xi.values[0], 3.0 * pi * 0.04, 1e-13);
  EXPECT_NEAR(xi.values[1], 3.0 * pi * 0.04, 1e-13);
  // Third point: radius sqrt(0.32) clipped by two edges of the square.
  const double r = std::sqrt(0.32);
  EXPECT_NEAR(xi.values[2], 3.0 * support::disk_rectangle_area(0.1, 0.1, r, 0, 1, 0, 1), 1e-13);
  EXPECT_LT(xi.values[2], 3.0 * pi * 0.32);
}

TEST(Xi, UnitSquareModelCannotBeEstimated) {
  const support::ShiftedUnitSquareModel sq;
  const PointSet pts({0.5, 0.5, 0.5, 0.7, 0.1, 0.1}, 2);
  EXPECT_EQ(kind_of([&] { mv_estimate_gse(pts, sq, make_neglog(), Params{0.0, 0.0}); }), ErrorKind::capability);
}

TEST(Xi, DimensionMismatch) {
  const PointSet pts({0.0, 1.0, 2.0}, 1);
  EXPECT_EQ(kind_of([&] { MvObjective(pts, *make_model("bvn-mean"), make_neglog()); }), ErrorKind::data);
}

TEST(BallGeometry, PlanarLensAndLimits) {
  const double pi = std::numbers::pi;
  // Two unit disks at distance 1: 2 pi/3 - sqrt(3)/2.
  EXPECT_NEAR(ball_intersection_volume(pi, pi, 1.0, 2), 2 * pi / 3 - std::sqrt(3.0) / 2, 1e-14);
  EXPECT_DOUBLE_EQ(ball_intersection_volume(1.0, 2.0, 0.0, 2), 1.0);
  EXPECT_DOUBLE_EQ(ball_intersection_volume(1.0, 2.0, 5.0, 2), 0.0);
  EXPECT_DOUBLE_EQ(ball_intersection_volume(0.0, 2.0, 0.1, 2), 0.0);
}

TEST(BallGeometry, ThreeDimensionalCapsMatchLensFormula) {
  for (double d : {0.3, 1.0, 1.7}) {
    const double r1 = 1.0, r2 = 0.8;
    const double v1 = unit_ball_volume(3) * r1 * r1 * r1, v2 = unit_ball_volume(3) * r2 * r2 * r2;
    EXPECT_NEAR(ball_intersection_volume(v2, v1, d, 3), sphere_lens(r1, r2, d), 1e-12) << d;
  }
}

TEST(BallGeometry, OneDimensionalOverlap) {
  // Intervals of length 2 and 1 (radii 1 and 0.5) at distance 1.2: overlap 0.3.
  EXPECT_NEAR(ball_intersection_volume(1.0, 2.0, 1.2, 1), 0.3, 1e-14);
}

TEST(Kernel, ClosedFormAtZero) {
  for (double t : {0.1, 1.0, 2.0, 7.5}) EXPECT_NEAR(kernel_k(0.0, t), (1.0 - t) * std::exp(-t), 1e-15);
  EXPECT_NEAR(kernel_k(0.0, 2.0), -0.1353352832366127, 1e-15);
}

TEST(Kernel, SymmetricAndFrozenValue) {
  EXPECT_DOUBLE_EQ(kernel_k(0.5, 1.0), kernel_k(1.0, 0.5));
  // Frozen; independently confirmed against a torus Poisson simulation (about 0.182 +- 0.003).
  EXPECT_NEAR(kernel_k(0.5, 1.0), 0.1800201285, 1e-9);
  EXPECT_NEAR(kernel_k(0.5, 1.0, 2, 64), kernel_k(0.5, 1.0, 2, 32), 1e-12);
  EXPECT_LT(std::abs(kernel_k(1.0, 50.0)), 1e-18);
}

TEST(Kernel, RejectsBadArguments) {
  EXPECT_EQ(kind_of([] { kernel_k(-1.0, 1.0); }), ErrorKind::domain);
  EXPECT_EQ(kind_of([] { kernel_k(1.0, std::nan("")); }), ErrorKind::domain);
}

TEST(SigmaQ, NeglogIsExactlyOne) {
  const auto s = sigma_q_squared(make_neglog());
  EXPECT_NEAR(s.value, 1.0, 1e-12);
  EXPECT_LE(s.relative_change, 1e-12);
}

TEST(SigmaQ, NeglogAffineFrozenAndStable) {
  const auto s = sigma_q_squared(make_neglog_affine());
  EXPECT_NEAR(s.value, 1.8434356093, 1e-8);
  EXPECT_LT(s.relative_change, 1e-6);
  EXPECT_NEAR(s.coarse, s.value, 1e-4 * s.value);
}

TEST(SigmaQ, UnsupportedAndTightTolerance) {
  EXPECT_EQ(kind_of([] { sigma_q_squared(make_phi_gamma(-2.0)); }), ErrorKind::unsupported_phi);
  SigmaQOptions o;
  o.levels = 4;
  o.nodes_per_panel = 2;
  o.shell_nodes = 2;
  o.tolerance = 1e-15;
  try {
    sigma_q_squared(make_neglog_affine(), 2, o);
    FAIL() << "expected AccuracyError";
  } catch (const AccuracyError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::accuracy);
  }
}

TEST(MvTest, CalibrationFormula) {
  const auto pts = draw_points("bvn-mean", {0.0, 0.0}, 100, 3);
  const auto phi = make_neglog_affine();
  const auto r = mv_test_simple(pts, *make_model("bvn-mean"), Params{0.0, 0.0}, phi, 0.05);
  const double sq = sigma_q_squared(phi).value;
  EXPECT_NEAR(r.T_tilde, 2.0 * 100 * 1.0 / sq * r.raw_T, 1e-10);
  EXPECT_EQ(r.df, 2);
  EXPECT_EQ(*r.dimension, 2);
  EXPECT_NEAR(*r.sigma_q2, sq, 0.0);
  EXPECT_GE(r.raw_T, 0.0);
}

TEST(MvTest, DetectsShiftedMean) {
  const auto pts = draw_points("bvn-mean", {0.8, 0.8}, 200, 4);
  const auto r = mv_test_simple(pts, *make_model("bvn-mean"), Params{0.0, 0.0}, make_neglog_affine(), 0.05);
  EXPECT_TRUE(r.reject);
}

TEST(MvTest, FullRankCompositeEqualsSimple) {
  const auto pts = draw_points("bvn-mean", {0.0, 0.0}, 60, 5);
  AffineConstraint con;
  con.A = Eigen::MatrixXd::Identity(2, 2);
  con.c = Eigen::Vector2d(0.1, -0.1);
  const auto model = make_model("bvn-mean");
  const auto a = mv_test_composite(pts, *model, con, make_neglog_affine(), 0.05);
  const auto b = mv_test_simple(pts, *model, Params{0.1, -0.1}, make_neglog_affine(), 0.05);
  EXPECT_DOUBLE_EQ(a.T_tilde, b.T_tilde);
}

TEST(MvTest, ConstrainedCorrelationMixture) {
  const auto pts = draw_points("bvn-corr-mix", {0.0, 0.0, 0.5}, 120, 6);
  AffineConstraint con;
  con.A.resize(1, 3);
  con.A << 1.0, -1.0, 0.0;
  con.c.resize(1);
  con.c << 0.0;
  const auto r = mv_test_composite(pts, *make_model("bvn-corr-mix"), con, make_neglog_affine(), 0.05,
                                   Params{0.0, 0.0, 0.3});
  ASSERT_TRUE(r.restricted_estimate);
  EXPECT_NEAR((*r.restricted_estimate)[0], (*r.restricted_estimate)[1], 1e-10);
  EXPECT_GE(r.raw_T, 0.0);
  EXPECT_EQ(r.df, 1);
}

TEST(MvTest, LocalNoncentrality) {
  const double sq = sigma_q_squared(make_neglog_affine()).value;
  EXPECT_NEAR(mv_local_noncentrality(*make_model("bvn-mean"), Params{0.0, 0.0}, Params{1.0, 1.0}, make_neglog_affine()),
              2.0 / sq, 1e-8);
}

TEST(Property, MultivariatePermutationInvariance) {
  const auto pts = draw_points("bvn-mean", {0.0, 0.0}, 80, 8);
  const auto model = make_model("bvn-mean");
  const auto base = mv_test_simple(pts, *model, Params{0.0, 0.0}, make_neglog_affine(), 0.05);
  std::vector<std::size_t> order(pts.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937 g(3);
  std::shuffle(order.begin(), order.end(), g);
  std::vector<double> shuffled;
  for (std::size_t i : order) shuffled.insert(shuffled.end(), pts.point(i).begin(), pts.point(i).end());
  const auto r = mv_test_simple(PointSet(shuffled, 2), *model, Params{0.0, 0.0}, make_neglog_affine(), 0.05);
  EXPECT_NEAR(r.T_tilde, base.T_tilde, 1e-10 * (1 + base.T_tilde));
}

TEST(Property, MultivariateAffinePhiInvariance) {
  // xi sums are not fixed, so only the neglog / neglog-affine statistic
  // levels differ by mean(xi) - 1; the estimate moves. Check the objective
  // relation directly.
  const auto pts = draw_points("bvn-mean", {0.0, 0.0}, 50, 9);
  const auto model = make_model("bvn-mean");
  const auto neglog = make_neglog();
  const auto affine = make_neglog_affine();
  const MvObjective a(pts, *model, neglog), b(pts, *model, affine);
  for (const Params& t : {Params{0.0, 0.0}, Params{0.3, -0.2}}) {
    const auto xi = a.xi(t);
    double mean = 0.0;
    for (double v : xi.values) mean += v;
    mean /= static_cast<double>(xi.values.size());
    EXPECT_NEAR(b(t), a(t) + mean - 1.0, 1e-12);
  }
}
