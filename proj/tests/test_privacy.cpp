#include <gtest/gtest.h>

#include <cmath>

#include "fishmech/predictors.hpp"
#include "fishmech/privacy.hpp"
#include "test_util.hpp"

using namespace fishmech;

namespace {

AdjacencySet unit_delta(int d) {
  Matrix m = Matrix::Zero(1, d);
  m(0, 0) = 1.0;
  return AdjacencySet(m, "unit");
}

}  // namespace

TEST(Rdp, IdentityExampleAndGridMinimum) {
  const auto acc = rdp_account(PsdMatrix::identity(3), unit_delta(3));
  EXPECT_EQ(acc.worst_signal.value, 1.0);
  for (double a : acc.alpha_grid) EXPECT_EQ(acc.eps_alpha(a).value, a / 2);
  const auto e = eps_of_delta(acc, 1e-6);
  EXPECT_EQ(e.alpha, 8.0);
  EXPECT_NEAR(e.eps.value, 4.0 + std::log(1e6) / 7.0, 1e-12);
  EXPECT_NEAR(e.eps.value, 5.9736, 1e-4);
  // Brute-force oracle over the grid.
  double best = INFINITY;
  for (double a : {2, 4, 8, 16, 32, 64, 128}) best = std::min(best, a / 2 + std::log(1e6) / (a - 1));
  EXPECT_NEAR(e.eps.value, best, 1e-14);

  const auto recs = account_records(acc, 1e-6);
  ASSERT_EQ(recs.size(), 7u);
  for (const auto& r : recs) EXPECT_EQ(r.argmin_alpha, 8.0);
  EXPECT_NEAR(renyi_epsilon(PsdMatrix::identity(3), unit_delta(3), 3.0).value, 1.5, 1e-15);
  EXPECT_THROW(eps_of_delta(acc, 1.0), InputError);
  EXPECT_THROW(rdp_account(PsdMatrix::identity(3), unit_delta(3), {1.0}), InputError);
}

TEST(Rdp, ScalingAndSingular) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const int d = 2 + t % 8;
    const Matrix s = testutil::random_psd(d, rng);
    const AdjacencySet a(testutil::gaussian(5, d, rng));
    const double w = worst_signal(PsdMatrix(s), a).value;
    EXPECT_NEAR(worst_signal(PsdMatrix(Matrix(3.0 * s)), a).value, w / 3.0, 1e-10 * w);
    // Direct oracle through a dense solve.
    double oracle = 0.0;
    for (int i = 0; i < 5; ++i) {
      const Vector x = a.deltas.row(i).transpose();
      oracle = std::max(oracle, x.dot(s.ldlt().solve(x)));
    }
    EXPECT_NEAR(w, oracle, 1e-8 * oracle);
  }
  Matrix sing = Matrix::Identity(3, 3);
  sing(0, 0) = 0.0;
  EXPECT_TRUE(worst_signal(PsdMatrix(sing), unit_delta(3)).infinite);
  const auto acc = rdp_account(PsdMatrix(sing), unit_delta(3));
  EXPECT_TRUE(eps_of_delta(acc, 1e-5).eps.infinite);
  Matrix inrange = Matrix::Zero(1, 3);
  inrange(0, 1) = 2.0;
  EXPECT_NEAR(worst_signal(PsdMatrix(sing), AdjacencySet(inrange)).value, 4.0, 1e-12);
  EXPECT_THROW(AdjacencySet(Matrix::Zero(2, 3)), InputError);
}

TEST(Rdp, FisherBallParametricMatchesSampledSet) {
  const Matrix f = (Matrix(2, 2) << 2.0, 0.5, 0.5, 1.0).finished();
  const Matrix s = (Matrix(2, 2) << 0.7, -0.2, -0.2, 0.4).finished();
  const double rho = 1.3;
  // Boundary of {x : x^T F x <= rho^2} via x = rho F^{-1/2} u, |u| = 1.
  Eigen::SelfAdjointEigenSolver<Matrix> es(f);
  const Matrix f_inv_half = es.eigenvectors() * es.eigenvalues().cwiseInverse().cwiseSqrt().asDiagonal() *
                            es.eigenvectors().transpose();
  const int m = 20000;
  Matrix pts(m, 2);
  for (int i = 0; i < m; ++i) {
    const double th = 2.0 * M_PI * i / m;
    pts.row(i) = (rho * f_inv_half * Eigen::Vector2d(std::cos(th), std::sin(th))).transpose();
  }
  const double sampled = worst_signal(PsdMatrix(s), AdjacencySet(pts)).value;
  const double param = fisher_ball_worst(PsdMatrix(s), PsdMatrix(f), rho).value;
  EXPECT_LE(sampled, param * (1 + 1e-12));
  EXPECT_NEAR(sampled / param, 1.0, 1e-6);
}

TEST(Calibrate, RoundTripAndErrors) {
  const AdjacencySet u = unit_delta(3);
  const double target = eps_of_delta(rdp_account(PsdMatrix::identity(3), u), 1e-6).eps.value;
  EXPECT_NEAR(matched_eps_calibrate(PsdMatrix::identity(3), u, target, 1e-6), 1.0, 1e-6);

  Rng rng(8);
  for (int t = 0; t < 100; ++t) {
    const int d = 2 + t % 10;
    const PsdMatrix base(testutil::random_psd(d, rng));
    const AdjacencySet a(testutil::gaussian(4, d, rng));
    const double tgt = 1.0 + 0.1 * t;
    const double c = matched_eps_calibrate(base, a, tgt, 1e-5);
    const double got = eps_of_delta(rdp_account(base.scaled(c), a), 1e-5).eps.value;
    EXPECT_NEAR(got / tgt, 1.0, 1e-6);
  }

  // Within a fixed argmin-alpha regime eps - ln(1/delta)/(alpha-1) ~ 1/c.
  const double c1 = matched_eps_calibrate(PsdMatrix::identity(3), u, 8.0, 1e-6);
  const double c2 = matched_eps_calibrate(PsdMatrix::identity(3), u, 16.0, 1e-6);
  EXPECT_LT(c2, c1);

  Matrix sing = Matrix::Identity(3, 3);
  sing(0, 0) = 0.0;
  EXPECT_THROW(matched_eps_calibrate(PsdMatrix(sing), u, 1.0, 1e-6), CalibrationError);
  EXPECT_THROW(matched_eps_calibrate(PsdMatrix::identity(3), u, 0.0, 1e-6), CalibrationError);
  EXPECT_THROW(matched_eps_calibrate(PsdMatrix::identity(3), u, INFINITY, 1e-6), CalibrationError);
  // Below the smallest achievable ln(1/delta)/(alpha-1).
  EXPECT_THROW(matched_eps_calibrate(PsdMatrix::identity(3), u, 0.05, 1e-6), CalibrationError);
}

TEST(Sensitivity, ContractionAndGaussianSigma) {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const int d = 3 + t % 6;
    const AdjacencySet a(testutil::gaussian(7, d, rng));
    EXPECT_NEAR(projected_sensitivity(a, Matrix::Identity(d, d)), sensitivity(a), 1e-12);
    EXPECT_EQ(projected_sensitivity(a, Matrix::Zero(d, d)), 0.0);
    const Matrix q = haar_orthonormal(d, 2, rng);
    EXPECT_LE(projected_sensitivity(a, q * q.transpose()), sensitivity(a) * (1 + 1e-14));
  }
  EXPECT_NEAR(gaussian_mech_sigma(1.0, 1.0, 1e-5), std::sqrt(2.0 * std::log(125000.0)), 1e-12);
  EXPECT_NEAR(gaussian_mech_sigma(1.0, 1.0, 1e-5), 4.8448, 1e-4);
  EXPECT_NEAR(gaussian_mech_sigma(2.0, 1.0, 1e-5), 2.0 * gaussian_mech_sigma(1.0, 1.0, 1e-5), 1e-12);
  EXPECT_THROW(gaussian_mech_sigma(1.0, 1.5, 1e-5), DomainError);
  EXPECT_NEAR(amplification_ratio(0.3, 1.2), 0.25, 1e-15);
  EXPECT_NEAR(gaussian_mech_sigma(0.3, 0.5, 1e-5) / gaussian_mech_sigma(1.2, 0.5, 1e-5), 0.25, 1e-12);
}

TEST(Concentration, ThresholdsAndMonteCarlo) {
  EXPECT_EQ(concentration_k_threshold(10, 0.5, 0.1), 1726u);
  auto c = random_projection_concentration_check(10, 0.5, 0.1, 1000, 100, 10, 1);
  EXPECT_EQ(c.status, ConcentrationCheck::Status::infeasible);
  EXPECT_EQ(c.k_threshold, 1726u);
  c = random_projection_concentration_check(10, 0.5, 0.1, 2000, 100, 10, 1);
  EXPECT_EQ(c.status, ConcentrationCheck::Status::skipped);
  EXPECT_FALSE(c.reason.empty());
  c = random_projection_concentration_check(10, 0.5, 0.1, 2000, 1800, 20, 1);
  EXPECT_EQ(c.status, ConcentrationCheck::Status::passed);
  EXPECT_LE(c.violation_rate, c.tolerance);
  EXPECT_GT(c.min_ratio, 0.5);
  EXPECT_LT(c.max_ratio, 1.5);
}

TEST(Quotient, FormulaLimitsAndMonotonicity) {
  const auto b = quotient_bounds(16, 2.0, 16.0, 1.0, std::log(50000.0));
  EXPECT_NEAR(b.mi_bound, 8.0 * std::log(2.0), 1e-12);
  EXPECT_NEAR(b.mi_bound, 5.545, 1e-3);
  EXPECT_NEAR(b.fano_lower, 1.0 - (b.mi_bound + std::log(2.0)) / std::log(50000.0), 1e-12);
  EXPECT_NEAR(b.fano_lower, 0.4235, 1e-4);
  EXPECT_NEAR(b.kl_cost, 1.0, 1e-15);

  const auto far = quotient_bounds(16, 2.0, 16.0, 1e12, std::log(50000.0));
  EXPECT_LT(far.mi_bound, 1e-9);
  EXPECT_NEAR(far.fano_lower, 1.0 - std::log(2.0) / std::log(50000.0), 1e-9);

  EXPECT_EQ(quotient_bounds(4, 1.0, 1e6, 1e-3, 1.0).fano_lower, 0.0);
  double prev = INFINITY;
  for (double s2 : {0.01, 0.1, 1.0, 10.0}) {
    const auto q = quotient_bounds(8, 1.0, 4.0, s2, 3.0);
    EXPECT_LT(q.mi_bound, prev);
    EXPECT_GE(q.fano_lower, 0.0);
    EXPECT_LE(q.fano_lower, 1.0);
    prev = q.mi_bound;
  }
}
