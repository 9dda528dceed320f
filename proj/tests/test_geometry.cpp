#include <gtest/gtest.h>

#include <cmath>

#include "fishmech/geometry.hpp"
#include "test_util.hpp"

using namespace fishmech;

namespace {

Matrix diag(std::initializer_list<double> v) {
  Vector x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double a : v) x(i++) = a;
  return x.asDiagonal();
}

GeometrySpec diag_geom(std::initializer_list<double> f, std::initializer_list<double> s) {
  return GeometrySpec(PsdMatrix(diag(f)), PsdMatrix(diag(s)));
}

GeometrySpec random_geom(int d, Rng& rng) {
  return GeometrySpec(PsdMatrix(testutil::random_psd(d, rng)), PsdMatrix(testutil::random_psd(d, rng)));
}

}  // namespace

TEST(Geometry, RejectsMismatchedOrZeroTrace) {
  EXPECT_THROW(GeometrySpec(PsdMatrix(diag({1, 1})), PsdMatrix(diag({1, 1, 1}))), InputError);
  EXPECT_THROW(GeometrySpec(PsdMatrix(diag({0, 0})), PsdMatrix(diag({1, 1}))), InputError);
}

TEST(Concentration, Examples) {
  EXPECT_DOUBLE_EQ(fisher_concentration(diag_geom({8, 4, 2, 1, 1}, {1, 1, 1, 1, 1}), 2), 0.75);
  EXPECT_DOUBLE_EQ(fisher_concentration(diag_geom({0, 3, 0}, {1, 1, 1}), 1), 1.0);
  const GeometrySpec u(PsdMatrix::identity(768), PsdMatrix::identity(768));
  EXPECT_NEAR(fisher_concentration(u, 128), 128.0 / 768.0, 1e-12);
  EXPECT_THROW(fisher_concentration(u, 0), DomainError);
  EXPECT_THROW(fisher_concentration(u, 769), DomainError);
  const auto e = cumulative_energy(diag_geom({8, 4, 2, 1, 1}, {1, 1, 1, 1, 1}));
  EXPECT_EQ(e.back(), 1.0);
  for (std::size_t i = 1; i < e.size(); ++i) EXPECT_GE(e[i], e[i - 1]);
}

TEST(Concentration, R95Interpolation) {
  EXPECT_NEAR(r95_interpolate(0.909, 0.992), 64.0 + 64.0 * 0.041 / 0.083, 1e-12);
  EXPECT_NEAR(r95_interpolate(0.909, 0.992), 95.6, 0.05);
  EXPECT_NEAR(r95_interpolate(0.892, 0.994), 100.4, 0.05);
  EXPECT_NEAR(r95_interpolate(0.94, 0.96), 96.0, 1e-12);
  EXPECT_THROW(r95_interpolate(0.96, 0.99), DomainError);
  EXPECT_THROW(r95_interpolate(0.90, 0.94), DomainError);
}

TEST(Concentration, FixedKReference) {
  EXPECT_EQ(fixed_k_reference(64, 128), 1.0);
  EXPECT_EQ(fixed_k_reference(512, 128), 0.25);
  EXPECT_EQ(fixed_k_reference(128, 128), 1.0);
}

TEST(Projectors, DiagonalAndFullRank) {
  const auto g = diag_geom({3, 2, 1}, {1, 1, 1});
  const auto p = build_projectors(g, 2);
  EXPECT_LE((p.p_b - diag({1, 1, 0})).cwiseAbs().maxCoeff(), 1e-15);
  const auto full = build_projectors(g, 3);
  EXPECT_LE((full.p_b - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LE(full.p_i.cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Projectors, IdempotentAndPythagorean) {
  Rng rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    const int d = 4 + trial;
    const auto g = random_geom(d, rng);
    const auto p = build_projectors(g, static_cast<std::size_t>(d / 2));
    EXPECT_LE((p.p_b * p.p_b - p.p_b).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_NEAR(p.p_b.trace(), d / 2, 1e-6);
    EXPECT_EQ(p.p_b + p.p_i, Matrix::Identity(d, d));
    for (int i = 0; i < 100; ++i) {
      const Vector delta = testutil::gaussian(d, 1, rng);
      const auto m = margin_split(p, delta);
      EXPECT_NEAR((m.behavior_sq + m.identity_sq) / m.total_sq, 1.0, 1e-8);
      EXPECT_NEAR(m.cos2() + m.sin2(), 1.0, 1e-10);
    }
  }
}

TEST(Coupling, IsotropicAndConcentratedMargins) {
  const int d = 8;
  const auto iso = GeometrySpec(PsdMatrix(diag({8, 7, 6, 5, 4, 3, 2, 1})), PsdMatrix(Matrix(Matrix::Identity(d, d) / d)));
  const auto p = build_projectors(iso, 4);
  EXPECT_NEAR(coupling_kappa(iso, p), 1.0, 1e-12);
  EXPECT_NEAR(eps_iso(iso), 0.0, 1e-12);
  const auto inb = GeometrySpec(PsdMatrix(diag({8, 7, 6, 5, 4, 3, 2, 1})), PsdMatrix(diag({1, 2, 3, 4, 0, 0, 0, 0})));
  EXPECT_NEAR(coupling_kappa(inb, p), 2.0, 1e-12);
  EXPECT_NEAR(q_b(inb, p), 1.0, 1e-12);
  EXPECT_NEAR(q_b(inb, p, TraceMode::raw), 10.0, 1e-12);
}

TEST(BlockModel, ExactConstruction) {
  const auto g = block_geometry({10, 2, 0.3});
  const auto p = build_projectors(g, 2);
  EXPECT_EQ(fisher_concentration(g, 2), 1.0);
  EXPECT_NEAR(q_b(g, p), 0.3, 1e-15);
  EXPECT_THROW(block_geometry({10, 11, 0.3}), DomainError);
  EXPECT_THROW(block_geometry({10, 2, 1.3}), DomainError);
  EXPECT_THROW(block_geometry({4, 4, 0.5}), DomainError);
}

TEST(RandomProjection, FormulaExamples) {
  Matrix e = Matrix::Zero(4, 4);
  e(0, 0) = std::sqrt(0.5);
  e(1, 1) = -std::sqrt(0.5);
  const auto s = random_projection_stats(4, 2, SymMatrix(e));
  EXPECT_NEAR(s.mean, 0.5, 1e-15);
  EXPECT_NEAR(s.variance, 8.0 / 72.0, 1e-12);
  EXPECT_NEAR(random_projection_stats(768, 128, SymMatrix(Matrix::Zero(768, 768))).mean, 1.0 / 6.0, 1e-15);
  Matrix bad = Matrix::Identity(4, 4);
  EXPECT_THROW(random_projection_stats(4, 2, SymMatrix(bad)), DomainError);
}

TEST(RandomProjection, MonteCarloMatchesBetaLawAndVariance) {
  const int d = 16, k = 4, draws = 20000;
  Rng rng(97);
  // Fixed traceless perturbation with unit Frobenius norm.
  Matrix e = testutil::random_symmetric(d, rng);
  e -= (e.trace() / d) * Matrix::Identity(d, d);
  e /= e.norm();
  const Matrix s = Matrix::Identity(d, d) / d + 0.05 * e;
  const auto law = random_projection_stats(d, k, SymMatrix(Matrix(0.05 * e)));
  const Vector u = testutil::gaussian(d, 1, rng).normalized();
  double sum_u = 0.0, sum_t = 0.0, sum_t2 = 0.0;
  for (int i = 0; i < draws; ++i) {
    const Matrix p = haar_projector(d, k, rng);
    sum_u += u.dot(p * u);
    const double t = p.cwiseProduct(s).sum();
    sum_t += t;
    sum_t2 += t * t;
  }
  const double mean_u = sum_u / draws;
  // Beta(k/2, (d-k)/2): variance 2 k (d-k) / (d^2 (d+2)).
  const double beta_var = 2.0 * k * (d - k) / (double(d) * d * (d + 2));
  EXPECT_LE(std::abs(mean_u - double(k) / d), 3.0 * std::sqrt(beta_var / draws));
  const double mean_t = sum_t / draws;
  const double var_t = sum_t2 / draws - mean_t * mean_t;
  EXPECT_NEAR(mean_t, law.mean, 1e-3);
  EXPECT_NEAR(var_t / law.variance, 1.0, 0.05);
}

TEST(FixedProjector, BoundHoldsAndSaturates) {
  const int d = 4;
  Matrix e1 = Matrix::Zero(d, d);
  e1(0, 0) = 1.0;
  const GeometrySpec g(PsdMatrix::identity(d), PsdMatrix(e1));
  EXPECT_NEAR(eps_iso(g), 3.0, 1e-12);
  const auto c = fixed_projector_bound(g, SymMatrix(e1));
  EXPECT_NEAR(c.deviation, 0.75, 1e-12);
  EXPECT_NEAR(c.bound, 0.75, 1e-12);
  EXPECT_TRUE(c.holds());

  const GeometrySpec iso(PsdMatrix::identity(d), PsdMatrix(Matrix(Matrix::Identity(d, d) / d)));
  const auto ci = fixed_projector_bound(iso, SymMatrix(e1));
  EXPECT_NEAR(ci.deviation, 0.0, 1e-15);
  EXPECT_NEAR(ci.bound, 0.0, 1e-12);

  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    const auto gr = random_geom(8, rng);
    EXPECT_TRUE(fixed_projector_bound(gr, SymMatrix(haar_projector(8, 3, rng))).holds());
  }
}

TEST(Synth, DeterministicAndConcentrated) {
  SynthRequest req{GeometryKind::concentrated, 96, 1234, {}, {}, {}};
  const auto a = synth_geometry(req);
  const auto b = synth_geometry(req);
  EXPECT_EQ(a.fisher.matrix(), b.fisher.matrix());
  EXPECT_EQ(a.margin_cov.matrix(), b.margin_cov.matrix());
  EXPECT_GE(fisher_concentration(a, 16), 0.99);
  EXPECT_NEAR(a.fisher.trace(), 1.0, 1e-12);
  EXPECT_NEAR(a.margin_cov.trace(), 1.0, 1e-12);

  req.kind = GeometryKind::diffuse;
  const auto dg = synth_geometry(req);
  const double e16 = fisher_concentration(dg, 16);
  EXPECT_GT(e16, 16.0 / 96.0);
  EXPECT_LT(e16, 16.0 / 96.0 + 0.05);

  req.seed = 1235;
  req.kind = GeometryKind::concentrated;
  EXPECT_NE(synth_geometry(req).fisher.matrix(), a.fisher.matrix());
}

TEST(Synth, CustomAndBlock) {
  SynthRequest req{GeometryKind::custom, 4, 9, {}, {1, 4, 2, 3}, {}};
  const auto g = synth_geometry(req);
  const auto& ev = g.fisher.eigen().values;
  EXPECT_NEAR(ev(0), 0.4, 1e-12);
  EXPECT_NEAR(ev(3), 0.1, 1e-12);
  EXPECT_NEAR(eps_iso(g), 0.0, 1e-12);
  req.fisher_spectrum = {1, 2};
  EXPECT_THROW(synth_geometry(req), InputError);
  EXPECT_THROW(parse_geometry_kind("spiky"), ConfigError);

  SynthRequest b{GeometryKind::block, 10, 7, {0, 2, 0.1}, {}, {}};
  const auto bg = synth_geometry(b);
  EXPECT_EQ(bg.dim(), 10u);
  EXPECT_NEAR(q_b(bg, build_projectors(bg, 2)), 0.1, 1e-15);
}
