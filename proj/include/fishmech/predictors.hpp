#pragma once

// Closed-form gains and bounds: Euclidean / Mahalanobis gains, the
// fidelity identity, projector separation, Fisher-ball worst case, Bayes
// error, floor asymptotics, nullspace feasibility and block-model corollaries.

#include <algorithm>
#include <cmath>
#include <map>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"
#include "linalg.hpp"
#include "mechanisms.hpp"
#include "numeric.hpp"

namespace fishmech {

struct EuclideanGain {
  double g1 = 0.0;
  double gk = 0.0;
  double lambda_bar = 0.0;
};

/// G_Euc,1 = lambda_1 / lambda_bar and G_Euc,k = mean(lambda_1..k) / lambda_bar,
/// lambda_i the generalized eigenvalues of (Sigma_delta, F_lambda) and
/// lambda_bar = tr(Sigma_delta)/tr(F_lambda).
inline EuclideanGain g_euc(const GeometrySpec& g, std::size_t k, std::optional<double> ridge = std::nullopt) {
  check_rank(g, k);
  const double lam = Ridges{ridge.value_or(0.0), 0.0}.fisher_for(g);
  const auto pairs = linalg::generalized_eigenpairs(g.margin_cov, g.fisher, lam);
  EuclideanGain out;
  out.lambda_bar = g.margin_cov.trace() / (g.fisher.trace() + lam * static_cast<double>(g.dim()));
  out.g1 = pairs.values(0) / out.lambda_bar;
  out.gk = pairs.values.head(static_cast<Eigen::Index>(k)).mean() / out.lambda_bar;
  return out;
}

/// Ridged matrices used by the Mahalanobis predictors. Predictors default to
/// no ridge: G_Mah needs no inverse, and a ridge would perturb exact cases.
struct RidgedPair {
  PsdMatrix f;
  PsdMatrix s;
};

inline RidgedPair ridged_pair(const GeometrySpec& g, const Ridges& ridges) {
  return {g.fisher.plus_ridge(ridges.fisher_for(g)), g.margin_cov.plus_ridge(ridges.margin_for(g))};
}

/// G_Mah = tr(F_l) tr(S_r) / [tr C^{1/2}]^2.
inline double g_mah(const GeometrySpec& g, const Ridges& ridges = Ridges::none()) {
  const RidgedPair p = ridged_pair(g, ridges);
  const double t = linalg::trace_sqrt_sandwich(p.f, p.s);
  if (!(t > 0.0)) throw DomainError("G_Mah undefined: F and margin covariance have orthogonal supports");
  return p.f.trace() * p.s.trace() / (t * t);
}

/// Fidelity of the trace-normalized ridged pair.
inline double fidelity(const GeometrySpec& g, const Ridges& ridges = Ridges::none()) {
  const RidgedPair p = ridged_pair(g, ridges);
  return linalg::matrix_fidelity(p.f.normalized(), p.s.normalized());
}

/// 1 / F(rho_F, rho_S)^2.
inline double g_mah_via_fidelity(const GeometrySpec& g, const Ridges& ridges = Ridges::none()) {
  const double f = fidelity(g, ridges);
  if (!(f > 0.0)) throw DomainError("G_Mah undefined: zero fidelity");
  return 1.0 / (f * f);
}

/// Lower bound 1/(sqrt(E q) + sqrt((1-E)(1-q)))^2; unbounded when the
/// denominator vanishes.
inline ExtendedReal projector_separation_bound(double e_k, double q_b) {
  for (double x : {e_k, q_b}) {
    if (!(x >= -1e-12 && x <= 1.0 + 1e-12)) throw DomainError("projector bound needs E_k, q_B in [0, 1]");
  }
  const double e = std::clamp(e_k, 0.0, 1.0);
  const double q = std::clamp(q_b, 0.0, 1.0);
  const double den = std::sqrt(e * q) + std::sqrt((1.0 - e) * (1.0 - q));
  if (den <= 0.0) return ExtendedReal::inf();
  return ExtendedReal::finite(1.0 / (den * den));
}

struct GainReport {
  double g_euc_1 = 0.0;
  double g_euc_k = 0.0;
  double g_mah = 0.0;
  double fidelity = 0.0;
  ExtendedReal projector_bound;
  double lambda_bar = 0.0;
  double e_k = 0.0;
  double q_b = 0.0;
  std::size_t k = 0;
  double euc_ridge = 0.0;  // Fisher ridge actually used for the Euclidean gains
};

/// All gains at rank k. E_k and q_B are taken on the same ridged matrices as
/// G_Mah so the projector-separation inequality compares like with like.
inline GainReport gain_report(const GeometrySpec& g, std::size_t k, const Ridges& ridges = Ridges::none()) {
  check_rank(g, k);
  GainReport r;
  r.k = k;
  // Euclidean gains whiten by F_lambda, so a singular F without a requested
  // ridge falls back to the default one instead of failing the whole report.
  r.euc_ridge = ridges.fisher_for(g);
  if (r.euc_ridge == 0.0 && g.fisher.singular()) r.euc_ridge = Ridges{}.fisher_for(g);
  const EuclideanGain eu = g_euc(g, k, r.euc_ridge);
  r.g_euc_1 = eu.g1;
  r.g_euc_k = eu.gk;
  r.lambda_bar = eu.lambda_bar;
  const RidgedPair p = ridged_pair(g, ridges);
  const GeometrySpec rg(p.f, p.s, g.label, g.seed);
  r.g_mah = g_mah(rg);
  r.fidelity = linalg::matrix_fidelity(p.f.normalized(), p.s.normalized());
  r.e_k = fisher_concentration(rg, k);
  r.q_b = q_b(rg, build_projectors(rg, k));
  r.projector_bound = projector_separation_bound(r.e_k, r.q_b);
  return r;
}

/// sup over the Fisher ball {Delta^T F_l Delta <= rho^2} of Delta^T Sigma^{-1} Delta,
/// = rho^2 / lambda_min(F_l^{1/2} Sigma F_l^{1/2}). Unbounded for singular Sigma.
inline ExtendedReal fisher_ball_worst(const PsdMatrix& sigma, const PsdMatrix& f_lambda, double rho) {
  if (sigma.dim() != f_lambda.dim()) throw InputError("fisher_ball_worst: dimension mismatch");
  const Matrix f_half = linalg::psd_sqrt(f_lambda).matrix();
  const auto e = linalg::detail::eigh(linalg::detail::symmetrized(f_half * sigma.matrix() * f_half));
  const double lo = e.values(e.values.size() - 1);
  if (lo <= linalg::kSingularTol * e.values(0)) return ExtendedReal::inf();
  return ExtendedReal::finite(rho * rho / lo);
}

struct BayesError {
  double bound = 0.0;  // exp(-m^2/8)
  double exact = 0.0;  // Phi(-sqrt(m^2)/2)
};

inline BayesError bayes_error_bound(double m2) {
  if (!(m2 >= 0.0)) throw DomainError("Mahalanobis signal must be >= 0");
  return {std::exp(-m2 / 8.0), normal_cdf(-0.5 * std::sqrt(m2))};
}

struct FloorAsymptotic {
  double exact = 0.0;    // delta^T (Sigma + eta I)^{-1} delta
  double leading = 0.0;  // ||P_0 delta||^2 / eta
};

inline FloorAsymptotic floor_asymptotic(const PsdMatrix& sigma, const Vector& delta, double eta) {
  if (!(eta > 0.0)) throw DomainError("floor eta must be > 0");
  if (delta.size() != static_cast<Eigen::Index>(sigma.dim())) throw InputError("floor_asymptotic: dimension mismatch");
  const auto& e = sigma.eigen();
  const Vector coords = e.vectors.transpose() * delta;
  FloorAsymptotic out;
  out.exact = (coords.array().square() / (e.values.array() + eta)).sum();
  const Matrix null = linalg::psd_nullspace(sigma);
  out.leading = null.cols() == 0 ? 0.0 : (null.transpose() * delta).squaredNorm() / eta;
  return out;
}

struct NullspaceFeasibility {
  bool feasible = false;
  double recovered_fraction = 0.0;
  std::size_t nullspace_dim = 0;
};

/// The release of bank row i has the exact nullspace coordinates P_0 x_i, so
/// row i is recovered iff no other row shares them. Rows are compared at a
/// tolerance relative to the bank's projected scale.
inline NullspaceFeasibility nullspace_attack_feasible(const PsdMatrix& sigma, const Matrix& states,
                                                      double rel_tol = 1e-9) {
  if (states.cols() != static_cast<Eigen::Index>(sigma.dim())) throw InputError("bank dimension mismatch");
  NullspaceFeasibility out;
  const Matrix null = linalg::psd_nullspace(sigma);
  out.nullspace_dim = static_cast<std::size_t>(null.cols());
  if (null.cols() == 0) return out;
  out.feasible = true;
  const Matrix proj = states * null;  // N x n0
  const double scale = std::max(proj.cwiseAbs().maxCoeff(), 1e-300);
  const double tol2 = std::pow(rel_tol * scale, 2);
  const Eigen::Index n = proj.rows();
  std::size_t unique = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    bool clash = false;
    for (Eigen::Index j = 0; j < n && !clash; ++j) {
      if (j != i && (proj.row(i) - proj.row(j)).squaredNorm() <= tol2) clash = true;
    }
    if (!clash) ++unique;
  }
  out.recovered_fraction = static_cast<double>(unique) / static_cast<double>(n);
  return out;
}

/// tr(P_B Sigma_delta)/tr(Sigma_delta): the share of margin energy an l2
/// penalty restricted to the behavior subspace can see.
inline double l2_vs_restricted_gap(const GeometrySpec& g, const ProjectorPair& pair) {
  return q_b(g, pair);
}

/// gamma^2 L ||A||_F^2.
inline double small_coupling_trace_bound(double gamma, const Matrix& a, double lipschitz) {
  if (!(lipschitz >= 0.0)) throw DomainError("Lipschitz constant must be >= 0");
  return gamma * gamma * lipschitz * a.squaredNorm();
}

inline double inverse_coupling_product(double q_b, double g_mah) { return q_b * g_mah; }

/// Two coordinates with curvatures L >= l, a trace budget kappa. The
/// worst-case optimum is isotropic; the average-case optimum splits the budget
/// in ratio sqrt(L) : sqrt(l).
struct AvgVsWorst {
  double worst_s1 = 0.0, worst_s2 = 0.0;
  double avg_s1 = 0.0, avg_s2 = 0.0;
};

inline AvgVsWorst avg_vs_worst_example(double big_l, double small_l, double kappa) {
  if (!(big_l > 0.0 && small_l > 0.0 && kappa > 0.0)) throw DomainError("avg-vs-worst needs L, l, kappa > 0");
  AvgVsWorst r;
  r.worst_s1 = r.worst_s2 = kappa / 2.0;
  const double a = std::sqrt(big_l), b = std::sqrt(small_l);
  r.avg_s1 = kappa * a / (a + b);
  r.avg_s2 = kappa * b / (a + b);
  return r;
}

}  // namespace fishmech
