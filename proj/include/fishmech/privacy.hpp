#pragma once

// Empirical Renyi-DP accounting over adjacency sets, (eps, delta) conversion,
// matched-eps calibration, projection sensitivity and quotient-release bounds.
// Natural logarithms throughout.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"
#include "linalg.hpp"
#include "numeric.hpp"
#include "rng.hpp"

namespace fishmech {

struct AdjacencySet {
  Matrix deltas;  // M x d
  std::string label;

  AdjacencySet(Matrix m, std::string lbl = {}) : deltas(std::move(m)), label(std::move(lbl)) {
    if (deltas.rows() < 1 || deltas.cols() < 1) throw InputError("adjacency set needs at least one row");
    if (!deltas.allFinite()) throw InputError("adjacency set has non-finite entries");
    if (deltas.cwiseAbs().maxCoeff() == 0.0) throw InputError("adjacency set has no nonzero difference");
  }

  std::size_t size() const { return static_cast<std::size_t>(deltas.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(deltas.cols()); }
};

/// sup_Delta Delta^T Sigma^{-1} Delta; infinite when some Delta leaves the
/// range of a singular Sigma.
inline ExtendedReal worst_signal(const PsdMatrix& sigma, const AdjacencySet& a) {
  if (a.dim() != sigma.dim()) throw InputError("adjacency set and covariance dimensions differ");
  const auto& e = sigma.eigen();
  const double cut = linalg::kPsdTol * e.values(0);
  const Matrix coords = a.deltas * e.vectors;  // M x d, eigen coordinates
  double worst = 0.0;
  for (Eigen::Index i = 0; i < coords.rows(); ++i) {
    const double scale = a.deltas.row(i).squaredNorm();
    double s = 0.0;
    for (Eigen::Index j = 0; j < coords.cols(); ++j) {
      const double c2 = coords(i, j) * coords(i, j);
      if (e.values(j) > cut && e.values(j) > 0.0) {
        s += c2 / e.values(j);
      } else if (c2 > 1e-20 * scale) {
        return ExtendedReal::inf();
      }
    }
    worst = std::max(worst, s);
  }
  return ExtendedReal::finite(worst);
}

inline const std::vector<double>& default_alpha_grid() {
  static const std::vector<double> grid{2, 4, 8, 16, 32, 64, 128};
  return grid;
}

struct RdpAccount {
  std::vector<double> alpha_grid;
  ExtendedReal worst_signal;

  /// (alpha/2) * worst signal.
  ExtendedReal eps_alpha(double alpha) const {
    if (worst_signal.infinite) return ExtendedReal::inf();
    return ExtendedReal::finite(0.5 * alpha * worst_signal.value);
  }
};

inline RdpAccount rdp_account(const PsdMatrix& sigma, const AdjacencySet& a,
                              std::vector<double> grid = default_alpha_grid()) {
  if (grid.empty()) throw InputError("alpha grid is empty");
  for (double x : grid) {
    if (!(x > 1.0) || !std::isfinite(x)) throw InputError("alpha values must be finite and > 1");
  }
  std::sort(grid.begin(), grid.end());
  return {std::move(grid), worst_signal(sigma, a)};
}

inline ExtendedReal renyi_epsilon(const PsdMatrix& sigma, const AdjacencySet& a, double alpha) {
  if (!(alpha > 1.0)) throw InputError("alpha must be > 1");
  return rdp_account(sigma, a, {alpha}).eps_alpha(alpha);
}

struct EpsDelta {
  ExtendedReal eps;
  double alpha = 0.0;  // grid argmin (first on ties)
};

/// min over the grid of eps_alpha + ln(1/delta)/(alpha - 1).
inline EpsDelta eps_of_delta(const RdpAccount& acc, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw InputError("delta must be in (0, 1)");
  if (acc.worst_signal.infinite) return {ExtendedReal::inf(), acc.alpha_grid.front()};
  EpsDelta best{ExtendedReal::inf(), acc.alpha_grid.front()};
  for (double alpha : acc.alpha_grid) {
    const double e = acc.eps_alpha(alpha).value + std::log(1.0 / delta) / (alpha - 1.0);
    if (best.eps.infinite || e < best.eps.value) best = {ExtendedReal::finite(e), alpha};
  }
  return best;
}

struct AccountRecord {
  double alpha = 0.0;
  ExtendedReal eps_alpha;
  ExtendedReal eps_at_delta;  // eps_alpha + ln(1/delta)/(alpha-1)
  double argmin_alpha = 0.0;
};

inline std::vector<AccountRecord> account_records(const RdpAccount& acc, double delta) {
  const EpsDelta best = eps_of_delta(acc, delta);
  std::vector<AccountRecord> out;
  for (double alpha : acc.alpha_grid) {
    const ExtendedReal ea = acc.eps_alpha(alpha);
    const ExtendedReal ed =
        ea.infinite ? ExtendedReal::inf() : ExtendedReal::finite(ea.value + std::log(1.0 / delta) / (alpha - 1.0));
    out.push_back({alpha, ea, ed, best.alpha});
  }
  return out;
}

/// Scale c such that eps(c Sigma_base, delta) = target. eps(c) is continuous
/// and strictly decreasing in c, so log-space bisection brackets the root.
inline double matched_eps_calibrate(const PsdMatrix& base, const AdjacencySet& a, double target, double delta,
                                    const std::vector<double>& grid = default_alpha_grid()) {
  if (!(target > 0.0) || !std::isfinite(target)) {
    throw CalibrationError("matched-eps target must be finite and > 0");
  }
  const RdpAccount acc = rdp_account(base, a, grid);
  if (acc.worst_signal.infinite) {
    throw CalibrationError("base covariance is singular along the adjacency set; no scale reaches a finite eps");
  }
  double floor = std::numeric_limits<double>::infinity();
  for (double alpha : acc.alpha_grid) floor = std::min(floor, std::log(1.0 / delta) / (alpha - 1.0));
  if (target <= floor) {
    throw CalibrationError("target eps " + format_real(target) + " is at or below the delta-only floor " +
                           format_real(floor) + " of the alpha grid");
  }
  const double w = acc.worst_signal.value;
  // eps(c) = min_alpha [alpha w / (2c) + ln(1/delta)/(alpha-1)]
  auto eps_at = [&](double c) {
    double best = std::numeric_limits<double>::infinity();
    for (double alpha : acc.alpha_grid)
      best = std::min(best, 0.5 * alpha * w / c + std::log(1.0 / delta) / (alpha - 1.0));
    return best;
  };
  if (w == 0.0) throw CalibrationError("adjacency set carries no signal");
  double lo = 1.0, hi = 1.0;
  while (eps_at(lo) < target) lo *= 0.5;
  while (eps_at(hi) > target) hi *= 2.0;
  for (int it = 0; it < 200 && hi / lo > 1.0 + 1e-14; ++it) {
    const double mid = std::sqrt(lo * hi);
    (eps_at(mid) > target ? lo : hi) = mid;
  }
  return std::sqrt(lo * hi);
}

/// max ||Delta||_2.
inline double sensitivity(const AdjacencySet& a) { return a.deltas.rowwise().norm().maxCoeff(); }

/// max ||P Delta||_2.
inline double projected_sensitivity(const AdjacencySet& a, const Matrix& p) {
  if (p.cols() != static_cast<Eigen::Index>(a.dim())) throw InputError("projector dimension mismatch");
  return (a.deltas * p.transpose()).rowwise().norm().maxCoeff();
}

/// Classical Gaussian mechanism: Delta sqrt(2 ln(1.25/delta)) / eps.
inline double gaussian_mech_sigma(double sens, double eps, double delta) {
  if (!(eps > 0.0 && eps <= 1.0)) throw DomainError("classical Gaussian mechanism needs eps in (0, 1]");
  if (!(delta > 0.0 && delta < 1.0)) throw DomainError("delta must be in (0, 1)");
  if (!(sens >= 0.0)) throw DomainError("sensitivity must be >= 0");
  return sens * std::sqrt(2.0 * std::log(1.25 / delta)) / eps;
}

/// sigma_B / sigma_full = Delta_B / Delta.
inline double amplification_ratio(double sens_projected, double sens_full) {
  if (!(sens_full > 0.0)) throw DomainError("full sensitivity must be > 0");
  return sens_projected / sens_full;
}

struct ConcentrationCheck {
  enum class Status { passed, failed, skipped, infeasible } status = Status::skipped;
  std::size_t k_threshold = 0;
  std::string reason;
  double violation_rate = 0.0;   // over (draw, vector) pairs
  double tolerance = 0.0;        // eta + 3 binomial SE
  double min_ratio = 0.0;        // min ||P v||^2 / ((k/d)||v||^2)
  double max_ratio = 0.0;
};

inline std::size_t concentration_k_threshold(std::size_t n, double rho, double eta) {
  return static_cast<std::size_t>(std::ceil(72.0 * std::log(4.0 * static_cast<double>(n) / eta) / (rho * rho)));
}

/// Monte-Carlo check that a Haar rank-k projector keeps ||P v||^2 within
/// (1 +- rho)(k/d)||v||^2 for N fixed vectors, with failure rate <= eta, when
/// k meets the threshold 72 ln(4N/eta)/rho^2.
inline ConcentrationCheck random_projection_concentration_check(std::size_t n, double rho, double eta,
                                                                std::size_t d, std::size_t k, std::size_t draws,
                                                                std::uint64_t seed) {
  if (!(rho > 0.0 && rho < 1.0) || !(eta > 0.0 && eta < 1.0)) throw DomainError("need rho, eta in (0, 1)");
  if (n < 1 || k < 1 || k > d || draws < 1) throw DomainError("need N >= 1, 1 <= k <= d, draws >= 1");
  ConcentrationCheck c;
  c.k_threshold = concentration_k_threshold(n, rho, eta);
  if (d < c.k_threshold) {
    c.status = ConcentrationCheck::Status::infeasible;
    c.reason = "d=" + std::to_string(d) + " is below the required k=" + std::to_string(c.k_threshold);
    return c;
  }
  if (k < c.k_threshold) {
    c.status = ConcentrationCheck::Status::skipped;
    c.reason = "k=" + std::to_string(k) + " is below the required k=" + std::to_string(c.k_threshold);
    return c;
  }
  Rng rng(seed);
  const auto dd = static_cast<Eigen::Index>(d);
  const Matrix v = gaussian_matrix(static_cast<Eigen::Index>(n), dd, rng);  // fixed vectors
  const Vector vn = v.rowwise().squaredNorm();
  const double frac = static_cast<double>(k) / static_cast<double>(d);
  // For k > d/2 sample the complement (smaller QR): ||P v||^2 = ||v||^2 - ||P_c v||^2.
  const bool complement = 2 * k > d;
  const auto kk = static_cast<Eigen::Index>(complement ? d - k : k);
  std::size_t viol = 0;
  c.min_ratio = std::numeric_limits<double>::infinity();
  c.max_ratio = 0.0;
  for (std::size_t t = 0; t < draws; ++t) {
    Vector proj;
    if (kk == 0) {
      proj = complement ? vn : Vector::Zero(vn.size());
    } else {
      const Matrix q = haar_orthonormal(dd, kk, rng);
      const Vector pn = (v * q).rowwise().squaredNorm();
      proj = complement ? Vector(vn - pn) : pn;
    }
    for (Eigen::Index i = 0; i < proj.size(); ++i) {
      const double r = proj(i) / (frac * vn(i));
      c.min_ratio = std::min(c.min_ratio, r);
      c.max_ratio = std::max(c.max_ratio, r);
      if (r < 1.0 - rho || r > 1.0 + rho) ++viol;
    }
  }
  const double total = static_cast<double>(draws * n);
  c.violation_rate = static_cast<double>(viol) / total;
  c.tolerance = eta + 3.0 * std::sqrt(eta * (1.0 - eta) / total);
  c.status = c.violation_rate <= c.tolerance ? ConcentrationCheck::Status::passed : ConcentrationCheck::Status::failed;
  return c;
}

struct QuotientBounds {
  double kl_cost = 0.0;     // (sigma^2/2) tr F_q
  double mi_bound = 0.0;    // (r/2) ln(1 + tr Lambda / (r sigma^2))
  double fano_lower = 0.0;  // 1 - (I + ln 2)/H(X), clamped to [0, 1]
};

inline QuotientBounds quotient_bounds(std::size_t r, double tr_fq, double tr_lambda, double sigma2, double h_x) {
  if (r < 1 || !(sigma2 > 0.0) || !(tr_fq >= 0.0) || !(tr_lambda >= 0.0) || !(h_x > 0.0)) {
    throw DomainError("quotient bounds need r >= 1, sigma^2 > 0, traces >= 0, H(X) > 0");
  }
  QuotientBounds b;
  const double rr = static_cast<double>(r);
  b.kl_cost = 0.5 * sigma2 * tr_fq;
  b.mi_bound = 0.5 * rr * std::log1p(tr_lambda / (rr * sigma2));
  b.fano_lower = std::clamp(1.0 - (b.mi_bound + std::log(2.0)) / h_x, 0.0, 1.0);
  return b;
}

}  // namespace fishmech
