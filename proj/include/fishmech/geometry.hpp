#pragma once

// The (Fisher, margin-covariance) pair and everything derived from it:
// Fisher concentration, top-Fisher projectors, coupling, isotropy, the
// random-projection laws, and deterministic synthetic geometries.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "linalg.hpp"
#include "rng.hpp"

namespace fishmech {

using linalg::Matrix;
using linalg::PsdMatrix;
using linalg::SymMatrix;
using linalg::Vector;

struct GeometrySpec {
  PsdMatrix fisher;
  PsdMatrix margin_cov;
  std::string label;
  std::optional<std::uint64_t> seed;

  GeometrySpec(PsdMatrix f, PsdMatrix s, std::string lbl = {},
               std::optional<std::uint64_t> sd = std::nullopt)
      : fisher(std::move(f)), margin_cov(std::move(s)), label(std::move(lbl)), seed(sd) {
    if (fisher.dim() != margin_cov.dim()) {
      throw InputError("geometry: Fisher is " + std::to_string(fisher.dim()) +
                       "-dimensional but margin covariance is " +
                       std::to_string(margin_cov.dim()) + "-dimensional");
    }
    for (double t : {fisher.trace(), margin_cov.trace()}) {
      if (!std::isfinite(t) || t <= 0.0) {
        throw InputError("geometry: matrix traces must be finite and positive");
      }
    }
  }

  std::size_t dim() const { return fisher.dim(); }
  /// Margin covariance divided by its trace.
  PsdMatrix margin_normalized() const { return margin_cov.normalized(); }
};

inline void check_rank(const GeometrySpec& g, std::size_t k) {
  if (k < 1 || k > g.dim()) {
    throw DomainError("rank k=" + std::to_string(k) + " outside [1, " +
                      std::to_string(g.dim()) + "]");
  }
}

/// Cumulative Fisher energy E_1..E_d.
inline std::vector<double> cumulative_energy(const GeometrySpec& g) {
  const Vector& lam = g.fisher.eigen().values;
  const double total = lam.sum();
  std::vector<double> out(static_cast<std::size_t>(lam.size()));
  double acc = 0.0;
  for (Eigen::Index i = 0; i < lam.size(); ++i) {
    acc += lam(i);
    out[static_cast<std::size_t>(i)] = std::min(acc / total, 1.0);
  }
  out.back() = 1.0;
  return out;
}

/// E_k: share of Fisher eigenvalue mass in the top k eigendirections.
inline double fisher_concentration(const GeometrySpec& g, std::size_t k) {
  check_rank(g, k);
  return cumulative_energy(g)[k - 1];
}

/// Smallest k with E_k >= 0.95.
inline std::size_t effective_rank95(const GeometrySpec& g) {
  const auto e = cumulative_energy(g);
  for (std::size_t k = 0; k < e.size(); ++k) {
    if (e[k] >= 0.95) return k + 1;
  }
  return e.size();
}

/// Linear interpolation of r95 between the k=64 and k=128 energy readings.
inline double r95_interpolate(double e64, double e128) {
  if (!(e64 < 0.95 && 0.95 <= e128) || e128 > 1.0 || e64 < 0.0) {
    throw DomainError("r95 interpolation needs E_64 < 0.95 <= E_128 <= 1");
  }
  return 64.0 + 64.0 * (0.95 - e64) / (e128 - e64);
}

/// min(1, k/r): E_k for a Fisher uniform on an r-dimensional trunk.
inline double fixed_k_reference(std::size_t r, std::size_t k) {
  if (r == 0) throw DomainError("trunk rank must be >= 1");
  return std::min(1.0, static_cast<double>(k) / static_cast<double>(r));
}

struct ProjectorPair {
  std::size_t k = 0;
  Matrix basis;  // d x k, top-k Fisher eigenvectors
  Matrix p_b;
  Matrix p_i;
};

inline ProjectorPair build_projectors(const GeometrySpec& g, std::size_t k) {
  check_rank(g, k);
  ProjectorPair pair;
  pair.k = k;
  pair.basis = g.fisher.eigen().vectors.leftCols(static_cast<Eigen::Index>(k));
  const auto d = static_cast<Eigen::Index>(g.dim());
  // Full rank: exact identity so the complement is exactly zero, not round-off.
  pair.p_b = k == g.dim() ? Matrix(Matrix::Identity(d, d))
                          : linalg::detail::symmetrized(pair.basis * pair.basis.transpose());
  pair.p_i = Matrix::Identity(d, d) - pair.p_b;
  return pair;
}

/// Whether margin-covariance traces are taken after trace normalization (the
/// default) or on the raw imported matrix.
enum class TraceMode { normalized, raw };

/// kappa = tr(P_B S) / ((k/d) tr S). Scale-invariant, so the mode is moot.
inline double coupling_kappa(const GeometrySpec& g, const ProjectorPair& pair) {
  const double d = static_cast<double>(g.dim());
  const Matrix& s = g.margin_cov.matrix();
  return (pair.p_b.cwiseProduct(s).sum()) /
         ((static_cast<double>(pair.k) / d) * s.trace());
}

/// q_B = tr(P_B rho_S), or tr(P_B Sigma_delta) in raw mode.
inline double q_b(const GeometrySpec& g, const ProjectorPair& pair,
                  TraceMode mode = TraceMode::normalized) {
  const Matrix& s = g.margin_cov.matrix();
  const double mass = pair.p_b.cwiseProduct(s).sum();
  return mode == TraceMode::normalized ? mass / s.trace() : mass;
}

/// ||d S - I||_op with S the margin covariance (trace-normalized by default).
inline double eps_iso(const GeometrySpec& g, TraceMode mode = TraceMode::normalized) {
  const double d = static_cast<double>(g.dim());
  Matrix s = g.margin_cov.matrix();
  if (mode == TraceMode::normalized) s /= s.trace();
  const Matrix dev = d * s - Matrix::Identity(s.rows(), s.cols());
  const auto e = linalg::detail::eigh(linalg::detail::symmetrized(dev));
  return std::max(std::abs(e.values(0)), std::abs(e.values(e.values.size() - 1)));
}

struct FisherSummary {
  std::vector<double> cumulative_energy;
  std::size_t k = 0;
  double e_k = 0.0;
  double r95 = 0.0;
  double rho = 0.0;
  double kappa = 0.0;
  double q_b = 0.0;
  double eps_iso = 0.0;
};

inline FisherSummary summarize(const GeometrySpec& g, std::size_t k) {
  const ProjectorPair pair = build_projectors(g, k);
  FisherSummary s;
  s.cumulative_energy = cumulative_energy(g);
  s.k = k;
  s.e_k = s.cumulative_energy[k - 1];
  s.r95 = static_cast<double>(effective_rank95(g));
  s.rho = s.r95 / static_cast<double>(g.dim());
  s.kappa = coupling_kappa(g, pair);
  s.q_b = q_b(g, pair);
  s.eps_iso = eps_iso(g);
  return s;
}

/// Squared-norm split of a difference vector across P_B and P_I.
struct MarginSplit {
  double behavior_sq = 0.0;  // ||P_B delta||^2
  double identity_sq = 0.0;  // ||P_I delta||^2
  double total_sq = 0.0;     // ||delta||^2
  double cos2() const { return behavior_sq / total_sq; }
  double sin2() const { return identity_sq / total_sq; }
};

inline MarginSplit margin_split(const ProjectorPair& pair, const Vector& delta) {
  MarginSplit m;
  m.behavior_sq = (pair.p_b * delta).squaredNorm();
  m.identity_sq = (pair.p_i * delta).squaredNorm();
  m.total_sq = delta.squaredNorm();
  return m;
}

struct RandomProjectionStats {
  double mean = 0.0;
  double variance = 0.0;
};

/// Mean and variance of tr(P S) over Haar rank-k projectors P, for
/// S = I/d + E with E traceless.
inline RandomProjectionStats random_projection_stats(std::size_t d, std::size_t k,
                                                     const SymMatrix& traceless) {
  if (d < 2 || k < 1 || k > d) throw DomainError("random projection stats need d >= 2, 1 <= k <= d");
  if (traceless.dim() != d) throw InputError("deviation matrix dimension mismatch");
  const Matrix& e = traceless.matrix();
  const double fro2 = e.squaredNorm();
  if (std::abs(e.trace()) > 1e-10 * (1.0 + std::sqrt(fro2))) {
    throw DomainError("deviation matrix must be traceless");
  }
  const double dd = static_cast<double>(d);
  const double kk = static_cast<double>(k);
  return {kk / dd, 2.0 * kk * (dd - kk) / (dd * (dd - 1.0) * (dd + 2.0)) * fro2};
}

/// Haar-random rank-k orthogonal projector.
inline Matrix haar_projector(std::size_t d, std::size_t k, Rng& rng) {
  const Matrix q = haar_orthonormal(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k), rng);
  return linalg::detail::symmetrized(q * q.transpose());
}

struct FixedProjectorCheck {
  double bound = 0.0;      // (k/d) eps_iso
  double deviation = 0.0;  // |tr(P S) - k/d|
  bool holds() const { return deviation <= bound * (1.0 + 1e-12) + 1e-15; }
};

/// Fixed-projector isotropy bound for an arbitrary orthogonal projector P.
inline FixedProjectorCheck fixed_projector_bound(const GeometrySpec& g, const SymMatrix& p) {
  if (p.dim() != g.dim()) throw InputError("projector dimension mismatch");
  const double d = static_cast<double>(g.dim());
  const double k = std::round(p.trace());
  const Matrix s = g.margin_cov.matrix() / g.margin_cov.trace();
  FixedProjectorCheck c;
  c.bound = (k / d) * eps_iso(g);
  c.deviation = std::abs(p.matrix().cwiseProduct(s).sum() - k / d);
  return c;
}

// ---------------------------------------------------------------------------
// Synthetic geometries

enum class GeometryKind { concentrated, diffuse, block, custom };

struct BlockModelSpec {
  std::size_t d = 0;
  std::size_t r = 0;
  double q = 0.0;
};

struct SynthRequest {
  GeometryKind kind = GeometryKind::concentrated;
  std::size_t d = 0;
  std::uint64_t seed = 0;
  BlockModelSpec block;                 // kind == block
  std::vector<double> fisher_spectrum;  // kind == custom
  std::vector<double> margin_spectrum;  // kind == custom; empty means isotropic
};

inline std::string kind_name(GeometryKind k) {
  switch (k) {
    case GeometryKind::concentrated: return "concentrated";
    case GeometryKind::diffuse: return "diffuse";
    case GeometryKind::block: return "block";
    case GeometryKind::custom: return "custom";
  }
  return "?";
}

inline GeometryKind parse_geometry_kind(const std::string& s) {
  if (s == "concentrated") return GeometryKind::concentrated;
  if (s == "diffuse") return GeometryKind::diffuse;
  if (s == "block") return GeometryKind::block;
  if (s == "custom" || s == "custom-spectrum") return GeometryKind::custom;
  throw ConfigError("unknown geometry kind '" + s + "'");
}

namespace detail {

inline Matrix with_basis(const Matrix& basis, const Vector& spectrum) {
  return linalg::detail::symmetrized(basis * spectrum.asDiagonal() * basis.transpose());
}

inline Vector normalized_spectrum(std::vector<double> v) {
  Vector s = Eigen::Map<Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
  return s / s.sum();
}

/// Margin spectrum shared by the concentrated and diffuse generators:
/// eigenvalues spread uniformly over [0.5, 1.5] before normalization.
inline Vector spread_margin_spectrum(std::size_t d, Rng& rng) {
  std::uniform_real_distribution<double> u(0.5, 1.5);
  std::vector<double> v(d);
  for (double& x : v) x = u(rng);
  return normalized_spectrum(std::move(v));
}

}  // namespace detail

/// Block model: Fisher uniform on the first r coordinates, margin mass q on
/// the trunk and 1-q spread uniformly over the remaining d-r coordinates.
inline GeometrySpec block_geometry(const BlockModelSpec& b) {
  if (b.d < 1 || b.r < 1 || b.r > b.d) throw DomainError("block model needs 1 <= r <= d");
  if (!(b.q >= 0.0 && b.q <= 1.0)) throw DomainError("block model needs q in [0, 1]");
  if (b.r == b.d && b.q != 1.0) throw DomainError("block model with r == d requires q == 1");
  const auto d = static_cast<Eigen::Index>(b.d);
  const auto r = static_cast<Eigen::Index>(b.r);
  Vector f = Vector::Zero(d);
  Vector s = Vector::Zero(d);
  f.head(r).setConstant(1.0 / static_cast<double>(b.r));
  s.head(r).setConstant(b.q / static_cast<double>(b.r));
  if (b.r < b.d) s.tail(d - r).setConstant((1.0 - b.q) / static_cast<double>(b.d - b.r));
  return GeometrySpec(PsdMatrix(Matrix(f.asDiagonal())), PsdMatrix(Matrix(s.asDiagonal())),
                      "block(d=" + std::to_string(b.d) + ",r=" + std::to_string(b.r) + ")");
}

/// Deterministic synthetic geometry. Both matrices are trace-normalized.
///
/// concentrated: top d/6 Fisher eigenvalues decay geometrically, the rest sit
///   four orders of magnitude lower, so E_{d/6} >= 0.99; margin spectrum is
///   spread over a Haar basis independent of the Fisher basis.
/// diffuse: slowly decaying Fisher spectrum (E_k only slightly above k/d),
///   margin as above.
/// block: the exact trunk/memory block model (coordinate basis).
/// custom: explicit Fisher (and optionally margin) eigenvalues, independent
///   Haar bases; an empty margin spectrum gives the isotropic I/d.
inline GeometrySpec synth_geometry(const SynthRequest& req) {
  if (req.kind == GeometryKind::block) {
    BlockModelSpec b = req.block;
    b.d = req.d;
    GeometrySpec g = block_geometry(b);
    g.seed = req.seed;
    return g;
  }
  if (req.d < 2) throw DomainError("synthetic geometry needs d >= 2");
  const auto d = static_cast<Eigen::Index>(req.d);
  Rng rng(req.seed);
  Vector f_spec(d);
  Vector s_spec;
  std::string label = kind_name(req.kind) + "(d=" + std::to_string(req.d) + ")";

  switch (req.kind) {
    case GeometryKind::concentrated: {
      const Eigen::Index head = std::max<Eigen::Index>(1, d / 6);
      for (Eigen::Index i = 0; i < d; ++i) {
        f_spec(i) = i < head ? std::exp(-3.0 * static_cast<double>(i) / static_cast<double>(head))
                             : 1e-4 * std::exp(-static_cast<double>(i - head) / static_cast<double>(d));
      }
      s_spec = detail::spread_margin_spectrum(req.d, rng);
      break;
    }
    case GeometryKind::diffuse: {
      for (Eigen::Index i = 0; i < d; ++i) {
        f_spec(i) = 1.0 / (1.0 + 0.5 * static_cast<double>(i) / static_cast<double>(d));
      }
      s_spec = detail::spread_margin_spectrum(req.d, rng);
      break;
    }
    case GeometryKind::custom: {
      if (req.fisher_spectrum.size() != req.d) {
        throw InputError("custom Fisher spectrum must list exactly d eigenvalues");
      }
      for (double x : req.fisher_spectrum) {
        if (!(x >= 0.0) || !std::isfinite(x)) throw InputError("custom spectrum entries must be >= 0");
      }
      std::vector<double> fs = req.fisher_spectrum;
      std::sort(fs.rbegin(), fs.rend());
      f_spec = Eigen::Map<Vector>(fs.data(), d);
      if (req.margin_spectrum.empty()) {
        s_spec = Vector::Constant(d, 1.0 / static_cast<double>(req.d));
      } else {
        if (req.margin_spectrum.size() != req.d) {
          throw InputError("custom margin spectrum must list exactly d eigenvalues");
        }
        for (double x : req.margin_spectrum) {
          if (!(x >= 0.0) || !std::isfinite(x)) throw InputError("custom spectrum entries must be >= 0");
        }
        s_spec = detail::normalized_spectrum(req.margin_spectrum);
      }
      break;
    }
    case GeometryKind::block: break;
  }
  f_spec /= f_spec.sum();
  const Matrix f_basis = haar_orthonormal(d, d, rng);
  const Matrix s_basis = haar_orthonormal(d, d, rng);
  Matrix s_mat = req.kind == GeometryKind::custom && req.margin_spectrum.empty()
                     ? Matrix(Matrix::Identity(d, d) / static_cast<double>(req.d))
                     : detail::with_basis(s_basis, s_spec);
  return GeometrySpec(PsdMatrix(detail::with_basis(f_basis, f_spec)), PsdMatrix(std::move(s_mat)),
                      std::move(label), req.seed);
}

}  // namespace fishmech
