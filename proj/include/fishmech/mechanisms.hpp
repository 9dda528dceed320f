#pragma once

// Release covariances at a first-order utility budget K (nats of expected
// KL, K = 1/2 tr(F Sigma)) and their structured representations.

#include <cmath>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "errors.hpp"
#include "numeric.hpp"
#include "geometry.hpp"
#include "linalg.hpp"

namespace fishmech {

/// First-order expected-KL budget in nats.
class UtilityBudget {
 public:
  explicit UtilityBudget(double k) : k_(k) {
    if (!std::isfinite(k) || k <= 0.0) {
      throw InputError("utility budget must be finite and > 0, got " + std::to_string(k));
    }
  }
  double value() const { return k_; }

 private:
  double k_;
};

/// sigma^2 = 2K/d: the per-coordinate scale a K-parameterized diagonal
/// mechanism absorbs.
inline double sigma2_from_budget(UtilityBudget k, std::size_t d) {
  return 2.0 * k.value() / static_cast<double>(d);
}

struct IsotropicForm {
  double sigma2 = 0.0;
};
struct ProjectorForm {
  double sigma2 = 0.0;
  Matrix projector;
};
struct DiagonalForm {
  Vector variances;
};
/// sum_i w_i v_i v_i^T + floor * I
struct LowRankForm {
  Matrix vectors;  // d x r
  Vector weights;  // r
  double floor = 0.0;
};
struct DenseForm {
  PsdMatrix matrix;
};

using CovarianceForm = std::variant<IsotropicForm, ProjectorForm, DiagonalForm, LowRankForm, DenseForm>;

/// Immutable release covariance. The dense matrix and a noise factor L with
/// L L^T = Sigma are materialized on first use; the cache is shared between
/// copies and filled exactly once under concurrent access.
class ReleaseCovariance {
 public:
  ReleaseCovariance(std::size_t d, CovarianceForm form, std::string mechanism = {})
      : d_(d), form_(std::move(form)), mechanism_(std::move(mechanism)),
        cache_(std::make_shared<Cache>()) {
    validate();
  }

  std::size_t dim() const { return d_; }
  const CovarianceForm& form() const { return form_; }
  const std::string& mechanism() const { return mechanism_; }

  std::string form_name() const {
    return std::visit(
        [](const auto& f) -> std::string {
          using T = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<T, IsotropicForm>) return "isotropic";
          else if constexpr (std::is_same_v<T, ProjectorForm>) return "projector";
          else if constexpr (std::is_same_v<T, DiagonalForm>) return "diagonal";
          else if constexpr (std::is_same_v<T, LowRankForm>) return "low_rank";
          else return "dense";
        },
        form_);
  }

  const PsdMatrix& realized() const {
    std::call_once(cache_->dense_once, [this] { cache_->dense.emplace(materialize()); });
    return *cache_->dense;
  }

  const Matrix& noise_factor() const {
    std::call_once(cache_->factor_once, [this] { cache_->factor = build_factor(); });
    return cache_->factor;
  }

  double trace() const {
    return std::visit(
        [this](const auto& f) -> double {
          using T = std::decay_t<decltype(f)>;
          const double d = static_cast<double>(d_);
          if constexpr (std::is_same_v<T, IsotropicForm>) return f.sigma2 * d;
          else if constexpr (std::is_same_v<T, ProjectorForm>) return f.sigma2 * f.projector.trace();
          else if constexpr (std::is_same_v<T, DiagonalForm>) return f.variances.sum();
          else if constexpr (std::is_same_v<T, LowRankForm>)
            return (f.vectors.colwise().squaredNorm().transpose().array() * f.weights.array()).sum() +
                   f.floor * d;
          else return f.matrix.trace();
        },
        form_);
  }

  bool singular() const {
    if (const auto* iso = std::get_if<IsotropicForm>(&form_)) return iso->sigma2 <= 0.0;
    if (std::holds_alternative<DiagonalForm>(form_)) return false;
    if (const auto* lr = std::get_if<LowRankForm>(&form_)) {
      if (lr->floor > 0.0) return false;
      if (lr->vectors.cols() < static_cast<Eigen::Index>(d_)) return true;
    }
    return realized().singular();
  }

  ReleaseCovariance scaled(double c) const {
    if (!std::isfinite(c) || c < 0.0) throw InputError("covariance scale must be finite and >= 0");
    CovarianceForm f = std::visit(
        [c](const auto& x) -> CovarianceForm {
          using T = std::decay_t<decltype(x)>;
          if constexpr (std::is_same_v<T, IsotropicForm>) return IsotropicForm{c * x.sigma2};
          else if constexpr (std::is_same_v<T, ProjectorForm>) return ProjectorForm{c * x.sigma2, x.projector};
          else if constexpr (std::is_same_v<T, DiagonalForm>) return DiagonalForm{c * x.variances};
          else if constexpr (std::is_same_v<T, LowRankForm>) return LowRankForm{x.vectors, c * x.weights, c * x.floor};
          else return DenseForm{x.matrix.scaled(c)};
        },
        form_);
    return ReleaseCovariance(d_, std::move(f), mechanism_);
  }

 private:
  struct Cache {
    std::once_flag dense_once;
    std::once_flag factor_once;
    std::optional<PsdMatrix> dense;
    Matrix factor;
  };

  void validate() const {
    const auto d = static_cast<Eigen::Index>(d_);
    if (d_ < 1) throw InputError("release covariance needs d >= 1");
    std::visit(
        [d](const auto& f) {
          using T = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<T, IsotropicForm>) {
            if (!(f.sigma2 >= 0.0) || !std::isfinite(f.sigma2)) throw InputError("isotropic variance must be >= 0");
          } else if constexpr (std::is_same_v<T, ProjectorForm>) {
            if (!(f.sigma2 >= 0.0) || !std::isfinite(f.sigma2)) throw InputError("projector scale must be >= 0");
            if (f.projector.rows() != d || f.projector.cols() != d) throw InputError("projector dimension mismatch");
          } else if constexpr (std::is_same_v<T, DiagonalForm>) {
            if (f.variances.size() != d) throw InputError("diagonal covariance dimension mismatch");
            if (!(f.variances.array() > 0.0).all() || !f.variances.allFinite())
              throw InputError("diagonal covariance entries must be finite and > 0");
          } else if constexpr (std::is_same_v<T, LowRankForm>) {
            if (f.vectors.rows() != d || f.vectors.cols() != f.weights.size())
              throw InputError("low-rank covariance shape mismatch");
            if (!(f.weights.array() >= 0.0).all() || !f.weights.allFinite() || !f.vectors.allFinite())
              throw InputError("low-rank weights must be finite and >= 0");
            if (!(f.floor >= 0.0) || !std::isfinite(f.floor)) throw InputError("floor must be finite and >= 0");
          } else {
            if (f.matrix.matrix().rows() != d) throw InputError("dense covariance dimension mismatch");
          }
        },
        form_);
  }

  PsdMatrix materialize() const {
    const auto d = static_cast<Eigen::Index>(d_);
    return std::visit(
        [d](const auto& f) -> PsdMatrix {
          using T = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<T, IsotropicForm>) return PsdMatrix(Matrix(f.sigma2 * Matrix::Identity(d, d)));
          else if constexpr (std::is_same_v<T, ProjectorForm>) return PsdMatrix(Matrix(f.sigma2 * f.projector));
          else if constexpr (std::is_same_v<T, DiagonalForm>) return PsdMatrix(Matrix(f.variances.asDiagonal()));
          else if constexpr (std::is_same_v<T, LowRankForm>) {
            Matrix m = f.vectors * f.weights.asDiagonal() * f.vectors.transpose();
            m.diagonal().array() += f.floor;
            return PsdMatrix(linalg::detail::symmetrized(m));
          } else return f.matrix;
        },
        form_);
  }

  Matrix build_factor() const {
    const auto d = static_cast<Eigen::Index>(d_);
    return std::visit(
        [this, d](const auto& f) -> Matrix {
          using T = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<T, IsotropicForm>) return std::sqrt(f.sigma2) * Matrix::Identity(d, d);
          else if constexpr (std::is_same_v<T, ProjectorForm>) return std::sqrt(f.sigma2) * f.projector;
          else if constexpr (std::is_same_v<T, DiagonalForm>) return Matrix(f.variances.cwiseSqrt().asDiagonal());
          else if constexpr (std::is_same_v<T, LowRankForm>) {
            const Eigen::Index r = f.vectors.cols();
            Matrix l(d, r + (f.floor > 0.0 ? d : 0));
            l.leftCols(r) = f.vectors * f.weights.cwiseSqrt().asDiagonal();
            if (f.floor > 0.0) l.rightCols(d) = std::sqrt(f.floor) * Matrix::Identity(d, d);
            return l;
          } else {
            const auto& e = realized().eigen();
            return e.vectors * e.values.cwiseSqrt().asDiagonal();
          }
        },
        form_);
  }

  std::size_t d_;
  CovarianceForm form_;
  std::string mechanism_;
  std::shared_ptr<Cache> cache_;
};

/// Ridge parameters for F_lambda = F + lambda I and S_rho = Sigma_delta + rho I.
/// Unset values default to 1e-6 * tr(M)/d of the matrix they stabilize.
struct Ridges {
  std::optional<double> fisher;
  std::optional<double> margin;

  static Ridges none() { return {0.0, 0.0}; }
  static Ridges both(double lambda, double rho) { return {lambda, rho}; }

  double fisher_for(const GeometrySpec& g) const {
    return resolve(fisher, g.fisher.trace() / static_cast<double>(g.dim()));
  }
  double margin_for(const GeometrySpec& g) const {
    return resolve(margin, g.margin_cov.trace() / static_cast<double>(g.dim()));
  }

 private:
  static double resolve(const std::optional<double>& v, double mean_eig) {
    if (!v) return 1e-6 * mean_eig;
    if (!std::isfinite(*v) || *v < 0.0) throw InputError("ridge must be finite and >= 0");
    return *v;
  }
};

/// 1/2 tr(F Sigma), evaluated structurally.
inline double utility(const GeometrySpec& g, const ReleaseCovariance& cov) {
  if (cov.dim() != g.dim()) throw InputError("utility: dimension mismatch");
  const Matrix& f = g.fisher.matrix();
  return 0.5 * std::visit(
                   [&f](const auto& x) -> double {
                     using T = std::decay_t<decltype(x)>;
                     if constexpr (std::is_same_v<T, IsotropicForm>) return x.sigma2 * f.trace();
                     else if constexpr (std::is_same_v<T, ProjectorForm>) return x.sigma2 * f.cwiseProduct(x.projector).sum();
                     else if constexpr (std::is_same_v<T, DiagonalForm>) return f.diagonal().dot(x.variances);
                     else if constexpr (std::is_same_v<T, LowRankForm>) {
                       const Vector quad = (x.vectors.transpose() * f * x.vectors).diagonal();
                       return quad.dot(x.weights) + x.floor * f.trace();
                     } else return f.cwiseProduct(x.matrix.matrix()).sum();
                   },
                   cov.form());
}

/// Rescales a covariance so that its utility cost is exactly K.
inline ReleaseCovariance budget_matched(const GeometrySpec& g, const ReleaseCovariance& cov, UtilityBudget k) {
  const double u = utility(g, cov);
  if (!(u > 0.0)) throw DomainError("cannot budget-match a covariance with zero utility cost");
  return cov.scaled(k.value() / u);
}

/// 2K I / tr(F_lambda).
inline ReleaseCovariance mech_isotropic(const GeometrySpec& g, UtilityBudget k, double ridge = 0.0) {
  const double tr = g.fisher.trace() + ridge * static_cast<double>(g.dim());
  return ReleaseCovariance(g.dim(), IsotropicForm{2.0 * k.value() / tr}, "isotropic");
}

/// sigma^2 P_I.
inline ReleaseCovariance mech_complement(const GeometrySpec& g, const ProjectorPair& pair, double sigma) {
  if (!std::isfinite(sigma) || sigma < 0.0) throw InputError("sigma must be finite and >= 0");
  return ReleaseCovariance(g.dim(), ProjectorForm{sigma * sigma, pair.p_i}, "complement");
}

/// sigma^2 P_I F^+ P_I, pseudo-inverse cutoff 1e-10 lambda_max.
inline ReleaseCovariance mech_fisher_complement(const GeometrySpec& g, const ProjectorPair& pair, double sigma) {
  if (!std::isfinite(sigma) || sigma < 0.0) throw InputError("sigma must be finite and >= 0");
  const Matrix pinv = linalg::psd_pseudo_inverse(g.fisher, 1e-10);
  const Matrix m = sigma * sigma * (pair.p_i * pinv * pair.p_i);
  return ReleaseCovariance(g.dim(), DenseForm{PsdMatrix(linalg::detail::symmetrized(m))}, "fisher_complement");
}

/// Top-k_xi generalized eigenvectors of Sigma_delta v = lambda F_lambda v,
/// equal budget 2K/k_xi per direction. k_xi = 1 is the rank-one optimum
/// against a Euclidean attacker.
inline ReleaseCovariance mech_gen_eigen(const GeometrySpec& g, UtilityBudget k, std::size_t k_xi,
                                        std::optional<double> ridge = std::nullopt) {
  if (k_xi < 1 || k_xi > g.dim()) throw DomainError("gen-eigen rank must be in [1, d]");
  const double lam = Ridges{ridge, 0.0}.fisher_for(g);
  const auto pairs = linalg::generalized_eigenpairs(g.margin_cov, g.fisher, lam);
  const auto r = static_cast<Eigen::Index>(k_xi);
  LowRankForm form{pairs.vectors.leftCols(r), Vector::Constant(r, 2.0 * k.value() / static_cast<double>(k_xi)), 0.0};
  return ReleaseCovariance(g.dim(), std::move(form), k_xi == 1 ? "euc_rank_one" : "gen_eigen");
}

inline ReleaseCovariance mech_euc_rank_one(const GeometrySpec& g, UtilityBudget k,
                                           std::optional<double> ridge = std::nullopt) {
  return mech_gen_eigen(g, k, 1, ridge);
}

/// (2K / tr C^{1/2}) F_l^{-1/2} C^{1/2} F_l^{-1/2} with C = F_l^{1/2} S_r F_l^{1/2}.
inline ReleaseCovariance mech_mah_optimal(const GeometrySpec& g, UtilityBudget k, const Ridges& ridges = {}) {
  const PsdMatrix f = g.fisher.plus_ridge(ridges.fisher_for(g));
  const PsdMatrix s = g.margin_cov.plus_ridge(ridges.margin_for(g));
  const Matrix f_half = linalg::psd_sqrt(f).matrix();
  const Matrix f_inv_half = linalg::psd_inv_sqrt(f).matrix();
  const PsdMatrix c(linalg::detail::symmetrized(f_half * s.matrix() * f_half));
  const PsdMatrix c_half = linalg::psd_sqrt(c);
  const double scale = 2.0 * k.value() / c_half.trace();
  const Matrix m = scale * (f_inv_half * c_half.matrix() * f_inv_half);
  return ReleaseCovariance(g.dim(), DenseForm{PsdMatrix(linalg::detail::symmetrized(m))}, "mah_optimal");
}

/// (2K/d) D^{-1}, D = diag(F): every coordinate costs D_i s_i = 2K/d.
inline ReleaseCovariance mech_diag_minimax(const GeometrySpec& g, UtilityBudget k) {
  const Vector dg = g.fisher.matrix().diagonal();
  if (!(dg.array() > 0.0).all()) throw DegenerateFisherError("diagonal minimax needs every F_ii > 0");
  const double c = 2.0 * k.value() / static_cast<double>(g.dim());
  return ReleaseCovariance(g.dim(), DiagonalForm{c * dg.cwiseInverse()}, "diag_minimax");
}

/// c_alpha diag(F_ii)^{-alpha}, c_alpha fixing tr(F Sigma_alpha) = 2K.
inline ReleaseCovariance mech_alpha_family(const GeometrySpec& g, UtilityBudget k, double alpha) {
  if (!std::isfinite(alpha)) throw InputError("alpha must be finite");
  const Vector dg = g.fisher.matrix().diagonal();
  if (!(dg.array() > 0.0).all()) throw DegenerateFisherError("alpha family needs every F_ii > 0");
  const Vector shape = dg.array().pow(-alpha);
  const double c = 2.0 * k.value() / dg.dot(shape);
  return ReleaseCovariance(g.dim(), DiagonalForm{c * shape}, "alpha");
}

/// (2K/d) F_lambda^{-1}.
inline ReleaseCovariance mech_full_minimax(const GeometrySpec& g, UtilityBudget k,
                                           std::optional<double> ridge = std::nullopt) {
  const double lam = Ridges{ridge, 0.0}.fisher_for(g);
  const Matrix inv = linalg::psd_inverse(g.fisher, lam);
  const Matrix m = (2.0 * k.value() / static_cast<double>(g.dim())) * inv;
  return ReleaseCovariance(g.dim(), DenseForm{PsdMatrix(linalg::detail::symmetrized(m))}, "full_minimax");
}

/// Sigma + eta I.
inline ReleaseCovariance add_floor(const ReleaseCovariance& cov, double eta) {
  if (!std::isfinite(eta) || eta < 0.0) throw InputError("floor must be finite and >= 0");
  if (eta == 0.0) return cov;
  const auto d = static_cast<Eigen::Index>(cov.dim());
  CovarianceForm f = std::visit(
      [&](const auto& x) -> CovarianceForm {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, IsotropicForm>) return IsotropicForm{x.sigma2 + eta};
        else if constexpr (std::is_same_v<T, DiagonalForm>) return DiagonalForm{(x.variances.array() + eta).matrix()};
        else if constexpr (std::is_same_v<T, LowRankForm>) return LowRankForm{x.vectors, x.weights, x.floor + eta};
        else {
          Matrix m = cov.realized().matrix();
          m += eta * Matrix::Identity(d, d);
          return DenseForm{PsdMatrix(std::move(m))};
        }
      },
      cov.form());
  return ReleaseCovariance(cov.dim(), std::move(f), cov.mechanism());
}

/// J(Sigma) = tr(S Sigma^{-1}) for full-rank Sigma.
inline double mahalanobis_objective(const PsdMatrix& s, const PsdMatrix& sigma) {
  return s.matrix().cwiseProduct(linalg::psd_inverse(sigma)).sum();
}

// ---------------------------------------------------------------------------
// Named mechanisms for batch front ends

enum class MechanismKind {
  isotropic,
  complement,
  fisher_complement,
  euc_rank_one,
  gen_eigen,
  mah_optimal,
  diag_minimax,
  alpha,
  full_minimax,
};

inline const std::vector<std::pair<std::string, MechanismKind>>& mechanism_names() {
  static const std::vector<std::pair<std::string, MechanismKind>> names = {
      {"isotropic", MechanismKind::isotropic},
      {"complement", MechanismKind::complement},
      {"fisher_complement", MechanismKind::fisher_complement},
      {"euc_rank_one", MechanismKind::euc_rank_one},
      {"gen_eigen", MechanismKind::gen_eigen},
      {"mah_optimal", MechanismKind::mah_optimal},
      {"diag_minimax", MechanismKind::diag_minimax},
      {"alpha", MechanismKind::alpha},
      {"full_minimax", MechanismKind::full_minimax},
  };
  return names;
}

inline MechanismKind parse_mechanism_kind(const std::string& s) {
  for (const auto& [name, kind] : mechanism_names()) {
    if (name == s) return kind;
  }
  throw ConfigError("unknown mechanism '" + s + "'");
}

inline std::string mechanism_name(MechanismKind k) {
  for (const auto& [name, kind] : mechanism_names()) {
    if (kind == k) return name;
  }
  return "?";
}

struct MechanismSpec {
  MechanismKind kind = MechanismKind::isotropic;
  std::size_t k_xi = 1;          // gen_eigen rank
  double alpha = 1.0;            // alpha family exponent
  Ridges ridges;                 // mah_optimal, gen_eigen, full_minimax
  double floor_rel = 0.0;        // eta = floor_rel * tr(Sigma)/d, added after construction

  std::string id() const {
    std::string s = mechanism_name(kind);
    if (kind == MechanismKind::gen_eigen) s += "_k" + std::to_string(k_xi);
    if (kind == MechanismKind::alpha) s += "_" + format_real(alpha);
    if (floor_rel > 0.0) s += "+floor" + format_real(floor_rel);
    return s;
  }
};

/// Builds the named mechanism at budget K. Sigma-parameterized mechanisms
/// (complement, Fisher-complement) are rescaled to cost exactly K. The floor,
/// when requested, is added after budget matching.
inline ReleaseCovariance build_mechanism(const GeometrySpec& g, const ProjectorPair& pair,
                                         const MechanismSpec& spec, UtilityBudget k) {
  ReleaseCovariance cov = [&]() -> ReleaseCovariance {
    switch (spec.kind) {
      case MechanismKind::isotropic: return mech_isotropic(g, k);
      case MechanismKind::complement: return budget_matched(g, mech_complement(g, pair, 1.0), k);
      case MechanismKind::fisher_complement:
        return budget_matched(g, mech_fisher_complement(g, pair, 1.0), k);
      case MechanismKind::euc_rank_one: return mech_euc_rank_one(g, k, spec.ridges.fisher);
      case MechanismKind::gen_eigen: return mech_gen_eigen(g, k, spec.k_xi, spec.ridges.fisher);
      case MechanismKind::mah_optimal: return mech_mah_optimal(g, k, spec.ridges);
      case MechanismKind::diag_minimax: return mech_diag_minimax(g, k);
      case MechanismKind::alpha: return mech_alpha_family(g, k, spec.alpha);
      case MechanismKind::full_minimax: return mech_full_minimax(g, k, spec.ridges.fisher);
    }
    throw InputError("unhandled mechanism kind");
  }();
  if (spec.floor_rel > 0.0) {
    cov = add_floor(cov, spec.floor_rel * cov.trace() / static_cast<double>(g.dim()));
  }
  return cov;
}

}  // namespace fishmech
