#pragma once

// Dense symmetric / PSD linear algebra: eigendecomposition with a fixed sign
// convention, matrix square roots, ridge-stabilized inverse roots,
// generalized eigenpairs by whitening, and matrix fidelity.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <utility>

#include "errors.hpp"

namespace fishmech::linalg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Relative asymmetry tolerated before a matrix is rejected as non-symmetric.
inline constexpr double kSymmetryTol = 1e-12;
/// Eigenvalues above -kPsdTol * lambda_max are clamped to zero; below, rejected.
inline constexpr double kPsdTol = 1e-10;
/// Relative cutoff under which an eigenvalue is treated as zero for inverses.
inline constexpr double kSingularTol = 1e-13;

struct EigenDecomposition {
  Vector values;   // descending
  Matrix vectors;  // columns, orthonormal

  std::size_t dim() const { return static_cast<std::size_t>(values.size()); }
  Matrix reconstruct() const {
    return vectors * values.asDiagonal() * vectors.transpose();
  }
};

namespace detail {

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline double max_abs(const Matrix& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

/// Largest-magnitude entry of each column made positive (first index wins ties).
inline void fix_signs(Matrix& v) {
  for (Eigen::Index c = 0; c < v.cols(); ++c) {
    Eigen::Index best = 0;
    double best_abs = -1.0;
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
      const double a = std::abs(v(r, c));
      if (a > best_abs) {
        best_abs = a;
        best = r;
      }
    }
    if (v(best, c) < 0.0) v.col(c) = -v.col(c);
  }
}

/// Eigendecomposition of a matrix already known to be symmetric.
inline EigenDecomposition eigh(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(a, Eigen::ComputeEigenvectors);
  if (solver.info() != Eigen::Success) {
    throw InputError("symmetric eigensolver failed to converge");
  }
  EigenDecomposition out;
  out.values = solver.eigenvalues().reverse();
  out.vectors = solver.eigenvectors().rowwise().reverse();
  fix_signs(out.vectors);
  return out;
}

inline Matrix symmetrized(const Matrix& a) { return 0.5 * (a + a.transpose()); }

inline Matrix from_eigen(const EigenDecomposition& e, const Vector& values) {
  return symmetrized(e.vectors * values.asDiagonal() * e.vectors.transpose());
}

}  // namespace detail

/// Square symmetric float64 matrix. Validated on construction and stored
/// exactly symmetric (the upper and lower triangles are averaged).
class SymMatrix {
 public:
  explicit SymMatrix(Matrix m) : m_(std::move(m)) {
    if (m_.rows() < 1 || m_.rows() != m_.cols()) {
      throw InputError("symmetric matrix must be square with dim >= 1, got " +
                       std::to_string(m_.rows()) + "x" +
                       std::to_string(m_.cols()));
    }
    if (!detail::all_finite(m_)) {
      throw InputError("matrix has non-finite entries");
    }
    const double scale = detail::max_abs(m_);
    const double asym = detail::max_abs(m_ - m_.transpose());
    if (asym > kSymmetryTol * scale) {
      throw InputError("matrix is not symmetric (max asymmetry " +
                       std::to_string(asym) + ")");
    }
    if (asym > 0.0) m_ = detail::symmetrized(m_);
  }

  static SymMatrix identity(std::size_t n) {
    return SymMatrix(Matrix::Identity(static_cast<Eigen::Index>(n),
                                      static_cast<Eigen::Index>(n)));
  }

  const Matrix& matrix() const { return m_; }
  std::size_t dim() const { return static_cast<std::size_t>(m_.rows()); }
  double operator()(std::size_t i, std::size_t j) const {
    return m_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  double trace() const { return m_.trace(); }

 private:
  Matrix m_;
};

inline EigenDecomposition sym_eigendecompose(const SymMatrix& a) {
  return detail::eigh(a.matrix());
}

/// Symmetric positive semidefinite matrix. The eigendecomposition computed
/// during validation is cached (shared, immutable) and reused by the square
/// root and inverse-root operations. Round-off negative eigenvalues are
/// clamped to zero in the cached decomposition; the entries are untouched.
class PsdMatrix {
 public:
  explicit PsdMatrix(SymMatrix base) : base_(std::move(base)) {
    auto eig = std::make_shared<EigenDecomposition>(detail::eigh(base_.matrix()));
    const double top = eig->values(0);
    const double bottom = eig->values(eig->values.size() - 1);
    if (top < 0.0 || bottom < -kPsdTol * std::max(top, 0.0)) {
      throw InputError("matrix is not positive semidefinite (min eigenvalue " +
                       std::to_string(bottom) + ", max " + std::to_string(top) +
                       ")");
    }
    eig->values = eig->values.cwiseMax(0.0);
    min_eig_floor_ = eig->values(eig->values.size() - 1);
    eig_ = std::move(eig);
  }
  explicit PsdMatrix(Matrix m) : PsdMatrix(SymMatrix(std::move(m))) {}

  static PsdMatrix identity(std::size_t n) { return PsdMatrix(SymMatrix::identity(n)); }

  const SymMatrix& base() const { return base_; }
  const Matrix& matrix() const { return base_.matrix(); }
  std::size_t dim() const { return base_.dim(); }
  double trace() const { return base_.trace(); }
  double min_eig_floor() const { return min_eig_floor_; }
  double max_eig() const { return eig_->values(0); }
  const EigenDecomposition& eigen() const { return *eig_; }

  /// True when the smallest eigenvalue is zero relative to the largest.
  bool singular(double ridge = 0.0) const {
    return min_eig_floor_ + ridge <= kSingularTol * (max_eig() + ridge);
  }

  PsdMatrix plus_ridge(double ridge) const {
    if (ridge == 0.0) return *this;
    return PsdMatrix(Matrix(matrix() + ridge * Matrix::Identity(matrix().rows(),
                                                                matrix().cols())));
  }
  PsdMatrix scaled(double c) const { return PsdMatrix(Matrix(c * matrix())); }
  /// Divided by its trace; requires a positive trace.
  PsdMatrix normalized() const {
    const double t = trace();
    if (!(t > 0.0)) throw InputError("cannot trace-normalize a matrix with trace <= 0");
    return scaled(1.0 / t);
  }

 private:
  SymMatrix base_;
  double min_eig_floor_ = 0.0;
  std::shared_ptr<const EigenDecomposition> eig_;
};

inline PsdMatrix psd_sqrt(const PsdMatrix& a) {
  const auto& e = a.eigen();
  return PsdMatrix(detail::from_eigen(e, e.values.cwiseSqrt()));
}

/// (A + ridge I)^{-1/2}.
inline PsdMatrix psd_inv_sqrt(const PsdMatrix& a, double ridge = 0.0) {
  if (ridge < 0.0 || !std::isfinite(ridge)) throw InputError("ridge must be finite and >= 0");
  if (a.singular(ridge)) {
    throw SingularityError("inverse square root of a singular matrix requires ridge > 0");
  }
  const auto& e = a.eigen();
  Vector v = (e.values.array() + ridge).rsqrt();
  return PsdMatrix(detail::from_eigen(e, v));
}

/// (A + ridge I)^{-1}.
inline Matrix psd_inverse(const PsdMatrix& a, double ridge = 0.0) {
  if (ridge < 0.0 || !std::isfinite(ridge)) throw InputError("ridge must be finite and >= 0");
  if (a.singular(ridge)) {
    throw SingularityError("inverse of a singular matrix requires ridge > 0");
  }
  const auto& e = a.eigen();
  Vector v = (e.values.array() + ridge).inverse();
  return detail::from_eigen(e, v);
}

/// Moore-Penrose pseudo-inverse with eigenvalues below rel_cutoff * lambda_max
/// treated as zero.
inline Matrix psd_pseudo_inverse(const PsdMatrix& a, double rel_cutoff = kPsdTol) {
  const auto& e = a.eigen();
  const double cut = rel_cutoff * e.values(0);
  Vector v(e.values.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    v(i) = (e.values(i) > cut && e.values(i) > 0.0) ? 1.0 / e.values(i) : 0.0;
  }
  return detail::from_eigen(e, v);
}

/// Orthonormal basis (columns) of the numerical nullspace of a PSD matrix.
inline Matrix psd_nullspace(const PsdMatrix& a, double rel_cutoff = kPsdTol) {
  const auto& e = a.eigen();
  const double cut = rel_cutoff * e.values(0);
  Eigen::Index rank = 0;
  while (rank < e.values.size() && e.values(rank) > cut && e.values(rank) > 0.0) ++rank;
  return e.vectors.rightCols(e.values.size() - rank);
}

/// Pairs (lambda_i, v_i) of S v = lambda F_r v with F_r = F + ridge I, sorted
/// descending, normalized so that v_i^T F_r v_i = 1.
struct GeneralizedEigenPairs {
  Vector values;
  Matrix vectors;  // columns
  double ridge = 0.0;

  std::size_t size() const { return static_cast<std::size_t>(values.size()); }
};

inline GeneralizedEigenPairs generalized_eigenpairs(const PsdMatrix& s, const PsdMatrix& f,
                                                    double ridge = 0.0) {
  if (s.dim() != f.dim()) throw InputError("generalized eigenproblem: dimension mismatch");
  const PsdMatrix w = psd_inv_sqrt(f, ridge);
  const Matrix whitened = detail::symmetrized(w.matrix() * s.matrix() * w.matrix());
  const EigenDecomposition e = detail::eigh(whitened);
  GeneralizedEigenPairs out;
  out.values = e.values;
  out.vectors = w.matrix() * e.vectors;
  out.ridge = ridge;
  return out;
}

/// tr sqrt(rhoF^{1/2} rhoS rhoF^{1/2}) for trace-normalized PSD arguments.
inline double matrix_fidelity(const PsdMatrix& rho_f, const PsdMatrix& rho_s) {
  if (rho_f.dim() != rho_s.dim()) throw InputError("fidelity: dimension mismatch");
  for (const PsdMatrix* r : {&rho_f, &rho_s}) {
    if (std::abs(r->trace() - 1.0) > 1e-8) {
      throw NormalizationError("fidelity arguments must have unit trace, got " +
                               std::to_string(r->trace()));
    }
  }
  const Matrix root = psd_sqrt(rho_f).matrix();
  const EigenDecomposition e =
      detail::eigh(detail::symmetrized(root * rho_s.matrix() * root));
  const double fid = e.values.cwiseMax(0.0).cwiseSqrt().sum();
  return std::min(fid, 1.0);
}

/// tr(C^{1/2}) with C = A^{1/2} B A^{1/2}, for unnormalized PSD arguments.
inline double trace_sqrt_sandwich(const PsdMatrix& a, const PsdMatrix& b) {
  const Matrix root = psd_sqrt(a).matrix();
  const EigenDecomposition e = detail::eigh(detail::symmetrized(root * b.matrix() * root));
  return e.values.cwiseMax(0.0).cwiseSqrt().sum();
}

}  // namespace fishmech::linalg
