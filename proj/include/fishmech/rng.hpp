#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fishmech {

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Order-sensitive 64-bit combination of a master seed with coordinates.
/// Used for per-cell seeds so that results do not depend on evaluation order.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> coords) {
  std::uint64_t h = mix64(master);
  for (std::uint64_t c : coords) h = mix64(h ^ mix64(c + 0x632be59bd9b4e019ULL));
  return h;
}

inline Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd g(rows, cols);
  // Fill row by row so the draw order is independent of Eigen's storage order.
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) g(r, c) = normal(rng);
  return g;
}

inline Eigen::VectorXd gaussian_vector(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd g(n);
  for (Eigen::Index i = 0; i < n; ++i) g(i) = normal(rng);
  return g;
}

/// Haar-distributed d x k matrix with orthonormal columns: QR of a standard
/// Gaussian matrix with the sign of R's diagonal folded into Q.
inline Eigen::MatrixXd haar_orthonormal(Eigen::Index d, Eigen::Index k, Rng& rng) {
  const Eigen::MatrixXd g = gaussian_matrix(d, k, rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, k);
  const Eigen::MatrixXd& r = qr.matrixQR();
  for (Eigen::Index j = 0; j < k; ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

/// Uniform unit vector on S^{d-1}.
inline Eigen::VectorXd random_unit_vector(Eigen::Index d, Rng& rng) {
  Eigen::VectorXd g = gaussian_vector(d, rng);
  return g / g.norm();
}

}  // namespace fishmech
