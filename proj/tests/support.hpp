#pragma once

#include <Eigen/Dense>

#include <cmath>

#include "spdou/rng.hpp"
#include "spdou/symkernel.hpp"

namespace spdou::testing {

inline Eigen::MatrixXd gaussian_matrix(int r, int c, RandomStream& rng) {
  Eigen::MatrixXd a(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) a(i, j) = rng.normal();
  return a;
}

template <int N>
SymMatrix<N> random_sym(int n, RandomStream& rng, double scale = 1.0) {
  return SymMatrix<N>(Mat<N>(scale * gaussian_matrix(n, n, rng)));
}

/// Q diag(exp(u)) Q^T with u uniform in [-spread, spread].
template <int N>
SpdMatrix<N> random_spd(int n, RandomStream& rng, double spread = 1.5) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian_matrix(n, n, rng));
  const Eigen::MatrixXd q = qr.householderQ();
  Eigen::VectorXd lam(n);
  for (int i = 0; i < n; ++i) lam(i) = std::exp(spread * (2.0 * rng.uniform() - 1.0));
  return SpdMatrix<N>(Mat<N>(q * lam.asDiagonal() * q.transpose()));
}

inline Eigen::MatrixXd random_orthogonal(int n, RandomStream& rng) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian_matrix(n, n, rng));
  return qr.householderQ();
}

/// Well-conditioned invertible matrix.
inline Eigen::MatrixXd random_invertible(int n, RandomStream& rng) {
  return Eigen::MatrixXd::Identity(n, n) + 0.3 * gaussian_matrix(n, n, rng);
}

template <class A, class B>
double rel_err(const A& a, const B& b) {
  return (a - b).norm() / std::max(1.0, b.norm());
}

}  // namespace spdou::testing
