#pragma once

// Matrix functions of symmetric matrices through the symmetric
// eigendecomposition.
//
// Every matrix function (exp, log, square roots, Fréchet derivatives) goes
// through one spectral path.  SpdMatrix validates positivity once, at
// construction, and keeps its eigensystem so the functions applied to it do
// not decompose it again.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "spdou/errors.hpp"

namespace spdou {

inline constexpr int Dynamic = Eigen::Dynamic;

template <int N>
using Mat = Eigen::Matrix<double, N, N>;
template <int N>
using VecN = Eigen::Matrix<double, N, 1>;

/// d = n(n+1)/2, the dimension of the space of n x n symmetric matrices.
constexpr int tangent_dim(int n) { return n * (n + 1) / 2; }

template <int N>
inline constexpr int kTangentDim = N == Dynamic ? Dynamic : tangent_dim(N);

/// Coordinates with respect to an orthonormal frame (length d).
template <int N>
using Coords = Eigen::Matrix<double, kTangentDim<N>, 1>;

/// Default eigenvalue floor for SPD matrices.
inline constexpr double kSpdFloor = 1e-12;

/// Relative eigenvalue gap below which divided differences use the
/// derivative.
inline constexpr double kConfluentTol = 1e-8;

namespace detail {

template <class Derived>
std::string format_matrix(const Eigen::MatrixBase<Derived>& m) {
  std::ostringstream os;
  os.precision(17);
  os << '[';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    os << (i ? "; " : "");
    for (Eigen::Index j = 0; j < m.cols(); ++j) os << (j ? ", " : "") << m(i, j);
  }
  os << ']';
  return os.str();
}

}  // namespace detail

template <int N>
class SymMatrix {
 public:
  using Matrix = Mat<N>;

  /// Zero matrix of size n.
  explicit SymMatrix(int n = (N == Dynamic ? 0 : N)) : m_(Matrix::Zero(n, n)) {}

  /// Symmetric part (A + A^T)/2 of a square matrix.
  template <class Derived>
  explicit SymMatrix(const Eigen::MatrixBase<Derived>& a) {
    if (a.rows() != a.cols()) throw ContractError("SymMatrix: input is not square");
    if (N != Dynamic && a.rows() != N) throw ContractError("SymMatrix: dimension mismatch");
    const Matrix t = a;  // evaluate product expressions once
    m_ = (t + t.transpose()) * 0.5;
  }

  static SymMatrix identity(int n = N) {
    SymMatrix s(n);
    s.m_.setIdentity();
    return s;
  }

  int dim() const { return static_cast<int>(m_.rows()); }
  const Matrix& mat() const { return m_; }
  double operator()(int i, int j) const { return m_(i, j); }

  double trace() const { return m_.trace(); }
  double squared_norm() const { return m_.squaredNorm(); }

  SymMatrix& operator+=(const SymMatrix& o) {
    m_ += o.m_;
    return *this;
  }
  SymMatrix& operator-=(const SymMatrix& o) {
    m_ -= o.m_;
    return *this;
  }
  SymMatrix& operator*=(double a) {
    m_ *= a;
    return *this;
  }

  friend SymMatrix operator+(SymMatrix a, const SymMatrix& b) { return a += b; }
  friend SymMatrix operator-(SymMatrix a, const SymMatrix& b) { return a -= b; }
  friend SymMatrix operator*(SymMatrix a, double s) { return a *= s; }
  friend SymMatrix operator*(double s, SymMatrix a) { return a *= s; }
  friend SymMatrix operator/(SymMatrix a, double s) { return a *= (1.0 / s); }
  friend SymMatrix operator-(SymMatrix a) { return a *= -1.0; }
  friend bool operator==(const SymMatrix& a, const SymMatrix& b) { return a.m_ == b.m_; }

 private:
  Matrix m_;
};

/// Frobenius inner product <A, B>_F = tr(A^T B).
template <int N>
double frobenius(const SymMatrix<N>& a, const SymMatrix<N>& b) {
  return a.mat().cwiseProduct(b.mat()).sum();
}

/// R S R^T, re-symmetrized.
template <int N, class Derived>
SymMatrix<N> congruence(const Eigen::MatrixBase<Derived>& r, const SymMatrix<N>& s) {
  return SymMatrix<N>(r * s.mat() * r.transpose());
}

template <int N>
struct Eigensystem {
  VecN<N> values;   // ascending
  Mat<N> vectors;   // orthogonal, columns are eigenvectors
};

namespace detail {

// One symmetric Schur rotation diagonalizes a 2x2 matrix exactly
// (Golub & Van Loan, sym.schur2).
inline Eigensystem<2> eigen2(const Mat<2>& m) {
  const double a = m(0, 0), b = m(1, 0), c = m(1, 1);
  double cs = 1.0, sn = 0.0, l0 = a, l1 = c;
  if (b != 0.0) {
    const double tau = (c - a) / (2.0 * b);
    const double at = std::abs(tau);
    const double root = at < 1e150 ? std::sqrt(1.0 + at * at) : at;
    const double t = (tau >= 0 ? 1.0 : -1.0) / (at + root);
    cs = 1.0 / std::sqrt(1.0 + t * t);
    sn = t * cs;
    l0 = a - t * b;
    l1 = c + t * b;
  }
  Eigensystem<2> e;
  if (l0 <= l1) {
    e.values << l0, l1;
    e.vectors << cs, sn, -sn, cs;
  } else {
    e.values << l1, l0;
    e.vectors << sn, cs, cs, -sn;
  }
  return e;
}

}  // namespace detail

/// Full symmetric eigendecomposition S = V diag(lambda) V^T.
template <int N>
Eigensystem<N> sym_eigen(const SymMatrix<N>& s) {
  if (!s.mat().allFinite())
    throw NumericFailure("sym_eigen: non-finite input " + detail::format_matrix(s.mat()));
  if constexpr (N == 2) return detail::eigen2(s.mat());
  Eigen::SelfAdjointEigenSolver<Mat<N>> es(s.mat());
  if (es.info() != Eigen::Success)
    throw NumericFailure("sym_eigen: eigen-solver did not converge on " +
                         detail::format_matrix(s.mat()));
  return {es.eigenvalues(), es.eigenvectors()};
}

/// V diag(f(lambda)) V^T.
template <int N, class F>
SymMatrix<N> spectral_apply(const Eigensystem<N>& eig, F&& f) {
  const VecN<N> fv = eig.values.unaryExpr(std::forward<F>(f));
  return SymMatrix<N>(eig.vectors * fv.asDiagonal() * eig.vectors.transpose());
}

/// Symmetric matrix with all eigenvalues above a floor.
template <int N>
class SpdMatrix {
 public:
  explicit SpdMatrix(const SymMatrix<N>& s, double floor = kSpdFloor)
      : s_(s), eig_(sym_eigen(s)) {
    check_floor(floor);
  }

  template <class Derived>
  explicit SpdMatrix(const Eigen::MatrixBase<Derived>& a, double floor = kSpdFloor)
      : SpdMatrix(SymMatrix<N>(a), floor) {}

  /// Build from a known eigensystem, skipping the decomposition.
  static SpdMatrix from_spectral(Eigensystem<N> eig, double floor = kSpdFloor) {
    SymMatrix<N> s(eig.vectors * eig.values.asDiagonal() * eig.vectors.transpose());
    return SpdMatrix(std::move(s), std::move(eig), floor);
  }

  static SpdMatrix identity(int n = N) { return SpdMatrix(SymMatrix<N>::identity(n)); }

  int dim() const { return s_.dim(); }
  const SymMatrix<N>& sym() const { return s_; }
  const Mat<N>& mat() const { return s_.mat(); }
  const Eigensystem<N>& eigen() const { return eig_; }
  double operator()(int i, int j) const { return s_(i, j); }

  double trace() const { return s_.trace(); }
  double det() const { return eig_.values.prod(); }
  double log_det() const { return eig_.values.array().log().sum(); }

  SymMatrix<N> log() const {
    return spectral_apply(eig_, [](double x) { return std::log(x); });
  }
  SymMatrix<N> sqrt() const {
    return spectral_apply(eig_, [](double x) { return std::sqrt(x); });
  }
  SymMatrix<N> inv_sqrt() const {
    return spectral_apply(eig_, [](double x) { return 1.0 / std::sqrt(x); });
  }
  SymMatrix<N> inverse() const {
    return spectral_apply(eig_, [](double x) { return 1.0 / x; });
  }

  friend bool operator==(const SpdMatrix& a, const SpdMatrix& b) { return a.s_ == b.s_; }

 private:
  SpdMatrix(SymMatrix<N> s, Eigensystem<N> eig, double floor)
      : s_(std::move(s)), eig_(std::move(eig)) {
    check_floor(floor);
  }

  void check_floor(double floor) const {
    const double lo = eig_.values.size() ? eig_.values.minCoeff() : 1.0;
    if (!(lo > floor)) {
      std::ostringstream os;
      os.precision(17);
      os << "matrix is not SPD: eigenvalue " << lo << " <= floor " << floor;
      throw BoundaryError(os.str(), lo);
    }
  }

  SymMatrix<N> s_;
  Eigensystem<N> eig_;
};

/// Largest argument for which exp does not overflow.
inline const double kMaxExpArg = std::log(std::numeric_limits<double>::max());

template <int N>
SpdMatrix<N> sym_exp(const Eigensystem<N>& eig) {
  if (eig.values.size() && eig.values.maxCoeff() >= kMaxExpArg)
    throw NumericFailure("sym_exp: eigenvalue overflows exp");
  return SpdMatrix<N>::from_spectral(
      {eig.values.array().exp().matrix(), eig.vectors});
}

template <int N>
SpdMatrix<N> sym_exp(const SymMatrix<N>& s) {
  return sym_exp(sym_eigen(s));
}

template <int N>
SymMatrix<N> sym_log(const SpdMatrix<N>& p) {
  return p.log();
}

namespace detail {

// (e^a - e^b)/(a - b) with the derivative at the midpoint when a ~ b.
inline double divided_exp(double a, double b) {
  const double gap = a - b;
  if (std::abs(gap) < kConfluentTol * std::max(1.0, std::abs(a))) return std::exp(0.5 * (a + b));
  return std::exp(b) * std::expm1(gap) / gap;
}

// (log a - log b)/(a - b) for a, b > 0.
inline double divided_log(double a, double b) {
  const double gap = a - b;
  if (std::abs(gap) < kConfluentTol * std::max(1.0, std::abs(a))) return 2.0 / (a + b);
  return std::log1p(gap / b) / gap;
}

template <int N, class F>
SymMatrix<N> daleckii_krein(const Eigensystem<N>& eig, const SymMatrix<N>& s, F&& divided) {
  const auto& v = eig.vectors;
  Mat<N> t = v.transpose() * s.mat() * v;
  const auto n = t.rows();
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) t(i, j) *= divided(eig.values(i), eig.values(j));
  return SymMatrix<N>(v * t * v.transpose());
}

}  // namespace detail

/// Fréchet derivative of exp at S0 (given its eigensystem) in direction S.
template <int N>
SymMatrix<N> dexp(const Eigensystem<N>& at, const SymMatrix<N>& s) {
  return detail::daleckii_krein(at, s, detail::divided_exp);
}

template <int N>
SymMatrix<N> dexp(const SymMatrix<N>& at, const SymMatrix<N>& s) {
  return dexp(sym_eigen(at), s);
}

/// Fréchet derivative of log at P in direction S.
template <int N>
SymMatrix<N> dlog(const SpdMatrix<N>& p, const SymMatrix<N>& s) {
  return detail::daleckii_krein(p.eigen(), s, detail::divided_log);
}

/// Eigensystem of log P, reusing the eigenvectors of P.
template <int N>
Eigensystem<N> log_eigensystem(const SpdMatrix<N>& p) {
  return {p.eigen().values.array().log().matrix(), p.eigen().vectors};
}

// ---------------------------------------------------------------------------
// Orthonormal basis of S(n) and half-vectorization.
//
// Basis order: diagonal units e_11..e_nn, then (e_ij + e_ji)/sqrt(2) for
// i > j in column-major lower-triangle order (21, 31, ..., n1, 32, ...).
// Half-vectorization nu(P) is the column-major lower triangle
// (p11, p21, ..., pn1, p22, ...).

/// Off-diagonal (row, col) pairs, row > col, column-major.
inline std::vector<std::pair<int, int>> offdiag_pairs(int n) {
  std::vector<std::pair<int, int>> out;
  out.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (int j = 0; j < n; ++j)
    for (int i = j + 1; i < n; ++i) out.emplace_back(i, j);
  return out;
}

/// (row, col) of each half-vectorization slot.
inline std::vector<std::pair<int, int>> half_vec_slots(int n) {
  std::vector<std::pair<int, int>> out;
  out.reserve(static_cast<std::size_t>(tangent_dim(n)));
  for (int j = 0; j < n; ++j)
    for (int i = j; i < n; ++i) out.emplace_back(i, j);
  return out;
}

/// Column names x11, x21, ... in half-vectorization order (1-based).
inline std::vector<std::string> half_vec_names(int n) {
  std::vector<std::string> out;
  for (auto [i, j] : half_vec_slots(n))
    out.push_back("x" + std::to_string(i + 1) + std::to_string(j + 1));
  return out;
}

template <int N>
Coords<N> half_vec(const SymMatrix<N>& s) {
  const int n = s.dim();
  Coords<N> out(tangent_dim(n));
  int k = 0;
  for (int j = 0; j < n; ++j)
    for (int i = j; i < n; ++i) out(k++) = s(i, j);
  return out;
}

template <int N, class Derived>
SymMatrix<N> from_half_vec(const Eigen::MatrixBase<Derived>& x, int n = N) {
  if (x.size() != tangent_dim(n)) throw ContractError("from_half_vec: length mismatch");
  Mat<N> m(n, n);
  int k = 0;
  for (int j = 0; j < n; ++j)
    for (int i = j; i < n; ++i) m(i, j) = m(j, i) = x(k++);
  return SymMatrix<N>(m);
}

/// Coordinates <S, S_i>_F with respect to the standard symmetric basis.
template <int N>
Coords<N> basis_coords(const SymMatrix<N>& s) {
  const int n = s.dim();
  Coords<N> out(tangent_dim(n));
  for (int i = 0; i < n; ++i) out(i) = s(i, i);
  int k = n;
  for (int j = 0; j < n; ++j)
    for (int i = j + 1; i < n; ++i) out(k++) = std::numbers::sqrt2 * s(i, j);
  return out;
}

/// sum_i x_i S_i.
template <int N, class Derived>
SymMatrix<N> from_basis_coords(const Eigen::MatrixBase<Derived>& x, int n = N) {
  if (x.size() != tangent_dim(n)) throw ContractError("from_basis_coords: length mismatch");
  Mat<N> m = Mat<N>::Zero(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = x(i);
  int k = n;
  constexpr double r = 1.0 / std::numbers::sqrt2;
  for (int j = 0; j < n; ++j)
    for (int i = j + 1; i < n; ++i) m(i, j) = m(j, i) = r * x(k++);
  return SymMatrix<N>(m);
}

/// The standard symmetric basis {S_1, ..., S_d}, orthonormal under <.,.>_F.
template <int N>
class SymBasis {
 public:
  explicit SymBasis(int n = N) : n_(n) {
    if (n < 1) throw ContractError("SymBasis: n must be >= 1");
    const int d = tangent_dim(n);
    elements_.reserve(static_cast<std::size_t>(d));
    for (int k = 0; k < d; ++k) {
      Coords<N> e = Coords<N>::Zero(d);
      e(k) = 1.0;
      elements_.push_back(from_basis_coords<N>(e, n));
    }
  }

  int n() const { return n_; }
  int size() const { return static_cast<int>(elements_.size()); }
  const SymMatrix<N>& operator[](int i) const { return elements_[static_cast<std::size_t>(i)]; }
  auto begin() const { return elements_.begin(); }
  auto end() const { return elements_.end(); }

 private:
  int n_;
  std::vector<SymMatrix<N>> elements_;
};

template <int N>
SymBasis<N> sym_basis(int n = N) {
  return SymBasis<N>(n);
}

/// vec(P) = D nu(P), together with the Moore-Penrose inverse of D.
struct DuplicationMatrix {
  int n;
  Eigen::MatrixXd d;       // n^2 x d
  Eigen::MatrixXd d_pinv;  // d x n^2
};

inline DuplicationMatrix duplication(int n) {
  if (n < 1) throw ContractError("duplication: n must be >= 1");
  const int d = tangent_dim(n);
  Eigen::MatrixXd dm = Eigen::MatrixXd::Zero(n * n, d);
  int k = 0;
  for (auto [i, j] : half_vec_slots(n)) {
    dm(i + j * n, k) = 1.0;
    dm(j + i * n, k) = 1.0;
    ++k;
  }
  // D^T D is diagonal (1 on diagonal slots, 2 off-diagonal), so the
  // pseudo-inverse is exact.
  Eigen::VectorXd w = (dm.transpose() * dm).diagonal();
  Eigen::MatrixXd pinv = w.cwiseInverse().asDiagonal() * dm.transpose();
  return {n, std::move(dm), std::move(pinv)};
}

}  // namespace spdou
