#pragma once

// Riemannian structures on the SPD cone: Euclidean, Log-Euclidean (LE) and
// Affine-Invariant (AI) metrics.

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "spdou/errors.hpp"
#include "spdou/symkernel.hpp"

namespace spdou {

enum class Metric { Euclidean, LogEuclidean, AffineInvariant };

inline std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::Euclidean: return "euclidean";
    case Metric::LogEuclidean: return "le";
    case Metric::AffineInvariant: return "ai";
  }
  return "?";
}

/// Accepts "euclidean"/"e", "le"/"log-euclidean", "ai"/"affine-invariant".
inline Metric parse_metric(std::string_view s) {
  if (s == "euclidean" || s == "e") return Metric::Euclidean;
  if (s == "le" || s == "log-euclidean") return Metric::LogEuclidean;
  if (s == "ai" || s == "affine-invariant") return Metric::AffineInvariant;
  throw ContractError("unknown metric '" + std::string(s) + "' (expected euclidean, le or ai)");
}

/// A symmetric matrix attached to a base point.
template <int N>
struct TangentVector {
  SpdMatrix<N> base;
  SymMatrix<N> vec;
};

namespace detail {

template <int N>
void require_base(const SpdMatrix<N>& p, const TangentVector<N>& s, const char* op) {
  if (!(s.base == p)) throw ContractError(std::string(op) + ": tangent vector based at a different point");
}

template <int N>
void require_same_dim(const SpdMatrix<N>& p, const SpdMatrix<N>& q, const char* op) {
  if (p.dim() != q.dim()) throw ContractError(std::string(op) + ": dimension mismatch");
}

}  // namespace detail

/// P^{-1/2} S P^{-1/2}.
template <int N>
SymMatrix<N> whiten(const SpdMatrix<N>& p, const SymMatrix<N>& s) {
  return congruence(p.inv_sqrt().mat(), s);
}

/// Metric tensor at P applied to two symmetric matrices (no base checks).
template <int N>
double inner_at(Metric metric, const SpdMatrix<N>& p, const SymMatrix<N>& a, const SymMatrix<N>& b) {
  switch (metric) {
    case Metric::Euclidean: return frobenius(a, b);
    case Metric::LogEuclidean: return frobenius(dlog(p, a), dlog(p, b));
    case Metric::AffineInvariant: {
      const Mat<N> w = p.inv_sqrt().mat();
      return frobenius(congruence(w, a), congruence(w, b));
    }
  }
  return 0.0;
}

template <int N>
double metric_inner(Metric metric, const SpdMatrix<N>& p, const TangentVector<N>& a,
                    const TangentVector<N>& b) {
  detail::require_base(p, a, "metric_inner");
  detail::require_base(p, b, "metric_inner");
  return inner_at(metric, p, a.vec, b.vec);
}

/// Riemannian exponential map at P applied to a symmetric matrix.
template <int N>
SpdMatrix<N> exp_map(Metric metric, const SpdMatrix<N>& p, const SymMatrix<N>& s) {
  switch (metric) {
    case Metric::Euclidean: return SpdMatrix<N>(p.sym() + s);
    case Metric::LogEuclidean: return sym_exp(p.log() + dlog(p, s));
    case Metric::AffineInvariant: {
      const SpdMatrix<N> e = sym_exp(whiten(p, s));
      return SpdMatrix<N>(congruence(p.sqrt().mat(), e.sym()));
    }
  }
  throw ContractError("exp_map: bad metric");
}

template <int N>
SpdMatrix<N> exp_map(Metric metric, const SpdMatrix<N>& p, const TangentVector<N>& s) {
  detail::require_base(p, s, "exp_map");
  return exp_map(metric, p, s.vec);
}

/// Riemannian logarithm map Log_P(Q), as a plain symmetric matrix.
template <int N>
SymMatrix<N> log_map_vec(Metric metric, const SpdMatrix<N>& p, const SpdMatrix<N>& q) {
  detail::require_same_dim(p, q, "log_map");
  switch (metric) {
    case Metric::Euclidean: return q.sym() - p.sym();
    case Metric::LogEuclidean: return dexp(log_eigensystem(p), q.log() - p.log());
    case Metric::AffineInvariant:
      return congruence(p.sqrt().mat(), SpdMatrix<N>(whiten(p, q.sym())).log());
  }
  throw ContractError("log_map: bad metric");
}

template <int N>
TangentVector<N> log_map(Metric metric, const SpdMatrix<N>& p, const SpdMatrix<N>& q) {
  return {p, log_map_vec(metric, p, q)};
}

/// Point at time t on the geodesic from P (t=0) to Q (t=1).
template <int N>
SpdMatrix<N> geodesic(Metric metric, const SpdMatrix<N>& p, const SpdMatrix<N>& q, double t) {
  detail::require_same_dim(p, q, "geodesic");
  switch (metric) {
    case Metric::Euclidean:
      try {
        return SpdMatrix<N>(p.sym() + t * (q.sym() - p.sym()));
      } catch (const BoundaryError& e) {
        std::ostringstream os;
        os.precision(17);
        os << "Euclidean geodesic leaves the SPD cone at t = " << t << " (" << e.what() << ")";
        throw BoundaryError(os.str(), t);
      }
    case Metric::LogEuclidean: return sym_exp((1.0 - t) * p.log() + t * q.log());
    case Metric::AffineInvariant: {
      const SymMatrix<N> l = SpdMatrix<N>(whiten(p, q.sym())).log();
      return SpdMatrix<N>(congruence(p.sqrt().mat(), sym_exp(t * l).sym()));
    }
  }
  throw ContractError("geodesic: bad metric");
}

/// Squared geodesic distance.
template <int N>
double dist2(Metric metric, const SpdMatrix<N>& p, const SpdMatrix<N>& q) {
  detail::require_same_dim(p, q, "dist2");
  switch (metric) {
    case Metric::Euclidean: return (q.sym() - p.sym()).squared_norm();
    case Metric::LogEuclidean: return (q.log() - p.log()).squared_norm();
    case Metric::AffineInvariant:
      return sym_eigen(whiten(p, q.sym())).values.array().log().square().sum();
  }
  return 0.0;
}

/// Orthonormal frame {E_i(P)} for the metric.
template <int N>
struct Frame {
  SpdMatrix<N> base;
  Metric metric;
  std::vector<SymMatrix<N>> elements;

  int size() const { return static_cast<int>(elements.size()); }
  TangentVector<N> element(int i) const { return {base, elements[static_cast<std::size_t>(i)]}; }
};

template <int N>
Frame<N> frame(Metric metric, const SpdMatrix<N>& p) {
  const SymBasis<N> basis(p.dim());
  Frame<N> f{p, metric, {}};
  f.elements.reserve(static_cast<std::size_t>(basis.size()));
  switch (metric) {
    case Metric::Euclidean:
      for (const auto& s : basis) f.elements.push_back(s);
      break;
    case Metric::LogEuclidean: {
      const auto le = log_eigensystem(p);
      for (const auto& s : basis) f.elements.push_back(dexp(le, s));
      break;
    }
    case Metric::AffineInvariant: {
      const Mat<N> r = p.sqrt().mat();
      for (const auto& s : basis) f.elements.push_back(congruence(r, s));
      break;
    }
  }
  return f;
}

/// sum_i z_i E_i(P) without materializing the frame (the frames are linear
/// images of the standard basis).
template <int N, class Derived>
SymMatrix<N> frame_apply(Metric metric, const SpdMatrix<N>& p, const Eigen::MatrixBase<Derived>& z) {
  const SymMatrix<N> s = from_basis_coords<N>(z, p.dim());
  switch (metric) {
    case Metric::Euclidean: return s;
    case Metric::LogEuclidean: return dexp(log_eigensystem(p), s);
    case Metric::AffineInvariant: return congruence(p.sqrt().mat(), s);
  }
  return s;
}

/// Riemannian gradient of Q -> d^2(., Q) at P: -2 Log_P(Q).
template <int N>
TangentVector<N> grad_dist2(Metric metric, const SpdMatrix<N>& p, const SpdMatrix<N>& q) {
  return {p, -2.0 * log_map_vec(metric, p, q)};
}

/// AI Christoffel symbols in the frame {P^{1/2} S_i P^{1/2}}; independent of P.
class Christoffel {
 public:
  explicit Christoffel(int n) : n_(n), d_(tangent_dim(n)), g_(static_cast<std::size_t>(d_ * d_ * d_)) {
    if (n < 1) throw ContractError("christoffel_ai: n must be >= 1");
    // Integer basis e_ii, e_ij + e_ji; the 1/sqrt(2) factors are applied
    // afterwards in pairs so that rational values come out exact.
    const SymBasis<Dynamic> b(n);
    std::vector<Eigen::MatrixXd> raw;
    for (int i = 0; i < d_; ++i) raw.push_back((b[i].mat().array() != 0.0).cast<double>().matrix());
    for (int i = 0; i < d_; ++i)
      for (int j = 0; j < d_; ++j) {
        const Eigen::MatrixXd anti = raw[i] * raw[j] + raw[j] * raw[i];
        for (int k = 0; k < d_; ++k) {
          const int off = (i >= n) + (j >= n) + (k >= n);
          const double scale = std::ldexp(off % 2 ? std::numbers::sqrt2 : 1.0, -(off + 1) / 2);
          at(i, j, k) = -0.5 * anti.cwiseProduct(raw[k]).sum() * scale;
        }
      }
  }

  int n() const { return n_; }
  int d() const { return d_; }
  /// Gamma_{ij}^k (0-based).
  double operator()(int i, int j, int k) const { return g_[index(i, j, k)]; }

 private:
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>((i * d_ + j) * d_ + k);
  }
  double& at(int i, int j, int k) { return g_[index(i, j, k)]; }

  int n_;
  int d_;
  std::vector<double> g_;
};

inline Christoffel christoffel_ai(int n) { return Christoffel(n); }

/// Gamma = sum_{i,r} Gamma_{ii}^r S_r.
template <int N>
SymMatrix<N> contracted_christoffel(const Christoffel& g) {
  Coords<N> c = Coords<N>::Zero(g.d());
  for (int r = 0; r < g.d(); ++r)
    for (int i = 0; i < g.d(); ++i) c(r) += g(i, i, r);
  return from_basis_coords<N>(c, g.n());
}

/// Global LE chart h_j(P) = <log P, S_j>_F.
template <int N>
Coords<N> chart_h(const SpdMatrix<N>& p) {
  return basis_coords(p.log());
}

template <int N, class Derived>
SpdMatrix<N> chart_h_inv(const Eigen::MatrixBase<Derived>& x, int n = N) {
  return sym_exp(from_basis_coords<N>(x, n));
}

/// AI metric tensor in half-vectorization coordinates, and its inverse.
struct AiMetricMatrix {
  Eigen::MatrixXd g;
  Eigen::MatrixXd g_inv;
};

namespace detail {
inline Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd k(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      k.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return k;
}
}  // namespace detail

template <int N>
AiMetricMatrix ai_metric_matrix(const SpdMatrix<N>& p) {
  const DuplicationMatrix dup = duplication(p.dim());
  const Eigen::MatrixXd pm = p.mat();
  const Eigen::MatrixXd pinv = p.inverse().mat();
  return {dup.d.transpose() * detail::kron(pinv, pinv) * dup.d,
          dup.d_pinv * detail::kron(pm, pm) * dup.d_pinv.transpose()};
}

}  // namespace spdou
