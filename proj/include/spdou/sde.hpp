#pragma once

// Exponential-adapted Euler-Maruyama simulation of Riemannian Brownian motion
// and the OU process on the SPD cone.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spdou/errors.hpp"
#include "spdou/geometry.hpp"
#include "spdou/rng.hpp"
#include "spdou/symkernel.hpp"

namespace spdou {

/// theta, M, sigma^2 of dX = theta Log_X(M) dt + sigma dB.
///
/// theta = 0 is accepted so that the same machinery drives plain
/// Brownian motion.
template <int N>
class OuParams {
 public:
  OuParams(double theta, SpdMatrix<N> attractor, double sigma2)
      : theta_(theta), m_(std::move(attractor)), sigma2_(sigma2) {
    if (!std::isfinite(theta) || theta < 0.0) throw ContractError("OuParams: theta must be finite and >= 0");
    if (!std::isfinite(sigma2) || sigma2 <= 0.0) throw ContractError("OuParams: sigma2 must be finite and > 0");
    log_m_ = m_.log();
    mu_ = basis_coords(log_m_);
  }

  template <class Derived>
  static OuParams from_mu(double theta, const Eigen::MatrixBase<Derived>& mu, double sigma2, int n = N) {
    if (mu.size() != tangent_dim(n)) throw ContractError("OuParams: mu has the wrong length");
    return OuParams(theta, chart_h_inv<N>(mu, n), sigma2);
  }

  double theta() const { return theta_; }
  const SpdMatrix<N>& attractor() const { return m_; }
  double sigma2() const { return sigma2_; }
  double sigma() const { return std::sqrt(sigma2_); }
  const Coords<N>& mu() const { return mu_; }
  const SymMatrix<N>& log_attractor() const { return log_m_; }
  int dim() const { return m_.dim(); }
  int d() const { return tangent_dim(m_.dim()); }

  OuParams with_theta(double theta) const { return OuParams(theta, m_, sigma2_); }
  OuParams with_sigma2(double sigma2) const { return OuParams(theta_, m_, sigma2); }
  template <class Derived>
  OuParams with_mu(const Eigen::MatrixBase<Derived>& mu) const {
    return from_mu(theta_, mu, sigma2_, dim());
  }

 private:
  double theta_;
  SpdMatrix<N> m_;
  double sigma2_;
  SymMatrix<N> log_m_;
  Coords<N> mu_;
};

/// d x m matrix of unit normals.
inline Eigen::MatrixXd draw_normals(int d, int m, RandomStream& rng) {
  Eigen::MatrixXd z(d, m);
  for (int k = 0; k < m; ++k)
    for (int i = 0; i < d; ++i) z(i, k) = rng.normal();
  return z;
}

/// Raw unit-normal innovations, one d x m_j block per interval.
class NoiseBank {
 public:
  NoiseBank(int d, std::vector<Eigen::MatrixXd> blocks, std::uint64_t seed = 0)
      : d_(d), seed_(seed), blocks_(std::move(blocks)) {
    for (const auto& b : blocks_)
      if (b.rows() != d_ || b.cols() < 1) throw ContractError("NoiseBank: block must be d x m with m >= 1");
  }

  /// Interval j draws from stream (seed, tag, j).
  static NoiseBank draw(int d, std::span<const int> counts, std::uint64_t seed, std::uint64_t tag = 0) {
    std::vector<Eigen::MatrixXd> blocks;
    blocks.reserve(counts.size());
    for (std::size_t j = 0; j < counts.size(); ++j) {
      RandomStream rng(seed, stream_id({tag, j}));
      blocks.push_back(draw_normals(d, counts[j], rng));
    }
    return NoiseBank(d, std::move(blocks), seed);
  }

  int d() const { return d_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t size() const { return blocks_.size(); }
  const Eigen::MatrixXd& interval(std::size_t j) const { return blocks_.at(j); }
  int count(std::size_t j) const { return static_cast<int>(blocks_.at(j).cols()); }

  void replace(std::size_t j, Eigen::MatrixXd block) {
    if (block.rows() != d_ || block.cols() != blocks_.at(j).cols())
      throw ContractError("NoiseBank::replace: block shape differs");
    blocks_[j] = std::move(block);
  }

  /// All blocks side by side.
  Eigen::MatrixXd concatenated() const {
    Eigen::Index cols = 0;
    for (const auto& b : blocks_) cols += b.cols();
    Eigen::MatrixXd out(d_, cols);
    Eigen::Index c = 0;
    for (const auto& b : blocks_) {
      out.middleCols(c, b.cols()) = b;
      c += b.cols();
    }
    return out;
  }

 private:
  int d_;
  std::uint64_t seed_;
  std::vector<Eigen::MatrixXd> blocks_;
};

template <int N>
struct SdePath {
  std::vector<double> times;
  std::vector<SpdMatrix<N>> states;
  Metric metric = Metric::AffineInvariant;

  std::size_t size() const { return times.size(); }
  const SpdMatrix<N>& back() const { return states.back(); }
};

/// m+1 equally spaced points on [t0, t1].
inline std::vector<double> uniform_grid(double t0, double t1, int m) {
  if (m < 1 || !(t1 > t0)) throw ContractError("uniform_grid: need m >= 1 and t1 > t0");
  std::vector<double> g(static_cast<std::size_t>(m) + 1);
  for (int k = 0; k <= m; ++k) g[static_cast<std::size_t>(k)] = t0 + (t1 - t0) * k / m;
  g.back() = t1;
  return g;
}

namespace detail {

inline void check_grid(std::span<const double> grid) {
  if (grid.size() < 2) throw ContractError("grid needs at least two points");
  for (std::size_t k = 1; k < grid.size(); ++k)
    if (!(grid[k] > grid[k - 1])) throw ContractError("grid must be strictly increasing");
}

template <int N, class Derived>
SpdMatrix<N> em_step_impl(Metric metric, const SpdMatrix<N>& x, const OuParams<N>& p, double dt,
                          const Eigen::MatrixBase<Derived>& z, const SymMatrix<N>* pull) {
  if (!(dt > 0.0)) throw ContractError("em_step: dt must be > 0");
  if (z.size() != tangent_dim(x.dim())) throw ContractError("em_step: z has the wrong length");
  const double th = p.theta() * dt;
  const double sd = p.sigma() * std::sqrt(dt);
  switch (metric) {
    case Metric::Euclidean: {
      SymMatrix<N> v = sd * from_basis_coords<N>(z, x.dim());
      if (th != 0.0) v += th * (p.attractor().sym() - x.sym());
      if (pull) v += dt * *pull;
      try {
        return SpdMatrix<N>(x.sym() + v);
      } catch (const BoundaryError& e) {
        throw BoundaryError(std::string("Euclidean step left the SPD cone: ") + e.what(), e.value());
      }
    }
    case Metric::LogEuclidean: {
      // In log coordinates the LE exponential and logarithm are translations.
      const SymMatrix<N> y = x.log();
      SymMatrix<N> w = y + sd * from_basis_coords<N>(z, x.dim());
      if (th != 0.0) w += th * (p.log_attractor() - y);
      if (pull) w += dt * dlog(x, *pull);
      return sym_exp(w);
    }
    case Metric::AffineInvariant: {
      const Eigensystem<N>& e = x.eigen();
      const Mat<N> r = spectral_apply(e, [](double v) { return std::sqrt(v); }).mat();
      SymMatrix<N> w = sd * from_basis_coords<N>(z, x.dim());
      if (th != 0.0 || pull) {
        const Mat<N> ri = spectral_apply(e, [](double v) { return 1.0 / std::sqrt(v); }).mat();
        if (th != 0.0) w += th * SpdMatrix<N>(congruence(ri, p.attractor().sym())).log();
        if (pull) w += dt * congruence(ri, *pull);
      }
      return SpdMatrix<N>(congruence(r, sym_exp(w).sym()));
    }
  }
  throw ContractError("em_step: bad metric");
}

}  // namespace detail

/// One step Exp_X(theta Log_X(M) dt + sigma sqrt(dt) sum_j z_j E_j(X)).
template <int N, class Derived>
SpdMatrix<N> em_step(Metric metric, const SpdMatrix<N>& x, const OuParams<N>& params, double dt,
                     const Eigen::MatrixBase<Derived>& z) {
  return detail::em_step_impl(metric, x, params, dt, z, static_cast<const SymMatrix<N>*>(nullptr));
}

/// As above with an extra drift `pull` (a tangent vector at X) added to the increment.
template <int N, class Derived>
SpdMatrix<N> em_step(Metric metric, const SpdMatrix<N>& x, const OuParams<N>& params, double dt,
                     const Eigen::MatrixBase<Derived>& z, const TangentVector<N>& pull) {
  detail::require_base(x, pull, "em_step");
  return detail::em_step_impl(metric, x, params, dt, z, &pull.vec);
}

/// Calls visit(k, t_k, X_k) for every grid node; returns the terminal state.
/// Column k-1 of z drives the step into node k.
template <int N, class Visit>
SpdMatrix<N> simulate_ou_visit(Metric metric, const OuParams<N>& params, const SpdMatrix<N>& x0,
                               std::span<const double> grid, const Eigen::MatrixXd& z, Visit&& visit) {
  detail::check_grid(grid);
  if (z.cols() != static_cast<Eigen::Index>(grid.size() - 1) || z.rows() != params.d())
    throw ContractError("simulate_ou: noise must be d x (grid points - 1)");
  if (x0.dim() != params.dim()) throw ContractError("simulate_ou: dimension mismatch");
  SpdMatrix<N> x = x0;
  visit(std::size_t{0}, grid[0], x);
  for (std::size_t k = 1; k < grid.size(); ++k) {
    x = em_step(metric, x, params, grid[k] - grid[k - 1], z.col(static_cast<Eigen::Index>(k - 1)));
    visit(k, grid[k], x);
  }
  return x;
}

template <int N>
SdePath<N> simulate_ou(Metric metric, const OuParams<N>& params, const SpdMatrix<N>& x0,
                       std::span<const double> grid, const Eigen::MatrixXd& z) {
  SdePath<N> path;
  path.metric = metric;
  path.times.reserve(grid.size());
  path.states.reserve(grid.size());
  simulate_ou_visit(metric, params, x0, grid, z, [&](std::size_t, double t, const SpdMatrix<N>& x) {
    path.times.push_back(t);
    path.states.push_back(x);
  });
  return path;
}

/// The bank's blocks are consumed in order as one long innovation sequence.
template <int N>
SdePath<N> simulate_ou(Metric metric, const OuParams<N>& params, const SpdMatrix<N>& x0,
                       std::span<const double> grid, const NoiseBank& noise) {
  return simulate_ou(metric, params, x0, grid, noise.concatenated());
}

template <int N>
SpdMatrix<N> simulate_ou_terminal(Metric metric, const OuParams<N>& params, const SpdMatrix<N>& x0,
                                  std::span<const double> grid, const Eigen::MatrixXd& z) {
  return simulate_ou_visit(metric, params, x0, grid, z, [](std::size_t, double, const SpdMatrix<N>&) {});
}

/// Exact OU transitions in chart coordinates; returns d x |grid| (column k
/// is x(t_k)). Column k-1 of z drives the transition into node k.
template <int N, class Derived>
Eigen::MatrixXd simulate_le_exact(const OuParams<N>& params, const Eigen::MatrixBase<Derived>& x0,
                                  std::span<const double> grid, const Eigen::MatrixXd& z) {
  detail::check_grid(grid);
  const int d = params.d();
  if (x0.size() != d) throw ContractError("simulate_le_exact: x0 has the wrong length");
  if (z.cols() != static_cast<Eigen::Index>(grid.size() - 1) || z.rows() != d)
    throw ContractError("simulate_le_exact: noise must be d x (grid points - 1)");
  const double th = params.theta();
  const Eigen::VectorXd mu = params.mu();
  Eigen::MatrixXd out(d, static_cast<Eigen::Index>(grid.size()));
  out.col(0) = x0;
  for (std::size_t k = 1; k < grid.size(); ++k) {
    const double dt = grid[k] - grid[k - 1];
    const auto kk = static_cast<Eigen::Index>(k);
    double decay = 1.0;
    double var = params.sigma2() * dt;
    if (th > 0.0) {
      decay = std::exp(-th * dt);
      var = params.sigma2() * -std::expm1(-2.0 * th * dt) / (2.0 * th);
    }
    out.col(kk) = mu + (out.col(kk - 1) - mu) * decay + std::sqrt(var) * z.col(kk - 1);
  }
  return out;
}

/// First-order horizontal-lift coefficients: Z(i, j) = zeta_j^i =
/// delta_ij - t sum_l alpha_l Gamma_{li}^j.
template <class Derived>
Eigen::MatrixXd zeta_approx(const Christoffel& gamma, const Eigen::MatrixBase<Derived>& alpha, double t) {
  const int d = gamma.d();
  if (alpha.size() != d) throw ContractError("zeta_approx: alpha has the wrong length");
  Eigen::MatrixXd z = Eigen::MatrixXd::Identity(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      for (int l = 0; l < d; ++l) z(i, j) -= t * alpha(l) * gamma(l, i, j);
  return z;
}

namespace detail {
inline void put_double(std::ostream& os, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  os << buf;
}
}  // namespace detail

/// Header t,x11,x21,...; one row per node.
template <int N>
void write_path_csv(std::ostream& os, const SdePath<N>& path) {
  if (path.states.empty()) return;
  const int n = path.states.front().dim();
  os << "t";
  for (const auto& name : half_vec_names(n)) os << ',' << name;
  os << '\n';
  for (std::size_t k = 0; k < path.size(); ++k) {
    detail::put_double(os, path.times[k]);
    const auto v = half_vec(path.states[k].sym());
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      os << ',';
      detail::put_double(os, v(i));
    }
    os << '\n';
  }
}

/// Strictly increasing observation times paired with SPD observations.
template <int N>
struct ObservationSeries {
  std::vector<double> times;
  std::vector<SpdMatrix<N>> obs;

  std::size_t size() const { return times.size(); }
  std::size_t intervals() const { return times.empty() ? 0 : times.size() - 1; }
  int dim() const { return obs.empty() ? 0 : obs.front().dim(); }

  void validate(std::size_t min_size = 2) const {
    if (times.size() != obs.size()) throw ContractError("ObservationSeries: times and observations differ in length");
    if (times.size() < min_size) throw ContractError("ObservationSeries: too few observations");
    for (std::size_t k = 0; k < times.size(); ++k) {
      if (!std::isfinite(times[k])) throw ContractError("ObservationSeries: non-finite time");
      if (k > 0 && !(times[k] > times[k - 1])) throw ContractError("ObservationSeries: times must be strictly increasing");
      if (obs[k].dim() != obs.front().dim()) throw ContractError("ObservationSeries: observations differ in dimension");
    }
  }
};

/// Every `stride`-th node of a path, starting with the first.
template <int N>
ObservationSeries<N> subsample(const SdePath<N>& path, std::size_t stride) {
  if (stride < 1) throw ContractError("subsample: stride must be >= 1");
  ObservationSeries<N> out;
  for (std::size_t k = 0; k < path.size(); k += stride) {
    out.times.push_back(path.times[k]);
    out.obs.push_back(path.states[k]);
  }
  return out;
}

template <int N>
void write_observations_csv(std::ostream& os, const ObservationSeries<N>& data) {
  write_path_csv(os, SdePath<N>{data.times, data.obs, Metric::AffineInvariant});
}

}  // namespace spdou
