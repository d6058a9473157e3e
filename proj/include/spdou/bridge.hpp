#pragma once

// Guided-proposal bridges on the SPD cone under the AI metric, their
// log-likelihood corrections, and a naive rejection sampler used as an oracle.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <utility>
#include <vector>

#include "spdou/errors.hpp"
#include "spdou/geometry.hpp"
#include "spdou/rng.hpp"
#include "spdou/sde.hpp"
#include "spdou/symkernel.hpp"

namespace spdou {

/// Gamma = sum_{i,r} Gamma_ii^r S_r for dimension n, cached per thread.
template <int N>
const SymMatrix<N>& contracted_gamma(int n) {
  thread_local std::vector<std::optional<SymMatrix<N>>> cache;
  if (n < 1) throw ContractError("contracted_gamma: n must be >= 1");
  if (cache.size() <= static_cast<std::size_t>(n)) cache.resize(static_cast<std::size_t>(n) + 1);
  auto& slot = cache[static_cast<std::size_t>(n)];
  if (!slot) slot = contracted_christoffel<N>(christoffel_ai(n));
  return *slot;
}

/// Image of the uniform grid on [0, T] under s -> s (2 - s/T); m+1 nodes,
/// the last one equal to T.
inline std::vector<double> time_change_grid(double horizon, int m) {
  if (m < 1) throw ContractError("time_change_grid: m must be >= 1");
  if (!(horizon > 0.0)) throw ContractError("time_change_grid: horizon must be > 0");
  std::vector<double> g(static_cast<std::size_t>(m) + 1);
  for (int k = 0; k <= m; ++k) {
    const double s = horizon * k / m;
    g[static_cast<std::size_t>(k)] = s * (2.0 - s / horizon);
  }
  g.back() = horizon;
  return g;
}

template <int N>
struct BridgeProblem {
  SpdMatrix<N> u;
  SpdMatrix<N> v;
  double horizon;
  int m;
  OuParams<N> params;
  bool time_change = false;
  /// Include the <Gamma, log(X^{-1/2} V X^{-1/2})>/2 term of log Phi.
  bool gamma_term = true;

  void validate() const {
    if (u.dim() != v.dim() || u.dim() != params.dim()) throw ContractError("BridgeProblem: dimension mismatch");
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ContractError("BridgeProblem: horizon must be > 0");
    if (m < 1) throw ContractError("BridgeProblem: m must be >= 1");
  }

  /// Local imputation grid t_0 = 0 < ... < t_m = T.
  std::vector<double> grid() const {
    return time_change ? time_change_grid(horizon, m) : uniform_grid(0.0, horizon, m);
  }
};

/// (d/2) log((T - t)/T).
inline double phi_approx(int d, double t, double horizon) {
  if (!(t >= 0.0) || !(t < horizon)) throw ContractError("phi_approx: need 0 <= t < T");
  return 0.5 * d * std::log1p(-t / horizon);
}

/// -d_AI^2(X, V) / (2 sigma^2 (T - t)).
template <int N>
double log_f(const SpdMatrix<N>& x, const SpdMatrix<N>& v, double sigma2, double horizon, double t) {
  if (!(t < horizon)) throw ContractError("log_f: need t < T");
  if (!(sigma2 > 0.0)) throw ContractError("log_f: sigma2 must be > 0");
  return -dist2(Metric::AffineInvariant, x, v) / (2.0 * sigma2 * (horizon - t));
}

/// Whitened logs at a node: log(X^{-1/2} M X^{-1/2}) and log(X^{-1/2} V X^{-1/2}).
template <int N>
struct NodeLogs {
  SymMatrix<N> log_m;
  SymMatrix<N> log_v;
};

/// One summand of the Phi Riemann sum.
template <int N>
double phi_summand(const NodeLogs<N>& logs, const SymMatrix<N>* gamma, double theta, double sigma2,
                   double t, double t_next, double horizon) {
  const double w = (t_next - t) / (horizon - t);
  double s = gamma ? 0.5 * frobenius(*gamma, logs.log_v) : 0.0;
  if (theta != 0.0) s += theta * frobenius(logs.log_m, logs.log_v) / sigma2;
  return w * s;
}

namespace detail {

template <int N>
struct WhitenedNode {
  Mat<N> r;   // X^{1/2}
  Mat<N> ri;  // X^{-1/2}
  NodeLogs<N> logs;
};

template <int N>
WhitenedNode<N> whiten_node(const SpdMatrix<N>& x, const BridgeProblem<N>& pb, bool need_m) {
  const Eigensystem<N>& e = x.eigen();
  WhitenedNode<N> w;
  w.r = spectral_apply(e, [](double l) { return std::sqrt(l); }).mat();
  w.ri = spectral_apply(e, [](double l) { return 1.0 / std::sqrt(l); }).mat();
  w.logs.log_v = SpdMatrix<N>(congruence(w.ri, pb.v.sym())).log();
  w.logs.log_m = need_m ? SpdMatrix<N>(congruence(w.ri, pb.params.attractor().sym())).log()
                        : SymMatrix<N>(x.dim());
  return w;
}

template <int N, class Derived>
SpdMatrix<N> guided_step_whitened(const WhitenedNode<N>& w, const BridgeProblem<N>& pb, double t, double dt,
                                  const Eigen::MatrixBase<Derived>& z) {
  const auto& p = pb.params;
  SymMatrix<N> inc = (dt / (pb.horizon - t)) * w.logs.log_v +
                     (p.sigma() * std::sqrt(dt)) * from_basis_coords<N>(z, pb.u.dim());
  if (p.theta() != 0.0) inc += (p.theta() * dt) * w.logs.log_m;
  return SpdMatrix<N>(congruence(w.r, sym_exp(inc).sym()));
}

}  // namespace detail

/// em_step under the AI metric with pull Log_X(V)/(T - t).
template <int N, class Derived>
SpdMatrix<N> guided_step(const SpdMatrix<N>& x, const BridgeProblem<N>& pb, double t, double dt,
                         const Eigen::MatrixBase<Derived>& z) {
  if (!(dt > 0.0)) throw ContractError("guided_step: dt must be > 0");
  if (!(t + dt < pb.horizon)) throw ContractError("guided_step: need t + dt < T");
  if (z.size() != pb.params.d()) throw ContractError("guided_step: z has the wrong length");
  return detail::guided_step_whitened(detail::whiten_node(x, pb, pb.params.theta() != 0.0), pb, t, dt, z);
}

/// Drives the guided proposal through the problem grid with innovation
/// block z (d x m; column k drives node k -> k+1, the last column is unused
/// because the final node is pinned to V). Calls visit(k, t_k, X_k, logs_k)
/// for k < m, then visit(m, T, V, nullptr). Returns log Phi.
template <int N, class Visit>
double guided_visit(const BridgeProblem<N>& pb, const Eigen::MatrixXd& z, Visit&& visit) {
  pb.validate();
  if (z.rows() != pb.params.d() || z.cols() != pb.m)
    throw ContractError("guided bridge: noise block must be d x m");
  const std::vector<double> grid = pb.grid();
  const SymMatrix<N>* gamma = pb.gamma_term ? &contracted_gamma<N>(pb.u.dim()) : nullptr;
  const bool need_m = pb.params.theta() != 0.0;
  const double T = pb.horizon;
  double log_phi = 0.0;
  SpdMatrix<N> x = pb.u;
  for (int k = 0; k < pb.m; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    const auto w = detail::whiten_node(x, pb, need_m);
    visit(kk, grid[kk], static_cast<const SpdMatrix<N>&>(x), &w.logs);
    log_phi += phi_summand(w.logs, gamma, pb.params.theta(), pb.params.sigma2(), grid[kk], grid[kk + 1], T);
    if (k + 1 < pb.m) x = detail::guided_step_whitened(w, pb, grid[kk], grid[kk + 1] - grid[kk], z.col(k));
  }
  visit(static_cast<std::size_t>(pb.m), T, static_cast<const SpdMatrix<N>&>(pb.v),
        static_cast<const NodeLogs<N>*>(nullptr));
  if (!std::isfinite(log_phi)) throw NumericFailure("guided bridge: log Phi is not finite");
  return log_phi;
}

/// log Phi of a guided bridge given only its innovations.
template <int N>
double guided_log_phi(const BridgeProblem<N>& pb, const Eigen::MatrixXd& z) {
  return guided_visit(pb, z, [](std::size_t, double, const SpdMatrix<N>&, const NodeLogs<N>*) {});
}

template <int N>
struct GuidedPath {
  SdePath<N> path;
  std::vector<NodeLogs<N>> logs;  // one per node before T
};

template <int N>
std::pair<GuidedPath<N>, double> sample_guided_bridge(const BridgeProblem<N>& pb, const Eigen::MatrixXd& z) {
  GuidedPath<N> gp;
  gp.path.metric = Metric::AffineInvariant;
  gp.path.times.reserve(static_cast<std::size_t>(pb.m) + 1);
  gp.path.states.reserve(static_cast<std::size_t>(pb.m) + 1);
  gp.logs.reserve(static_cast<std::size_t>(pb.m));
  const double lp = guided_visit(pb, z, [&](std::size_t, double t, const SpdMatrix<N>& x, const NodeLogs<N>* l) {
    gp.path.times.push_back(t);
    gp.path.states.push_back(x);
    if (l) gp.logs.push_back(*l);
  });
  return {std::move(gp), lp};
}

/// Bank form: a single-interval bank drives one bridge.
template <int N>
std::pair<GuidedPath<N>, double> sample_guided_bridge(const BridgeProblem<N>& pb, const NoiseBank& noise) {
  if (noise.size() != 1) throw ContractError("sample_guided_bridge: expected a single-interval bank");
  return sample_guided_bridge(pb, noise.interval(0));
}

/// Riemann sum for log Phi recomputed from the stored states.
template <int N>
double log_Phi_approx(const GuidedPath<N>& gp, const BridgeProblem<N>& pb) {
  const auto& times = gp.path.times;
  if (times.size() < 2) throw ContractError("log_Phi_approx: path needs at least two nodes");
  const SymMatrix<N>* gamma = pb.gamma_term ? &contracted_gamma<N>(pb.u.dim()) : nullptr;
  double s = 0.0;
  for (std::size_t k = 0; k + 1 < times.size(); ++k) {
    if (!(times[k] < pb.horizon)) throw ContractError("log_Phi_approx: node at or beyond T");
    const auto w = detail::whiten_node(gp.path.states[k], pb, pb.params.theta() != 0.0);
    s += phi_summand(w.logs, gamma, pb.params.theta(), pb.params.sigma2(), times[k], times[k + 1], pb.horizon);
  }
  return s;
}

/// Metropolis-Hastings acceptance for a bridge proposal.
inline bool accept_bridge(double log_phi_new, double log_phi_old, double u) {
  if (!std::isfinite(log_phi_new) || !std::isfinite(log_phi_old))
    throw ContractError("accept_bridge: non-finite log Phi");
  if (!(u > 0.0 && u < 1.0)) throw ContractError("accept_bridge: u must lie in (0, 1)");
  return std::log(u) < log_phi_new - log_phi_old;
}

/// Independence sampler over innovations targeting the bridge law.
/// After `burn_in` proposals, every `thin`-th state is reported through
/// visit(sample_index, k, t_k, X_k) for all nodes of the current bridge.
struct GuidedChainStats {
  std::size_t proposals = 0;
  std::size_t accepted = 0;
  double acceptance_rate() const { return proposals ? double(accepted) / double(proposals) : 0.0; }
};

template <int N, class Visit>
GuidedChainStats guided_bridge_chain(const BridgeProblem<N>& pb, std::size_t samples, std::size_t burn_in,
                                     std::size_t thin, std::uint64_t seed, Visit&& visit) {
  if (thin < 1) throw ContractError("guided_bridge_chain: thin must be >= 1");
  const int d = pb.params.d();
  auto draw = [&](std::uint64_t i) {
    RandomStream rng(seed, stream_id({0x62726964ULL, i}));
    return draw_normals(d, pb.m, rng);
  };
  GuidedChainStats st;
  Eigen::MatrixXd z = draw(0);
  double lp = guided_log_phi(pb, z);
  const std::size_t total = burn_in + samples * thin;
  RandomStream accept_rng(seed, stream_id({0x61636365ULL}));
  for (std::size_t i = 1; i <= total; ++i) {
    Eigen::MatrixXd zn = draw(i);
    const double lpn = guided_log_phi(pb, zn);
    ++st.proposals;
    if (accept_bridge(lpn, lp, accept_rng.uniform())) {
      z = std::move(zn);
      lp = lpn;
      ++st.accepted;
    }
    if (i > burn_in && (i - burn_in) % thin == 0) {
      const std::size_t s = (i - burn_in) / thin - 1;
      guided_visit(pb, z, [&](std::size_t k, double t, const SpdMatrix<N>& x, const NodeLogs<N>*) {
        visit(s, k, t, x);
      });
    }
  }
  return st;
}

template <int N>
struct RejectionResult {
  SdePath<N> path;
  std::size_t attempts;
};

/// Forward paths of the unconditioned process on the problem grid (always
/// uniform) until d_AI(X_T, V) < eps. Attempt i uses stream (seed, tag, i).
template <int N>
RejectionResult<N> sample_rejection_bridge(const BridgeProblem<N>& pb, double eps, std::size_t max_attempts,
                                           std::uint64_t seed, std::uint64_t tag = 0) {
  pb.validate();
  if (!(eps > 0.0)) throw ContractError("sample_rejection_bridge: eps must be > 0");
  const std::vector<double> grid = uniform_grid(0.0, pb.horizon, pb.m);
  const int d = pb.params.d();
  const double eps2 = eps * eps;
  SdePath<N> path;
  path.metric = Metric::AffineInvariant;
  path.times = grid;
  path.states.reserve(grid.size());
  Eigen::VectorXd z(d);
  for (std::size_t a = 0; a < max_attempts; ++a) {
    RandomStream rng(seed, stream_id({tag, a}));
    path.states.clear();
    path.states.push_back(pb.u);
    for (std::size_t k = 1; k < grid.size(); ++k) {
      for (int i = 0; i < d; ++i) z(i) = rng.normal();
      path.states.push_back(em_step(Metric::AffineInvariant, path.states.back(), pb.params, grid[k] - grid[k - 1], z));
    }
    if (std::isinf(eps) || dist2(Metric::AffineInvariant, path.states.back(), pb.v) < eps2)
      return {std::move(path), a + 1};
  }
  throw AttemptsExhausted("sample_rejection_bridge: no path ended within eps of V", max_attempts);
}

/// Header t,x11,...,det,trace; one row per node.
template <int N>
void write_bridge_csv(std::ostream& os, const SdePath<N>& path) {
  if (path.states.empty()) return;
  const int n = path.states.front().dim();
  os << "t";
  for (const auto& name : half_vec_names(n)) os << ',' << name;
  os << ",det,trace\n";
  for (std::size_t k = 0; k < path.size(); ++k) {
    detail::put_double(os, path.times[k]);
    const auto v = half_vec(path.states[k].sym());
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      os << ',';
      detail::put_double(os, v(i));
    }
    os << ',';
    detail::put_double(os, path.states[k].det());
    os << ',';
    detail::put_double(os, path.states[k].trace());
    os << '\n';
  }
}

}  // namespace spdou
