#pragma once

// Bayesian estimation of (theta, M, sigma^2): the guided-proposal data
// augmentation sampler for the AI metric and an exact-likelihood sampler for
// the LE metric.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "spdou/bridge.hpp"
#include "spdou/errors.hpp"
#include "spdou/geometry.hpp"
#include "spdou/parallel.hpp"
#include "spdou/rng.hpp"
#include "spdou/sde.hpp"
#include "spdou/symkernel.hpp"

namespace spdou {

struct Gaussian {
  double mean = 0.0;
  double var = 1.0;

  double log_pdf(double x) const {
    const double r = x - mean;
    return -0.5 * (r * r / var + std::log(2.0 * std::numbers::pi * var));
  }
};

/// Gaussian priors on log theta, log sigma^2 and (diagonal) mu.
struct Priors {
  Gaussian log_theta{0.0, 4.0};
  Gaussian log_sigma2{0.0, 4.0};
  Eigen::VectorXd mu_mean;
  Eigen::VectorXd mu_var;

  static Priors isotropic(int d, Gaussian log_theta, Gaussian log_sigma2, double mu_mean, double mu_var) {
    return {log_theta, log_sigma2, Eigen::VectorXd::Constant(d, mu_mean), Eigen::VectorXd::Constant(d, mu_var)};
  }

  void validate(int d) const {
    if (!(log_theta.var > 0.0) || !(log_sigma2.var > 0.0)) throw ContractError("Priors: variances must be > 0");
    if (mu_mean.size() != d || mu_var.size() != d) throw ContractError("Priors: mu prior has the wrong length");
    if (!(mu_var.array() > 0.0).all()) throw ContractError("Priors: mu variances must be > 0");
    if (!std::isfinite(log_theta.mean) || !std::isfinite(log_sigma2.mean) || !mu_mean.allFinite())
      throw ContractError("Priors: means must be finite");
  }

  double log_mu(const Eigen::VectorXd& mu) const {
    double s = 0.0;
    for (Eigen::Index i = 0; i < mu.size(); ++i) s += Gaussian{mu_mean(i), mu_var(i)}.log_pdf(mu(i));
    return s;
  }
};

/// Random-walk step sizes on log theta, log sigma^2 and each mu coordinate.
struct ProposalScales {
  double log_theta = 0.1;
  double log_sigma2 = 0.03;
  double mu = 0.05;

  void validate() const {
    if (!(log_theta > 0.0) || !(log_sigma2 > 0.0) || !(mu > 0.0))
      throw ContractError("ProposalScales: step sizes must be > 0");
  }
};

/// How the sigma^2 ratio normalizes each interval: -(d/2) log sigma^2, or
/// the -(d/2) sigma^2 printed in the published algorithm.
enum class SigmaRatio { Log, Literal };

struct McmcConfig {
  std::size_t iterations = 1000;
  std::size_t burn_in = 0;
  std::size_t thin = 1;
  std::uint64_t seed = 0;
  bool time_change = true;
  bool gamma_term = true;
  SigmaRatio sigma_ratio = SigmaRatio::Log;
  /// false: every likelihood difference is forced to 0 (prior-only chain).
  bool likelihood = true;
  int threads = 1;
  /// Recompute every cached log Phi after each accepted move and compare.
  bool check_cache = false;
  std::optional<double> theta0;
  std::optional<double> sigma20;
  std::optional<Eigen::VectorXd> mu0;

  void validate() const {
    if (thin < 1) throw ContractError("McmcConfig: thin must be >= 1");
    if (burn_in > iterations) throw ContractError("McmcConfig: burn_in exceeds iterations");
    if (theta0 && !(*theta0 > 0.0)) throw ContractError("McmcConfig: initial theta must be > 0");
    if (sigma20 && !(*sigma20 > 0.0)) throw ContractError("McmcConfig: initial sigma2 must be > 0");
  }
};

struct BlockTally {
  std::size_t proposed = 0;
  std::size_t accepted = 0;
  double rate() const { return proposed == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(proposed); }
  void add(bool ok) {
    ++proposed;
    accepted += ok ? 1 : 0;
  }
};

/// Kept draws, one row per kept iteration: theta, mu_1..mu_d, sigma2.
struct ChainOutput {
  int d = 0;
  std::vector<std::size_t> iteration;
  Eigen::MatrixXd draws;
  BlockTally bridges, sigma2, mu, theta;
  /// Proposals rejected because a recomputed path left the cone or overflowed.
  std::size_t numeric_rejects = 0;
  std::vector<std::string> diagnostics;
  std::uint64_t seed = 0;

  std::size_t rows() const { return iteration.size(); }
  Eigen::VectorXd column(Eigen::Index c) const { return draws.col(c); }
  Eigen::VectorXd theta_draws() const { return draws.col(0); }
  Eigen::VectorXd sigma2_draws() const { return draws.col(d + 1); }
  Eigen::VectorXd mu_draws(int i) const { return draws.col(1 + i); }

  std::vector<std::string> column_names() const {
    std::vector<std::string> names{"theta"};
    for (int i = 1; i <= d; ++i) names.push_back("mu_" + std::to_string(i));
    names.push_back("sigma2");
    return names;
  }
};

inline void write_chain_csv(std::ostream& os, const ChainOutput& out) {
  os << "iteration";
  for (const auto& c : out.column_names()) os << ',' << c;
  os << '\n';
  for (std::size_t r = 0; r < out.rows(); ++r) {
    os << out.iteration[r];
    for (Eigen::Index c = 0; c < out.draws.cols(); ++c) {
      os << ',';
      detail::put_double(os, out.draws(static_cast<Eigen::Index>(r), c));
    }
    os << '\n';
  }
}

namespace detail {

inline constexpr std::uint64_t kTagInit = 0x696e6974;     // "init"
inline constexpr std::uint64_t kTagNoise = 0x6e6f6973;    // "nois"
inline constexpr std::uint64_t kTagBridge = 0x62726964;   // "brid"
inline constexpr std::uint64_t kTagParam = 0x70617261;    // "para"
inline constexpr std::uint64_t kTagReplica = 0x7265706c;  // "repl"
inline constexpr std::size_t kMaxDiagnostics = 32;

/// Rows kept for iterations k > burn_in with (k - burn_in) % thin == 0; a
/// zero-iteration run keeps the initial state as iteration 0.
inline std::size_t kept_rows(const McmcConfig& c) {
  return c.iterations == 0 ? 1 : (c.iterations - c.burn_in) / c.thin;
}

inline bool keep_row(const McmcConfig& c, std::size_t k) {
  if (c.iterations == 0) return k == 0;
  return k > c.burn_in && (k - c.burn_in) % c.thin == 0;
}

template <int N>
Eigen::VectorXd param_row(const OuParams<N>& p) {
  Eigen::VectorXd r(p.d() + 2);
  r(0) = p.theta();
  r.segment(1, p.d()) = p.mu();
  r(p.d() + 1) = p.sigma2();
  return r;
}

/// Prior draw, or the prior centre (exp of the log means, mu at its mean)
/// when `centre` is set; explicit initial values in cfg override either.
template <int N>
OuParams<N> initial_params(const Priors& priors, const McmcConfig& cfg, int n, RandomStream& rng, bool centre = false) {
  const int d = tangent_dim(n);
  const double w = centre ? 0.0 : 1.0;
  const double lt = priors.log_theta.mean + w * std::sqrt(priors.log_theta.var) * rng.normal();
  const double ls = priors.log_sigma2.mean + w * std::sqrt(priors.log_sigma2.var) * rng.normal();
  Eigen::VectorXd mu(d);
  for (int i = 0; i < d; ++i) mu(i) = priors.mu_mean(i) + w * std::sqrt(priors.mu_var(i)) * rng.normal();
  if (cfg.mu0) {
    if (cfg.mu0->size() != d) throw ContractError("McmcConfig: initial mu has the wrong length");
    mu = *cfg.mu0;
  }
  return OuParams<N>::from_mu(cfg.theta0.value_or(std::exp(lt)), mu, cfg.sigma20.value_or(std::exp(ls)), n);
}

inline void note(ChainOutput& out, const std::string& msg) {
  ++out.numeric_rejects;
  if (out.diagnostics.size() < kMaxDiagnostics) out.diagnostics.push_back(msg);
}

}  // namespace detail

/// Sampler state: parameters, the innovations of every interval and the
/// cached log Phi each of them produces under the current parameters.
template <int N>
struct ChainState {
  OuParams<N> params;
  NoiseBank noise;
  std::vector<double> log_phi;
  std::size_t iteration = 0;
};

/// Algorithm of guided proposals on the SPD cone (AI metric). Each sweep
/// updates every interval's innovations, then sigma^2, mu and theta.
template <int N>
class AiSampler {
 public:
  AiSampler(ObservationSeries<N> data, Priors priors, ProposalScales scales, std::vector<int> m, McmcConfig cfg)
      : data_(std::move(data)), priors_(std::move(priors)), scales_(scales), m_(std::move(m)), cfg_(std::move(cfg)),
        state_(initialize()) {}

  const ChainState<N>& state() const { return state_; }
  const ChainOutput& tallies() const { return out_; }
  std::size_t intervals() const { return data_.intervals(); }

  BridgeProblem<N> problem(std::size_t j, const OuParams<N>& p) const {
    BridgeProblem<N> pb{data_.obs[j], data_.obs[j + 1], data_.times[j + 1] - data_.times[j], m_[j], p};
    pb.time_change = cfg_.time_change;
    pb.gamma_term = cfg_.gamma_term;
    return pb;
  }

  /// log Phi of every interval; nullopt if any path fails numerically.
  std::optional<std::vector<double>> all_log_phi(const OuParams<N>& p, const NoiseBank& noise,
                                                 std::string* why = nullptr) const {
    std::vector<double> out(intervals());
    std::vector<char> bad(intervals(), 0);
    std::vector<std::string> msg(intervals());
    parallel_for(intervals(), cfg_.threads, [&](std::size_t j) {
      try {
        out[j] = guided_log_phi(problem(j, p), noise.interval(j));
      } catch (const NumericFailure& e) {
        bad[j] = 1;
        msg[j] = e.what();
      } catch (const BoundaryError& e) {
        bad[j] = 1;
        msg[j] = e.what();
      }
    });
    for (std::size_t j = 0; j < bad.size(); ++j)
      if (bad[j]) {
        if (why) *why = "interval " + std::to_string(j) + ": " + msg[j];
        return std::nullopt;
      }
    return out;
  }

  /// The sigma^2-dependent terms outside Phi: sum_j f_j - (d/2) log sigma^2
  /// per interval (or the literal -(d/2) sigma^2).
  double outer_terms(double sigma2) const {
    const double d = tangent_dim(data_.dim());
    const double norm = cfg_.sigma_ratio == SigmaRatio::Log ? std::log(sigma2) : sigma2;
    return -sum_f_ / sigma2 - static_cast<double>(intervals()) * 0.5 * d * norm;
  }

  /// Approximate log-likelihood of the current state (up to a constant).
  double log_likelihood() const {
    double s = outer_terms(state_.params.sigma2());
    for (double v : state_.log_phi) s += v;
    return s;
  }

  void sweep() {
    const std::size_t it = ++state_.iteration;
    update_bridges(it);
    RandomStream rng(cfg_.seed, stream_id({detail::kTagParam, it}));
    update_sigma2(rng);
    update_mu(rng);
    update_theta(rng);
  }

  /// Throws NumericFailure if a cached log Phi differs from recomputation.
  void verify_cache() const {
    if (!cfg_.likelihood) return;
    const auto fresh = all_log_phi(state_.params, state_.noise);
    if (!fresh) throw NumericFailure("cache check: recomputation failed");
    for (std::size_t j = 0; j < fresh->size(); ++j)
      if (std::abs((*fresh)[j] - state_.log_phi[j]) > 1e-10 * std::max(1.0, std::abs((*fresh)[j])))
        throw NumericFailure("cache check: interval " + std::to_string(j) + " drifted");
  }

  ChainOutput run() {
    ChainOutput out;
    out.d = state_.params.d();
    out.seed = cfg_.seed;
    out.draws.resize(static_cast<Eigen::Index>(detail::kept_rows(cfg_)), out.d + 2);
    auto record = [&](std::size_t k) {
      out.draws.row(static_cast<Eigen::Index>(out.iteration.size())) = detail::param_row(state_.params).transpose();
      out.iteration.push_back(k);
    };
    if (cfg_.iterations == 0) record(0);
    for (std::size_t k = 1; k <= cfg_.iterations; ++k) {
      sweep();
      if (detail::keep_row(cfg_, k)) record(k);
    }
    out.bridges = out_.bridges;
    out.sigma2 = out_.sigma2;
    out.mu = out_.mu;
    out.theta = out_.theta;
    out.numeric_rejects = out_.numeric_rejects;
    out.diagnostics = out_.diagnostics;
    return out;
  }

 private:
  ChainState<N> initialize() {
    data_.validate();
    if (m_.size() != data_.intervals()) throw ContractError("run_mcmc_ai: need one imputation count per interval");
    for (int mj : m_)
      if (mj < 1) throw ContractError("run_mcmc_ai: imputation counts must be >= 1");
    const int n = data_.dim();
    priors_.validate(tangent_dim(n));
    scales_.validate();
    cfg_.validate();
    for (std::size_t j = 0; j < data_.intervals(); ++j)
      sum_f_ += dist2(Metric::AffineInvariant, data_.obs[j], data_.obs[j + 1]) / (2.0 * (data_.times[j + 1] - data_.times[j]));
    NoiseBank noise = NoiseBank::draw(tangent_dim(n), m_, cfg_.seed, detail::kTagNoise);
    RandomStream rng(cfg_.seed, stream_id({detail::kTagInit}));
    for (int attempt = 0; attempt < 100; ++attempt) {
      // the prior centre first, prior draws if it is numerically unusable
      OuParams<N> p = detail::initial_params<N>(priors_, cfg_, n, rng, attempt == 0);
      if (!cfg_.likelihood) return {p, std::move(noise), std::vector<double>(data_.intervals(), 0.0)};
      std::string why;
      if (auto phi = all_log_phi(p, noise, &why)) return {p, std::move(noise), std::move(*phi)};
      detail::note(out_, "initial state rejected: " + why);
    }
    throw NumericFailure("run_mcmc_ai: no numerically valid initial state in 100 draws");
  }

  void update_bridges(std::size_t it) {
    const std::size_t nint = intervals();
    std::vector<char> accepted(nint, 0);
    std::vector<std::string> msg(nint);
    std::vector<Eigen::MatrixXd> proposals(nint);
    std::vector<double> phi_new(nint, 0.0);
    parallel_for(nint, cfg_.threads, [&](std::size_t j) {
      RandomStream rng(cfg_.seed, stream_id({detail::kTagBridge, it, j}));
      proposals[j] = draw_normals(state_.params.d(), m_[j], rng);
      const double u = rng.uniform();
      if (!cfg_.likelihood) {
        accepted[j] = 1;
        return;
      }
      try {
        phi_new[j] = guided_log_phi(problem(j, state_.params), proposals[j]);
        accepted[j] = accept_bridge(phi_new[j], state_.log_phi[j], u) ? 1 : 0;
      } catch (const NumericFailure& e) {
        msg[j] = e.what();
      } catch (const BoundaryError& e) {
        msg[j] = e.what();
      }
    });
    for (std::size_t j = 0; j < nint; ++j) {
      out_.bridges.add(accepted[j] != 0);
      if (!msg[j].empty()) detail::note(out_, "bridge " + std::to_string(j) + ": " + msg[j]);
      if (accepted[j]) {
        state_.noise.replace(j, std::move(proposals[j]));
        state_.log_phi[j] = phi_new[j];
      }
    }
    if (cfg_.check_cache) verify_cache();
  }

  /// Metropolis step towards `prop` given the log prior difference; the
  /// likelihood difference includes the outer terms when sigma^2 moves.
  bool try_move(const OuParams<N>& prop, double log_prior_diff, RandomStream& rng, BlockTally& tally,
                const char* block) {
    const double u = rng.uniform();
    double log_alpha = log_prior_diff;
    std::optional<std::vector<double>> phi;
    if (cfg_.likelihood) {
      std::string why;
      phi = all_log_phi(prop, state_.noise, &why);
      if (!phi) {
        tally.add(false);
        detail::note(out_, std::string(block) + " proposal rejected: " + why);
        return false;
      }
      for (std::size_t j = 0; j < phi->size(); ++j) log_alpha += (*phi)[j] - state_.log_phi[j];
      if (prop.sigma2() != state_.params.sigma2())
        log_alpha += outer_terms(prop.sigma2()) - outer_terms(state_.params.sigma2());
    }
    const bool ok = std::log(u) < log_alpha;
    tally.add(ok);
    if (ok) {
      state_.params = prop;
      if (phi) state_.log_phi = std::move(*phi);
      if (cfg_.check_cache) verify_cache();
    }
    return ok;
  }

  void update_sigma2(RandomStream& rng) {
    const double cur = std::log(state_.params.sigma2());
    const double prop = cur + scales_.log_sigma2 * rng.normal();
    if (!std::isfinite(std::exp(prop)) || std::exp(prop) <= 0.0) {
      rng.uniform();
      out_.sigma2.add(false);
      return;
    }
    try_move(state_.params.with_sigma2(std::exp(prop)),
             priors_.log_sigma2.log_pdf(prop) - priors_.log_sigma2.log_pdf(cur), rng, out_.sigma2, "sigma2");
  }

  void update_mu(RandomStream& rng) {
    const Eigen::VectorXd cur = state_.params.mu();
    Eigen::VectorXd prop(cur.size());
    for (Eigen::Index i = 0; i < cur.size(); ++i) prop(i) = cur(i) + scales_.mu * rng.normal();
    std::optional<OuParams<N>> p;
    try {
      p = state_.params.with_mu(prop);
    } catch (const BoundaryError& e) {
      reject_mu(rng, e.what());
      return;
    } catch (const NumericFailure& e) {
      reject_mu(rng, e.what());
      return;
    }
    try_move(*p, priors_.log_mu(prop) - priors_.log_mu(cur), rng, out_.mu, "mu");
  }

  void reject_mu(RandomStream& rng, const char* what) {
    rng.uniform();
    out_.mu.add(false);
    detail::note(out_, std::string("mu proposal rejected: ") + what);
  }

  void update_theta(RandomStream& rng) {
    const double cur = std::log(state_.params.theta());
    const double prop = cur + scales_.log_theta * rng.normal();
    if (!(std::exp(prop) > 0.0) || !std::isfinite(std::exp(prop))) {
      rng.uniform();
      out_.theta.add(false);
      return;
    }
    try_move(state_.params.with_theta(std::exp(prop)),
             priors_.log_theta.log_pdf(prop) - priors_.log_theta.log_pdf(cur), rng, out_.theta, "theta");
  }

  ObservationSeries<N> data_;
  Priors priors_;
  ProposalScales scales_;
  std::vector<int> m_;
  McmcConfig cfg_;
  double sum_f_ = 0.0;
  ChainOutput out_;
  ChainState<N> state_;
};

template <int N>
ChainOutput run_mcmc_ai(const ObservationSeries<N>& data, const Priors& priors, const ProposalScales& scales,
                        const std::vector<int>& m, const McmcConfig& cfg) {
  return AiSampler<N>(data, priors, scales, m, cfg).run();
}

// ---------------------------------------------------------------------------
// LE metric: exact Gaussian OU likelihood in chart coordinates.

/// Chart coordinates of every observation, d x K.
template <int N>
Eigen::MatrixXd chart_coords(const ObservationSeries<N>& data) {
  const int d = tangent_dim(data.dim());
  Eigen::MatrixXd y(d, static_cast<Eigen::Index>(data.size()));
  for (std::size_t k = 0; k < data.size(); ++k) y.col(static_cast<Eigen::Index>(k)) = chart_h(data.obs[k]);
  return y;
}

/// Exact log transition density of dy = theta (mu - y) dt + sigma dB,
/// summed over consecutive columns of y.
inline double le_log_likelihood(const Eigen::MatrixXd& y, std::span<const double> times, double theta,
                                const Eigen::VectorXd& mu, double sigma2) {
  if (static_cast<std::size_t>(y.cols()) != times.size()) throw ContractError("le_log_likelihood: shape mismatch");
  if (mu.size() != y.rows()) throw ContractError("le_log_likelihood: mu has the wrong length");
  if (!(theta >= 0.0) || !(sigma2 > 0.0)) throw ContractError("le_log_likelihood: need theta >= 0, sigma2 > 0");
  const double d = static_cast<double>(y.rows());
  double s = 0.0;
  for (Eigen::Index k = 1; k < y.cols(); ++k) {
    const double dt = times[static_cast<std::size_t>(k)] - times[static_cast<std::size_t>(k - 1)];
    double decay = 1.0, var = sigma2 * dt;
    if (theta > 0.0) {
      decay = std::exp(-theta * dt);
      var = sigma2 * -std::expm1(-2.0 * theta * dt) / (2.0 * theta);
    }
    const Eigen::VectorXd r = y.col(k) - mu - decay * (y.col(k - 1) - mu);
    s += -0.5 * (r.squaredNorm() / var + d * std::log(2.0 * std::numbers::pi * var));
  }
  return s;
}

template <int N>
double le_log_likelihood(const ObservationSeries<N>& data, const OuParams<N>& p) {
  return le_log_likelihood(chart_coords(data), data.times, p.theta(), p.mu(), p.sigma2());
}

/// Random-walk Metropolis on (log sigma^2, mu, log theta) with the exact
/// LE likelihood; no imputation.
template <int N>
ChainOutput run_mcmc_le(const ObservationSeries<N>& data, const Priors& priors, const ProposalScales& scales,
                        const McmcConfig& cfg) {
  data.validate();
  const int n = data.dim();
  const int d = tangent_dim(n);
  priors.validate(d);
  scales.validate();
  cfg.validate();
  const Eigen::MatrixXd y = chart_coords(data);
  const std::span<const double> times(data.times);

  RandomStream init(cfg.seed, stream_id({detail::kTagInit}));
  const OuParams<N> p0 = detail::initial_params<N>(priors, cfg, n, init, true);
  double lt = std::log(p0.theta()), ls = std::log(p0.sigma2());
  Eigen::VectorXd mu = p0.mu();
  auto loglik = [&](double a, const Eigen::VectorXd& b, double c) {
    return cfg.likelihood ? le_log_likelihood(y, times, std::exp(a), b, std::exp(c)) : 0.0;
  };
  double ll = loglik(lt, mu, ls);

  ChainOutput out;
  out.d = d;
  out.seed = cfg.seed;
  out.draws.resize(static_cast<Eigen::Index>(detail::kept_rows(cfg)), d + 2);
  auto record = [&](std::size_t k) {
    auto row = out.draws.row(static_cast<Eigen::Index>(out.iteration.size()));
    row(0) = std::exp(lt);
    row.segment(1, d) = mu.transpose();
    row(d + 1) = std::exp(ls);
    out.iteration.push_back(k);
  };
  auto step = [&](double log_prior_diff, double ll_new, RandomStream& rng, BlockTally& tally) {
    const bool ok = std::isfinite(ll_new) && std::log(rng.uniform()) < log_prior_diff + ll_new - ll;
    tally.add(ok);
    if (ok) ll = ll_new;
    return ok;
  };
  if (cfg.iterations == 0) record(0);
  for (std::size_t k = 1; k <= cfg.iterations; ++k) {
    RandomStream rng(cfg.seed, stream_id({detail::kTagParam, k}));
    const double ls_new = ls + scales.log_sigma2 * rng.normal();
    if (step(priors.log_sigma2.log_pdf(ls_new) - priors.log_sigma2.log_pdf(ls), loglik(lt, mu, ls_new), rng, out.sigma2))
      ls = ls_new;
    Eigen::VectorXd mu_new(d);
    for (int i = 0; i < d; ++i) mu_new(i) = mu(i) + scales.mu * rng.normal();
    if (step(priors.log_mu(mu_new) - priors.log_mu(mu), loglik(lt, mu_new, ls), rng, out.mu)) mu = mu_new;
    const double lt_new = lt + scales.log_theta * rng.normal();
    if (step(priors.log_theta.log_pdf(lt_new) - priors.log_theta.log_pdf(lt), loglik(lt_new, mu, ls), rng, out.theta))
      lt = lt_new;
    if (detail::keep_row(cfg, k)) record(k);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prior reproduction (simulation-based calibration).

template <int N>
struct PriorCheckConfig {
  std::size_t replications = 100;
  int n = 2;
  Metric metric = Metric::AffineInvariant;
  double horizon = 50.0;
  double spacing = 0.1;
  /// Step of the fine simulation grid the data are subsampled from.
  double sim_dt = 1e-3;
  /// Imputation count per interval (AI only).
  int m = 20;
  McmcConfig mcmc;
  /// Worker threads across replications.
  int threads = 1;
};

struct PriorCheckResult {
  std::vector<std::string> columns;
  /// One row per successful replication: posterior quantile of the truth.
  Eigen::MatrixXd quantiles;
  Eigen::MatrixXd truths;
  std::size_t failures = 0;
  std::vector<std::string> diagnostics;
};

/// Fraction of draws below x, ties counted half.
inline double posterior_quantile(const Eigen::VectorXd& draws, double x) {
  if (draws.size() == 0) throw ContractError("posterior_quantile: no draws");
  double c = 0.0;
  for (Eigen::Index i = 0; i < draws.size(); ++i) c += draws(i) < x ? 1.0 : (draws(i) == x ? 0.5 : 0.0);
  return c / static_cast<double>(draws.size());
}

/// Simulates an OU path from x0 on a fine grid and keeps every node whose
/// time is a multiple of `spacing`.
template <int N>
ObservationSeries<N> simulate_observations(Metric metric, const OuParams<N>& p, const SpdMatrix<N>& x0,
                                           double horizon, double spacing, double sim_dt, RandomStream& rng) {
  const double per = spacing / sim_dt;
  const auto stride = static_cast<std::size_t>(std::llround(per));
  if (stride < 1 || std::abs(per - static_cast<double>(stride)) > 1e-9 * per)
    throw ContractError("simulate_observations: spacing must be a multiple of sim_dt");
  const auto nobs = static_cast<std::size_t>(std::llround(horizon / spacing));
  const int d = p.d();
  ObservationSeries<N> out;
  out.times.reserve(nobs + 1);
  out.obs.reserve(nobs + 1);
  out.times.push_back(0.0);
  out.obs.push_back(x0);
  SpdMatrix<N> x = x0;
  Eigen::VectorXd z(d);
  for (std::size_t j = 1; j <= nobs; ++j) {
    for (std::size_t s = 0; s < stride; ++s) {
      for (int i = 0; i < d; ++i) z(i) = rng.normal();
      x = em_step(metric, x, p, sim_dt, z);
    }
    out.times.push_back(static_cast<double>(j) * spacing);
    out.obs.push_back(x);
  }
  return out;
}

template <int N>
PriorCheckResult prior_reproduction(const Priors& priors, const ProposalScales& scales, const PriorCheckConfig<N>& cfg) {
  if (cfg.replications < 20) throw ContractError("prior_reproduction: need at least 20 replications");
  if (cfg.metric == Metric::Euclidean) throw ContractError("prior_reproduction: metric must be le or ai");
  const int n = cfg.n, d = tangent_dim(n);
  priors.validate(d);
  scales.validate();
  cfg.mcmc.validate();
  const std::size_t R = cfg.replications;
  std::vector<std::optional<Eigen::VectorXd>> q(R), truth(R);
  std::vector<std::string> why(R);
  parallel_for(R, cfg.threads, [&](std::size_t r) {
    try {
      RandomStream rng(cfg.mcmc.seed, stream_id({detail::kTagReplica, r}));
      const OuParams<N> p = detail::initial_params<N>(priors, McmcConfig{}, n, rng);
      const SpdMatrix<N> x0 = SpdMatrix<N>::identity(n);
      const auto data = simulate_observations(cfg.metric, p, x0, cfg.horizon, cfg.spacing, cfg.sim_dt, rng);
      McmcConfig mc = cfg.mcmc;
      mc.seed = stream_id({cfg.mcmc.seed, detail::kTagReplica, r});
      mc.threads = 1;
      const ChainOutput out =
          cfg.metric == Metric::LogEuclidean
              ? run_mcmc_le(data, priors, scales, mc)
              : run_mcmc_ai(data, priors, scales, std::vector<int>(data.intervals(), cfg.m), mc);
      const Eigen::VectorXd t = detail::param_row(p);
      Eigen::VectorXd qr(t.size());
      for (Eigen::Index c = 0; c < t.size(); ++c) qr(c) = posterior_quantile(out.draws.col(c), t(c));
      q[r] = qr;
      truth[r] = t;
    } catch (const std::exception& e) {
      why[r] = e.what();
    }
  });
  PriorCheckResult res;
  ChainOutput names;
  names.d = d;
  res.columns = names.column_names();
  std::size_t ok = 0;
  for (std::size_t r = 0; r < R; ++r) ok += q[r] ? 1 : 0;
  res.failures = R - ok;
  res.quantiles.resize(static_cast<Eigen::Index>(ok), d + 2);
  res.truths.resize(static_cast<Eigen::Index>(ok), d + 2);
  Eigen::Index row = 0;
  for (std::size_t r = 0; r < R; ++r) {
    if (!q[r]) {
      res.diagnostics.push_back("replication " + std::to_string(r) + ": " + why[r]);
      continue;
    }
    res.quantiles.row(row) = q[r]->transpose();
    res.truths.row(row) = truth[r]->transpose();
    ++row;
  }
  if (static_cast<double>(res.failures) > 0.05 * static_cast<double>(R))
    throw NumericFailure("prior_reproduction: " + std::to_string(res.failures) + " of " + std::to_string(R) +
                         " replications failed");
  return res;
}

}  // namespace spdou
