// spdou: simulate, fit and check OU diffusions on SPD matrices.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "spdou/bridge.hpp"
#include "spdou/errors.hpp"
#include "spdou/geometry.hpp"
#include "spdou/gof.hpp"
#include "spdou/inference.hpp"
#include "spdou/io.hpp"
#include "spdou/marketdata.hpp"
#include "spdou/parallel.hpp"
#include "spdou/rng.hpp"
#include "spdou/sde.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace spdou;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

/// Invalid option value; the message names the option.
struct ConfigError : std::runtime_error {
  ConfigError(const std::string& field, const std::string& msg) : std::runtime_error(field + ": " + msg) {}
};

std::string config_echo;  // resolved configuration, INI form

Metric metric_option(const std::string& field, const std::string& text) {
  try {
    return parse_metric(text);
  } catch (const ContractError&) {
    throw ConfigError(field, "unknown metric '" + text + "' (expected euclidean, le or ai)");
  }
}

Gaussian gaussian_option(const std::string& field, const std::vector<double>& mv) {
  if (mv.size() != 2 || !(mv[1] > 0.0)) throw ConfigError(field, "expected 'mean,variance' with variance > 0");
  return {mv[0], mv[1]};
}

/// A vector option that is either one value (broadcast) or exactly d values.
Eigen::VectorXd broadcast(const std::string& field, const std::vector<double>& v, int d) {
  if (v.size() == 1) return Eigen::VectorXd::Constant(d, v[0]);
  if (static_cast<int>(v.size()) != d)
    throw ConfigError(field, "expected 1 or " + std::to_string(d) + " values, got " + std::to_string(v.size()));
  return Eigen::Map<const Eigen::VectorXd>(v.data(), d);
}

template <int N>
SpdMatrix<N> spd_option(const std::string& field, const std::vector<double>& nu, int n) {
  if (nu.empty()) return SpdMatrix<N>::identity(n);
  if (static_cast<int>(nu.size()) != tangent_dim(n))
    throw ConfigError(field, "expected " + std::to_string(tangent_dim(n)) + " half-vectorized entries");
  try {
    return SpdMatrix<N>(from_half_vec<N>(Eigen::Map<const Eigen::VectorXd>(nu.data(), tangent_dim(n)), n).mat());
  } catch (const BoundaryError& e) {
    throw ConfigError(field, std::string("matrix is not SPD (") + e.what() + ")");
  }
}

json sidecar(const std::string& command, std::uint64_t seed) {
  json j;
  j["command"] = command;
  j["seed"] = seed;
  j["config"] = config_echo;
  return j;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

void write_text(const fs::path& p, const std::string& text) {
  write_atomic(p, [&](std::ostream& os) { os << text; });
}

fs::path sidecar_path(const fs::path& out) {
  fs::path p = out;
  p.replace_extension(".json");
  return p;
}

template <class F>
std::string to_string_with(F&& f) {
  std::ostringstream os;
  f(os);
  return os.str();
}

double mean_of(const Eigen::VectorXd& v) { return v.mean(); }
double sd_of(const Eigen::VectorXd& v) {
  return v.size() < 2 ? 0.0 : std::sqrt((v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1));
}

/// Calls f.template operator()<N>() with N fixed for n = 2, 3, else dynamic.
template <class F>
int dispatch(int n, F&& f) {
  if (n == 2) return f.template operator()<2>();
  if (n == 3) return f.template operator()<3>();
  return f.template operator()<Dynamic>();
}

// ---------------------------------------------------------------------------

struct SimulateOpts {
  std::string metric = "ai";
  int n = 2;
  double theta = 0.5;
  std::vector<double> attractor;
  double sigma2 = 1.0;
  std::vector<double> x0;
  double dt = 1e-3;
  long steps = 1000;
  long every = 1;
  std::uint64_t seed = 1;
  std::string out;
};

template <int N>
int run_simulate(const SimulateOpts& o) {
  const Metric metric = metric_option("--metric", o.metric);
  if (o.n < 1) throw ConfigError("--n", "must be >= 1");
  if (!(o.dt > 0.0)) throw ConfigError("--dt", "must be > 0");
  if (o.steps < 1) throw ConfigError("--steps", "must be >= 1");
  if (o.every < 1) throw ConfigError("--every", "must be >= 1");
  if (!(o.theta >= 0.0)) throw ConfigError("--theta", "must be >= 0");
  if (!(o.sigma2 > 0.0)) throw ConfigError("--sigma2", "must be > 0");
  const OuParams<N> p(o.theta, spd_option<N>("--attractor", o.attractor, o.n), o.sigma2);
  const SpdMatrix<N> x0 = spd_option<N>("--x0", o.x0, o.n);
  const int d = tangent_dim(o.n);
  std::size_t rows = 0;
  write_atomic(o.out, [&](std::ostream& os) {
    os << "t";
    for (const auto& name : half_vec_names(o.n)) os << ',' << name;
    os << '\n';
    auto row = [&](long k, const SpdMatrix<N>& x) {
      detail::put_double(os, static_cast<double>(k) * o.dt);
      const auto v = half_vec(x.sym());
      for (Eigen::Index i = 0; i < v.size(); ++i) {
        os << ',';
        detail::put_double(os, v(i));
      }
      os << '\n';
      ++rows;
    };
    RandomStream rng(o.seed, stream_id({0x73696d}));  // "sim"
    SpdMatrix<N> x = x0;
    Eigen::VectorXd z(d);
    row(0, x);
    for (long k = 1; k <= o.steps; ++k) {
      for (int i = 0; i < d; ++i) z(i) = rng.normal();
      x = em_step(metric, x, p, o.dt, z);
      if (k % o.every == 0) row(k, x);
    }
  });
  json j = sidecar("simulate", o.seed);
  j["rows"] = rows;
  j["mu"] = std::vector<double>(p.mu().data(), p.mu().data() + d);
  write_text(sidecar_path(o.out), dump(j));
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct BridgeOpts {
  int case_id = 1;
  std::vector<double> u, v;
  double horizon = 0.1;
  std::vector<int> m{2000};
  std::vector<double> eps{0.05};
  std::size_t samples = 500;
  std::size_t burn_in = 100;
  std::size_t thin = 2;
  std::size_t max_attempts = 20'000'000;
  bool gamma_term = true;
  std::uint64_t seed = 1;
  std::string out_dir;
};

int run_bridge_validate(const BridgeOpts& o) {
  if (o.case_id != 1 && o.case_id != 2) throw ConfigError("--case", "must be 1 or 2");
  if (!(o.horizon > 0.0)) throw ConfigError("--horizon", "must be > 0");
  if (o.samples < 1) throw ConfigError("--samples", "must be >= 1");
  if (o.thin < 1) throw ConfigError("--thin", "must be >= 1");
  for (int m : o.m)
    if (m < 2 || m % 2 != 0) throw ConfigError("--m", "values must be even and >= 2 (T/2 must be a grid node)");
  for (double e : o.eps)
    if (!(e > 0.0)) throw ConfigError("--eps", "values must be > 0");
  if (o.out_dir.empty()) throw ConfigError("--out-dir", "required");
  const std::vector<double> u1{2, 1, 2}, v1{3, 1, 2}, u2{2, 1.999, 2}, v2{3, 2.435, 2};
  const auto u = spd_option<2>("--u", o.u.empty() ? (o.case_id == 1 ? u1 : u2) : o.u, 2);
  const auto v = spd_option<2>("--v", o.v.empty() ? (o.case_id == 1 ? v1 : v2) : o.v, 2);

  json table = json::array();
  std::map<std::string, std::string> files;
  auto sample_csv = [](const std::vector<double>& det, const std::vector<double>& tr) {
    return to_string_with([&](std::ostream& os) {
      os << "sample,det,trace\n";
      for (std::size_t i = 0; i < det.size(); ++i) {
        os << i << ',';
        detail::put_double(os, det[i]);
        os << ',';
        detail::put_double(os, tr[i]);
        os << '\n';
      }
    });
  };
  for (int m : o.m) {
    BridgeProblem<2> pb{u, v, o.horizon, m, OuParams<2>(0.0, SpdMatrix<2>::identity(), 1.0)};
    pb.gamma_term = o.gamma_term;
    const std::size_t mid = static_cast<std::size_t>(m / 2);
    std::vector<double> gdet, gtr;
    const auto stats = guided_bridge_chain(pb, o.samples, o.burn_in, o.thin, o.seed,
                                           [&](std::size_t, std::size_t k, double, const SpdMatrix<2>& x) {
                                             if (k == mid) {
                                               gdet.push_back(x.mat().determinant());
                                               gtr.push_back(x.mat().trace());
                                             }
                                           });
    files["guided_m" + std::to_string(m) + ".csv"] = sample_csv(gdet, gtr);
    for (double eps : o.eps) {
      std::vector<double> rdet, rtr;
      std::size_t attempts = 0;
      bool collapsed = false;
      for (std::size_t i = 0; i < o.samples && !collapsed; ++i) {
        try {
          const auto r = sample_rejection_bridge(pb, eps, o.max_attempts - attempts, o.seed, 0x72656a00 + i);
          attempts += r.attempts;
          rdet.push_back(r.path.states[mid].mat().determinant());
          rtr.push_back(r.path.states[mid].mat().trace());
        } catch (const AttemptsExhausted& e) {
          attempts += e.attempts();
          collapsed = true;
        }
        if (attempts >= o.max_attempts && rdet.size() < o.samples) collapsed = true;
      }
      std::ostringstream tag;
      tag << "rejection_m" << m << "_eps" << eps << ".csv";
      files[tag.str()] = sample_csv(rdet, rtr);
      json row;
      row["m"] = m;
      row["eps"] = eps;
      row["guided_samples"] = gdet.size();
      row["guided_acceptance"] = stats.acceptance_rate();
      row["rejection_samples"] = rdet.size();
      row["rejection_attempts"] = attempts;
      row["rejection_acceptance"] = attempts == 0 ? 0.0 : static_cast<double>(rdet.size()) / static_cast<double>(attempts);
      row["rejection_collapsed"] = collapsed;
      if (gdet.size() >= 5 && rdet.size() >= 5) {
        const auto kd = ks_two_sample(gdet, rdet), kt = ks_two_sample(gtr, rtr);
        row["det_D"] = kd.d;
        row["det_p"] = kd.p;
        row["trace_D"] = kt.d;
        row["trace_p"] = kt.p;
      } else {
        row["det_p"] = nullptr;
        row["trace_p"] = nullptr;
      }
      table.push_back(row);
    }
  }
  json j = sidecar("bridge-validate", o.seed);
  j["case"] = o.case_id;
  j["t_half"] = o.horizon / 2;
  j["table"] = table;
  const fs::path dir(o.out_dir);
  for (const auto& [name, body] : files) write_text(dir / name, body);
  write_text(dir / "report.json", dump(j));
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct PriorOpts {
  std::vector<double> log_theta{0.0, 4.0};
  std::vector<double> log_sigma2{0.0, 4.0};
  std::vector<double> mu_mean{0.0};
  std::vector<double> mu_var{4.0};
  double step_log_theta = 0.1;
  double step_log_sigma2 = 0.03;
  double step_mu = 0.05;

  Priors priors(int d) const {
    return {gaussian_option("--prior-log-theta", log_theta), gaussian_option("--prior-log-sigma2", log_sigma2),
            broadcast("--prior-mu-mean", mu_mean, d), broadcast("--prior-mu-var", mu_var, d)};
  }
  ProposalScales scales() const {
    if (!(step_log_theta > 0.0)) throw ConfigError("--step-log-theta", "must be > 0");
    if (!(step_log_sigma2 > 0.0)) throw ConfigError("--step-log-sigma2", "must be > 0");
    if (!(step_mu > 0.0)) throw ConfigError("--step-mu", "must be > 0");
    return {step_log_theta, step_log_sigma2, step_mu};
  }
};

void add_prior_options(CLI::App* c, PriorOpts& p) {
  c->add_option("--prior-log-theta", p.log_theta, "mean,variance of log theta")->delimiter(',')->capture_default_str();
  c->add_option("--prior-log-sigma2", p.log_sigma2, "mean,variance of log sigma2")->delimiter(',')->capture_default_str();
  c->add_option("--prior-mu-mean", p.mu_mean, "prior mean of mu (one value or d values)")->delimiter(',')->capture_default_str();
  c->add_option("--prior-mu-var", p.mu_var, "prior variance of mu (one value or d values)")->delimiter(',')->capture_default_str();
  c->add_option("--step-log-theta", p.step_log_theta, "random-walk step on log theta")->capture_default_str();
  c->add_option("--step-log-sigma2", p.step_log_sigma2, "random-walk step on log sigma2")->capture_default_str();
  c->add_option("--step-mu", p.step_mu, "random-walk step on each mu coordinate")->capture_default_str();
}

struct McmcOpts {
  std::size_t iterations = 1000;
  std::size_t burn_in = 0;
  std::size_t thin = 1;
  bool time_change = true;
  bool gamma_term = true;
  std::string sigma_ratio = "log";

  McmcConfig config(std::uint64_t seed, int threads) const {
    McmcConfig c;
    c.iterations = iterations;
    c.burn_in = burn_in;
    c.thin = thin;
    c.seed = seed;
    c.threads = threads;
    c.time_change = time_change;
    c.gamma_term = gamma_term;
    if (sigma_ratio == "log") c.sigma_ratio = SigmaRatio::Log;
    else if (sigma_ratio == "literal") c.sigma_ratio = SigmaRatio::Literal;
    else throw ConfigError("--sigma-ratio", "expected 'log' or 'literal'");
    if (thin < 1) throw ConfigError("--thin", "must be >= 1");
    if (burn_in > iterations) throw ConfigError("--burn-in", "exceeds --iterations");
    return c;
  }
};

void add_mcmc_options(CLI::App* c, McmcOpts& m) {
  c->add_option("--iterations", m.iterations, "MCMC sweeps")->capture_default_str();
  c->add_option("--burn-in", m.burn_in, "sweeps discarded before keeping draws")->capture_default_str();
  c->add_option("--thin", m.thin, "keep every thin-th sweep after burn-in")->capture_default_str();
  c->add_option("--time-change", m.time_change, "time-changed imputation grid (AI)")->capture_default_str();
  c->add_option("--gamma-term", m.gamma_term, "include the Christoffel term of log Phi (AI)")->capture_default_str();
  c->add_option("--sigma-ratio", m.sigma_ratio, "log | literal normalization in the sigma2 ratio (AI)")->capture_default_str();
}

struct FitOpts {
  std::string data;
  std::string metric = "ai";
  int m = 0;
  double target_dt = 0.0;
  McmcOpts mcmc;
  PriorOpts prior;
  std::optional<double> init_theta, init_sigma2;
  std::vector<double> init_mu;
  int chains = 1;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out;
};

template <int N>
int run_fit(const FitOpts& o) {
  const Metric metric = metric_option("--metric", o.metric);
  if (metric == Metric::Euclidean) throw ConfigError("--metric", "fit supports le and ai");
  if (o.chains < 1) throw ConfigError("--chains", "must be >= 1");
  std::ifstream is(o.data);
  if (!is) throw ConfigError("--data", "cannot open '" + o.data + "'");
  const auto data = read_observations_csv<N>(is);
  const int n = data.dim(), d = tangent_dim(n);
  const Priors priors = o.prior.priors(d);
  const ProposalScales scales = o.prior.scales();
  std::vector<int> m;
  if (metric == Metric::AffineInvariant) {
    if (o.m > 0 && o.target_dt > 0.0) throw ConfigError("--m", "give either --m or --target-dt, not both");
    if (o.m > 0) m.assign(data.intervals(), o.m);
    else if (o.target_dt > 0.0) m = imputation_grid(data.times, o.target_dt);
    else throw ConfigError("--m", "AI fit needs --m or --target-dt");
  }
  McmcConfig base = o.mcmc.config(o.seed, resolve_threads(o.threads));
  if (o.init_theta) base.theta0 = *o.init_theta;
  if (o.init_sigma2) base.sigma20 = *o.init_sigma2;
  if (!o.init_mu.empty()) base.mu0 = broadcast("--init-mu", o.init_mu, d);
  try {
    base.validate();
  } catch (const ContractError& e) {
    throw ConfigError("--init", e.what());
  }

  std::vector<std::pair<fs::path, std::string>> outputs;
  json chains = json::array();
  const auto t0 = std::chrono::steady_clock::now();
  for (int k = 0; k < o.chains; ++k) {
    McmcConfig cfg = base;
    cfg.seed = k == 0 ? o.seed : stream_id({o.seed, static_cast<std::uint64_t>(k)});
    const ChainOutput out = metric == Metric::LogEuclidean ? run_mcmc_le(data, priors, scales, cfg)
                                                           : run_mcmc_ai(data, priors, scales, m, cfg);
    fs::path path(o.out);
    if (o.chains > 1) path.replace_filename(path.stem().string() + "_chain" + std::to_string(k + 1) + path.extension().string());
    outputs.emplace_back(path, to_string_with([&](std::ostream& os) { write_chain_csv(os, out); }));
    json c;
    c["file"] = path.filename().string();
    c["seed"] = cfg.seed;
    c["rows"] = out.rows();
    json acc;
    if (metric == Metric::AffineInvariant) acc["bridges"] = out.bridges.rate();
    acc["sigma2"] = out.sigma2.rate();
    acc["mu"] = out.mu.rate();
    acc["theta"] = out.theta.rate();
    c["acceptance"] = acc;
    c["numeric_rejects"] = out.numeric_rejects;
    c["diagnostics"] = out.diagnostics;
    json post;
    const auto names = out.column_names();
    for (std::size_t i = 0; i < names.size(); ++i) {
      const Eigen::VectorXd col = out.draws.col(static_cast<Eigen::Index>(i));
      post[names[i]] = {{"mean", mean_of(col)}, {"sd", sd_of(col)}};
    }
    c["posterior"] = post;
    chains.push_back(c);
  }
  json j = sidecar("fit", o.seed);
  j["metric"] = to_string(metric);
  j["observations"] = data.size();
  if (!m.empty()) j["imputation_total"] = std::accumulate(m.begin(), m.end(), 0L);
  j["chains"] = chains;
  j["elapsed_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& [p, body] : outputs) write_text(p, body);
  write_text(sidecar_path(o.out), dump(j));
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct GofOpts {
  std::string data;
  std::string metric = "ai";
  std::optional<double> theta, sigma2;
  std::vector<double> attractor;
  std::vector<double> mu;
  std::string chain;
  int k = 3000;
  double sim_dt = 0.01;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out;
};

template <int N>
int run_gof(const GofOpts& o) {
  const Metric metric = metric_option("--metric", o.metric);
  std::ifstream is(o.data);
  if (!is) throw ConfigError("--data", "cannot open '" + o.data + "'");
  const auto data = read_observations_csv<N>(is);
  const int n = data.dim(), d = tangent_dim(n);
  double theta = 0.0, sigma2 = 0.0;
  Eigen::VectorXd mu;
  if (!o.chain.empty()) {
    std::ifstream cs(o.chain);
    if (!cs) throw ConfigError("--chain", "cannot open '" + o.chain + "'");
    const CsvTable t = read_csv(cs);
    if (t.rows.empty()) throw ConfigError("--chain", "no draws");
    auto col_mean = [&](const std::string& name) {
      const int c = t.column(name);
      if (c < 0) throw ConfigError("--chain", "missing column '" + name + "'");
      double s = 0.0;
      for (const auto& r : t.rows) s += parse_double(r.at(static_cast<std::size_t>(c)), "--chain");
      return s / static_cast<double>(t.rows.size());
    };
    theta = col_mean("theta");
    sigma2 = col_mean("sigma2");
    mu.resize(d);
    for (int i = 0; i < d; ++i) mu(i) = col_mean("mu_" + std::to_string(i + 1));
  }
  if (o.theta) theta = *o.theta;
  if (o.sigma2) sigma2 = *o.sigma2;
  if (!o.mu.empty()) mu = broadcast("--mu", o.mu, d);
  if (!o.attractor.empty()) mu = chart_h(spd_option<N>("--attractor", o.attractor, n));
  if (mu.size() == 0) throw ConfigError("--mu", "give --mu, --attractor or --chain");
  if (!(theta >= 0.0)) throw ConfigError("--theta", "must be >= 0 (or give --chain)");
  if (!(sigma2 > 0.0)) throw ConfigError("--sigma2", "must be > 0 (or give --chain)");
  if (o.k < 100) throw ConfigError("--k", "must be >= 100");
  if (!(o.sim_dt > 0.0)) throw ConfigError("--sim-dt", "must be > 0");
  const auto params = OuParams<N>::from_mu(theta, mu, sigma2, n);
  ResidualOptions ro;
  ro.k = o.k;
  ro.sim_dt = o.sim_dt;
  ro.seed = o.seed;
  ro.threads = resolve_threads(o.threads);
  const auto r = generalized_residuals(data, metric, params, ro);
  const auto ks = residual_ks(r);
  json j = sidecar("gof", o.seed);
  j["metric"] = to_string(metric);
  j["params"] = {{"theta", theta}, {"mu", std::vector<double>(mu.data(), mu.data() + d)}, {"sigma2", sigma2}};
  j["rows"] = r.z.rows();
  j["failed_paths"] = r.failed_paths;
  json kj;
  for (std::size_t i = 0; i < ks.size(); ++i) kj[r.entries[i]] = {{"D", ks[i].d}, {"p", ks[i].p}};
  j["ks"] = kj;
  const fs::path out(o.out);
  fs::path ecdf = out;
  ecdf.replace_filename(out.stem().string() + "_ecdf" + out.extension().string());
  const auto body = to_string_with([&](std::ostream& os) {
    write_residuals_csv(os, std::span<const double>(data.times).subspan(1), r);
  });
  write_text(out, body);
  write_text(ecdf, to_string_with([&](std::ostream& os) { write_ecdf_csv(os, r); }));
  write_text(sidecar_path(out), dump(j));
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct PriorCheckOpts {
  std::size_t replications = 100;
  std::string metric = "ai";
  int n = 2;
  double horizon = 50.0;
  double spacing = 0.1;
  double sim_dt = 1e-3;
  int m = 20;
  McmcOpts mcmc;
  PriorOpts prior;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out;
};

template <int N>
int run_prior_check(const PriorCheckOpts& o) {
  const Metric metric = metric_option("--metric", o.metric);
  if (metric == Metric::Euclidean) throw ConfigError("--metric", "prior-check supports le and ai");
  if (o.replications < 20) throw ConfigError("--replications", "must be >= 20");
  if (o.n < 1) throw ConfigError("--n", "must be >= 1");
  if (o.m < 1) throw ConfigError("--m", "must be >= 1");
  if (!(o.horizon > 0.0) || !(o.spacing > 0.0) || !(o.sim_dt > 0.0))
    throw ConfigError("--horizon", "horizon, spacing and sim-dt must be > 0");
  const int d = tangent_dim(o.n);
  PriorCheckConfig<N> cfg;
  cfg.replications = o.replications;
  cfg.n = o.n;
  cfg.metric = metric;
  cfg.horizon = o.horizon;
  cfg.spacing = o.spacing;
  cfg.sim_dt = o.sim_dt;
  cfg.m = o.m;
  cfg.mcmc = o.mcmc.config(o.seed, 1);
  cfg.threads = resolve_threads(o.threads);
  const auto res = prior_reproduction<N>(o.prior.priors(d), o.prior.scales(), cfg);
  const auto body = to_string_with([&](std::ostream& os) {
    os << "replication";
    for (const auto& c : res.columns) os << ",q_" << c;
    for (const auto& c : res.columns) os << ",true_" << c;
    os << '\n';
    for (Eigen::Index r = 0; r < res.quantiles.rows(); ++r) {
      os << r;
      for (Eigen::Index c = 0; c < res.quantiles.cols(); ++c) {
        os << ',';
        detail::put_double(os, res.quantiles(r, c));
      }
      for (Eigen::Index c = 0; c < res.truths.cols(); ++c) {
        os << ',';
        detail::put_double(os, res.truths(r, c));
      }
      os << '\n';
    }
  });
  json j = sidecar("prior-check", o.seed);
  j["replications"] = o.replications;
  j["failures"] = res.failures;
  j["diagnostics"] = res.diagnostics;
  json ks;
  for (std::size_t c = 0; c < res.columns.size(); ++c) {
    const Eigen::VectorXd q = res.quantiles.col(static_cast<Eigen::Index>(c));
    if (q.size() >= 5) {
      const auto k = ks_one_sample_uniform(std::vector<double>(q.data(), q.data() + q.size()));
      ks[res.columns[c]] = {{"D", k.d}, {"p", k.p}};
    }
  }
  j["ks_uniform"] = ks;
  write_text(o.out, body);
  write_text(sidecar_path(o.out), dump(j));
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct IngestOpts {
  std::vector<std::string> ticks;
  std::string open = "09:30";
  std::string close = "16:00";
  int utc_offset_minutes = 0;
  std::string alignment = "inner";
  int stride = 1;
  bool drop_degenerate = false;
  double target_dt = 0.0;
  double scale = 1.0;
  int threads = 1;
  std::string out;
};

int clock_option(const std::string& field, const std::string& hhmm) {
  int h = 0, m = 0;
  char extra = 0;
  if (std::sscanf(hhmm.c_str(), "%d:%d%c", &h, &m, &extra) != 2 || h < 0 || h > 24 || m < 0 || m > 59)
    throw ConfigError(field, "expected hh:mm, got '" + hhmm + "'");
  return h * 3600 + m * 60;
}

template <int N>
int run_ingest(const IngestOpts& o) {
  SessionConfig s;
  s.open_seconds = clock_option("--open", o.open);
  s.close_seconds = clock_option("--close", o.close);
  s.utc_offset_minutes = o.utc_offset_minutes;
  if (o.alignment == "inner") s.alignment = Alignment::InnerJoin;
  else if (o.alignment == "previous") s.alignment = Alignment::PreviousTick;
  else throw ConfigError("--alignment", "expected 'inner' or 'previous'");
  if (o.stride < 1) throw ConfigError("--stride", "must be >= 1");
  s.stride = o.stride;
  s.drop_degenerate = o.drop_degenerate;
  try {
    s.validate();
  } catch (const ContractError& e) {
    throw ConfigError("--open", e.what());
  }
  std::vector<TickSeries> ticks;
  for (const auto& f : o.ticks) {
    std::ifstream is(f);
    if (!is) throw ConfigError("--ticks", "cannot open '" + f + "'");
    ticks.push_back(read_tick_csv(is, fs::path(f).stem().string(), s.utc_offset_minutes));
  }
  if (!(o.scale > 0.0)) throw ConfigError("--scale", "must be > 0");
  auto r = realized_cov<N>(ticks, s, resolve_threads(o.threads));
  if (r.series.size() < 1) throw NumericFailure("ingest: no valid days");
  if (o.scale != 1.0)
    for (auto& p : r.series.obs) p = SpdMatrix<N>(Mat<N>(o.scale * p.mat()));
  json j = sidecar("ingest", 0);
  std::vector<std::string> ids;
  for (const auto& t : ticks) ids.push_back(t.instrument);
  j["instruments"] = ids;
  j["days"] = r.dates.size();
  j["first_day"] = r.dates.front();
  j["last_day"] = r.dates.back();
  j["dropped_days"] = r.flagged;
  if (o.target_dt > 0.0 && r.series.size() >= 2) {
    const auto m = imputation_grid(r.series.times, o.target_dt);
    j["imputation_counts"] = m;
  }
  write_text(o.out, to_string_with([&](std::ostream& os) { write_realized_csv(os, r); }));
  write_text(sidecar_path(o.out), dump(j));
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct SynthOpts {
  std::vector<double> cov{1e-4, 0.6e-4, 2e-4};
  int days = 130;
  int ticks_per_day = 78;
  std::string first_day = "2024-01-08";
  std::string path;
  double path_scale = 1e-4;
  std::uint64_t seed = 1;
  std::string out_dir;
};

/// Daily covariances read from a path CSV: the weekday c calendar days after
/// the first day uses the row with t = c.
std::vector<Eigen::MatrixXd> covs_from_path(const std::string& file, double scale, int days, Timestamp first) {
  std::ifstream is(file);
  if (!is) throw ConfigError("--path", "cannot open '" + file + "'");
  const auto path = read_observations_csv<Dynamic>(is);
  std::map<long, Eigen::MatrixXd> by_day;
  for (std::size_t k = 0; k < path.size(); ++k) {
    const double t = path.times[k];
    if (std::abs(t - std::round(t)) < 1e-9) by_day[std::lround(t)] = scale * path.obs[k].mat();
  }
  std::vector<Eigen::MatrixXd> out;
  const std::int64_t day0 = day_number(first);
  for (long c = 0; static_cast<int>(out.size()) < days; ++c) {
    const std::int64_t weekday = (day0 + c + 4) % 7;
    if (weekday == 0 || weekday == 6) continue;
    const auto it = by_day.find(c);
    if (it == by_day.end()) throw ConfigError("--path", "no row at t = " + std::to_string(c) + " (use integer days)");
    out.push_back(it->second);
  }
  return out;
}

int run_synth(const SynthOpts& o) {
  int n = 0;
  while (tangent_dim(n + 1) <= static_cast<int>(o.cov.size())) ++n;
  if (n < 1 || tangent_dim(n) != static_cast<int>(o.cov.size()))
    throw ConfigError("--cov", "length must be n (n + 1) / 2");
  if (o.days < 1) throw ConfigError("--days", "must be >= 1");
  if (o.ticks_per_day < 1) throw ConfigError("--ticks-per-day", "must be >= 1");
  Timestamp first = 0;
  try {
    first = parse_timestamp(o.first_day);
  } catch (const ContractError& e) {
    throw ConfigError("--first-day", e.what());
  }
  if (!(o.path_scale > 0.0)) throw ConfigError("--path-scale", "must be > 0");
  const std::vector<Eigen::MatrixXd> covs =
      o.path.empty() ? std::vector<Eigen::MatrixXd>(static_cast<std::size_t>(o.days),
                                                    from_half_vec<Dynamic>(Eigen::Map<const Eigen::VectorXd>(
                                                                               o.cov.data(), tangent_dim(n)),
                                                                           n)
                                                        .mat())
                     : covs_from_path(o.path, o.path_scale, o.days, first);
  std::vector<TickSeries> ticks;
  try {
    ticks = simulate_gbm_ticks(covs, o.ticks_per_day, first, SessionConfig{}, o.seed);
  } catch (const ContractError& e) {
    throw ConfigError("--cov", e.what());
  }
  std::vector<std::string> bodies;
  for (const auto& t : ticks) bodies.push_back(to_string_with([&](std::ostream& os) { write_tick_csv(os, t); }));
  const fs::path dir(o.out_dir);
  json j = sidecar("synth-ticks", o.seed);
  std::vector<std::string> files;
  for (std::size_t a = 0; a < ticks.size(); ++a) {
    files.push_back(ticks[a].instrument + ".csv");
    write_text(dir / files.back(), bodies[a]);
  }
  j["files"] = files;
  write_text(dir / "synth-ticks.json", dump(j));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"OU diffusions on SPD matrices: simulation, bridges, inference, goodness of fit"};
  app.set_config("--config", "", "INI file with one [section] per command");
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "worker threads (0 = all cores)")->capture_default_str();

  SimulateOpts sim;
  auto* c_sim = app.add_subcommand("simulate", "simulate an OU path with the exponential-adapted Euler-Maruyama scheme");
  c_sim->add_option("--metric", sim.metric, "euclidean | le | ai")->capture_default_str();
  c_sim->add_option("--n", sim.n, "matrix dimension")->capture_default_str();
  c_sim->add_option("--theta", sim.theta, "mean-reversion rate")->capture_default_str();
  c_sim->add_option("--attractor", sim.attractor, "half-vectorized attractor M (default identity)")->delimiter(',');
  c_sim->add_option("--sigma2", sim.sigma2, "diffusion variance")->capture_default_str();
  c_sim->add_option("--x0", sim.x0, "half-vectorized start (default identity)")->delimiter(',');
  c_sim->add_option("--dt", sim.dt, "step size")->capture_default_str();
  c_sim->add_option("--steps", sim.steps, "number of steps")->capture_default_str();
  c_sim->add_option("--every", sim.every, "write every k-th node")->capture_default_str();
  c_sim->add_option("--seed", sim.seed, "random seed")->capture_default_str();
  c_sim->add_option("--out", sim.out, "output CSV")->required();

  BridgeOpts br;
  auto* c_br = app.add_subcommand("bridge-validate", "guided vs rejection bridges of AI Brownian motion, KS at T/2");
  c_br->add_option("--case", br.case_id, "endpoint case 1 (interior) or 2 (near the boundary)")->capture_default_str();
  c_br->add_option("--u", br.u, "half-vectorized start, overrides --case")->delimiter(',');
  c_br->add_option("--v", br.v, "half-vectorized end, overrides --case")->delimiter(',');
  c_br->add_option("--horizon", br.horizon, "bridge length T")->capture_default_str();
  c_br->add_option("--m", br.m, "imputation counts")->delimiter(',')->capture_default_str();
  c_br->add_option("--eps", br.eps, "rejection tolerances on d_AI(X_T, V)")->delimiter(',')->capture_default_str();
  c_br->add_option("--samples", br.samples, "samples per sampler")->capture_default_str();
  c_br->add_option("--burn-in", br.burn_in, "guided chain burn-in")->capture_default_str();
  c_br->add_option("--thin", br.thin, "guided chain thinning")->capture_default_str();
  c_br->add_option("--max-attempts", br.max_attempts, "total rejection attempts per (m, eps)")->capture_default_str();
  c_br->add_option("--gamma-term", br.gamma_term, "include the Christoffel term of log Phi")->capture_default_str();
  c_br->add_option("--seed", br.seed, "random seed")->capture_default_str();
  c_br->add_option("--out-dir", br.out_dir, "output directory")->required();

  FitOpts fit;
  auto* c_fit = app.add_subcommand("fit", "posterior sampling of (theta, mu, sigma2)");
  c_fit->add_option("--data", fit.data, "observation CSV (t, x11, x21, ...)")->required();
  c_fit->add_option("--metric", fit.metric, "le | ai")->capture_default_str();
  c_fit->add_option("--m", fit.m, "imputation count per interval (AI)");
  c_fit->add_option("--target-dt", fit.target_dt, "imputation step; m_j = round(gap / target-dt) (AI)");
  add_mcmc_options(c_fit, fit.mcmc);
  add_prior_options(c_fit, fit.prior);
  c_fit->add_option("--init-theta", fit.init_theta, "initial theta (default: prior centre)");
  c_fit->add_option("--init-sigma2", fit.init_sigma2, "initial sigma2 (default: prior centre)");
  c_fit->add_option("--init-mu", fit.init_mu, "initial mu (default: prior centre)")->delimiter(',');
  c_fit->add_option("--chains", fit.chains, "independent chains with derived seeds")->capture_default_str();
  c_fit->add_option("--seed", fit.seed, "random seed")->capture_default_str();
  c_fit->add_option("--out", fit.out, "chain CSV")->required();

  GofOpts gof;
  auto* c_gof = app.add_subcommand("gof", "generalized residuals and per-entry KS tests");
  c_gof->add_option("--data", gof.data, "observation CSV")->required();
  c_gof->add_option("--metric", gof.metric, "euclidean | le | ai")->capture_default_str();
  c_gof->add_option("--theta", gof.theta, "theta (overrides --chain)");
  c_gof->add_option("--sigma2", gof.sigma2, "sigma2 (overrides --chain)");
  c_gof->add_option("--mu", gof.mu, "mu (overrides --chain)")->delimiter(',');
  c_gof->add_option("--attractor", gof.attractor, "half-vectorized M (overrides --mu)")->delimiter(',');
  c_gof->add_option("--chain", gof.chain, "chain CSV; posterior means are used");
  c_gof->add_option("--k", gof.k, "simulated endpoints per transition")->capture_default_str();
  c_gof->add_option("--sim-dt", gof.sim_dt, "simulation step")->capture_default_str();
  c_gof->add_option("--seed", gof.seed, "random seed")->capture_default_str();
  c_gof->add_option("--out", gof.out, "residual CSV (an _ecdf table is written next to it)")->required();

  PriorCheckOpts pc;
  pc.prior.log_theta = {0.0, 0.09};
  pc.prior.log_sigma2 = {0.0, 0.09};
  pc.prior.mu_var = {0.2};
  auto* c_pc = app.add_subcommand("prior-check", "prior reproduction: quantiles of the truth under the posterior");
  c_pc->add_option("--replications", pc.replications, "simulated datasets")->capture_default_str();
  c_pc->add_option("--metric", pc.metric, "le | ai")->capture_default_str();
  c_pc->add_option("--n", pc.n, "matrix dimension")->capture_default_str();
  c_pc->add_option("--horizon", pc.horizon, "observation window [0, horizon]")->capture_default_str();
  c_pc->add_option("--spacing", pc.spacing, "observation spacing")->capture_default_str();
  c_pc->add_option("--sim-dt", pc.sim_dt, "data simulation step")->capture_default_str();
  c_pc->add_option("--m", pc.m, "imputation count per interval (AI)")->capture_default_str();
  add_mcmc_options(c_pc, pc.mcmc);
  add_prior_options(c_pc, pc.prior);
  c_pc->add_option("--seed", pc.seed, "random seed")->capture_default_str();
  c_pc->add_option("--out", pc.out, "quantile CSV")->required();

  IngestOpts ing;
  auto* c_ing = app.add_subcommand("ingest", "daily realized covariance from intraday price CSVs");
  c_ing->add_option("--ticks", ing.ticks, "one timestamp,price CSV per instrument, in order")->required()->delimiter(',');
  c_ing->add_option("--open", ing.open, "session open, local hh:mm")->capture_default_str();
  c_ing->add_option("--close", ing.close, "session close, local hh:mm")->capture_default_str();
  c_ing->add_option("--utc-offset-minutes", ing.utc_offset_minutes, "exchange offset from UTC")->capture_default_str();
  c_ing->add_option("--alignment", ing.alignment, "inner | previous")->capture_default_str();
  c_ing->add_option("--stride", ing.stride, "keep every k-th aligned tick")->capture_default_str();
  c_ing->add_flag("--drop-degenerate", ing.drop_degenerate, "drop non-SPD days instead of failing");
  c_ing->add_option("--target-dt", ing.target_dt, "report imputation counts for this step");
  c_ing->add_option("--scale", ing.scale, "multiply realized covariances (1e4: percent squared)")->capture_default_str();
  c_ing->add_option("--out", ing.out, "realized covariance CSV")->required();

  SynthOpts syn;
  auto* c_syn = app.add_subcommand("synth-ticks", "correlated GBM ticks on weekday sessions, one CSV per instrument");
  c_syn->add_option("--cov", syn.cov, "half-vectorized daily log-return covariance")->delimiter(',')->capture_default_str();
  c_syn->add_option("--days", syn.days, "weekdays to generate")->capture_default_str();
  c_syn->add_option("--ticks-per-day", syn.ticks_per_day, "returns per session")->capture_default_str();
  c_syn->add_option("--first-day", syn.first_day, "first calendar day, yyyy-mm-dd")->capture_default_str();
  c_syn->add_option("--path", syn.path, "SPD path CSV (t, x11, ...) giving each day's covariance; overrides --cov");
  c_syn->add_option("--path-scale", syn.path_scale, "factor applied to --path matrices")->capture_default_str();
  c_syn->add_option("--seed", syn.seed, "random seed")->capture_default_str();
  c_syn->add_option("--out-dir", syn.out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  for (auto* sub : app.get_subcommands()) {
    // unset list and optional values are left out so the echo reloads as is
    std::istringstream lines(sub->config_to_str(true, false));
    config_echo = "threads=" + std::to_string(threads) + "\n[" + sub->get_name() + "]\n";
    for (std::string line; std::getline(lines, line);)
      if (!line.empty() && !line.ends_with("=\"\"")) config_echo += line + "\n";
  }

  try {
    if (c_sim->parsed()) return dispatch(sim.n, [&]<int N>() { return run_simulate<N>(sim); });
    if (c_br->parsed()) return run_bridge_validate(br);
    if (c_fit->parsed()) {
      fit.threads = threads;
      std::ifstream is(fit.data);
      if (!is) throw ConfigError("--data", "cannot open '" + fit.data + "'");
      return dispatch(observation_dim(is), [&]<int N>() { return run_fit<N>(fit); });
    }
    if (c_gof->parsed()) {
      gof.threads = threads;
      std::ifstream is(gof.data);
      if (!is) throw ConfigError("--data", "cannot open '" + gof.data + "'");
      return dispatch(observation_dim(is), [&]<int N>() { return run_gof<N>(gof); });
    }
    if (c_pc->parsed()) {
      pc.threads = threads;
      return dispatch(pc.n, [&]<int N>() { return run_prior_check<N>(pc); });
    }
    if (c_ing->parsed()) {
      ing.threads = threads;
      return dispatch(static_cast<int>(ing.ticks.size()), [&]<int N>() { return run_ingest<N>(ing); });
    }
    if (c_syn->parsed()) return run_synth(syn);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ContractError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  }
  return kExitConfig;
}
