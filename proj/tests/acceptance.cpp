// Acceptance harness: one PASS/FAIL line per criterion.
// usage: acceptance [criterion ...]   (no arguments runs 1..12)

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "spdou/bridge.hpp"
#include "spdou/geometry.hpp"
#include "spdou/gof.hpp"
#include "spdou/inference.hpp"
#include "support.hpp"

using namespace spdou;
using spdou::testing::random_invertible;
using spdou::testing::random_orthogonal;
using spdou::testing::random_spd;
using spdou::testing::random_sym;
using spdou::testing::rel_err;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v, int prec = 3) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

void note(const std::string& s) { std::cout << "  " << s << std::endl; }

const Metric kAll[] = {Metric::Euclidean, Metric::LogEuclidean, Metric::AffineInvariant};
const Metric kCurved[] = {Metric::LogEuclidean, Metric::AffineInvariant};

SpdMatrix<2> mat2(double a, double b, double c) {
  Eigen::Matrix2d m;
  m << a, b, b, c;
  return SpdMatrix<2>(m);
}

double rel_scalar(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

double mean(const Eigen::VectorXd& v) { return v.mean(); }
double sd(const Eigen::VectorXd& v) { return std::sqrt((v.array() - v.mean()).square().sum() / double(v.size() - 1)); }

OuParams<2> truth2() { return OuParams<2>(0.5, mat2(1, 0.9, 1), 1.0); }

SpdMatrix<3> attractor3() {
  Eigen::Matrix3d m;
  m << 1, 0.7, 0.9, 0.7, 1.2, 0.9, 0.9, 0.9, 1;
  return SpdMatrix<3>(m);
}

Priors wide(int d) { return Priors::isotropic(d, {0, 4}, {0, 4}, 0.0, 4.0); }

// posterior mean within k sd of the truth for every parameter column
bool recovered(const ChainOutput& out, const Eigen::VectorXd& truth, double k, std::string& detail) {
  bool ok = true;
  const auto names = out.column_names();
  for (Eigen::Index c = 0; c < out.draws.cols(); ++c) {
    const Eigen::VectorXd x = out.column(c);
    const double z = (mean(x) - truth(c)) / sd(x);
    ok = ok && std::abs(z) < k;
    note(names[static_cast<std::size_t>(c)] + ": truth " + num(truth(c), 4) + ", mean " + num(mean(x), 4) + ", sd " +
         num(sd(x), 3) + ", z " + num(z, 3));
    detail += (c ? " " : "") + names[static_cast<std::size_t>(c)] + " z=" + num(z, 2);
  }
  return ok;
}

// ---------------------------------------------------------------------------

struct Worst {
  double round_trip = 0, gram = 0, invariance = 0;
};

template <int N>
void geometry_suite(int n, RandomStream& rng, Worst& w) {
  for (Metric m : kAll) {
    for (int it = 0; it < 200; ++it) {
      const auto p = random_spd<N>(n, rng), q = random_spd<N>(n, rng);
      w.round_trip = std::max(w.round_trip, rel_err(exp_map(m, p, log_map(m, p, q)).mat(), q.mat()));
      const SymMatrix<N> s = m == Metric::Euclidean ? SymMatrix<N>(q.sym() - p.sym()) : random_sym<N>(n, rng);
      w.round_trip = std::max(w.round_trip, rel_err(log_map_vec(m, p, exp_map(m, p, s)).mat(), s.mat()));
      const auto f = frame(m, p);
      for (int i = 0; i < f.size(); ++i)
        for (int j = 0; j < f.size(); ++j)
          w.gram = std::max(w.gram, std::abs(metric_inner(m, p, f.element(i), f.element(j)) - (i == j ? 1.0 : 0.0)));
    }
  }
  const SpdMatrix<N> id = SpdMatrix<N>::identity(n);
  for (int it = 0; it < 200; ++it) {
    const auto p = random_spd<N>(n, rng), q = random_spd<N>(n, rng);
    const SpdMatrix<N> pi(p.inverse()), qi(q.inverse());
    // affine-invariant: congruence by an invertible R, and inversion
    const Mat<N> r = random_invertible(n, rng);
    const SpdMatrix<N> rp(congruence(r, p.sym())), rq(congruence(r, q.sym()));
    const double ai = dist2(Metric::AffineInvariant, p, q);
    w.invariance = std::max(w.invariance, rel_scalar(dist2(Metric::AffineInvariant, rp, rq), ai));
    w.invariance = std::max(w.invariance, rel_scalar(dist2(Metric::AffineInvariant, pi, qi), ai));
    const auto a = random_sym<N>(n, rng), b = random_sym<N>(n, rng);
    const double in = inner_at(Metric::AffineInvariant, p, a, b);
    w.invariance = std::max(
        w.invariance, rel_scalar(inner_at(Metric::AffineInvariant, rp, congruence(r, a), congruence(r, b)), in));
    // log-Euclidean: orthogonal similarity, inversion
    const Mat<N> o = random_orthogonal(n, rng);
    const double le = dist2(Metric::LogEuclidean, p, q);
    w.invariance = std::max(w.invariance, rel_scalar(dist2(Metric::LogEuclidean, SpdMatrix<N>(congruence(o, p.sym())),
                                                           SpdMatrix<N>(congruence(o, q.sym()))),
                                                     le));
    w.invariance = std::max(w.invariance, rel_scalar(dist2(Metric::LogEuclidean, pi, qi), le));
    w.invariance = std::max(w.invariance, rel_scalar(dist2(Metric::LogEuclidean, id, p), dist2(Metric::LogEuclidean, id, pi)));
  }
}

Outcome c1_geometry() {
  const auto t0 = Clock::now();
  RandomStream rng(101, 0);
  Worst w;
  geometry_suite<2>(2, rng, w);
  geometry_suite<3>(3, rng, w);
  geometry_suite<Dynamic>(5, rng, w);
  const double secs = seconds_since(t0);
  const bool ok = w.round_trip < 1e-8 && w.gram < 1e-10 && w.invariance < 1e-9 && secs < 30;
  return {ok, "round trip " + num(w.round_trip, 2) + " (< 1e-8), Gram " + num(w.gram, 2) + " (< 1e-10), invariance " +
                  num(w.invariance, 2) + " (< 1e-9), " + num(secs, 3) + " s (< 30 s)"};
}

// ---------------------------------------------------------------------------

template <int N>
double det_interp_error(const SpdMatrix<N>& p, const SpdMatrix<N>& q) {
  double worst = 0.0;
  for (Metric m : kCurved)
    for (int i = 1; i <= 9; ++i) {
      const double t = 0.1 * i;
      const double ref = std::exp((1 - t) * p.log_det() + t * q.log_det());
      worst = std::max(worst, std::abs(geodesic(m, p, q, t).mat().determinant() - ref) / ref);
    }
  return worst;
}

Outcome c2_determinants() {
  double worst = det_interp_error(mat2(0.4, 0.3, 0.4), mat2(1, 0.1, 0.02));
  const double fig = worst;
  RandomStream rng(102, 0);
  for (int it = 0; it < 50; ++it) {
    worst = std::max(worst, det_interp_error(random_spd<2>(2, rng), random_spd<2>(2, rng)));
    worst = std::max(worst, det_interp_error(random_spd<3>(3, rng), random_spd<3>(3, rng)));
  }
  return {worst < 1e-9, "max relative error " + num(worst, 2) + " (figure endpoints " + num(fig, 2) +
                            "), LE and AI, n = 2 and 3, tolerance 1e-9"};
}

// ---------------------------------------------------------------------------

Outcome c3_gradient() {
  RandomStream rng(103, 0);
  const double eps = 1e-5, h = 1e-3;
  double grad = 0.0, hess = 0.0;
  for (Metric m : kAll)
    for (int it = 0; it < 100; ++it) {
      const auto p = random_spd<3>(3, rng), q = random_spd<3>(3, rng);
      SymMatrix<3> v = random_sym<3>(3, rng);
      v = v / std::sqrt(inner_at(m, p, v, v));
      auto step = [&](double s) {
        return m == Metric::Euclidean ? SpdMatrix<3>(p.sym() + s * v) : exp_map(m, p, s * v);
      };
      const double fd = (dist2(m, step(eps), q) - dist2(m, step(-eps), q)) / (2 * eps);
      const double an = inner_at(m, p, grad_dist2(m, p, q).vec, v);
      grad = std::max(grad, rel_scalar(fd, an));
    }
  for (int n : {2, 3}) {
    for (int it = 0; it < 100; ++it) {
      const auto p = random_spd<Dynamic>(n, rng), q = random_spd<Dynamic>(n, rng);
      SymMatrix<Dynamic> v = -1.0 * log_map_vec(Metric::AffineInvariant, p, q);
      v = v / std::sqrt(inner_at(Metric::AffineInvariant, p, v, v));
      auto f = [&](double s) { return dist2(Metric::AffineInvariant, exp_map(Metric::AffineInvariant, p, s * v), q); };
      hess = std::max(hess, std::abs((f(h) - 2 * f(0) + f(-h)) / (h * h) - 2.0));
    }
  }
  return {grad < 1e-5 && hess < 1e-4, "gradient max relative error " + num(grad, 2) +
                                          " (< 1e-5, three metrics), AI second derivative off 2 by " + num(hess, 2) +
                                          " (< 1e-4)"};
}

// ---------------------------------------------------------------------------

Outcome c4_christoffel() {
  const auto g = christoffel_ai(2);
  const bool spot = g(0, 0, 0) == -1.0 && g(2, 2, 0) == -0.5;
  bool sym = true;
  for (int n : {2, 3, 4, 5}) {
    const auto gn = christoffel_ai(n);
    for (int i = 0; i < gn.d(); ++i)
      for (int j = 0; j < gn.d(); ++j)
        for (int k = 0; k < gn.d(); ++k) sym = sym && gn(i, j, k) == gn(j, i, k);
  }
  return {spot && sym, "Gamma_11^1 = " + num(g(0, 0, 0), 17) + ", Gamma_33^1 = " + num(g(2, 2, 0), 17) +
                           ", exact symmetry in the lower indices for n = 2..5: " + (sym ? "yes" : "no")};
}

// ---------------------------------------------------------------------------

Outcome c5_le_chart() {
  const auto t0 = Clock::now();
  const auto p = truth2();
  const auto x0 = mat2(2, -0.5, 0.7);
  const std::vector<double> fine = uniform_grid(0.0, 50.0, 50000);
  const std::vector<double> coarse{0.0, 50.0};
  const int paths = 2000, d = 3;
  std::vector<std::vector<double>> a(d), b(d);
  for (int i = 0; i < paths; ++i) {
    RandomStream rm(105, stream_id({1, std::uint64_t(i)})), re(105, stream_id({2, std::uint64_t(i)}));
    const Eigen::VectorXd xm = chart_h(simulate_ou_terminal(Metric::LogEuclidean, p, x0, fine, draw_normals(d, 50000, rm)));
    const Eigen::VectorXd xe = simulate_le_exact(p, chart_h(x0), coarse, draw_normals(d, 1, re)).col(1);
    for (int c = 0; c < d; ++c) {
      a[c].push_back(xm(c));
      b[c].push_back(xe(c));
    }
  }
  bool ok = true;
  std::string detail = "KS p per coordinate:";
  for (int c = 0; c < d; ++c) {
    const auto ks = ks_two_sample(a[c], b[c]);
    ok = ok && ks.p > 0.01;
    detail += " " + num(ks.p, 3);
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 300;
  return {ok, detail + " (> 0.01), " + num(secs, 3) + " s (< 300 s)"};
}

// ---------------------------------------------------------------------------

BridgeProblem<2> case1(int m) {
  return {mat2(2, 1, 2), mat2(3, 1, 2), 0.1, m, OuParams<2>(0.0, SpdMatrix<2>::identity(), 1.0)};
}

BridgeProblem<2> case2(int m) {
  return {mat2(2, 1.999, 2), mat2(3, 2.435, 2), 0.1, m, OuParams<2>(0.0, SpdMatrix<2>::identity(), 1.0)};
}

struct Marginals {
  std::vector<double> det, trace;
};

Marginals guided_midpoints(const BridgeProblem<2>& pb, std::size_t samples, std::uint64_t seed, double& acceptance) {
  Marginals g;
  const auto mid = static_cast<std::size_t>(pb.m / 2);
  const auto st = guided_bridge_chain(pb, samples, 100, 2, seed, [&](std::size_t, std::size_t k, double, const SpdMatrix<2>& x) {
    if (k == mid) {
      g.det.push_back(x.mat().determinant());
      g.trace.push_back(x.mat().trace());
    }
  });
  acceptance = st.acceptance_rate();
  return g;
}

Outcome c6_bridge() {
  const auto t0 = Clock::now();
  const int m = 2000;
  const std::size_t samples = 500;
  const double eps = 0.05;
  const auto pb = case1(m);
  double acc = 0.0;
  const Marginals g = guided_midpoints(pb, samples, 106, acc);
  note("guided chain acceptance " + num(acc, 3));
  Marginals r;
  std::size_t attempts = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    const auto res = sample_rejection_bridge(pb, eps, 5000000, 106, 0x72656a00ULL + i);
    attempts += res.attempts;
    r.det.push_back(res.path.states[static_cast<std::size_t>(m / 2)].mat().determinant());
    r.trace.push_back(res.path.states[static_cast<std::size_t>(m / 2)].mat().trace());
  }
  note("rejection acceptance " + num(double(samples) / double(attempts), 3) + " over " + std::to_string(attempts) +
       " attempts");
  const auto kd = ks_two_sample(g.det, r.det), kt = ks_two_sample(g.trace, r.trace);
  auto off = pb;
  off.gamma_term = false;
  double acc_off = 0.0;
  const Marginals go = guided_midpoints(off, samples, 106, acc_off);
  const auto od = ks_two_sample(go.det, r.det), ot = ks_two_sample(go.trace, r.trace);
  note("without the Gamma term: acceptance " + num(acc_off, 3) + ", KS p det " + num(od.p, 3) + ", trace " +
       num(ot.p, 3));
  auto log_mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += std::log(x);
    return s / double(v.size());
  };
  note("mean log det at T/2: guided " + num(log_mean(g.det), 4) + ", guided without Gamma " + num(log_mean(go.det), 4) +
       ", rejection " + num(log_mean(r.det), 4) + ", Brownian bridge " +
       num(0.5 * (pb.u.log_det() + pb.v.log_det()), 4));
  const double secs = seconds_since(t0);
  return {kd.p > 0.01 && kt.p > 0.01, "KS p det " + num(kd.p, 3) + ", trace " + num(kt.p, 3) + " (> 0.01), " +
                                          std::to_string(samples) + " vs " + std::to_string(samples) + ", " +
                                          num(secs / 60, 3) + " min"};
}

// ---------------------------------------------------------------------------

Outcome c7_near_boundary() {
  const int m = 2000;
  const auto pb = case2(m);
  std::size_t errors = 0, invalid = 0;
  for (std::uint64_t i = 0; i < 500; ++i) {
    RandomStream rng(107, stream_id({1, i}));
    try {
      const auto [gp, lp] = sample_guided_bridge(pb, draw_normals(3, m, rng));
      bool valid = std::isfinite(lp) && gp.path.states.back() == pb.v;
      for (const auto& x : gp.path.states) valid = valid && x.eigen().values.minCoeff() > 0.0;
      invalid += valid ? 0 : 1;
    } catch (const BoundaryError&) {
      ++errors;
    }
  }
  const std::size_t budget = 20000;
  std::size_t accepted = 0, used = 0;
  std::uint64_t call = 0;
  while (used < budget) {
    try {
      const auto r = sample_rejection_bridge(pb, 0.05, budget - used, 107, 0x72656a00ULL + call++);
      used += r.attempts;
      ++accepted;
    } catch (const AttemptsExhausted& e) {
      used += e.attempts();
    }
  }
  const double rate = double(accepted) / double(used);
  return {errors == 0 && invalid == 0 && rate < 1e-3,
          "guided: 500 bridges, " + std::to_string(errors) + " boundary errors, " + std::to_string(invalid) +
              " invalid; rejection (eps 0.05): " + std::to_string(accepted) + " accepted of " + std::to_string(used) +
              " attempts, rate " + num(rate, 2) + " (< 1e-3)"};
}

// ---------------------------------------------------------------------------

Outcome c8_recovery() {
  const auto t0 = Clock::now();
  RandomStream rng(2024, 0);
  const auto p = truth2();
  const auto data = simulate_observations(Metric::AffineInvariant, p, SpdMatrix<2>::identity(), 100.0, 0.2, 1e-4, rng);
  McmcConfig cfg;
  cfg.iterations = 10000;
  cfg.burn_in = 2000;
  cfg.seed = 7;
  const auto out = run_mcmc_ai(data, wide(3), {}, std::vector<int>(data.intervals(), 50), cfg);
  Eigen::VectorXd t(5);
  t << p.theta(), p.mu(), p.sigma2();
  std::string detail;
  const bool ok = recovered(out, t, 3.0, detail);
  const double acc = out.bridges.rate();
  note("acceptance: bridges " + num(acc, 3) + ", sigma2 " + num(out.sigma2.rate(), 3) + ", mu " + num(out.mu.rate(), 3) +
       ", theta " + num(out.theta.rate(), 3) + "; numeric rejects " + std::to_string(out.numeric_rejects));
  const double secs = seconds_since(t0);
  return {ok && acc >= 0.5 && acc <= 0.9, detail + " (|z| < 3), bridge acceptance " + num(acc, 3) + " (in [0.5, 0.9]), " +
                                              num(secs / 60, 3) + " min"};
}

// ---------------------------------------------------------------------------

Outcome c9_le_fit() {
  RandomStream rng(2025, 0);
  const auto p = truth2();
  const auto data = simulate_observations(Metric::LogEuclidean, p, SpdMatrix<2>::identity(), 100.0, 0.2, 1e-4, rng);
  McmcConfig cfg;
  cfg.iterations = 20000;
  cfg.burn_in = 5000;
  cfg.seed = 9;
  const auto out = run_mcmc_le(data, wide(3), {}, cfg);
  Eigen::VectorXd t(5);
  t << p.theta(), p.mu(), p.sigma2();
  std::string detail;
  const bool ok = recovered(out, t, 3.0, detail);
  return {ok, detail + " (|z| < 3)"};
}

// ---------------------------------------------------------------------------

Outcome c10_prior_reproduction() {
  const auto t0 = Clock::now();
  PriorCheckConfig<2> cfg;
  cfg.replications = 100;
  cfg.horizon = 50.0;
  cfg.spacing = 0.1;
  cfg.sim_dt = 1e-3;
  cfg.m = 20;
  cfg.mcmc.iterations = 1000;
  cfg.mcmc.burn_in = 200;
  cfg.mcmc.thin = 4;
  cfg.mcmc.seed = 10;
  const Priors pr = Priors::isotropic(3, {0, 0.09}, {0, 0.09}, 0.0, 0.2);
  const auto res = prior_reproduction(pr, {0.2, 0.07, 0.1}, cfg);
  bool ok = true;
  std::string detail = "KS p vs U[0,1]:";
  for (Eigen::Index c = 0; c < res.quantiles.cols(); ++c) {
    const Eigen::VectorXd q = res.quantiles.col(c);
    const auto ks = ks_one_sample_uniform(std::vector<double>(q.data(), q.data() + q.size()));
    ok = ok && ks.p > 0.01;
    detail += " " + res.columns[static_cast<std::size_t>(c)] + " " + num(ks.p, 3);
    note(res.columns[static_cast<std::size_t>(c)] + ": mean quantile " + num(q.mean(), 3) + ", KS D " + num(ks.d, 3));
  }
  for (const auto& s : res.diagnostics) note(s);
  const double secs = seconds_since(t0);
  return {ok, detail + " (> 0.01), " + std::to_string(res.failures) + " failed replications, " +
                  num(secs / 60, 3) + " min"};
}

// ---------------------------------------------------------------------------

Outcome c11_gof() {
  RandomStream rng(2026, 0);
  const auto p = truth2();
  const auto data = simulate_observations(Metric::AffineInvariant, p, SpdMatrix<2>::identity(), 100.0, 0.2, 1e-3, rng);
  const ResidualOptions opt{.k = 3000, .sim_dt = 0.01, .seed = 11};
  const auto good = residual_ks(generalized_residuals(data, Metric::AffineInvariant, p, opt));
  const auto bad = residual_ks(generalized_residuals(data, Metric::AffineInvariant, p.with_sigma2(2.0), opt));
  bool accept = true;
  double bad_min = 1.0;
  std::string g = "true model p", b = "sigma2 doubled p";
  for (std::size_t i = 0; i < good.size(); ++i) {
    accept = accept && good[i].p > 0.01;
    bad_min = std::min(bad_min, bad[i].p);
    g += " " + num(good[i].p, 3);
    b += " " + num(bad[i].p, 3);
  }
  return {accept && bad_min < 0.01, g + " (> 0.01); " + b + " (min < 0.01); " +
                                        std::to_string(data.intervals()) + " observations, k = 3000"};
}

// ---------------------------------------------------------------------------

template <int N>
double seconds_per_iteration(const OuParams<N>& p, std::size_t iterations, std::uint64_t seed) {
  RandomStream rng(seed, 0);
  const auto data =
      simulate_observations(Metric::AffineInvariant, p, SpdMatrix<N>::identity(p.dim()), 100.0, 0.2, 1e-3, rng);
  McmcConfig cfg;
  cfg.iterations = iterations;
  cfg.seed = seed;
  const auto t0 = Clock::now();
  const auto out = run_mcmc_ai(data, wide(p.d()), {}, std::vector<int>(data.intervals(), 50), cfg);
  const double s = seconds_since(t0) / double(iterations);
  note("n = " + std::to_string(p.dim()) + ": " + num(s * 1e3, 4) + " ms per iteration, bridge acceptance " +
       num(out.bridges.rate(), 3) + ", posterior mean theta " + num(mean(out.theta_draws()), 3) + ", sigma2 " +
       num(mean(out.sigma2_draws()), 3));
  return s;
}

Outcome c12_scaling() {
  const double s2 = seconds_per_iteration(truth2(), 500, 12);
  const double s3 = seconds_per_iteration(OuParams<3>(0.5, attractor3(), 1.0), 500, 12);
  const double ratio = s3 / s2;
  return {ratio >= 4 && ratio <= 12, "n = 3 over n = 2 time per iteration " + num(ratio, 3) + " (in [4, 12]), " +
                                         num(s2 * 1e3, 3) + " ms vs " + num(s3 * 1e3, 3) + " ms"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> all = {
      {"geometry identities", c1_geometry},
      {"determinant interpolation", c2_determinants},
      {"gradient and Hessian", c3_gradient},
      {"Christoffel symbols", c4_christoffel},
      {"LE chart oracle", c5_le_chart},
      {"bridge validation, case 1", c6_bridge},
      {"near-boundary robustness, case 2", c7_near_boundary},
      {"posterior recovery, AI", c8_recovery},
      {"LE fit", c9_le_fit},
      {"prior reproduction", c10_prior_reproduction},
      {"goodness of fit self-consistency", c11_gof},
      {"n = 3 scaling", c12_scaling},
  };
  std::vector<int> which;
  for (int i = 1; i < argc; ++i) which.push_back(std::atoi(argv[i]));
  if (which.empty())
    for (int i = 1; i <= 12; ++i) which.push_back(i);
  int failed = 0;
  for (int c : which) {
    if (c < 1 || c > 12) {
      std::cerr << "unknown criterion " << c << '\n';
      return 2;
    }
    const auto& [name, run] = all[static_cast<std::size_t>(c - 1)];
    Outcome o{false, ""};
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << "criterion " << c << " [" << (o.pass ? "PASS" : "FAIL") << "] " << name << ": " << o.detail
              << std::endl;
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
