#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "spdou/gof.hpp"
#include "spdou/inference.hpp"
#include "support.hpp"

using namespace spdou;

namespace {

SpdMatrix<2> mat2(double a, double b, double c) {
  Eigen::Matrix2d m;
  m << a, b, b, c;
  return SpdMatrix<2>(m);
}

OuParams<2> truth() { return OuParams<2>(0.5, mat2(1, 0.9, 1), 1.0); }

ObservationSeries<2> ai_data(double horizon, double spacing, std::uint64_t seed) {
  RandomStream rng(seed, 0);
  return simulate_observations(Metric::AffineInvariant, truth(), SpdMatrix<2>::identity(), horizon, spacing, 0.01, rng);
}

Priors wide(int d) { return Priors::isotropic(d, {0, 4}, {0, 4}, 0.0, 4.0); }

McmcConfig quick(std::size_t iters, std::uint64_t seed) {
  McmcConfig c;
  c.iterations = iters;
  c.seed = seed;
  return c;
}

double mean(const Eigen::VectorXd& v) { return v.mean(); }
double sd(const Eigen::VectorXd& v) { return std::sqrt((v.array() - v.mean()).square().sum() / (v.size() - 1)); }

}  // namespace

TEST(Priors, Contracts) {
  EXPECT_NO_THROW(wide(3).validate(3));
  EXPECT_THROW(wide(3).validate(6), ContractError);
  auto p = wide(3);
  p.log_theta.var = 0.0;
  EXPECT_THROW(p.validate(3), ContractError);
  EXPECT_NEAR(Gaussian({1.0, 4.0}).log_pdf(1.0), -0.5 * std::log(8.0 * M_PI), 1e-15);
  EXPECT_THROW(ProposalScales({0.1, 0.0, 0.1}).validate(), ContractError);
}

TEST(AiChain, ZeroIterationsEchoesInitialState) {
  const auto data = ai_data(1.0, 0.2, 1);
  auto cfg = quick(0, 3);
  cfg.theta0 = 0.7;
  cfg.sigma20 = 1.3;
  cfg.mu0 = Eigen::Vector3d(0.1, 0.2, 0.3);
  const auto out = run_mcmc_ai(data, wide(3), {}, std::vector<int>(5, 10), cfg);
  ASSERT_EQ(out.rows(), 1u);
  EXPECT_EQ(out.iteration[0], 0u);
  EXPECT_DOUBLE_EQ(out.draws(0, 0), 0.7);
  EXPECT_NEAR(out.draws(0, 2), 0.2, 1e-14);
  EXPECT_DOUBLE_EQ(out.draws(0, 4), 1.3);
}

TEST(AiChain, RowCountAndDeterminism) {
  const auto data = ai_data(2.0, 0.2, 2);
  auto cfg = quick(23, 4);
  cfg.burn_in = 5;
  cfg.thin = 4;
  const std::vector<int> m(10, 10);
  const auto a = run_mcmc_ai(data, wide(3), {}, m, cfg);
  EXPECT_EQ(a.rows(), 4u);
  EXPECT_EQ(a.iteration, (std::vector<std::size_t>{9, 13, 17, 21}));
  const auto b = run_mcmc_ai(data, wide(3), {}, m, cfg);
  EXPECT_EQ(a.draws, b.draws);
  EXPECT_EQ(a.bridges.accepted, b.bridges.accepted);
  cfg.threads = 3;
  const auto c = run_mcmc_ai(data, wide(3), {}, m, cfg);
  EXPECT_EQ(a.draws, c.draws);
  EXPECT_EQ(a.bridges.proposed, 23u * 10u);
  std::ostringstream os;
  write_chain_csv(os, a);
  const std::string s = os.str();
  EXPECT_EQ(s.substr(0, s.find('\n')), "iteration,theta,mu_1,mu_2,mu_3,sigma2");
}

TEST(AiChain, CachedLogPhiMatchesRecomputation) {
  const auto data = ai_data(2.0, 0.2, 3);
  auto cfg = quick(30, 5);
  cfg.check_cache = true;
  AiSampler<2> s(data, wide(3), {0.3, 0.2, 0.2}, std::vector<int>(10, 20), cfg);
  for (int k = 0; k < 30; ++k) {
    ASSERT_NO_THROW(s.sweep());
    const auto fresh = s.all_log_phi(s.state().params, s.state().noise);
    ASSERT_TRUE(fresh.has_value());
    for (std::size_t j = 0; j < fresh->size(); ++j) EXPECT_NEAR((*fresh)[j], s.state().log_phi[j], 1e-10);
  }
  EXPECT_GT(s.tallies().theta.accepted + s.tallies().mu.accepted + s.tallies().sigma2.accepted, 0u);
}

TEST(AiChain, LikelihoodOffReproducesPrior) {
  // two identical observations; every likelihood difference forced to zero
  const auto y = mat2(1.2, 0.3, 0.9);
  ObservationSeries<2> data{{0.0, 1.0}, {y, y}};
  auto cfg = quick(20000, 7);
  cfg.likelihood = false;
  cfg.thin = 10;
  const Priors pr = Priors::isotropic(3, {0.3, 0.5}, {-0.2, 0.8}, 0.1, 1.0);
  const auto out = run_mcmc_ai(data, pr, {2.0, 2.0, 2.0}, {5}, cfg);
  std::vector<double> u;
  for (Eigen::Index r = 0; r < out.draws.rows(); ++r)
    u.push_back(0.5 * std::erfc(-(std::log(out.draws(r, 0)) - 0.3) / std::sqrt(2 * 0.5)));
  EXPECT_GT(ks_one_sample_uniform(u).p, 0.01);
  EXPECT_EQ(out.bridges.accepted, out.bridges.proposed);
}

TEST(AiChain, PriorOnlySigmaAcceptanceIsPriorRatio) {
  // with no likelihood the sigma^2 chain is an exact RW Metropolis on the prior
  const auto y = mat2(1.0, 0.0, 1.0);
  ObservationSeries<2> data{{0.0, 1.0}, {y, y}};
  auto cfg = quick(20000, 8);
  cfg.likelihood = false;
  const auto out = run_mcmc_ai(data, wide(3), {0.1, 1.0, 0.1}, {2}, cfg);
  const Eigen::VectorXd ls = out.sigma2_draws().array().log();
  EXPECT_NEAR(mean(ls), 0.0, 0.25);
  EXPECT_NEAR(sd(ls), 2.0, 0.25);
}

TEST(AiChain, SigmaRatioSwitch) {
  const auto data = ai_data(1.0, 0.2, 4);
  auto cfg = quick(0, 1);
  AiSampler<2> a(data, wide(3), {}, std::vector<int>(5, 5), cfg);
  cfg.sigma_ratio = SigmaRatio::Literal;
  AiSampler<2> b(data, wide(3), {}, std::vector<int>(5, 5), cfg);
  const double d = 3.0, nint = 5.0;
  EXPECT_NEAR(a.outer_terms(1.0) - b.outer_terms(1.0), nint * d / 2.0, 1e-12);
  EXPECT_NEAR(a.outer_terms(2.0) - a.outer_terms(1.0),
              b.outer_terms(2.0) - b.outer_terms(1.0) - nint * d / 2 * (std::log(2.0) - 1.0), 1e-12);
}

TEST(AiChain, Contracts) {
  const auto data = ai_data(1.0, 0.2, 4);
  EXPECT_THROW(run_mcmc_ai(data, wide(3), {}, std::vector<int>(4, 5), quick(1, 1)), ContractError);
  EXPECT_THROW(run_mcmc_ai(data, wide(3), {0.0, 0.1, 0.1}, std::vector<int>(5, 5), quick(1, 1)), ContractError);
  ObservationSeries<2> one{{0.0}, {SpdMatrix<2>::identity()}};
  EXPECT_THROW(run_mcmc_ai(one, wide(3), {}, {}, quick(1, 1)), ContractError);
  auto cfg = quick(5, 1);
  cfg.burn_in = 6;
  EXPECT_THROW(run_mcmc_ai(data, wide(3), {}, std::vector<int>(5, 5), cfg), ContractError);
}

TEST(AiChain, ShortRecoverySmoke) {
  const auto data = ai_data(40.0, 0.2, 5);
  auto cfg = quick(400, 9);
  cfg.burn_in = 200;
  cfg.theta0 = 1.0;
  cfg.sigma20 = 1.0;
  cfg.mu0 = Eigen::Vector3d::Zero();
  const auto out = run_mcmc_ai(data, wide(3), {0.15, 0.04, 0.08}, std::vector<int>(data.intervals(), 10), cfg);
  EXPECT_GT(out.bridges.rate(), 0.4);
  EXPECT_LT(out.bridges.rate(), 0.98);
  EXPECT_NEAR(mean(out.sigma2_draws()), 1.0, 0.3);
  EXPECT_EQ(out.numeric_rejects, 0u);
}

TEST(LeLikelihood, ChartAndManifoldAgree) {
  RandomStream rng(10, 0);
  const auto p = truth();
  auto data = simulate_observations(Metric::LogEuclidean, p, SpdMatrix<2>::identity(), 5.0, 0.25, 0.05, rng);
  const double a = le_log_likelihood(data, p);
  const double b = le_log_likelihood(chart_coords(data), data.times, p.theta(), p.mu(), p.sigma2());
  EXPECT_NEAR(a, b, 1e-10 * std::abs(a));
}

TEST(LeLikelihood, MatchesScalarAr1Density) {
  // independent scalar oracle: each coordinate is an AR(1) with known mean/variance
  Eigen::MatrixXd y(2, 4);
  y << 0.1, -0.3, 0.4, 0.2, 1.0, 0.7, 0.9, 1.4;
  const std::vector<double> t{0.0, 0.5, 0.8, 2.0};
  const Eigen::Vector2d mu(0.2, 1.1);
  const double th = 0.7, s2 = 0.4;
  double ref = 0.0;
  for (int i = 0; i < 2; ++i)
    for (int k = 1; k < 4; ++k) {
      const double dt = t[k] - t[k - 1];
      const double m = mu(i) + std::exp(-th * dt) * (y(i, k - 1) - mu(i));
      const double v = s2 / (2 * th) * (1 - std::exp(-2 * th * dt));
      ref += -0.5 * std::log(2 * M_PI * v) - (y(i, k) - m) * (y(i, k) - m) / (2 * v);
    }
  EXPECT_NEAR(le_log_likelihood(y, t, th, mu, s2), ref, 1e-12);
  // theta = 0 is Brownian motion
  double bm = 0.0;
  for (int i = 0; i < 2; ++i)
    for (int k = 1; k < 4; ++k) {
      const double v = s2 * (t[k] - t[k - 1]);
      bm += -0.5 * std::log(2 * M_PI * v) - std::pow(y(i, k) - y(i, k - 1), 2) / (2 * v);
    }
  EXPECT_NEAR(le_log_likelihood(y, t, 0.0, mu, s2), bm, 1e-12);
}

TEST(LeChain, ScalarRecovery) {
  // n = 1: d = 1, log X is a scalar OU
  const OuParams<1> p(0.8, SpdMatrix<1>(Eigen::Matrix<double, 1, 1>(std::exp(0.5))), 0.3);
  std::vector<double> grid = uniform_grid(0.0, 200.0, 2000);
  RandomStream rng(11, 0);
  const Eigen::MatrixXd z = draw_normals(1, 2000, rng);
  const Eigen::MatrixXd y = simulate_le_exact(p, Eigen::VectorXd::Constant(1, 0.0), grid, z);
  ObservationSeries<1> data;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    data.times.push_back(grid[k]);
    data.obs.push_back(chart_h_inv<1>(y.col(static_cast<Eigen::Index>(k)), 1));
  }
  auto cfg = quick(6000, 12);
  cfg.burn_in = 1000;
  const auto out = run_mcmc_le(data, wide(1), {0.1, 0.05, 0.05}, cfg);
  EXPECT_LT(std::abs(mean(out.theta_draws()) - 0.8), 3 * sd(out.theta_draws()));
  EXPECT_LT(std::abs(mean(out.mu_draws(0)) - 0.5), 3 * sd(out.mu_draws(0)));
  EXPECT_LT(std::abs(mean(out.sigma2_draws()) - 0.3), 3 * sd(out.sigma2_draws()));
  EXPECT_EQ(out.rows(), 5000u);
  EXPECT_GT(out.theta.rate(), 0.1);
}

TEST(LeChain, Deterministic) {
  RandomStream rng(13, 0);
  const auto data = simulate_observations(Metric::LogEuclidean, truth(), SpdMatrix<2>::identity(), 5.0, 0.5, 0.05, rng);
  const auto a = run_mcmc_le(data, wide(3), {}, quick(300, 2));
  const auto b = run_mcmc_le(data, wide(3), {}, quick(300, 2));
  EXPECT_EQ(a.draws, b.draws);
  const auto zero = run_mcmc_le(data, wide(3), {}, quick(0, 2));
  EXPECT_EQ(zero.rows(), 1u);
}

TEST(PriorReproduction, Contracts) {
  PriorCheckConfig<2> cfg;
  cfg.replications = 19;
  EXPECT_THROW(prior_reproduction(wide(3), {}, cfg), ContractError);
  cfg.replications = 20;
  cfg.metric = Metric::Euclidean;
  EXPECT_THROW(prior_reproduction(wide(3), {}, cfg), ContractError);
}

TEST(PriorReproduction, DegeneratePriorsConcentrate) {
  PriorCheckConfig<2> cfg;
  cfg.replications = 20;
  cfg.metric = Metric::LogEuclidean;
  cfg.horizon = 5.0;
  cfg.spacing = 0.5;
  cfg.sim_dt = 0.05;
  cfg.mcmc = quick(200, 3);
  const Priors point = Priors::isotropic(3, {0.0, 1e-12}, {0.0, 1e-12}, 0.0, 1e-12);
  const auto res = prior_reproduction(point, {}, cfg);
  EXPECT_EQ(res.failures, 0u);
  ASSERT_EQ(res.quantiles.rows(), 20);
  // every chain is stuck at its own prior draw, so the quantiles sit at 0 or 1
  for (Eigen::Index c = 0; c < res.quantiles.cols(); ++c) {
    std::vector<double> q(res.quantiles.col(c).data(), res.quantiles.col(c).data() + 20);
    for (double v : q) EXPECT_TRUE(v == 0.0 || v == 1.0);
    EXPECT_LT(ks_one_sample_uniform(q).p, 0.01);
  }
}

TEST(PriorReproduction, LeCalibrationSmoke) {
  PriorCheckConfig<2> cfg;
  cfg.replications = 40;
  cfg.metric = Metric::LogEuclidean;
  cfg.horizon = 20.0;
  cfg.spacing = 0.2;
  cfg.sim_dt = 0.01;
  cfg.mcmc = quick(1500, 4);
  cfg.mcmc.burn_in = 300;
  const Priors pr = Priors::isotropic(3, {0, 0.09}, {0, 0.09}, 0.0, 0.2);
  const auto res = prior_reproduction(pr, {0.1, 0.05, 0.1}, cfg);
  EXPECT_EQ(res.failures, 0u);
  for (Eigen::Index c = 0; c < res.quantiles.cols(); ++c) {
    std::vector<double> q(res.quantiles.col(c).data(), res.quantiles.col(c).data() + res.quantiles.rows());
    EXPECT_GT(ks_one_sample_uniform(q).p, 0.01) << res.columns[static_cast<std::size_t>(c)];
  }
}

TEST(PosteriorQuantile, Counting) {
  const Eigen::Vector4d d(1, 2, 3, 4);
  EXPECT_EQ(posterior_quantile(d, 0.5), 0.0);
  EXPECT_EQ(posterior_quantile(d, 2.5), 0.5);
  EXPECT_EQ(posterior_quantile(d, 3.0), 0.625);
  EXPECT_EQ(posterior_quantile(d, 9.0), 1.0);
}
