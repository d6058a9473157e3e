#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "spdou/gof.hpp"
#include "support.hpp"

using namespace spdou;

namespace {

SpdMatrix<2> mat2(double a, double b, double c) {
  Eigen::Matrix2d m;
  m << a, b, b, c;
  return SpdMatrix<2>(m);
}

OuParams<2> model() { return OuParams<2>(0.5, mat2(1, 0.9, 1), 1.0); }

ObservationSeries<2> model_data(std::size_t nobs, double spacing, double dt, std::uint64_t seed) {
  ObservationSeries<2> out{{0.0}, {SpdMatrix<2>::identity()}};
  RandomStream rng(seed, 9);
  const int steps = static_cast<int>(std::lround(spacing / dt));
  auto x = out.obs.front();
  for (std::size_t j = 1; j <= nobs; ++j) {
    for (int s = 0; s < steps; ++s) {
      Eigen::Vector3d z(rng.normal(), rng.normal(), rng.normal());
      x = em_step(Metric::AffineInvariant, x, model(), spacing / steps, z);
    }
    out.times.push_back(static_cast<double>(j) * spacing);
    out.obs.push_back(x);
  }
  return out;
}

}  // namespace

TEST(Kolmogorov, SurvivalFunctionMatchesReference) {
  // reference values of the Kolmogorov limit survival function
  const std::vector<std::pair<double, double>> ref{{0.3, 0.9999906941986655}, {0.8, 0.5441424115741981},
                                                   {1.0, 0.26999967167735456}, {1.18, 0.1234538094297657},
                                                   {1.5, 0.022217962616525127}, {2.5, 7.453306344157342e-06}};
  for (const auto& [l, p] : ref) EXPECT_NEAR(kolmogorov_sf(l), p, 1e-12 * std::max(1.0, 1.0 / p) * p + 1e-15) << l;
  EXPECT_EQ(kolmogorov_sf(0.0), 1.0);
  // both branches agree at the switch point
  EXPECT_NEAR(kolmogorov_sf(1.18 - 1e-12), kolmogorov_sf(1.18 + 1e-12), 1e-10);
}

TEST(Ks, OneSampleHandComputed) {
  const auto r = ks_one_sample_uniform({0.1, 0.3, 0.5, 0.7, 0.9});
  EXPECT_NEAR(r.d, 0.1, 1e-15);
  EXPECT_GT(r.p, 0.99);
  EXPECT_THROW(ks_one_sample_uniform({0.1, 0.2, 0.3, 0.4}), ContractError);
}

TEST(Ks, TwoSampleHandComputed) {
  const std::vector<double> x{0.12, 0.55, 0.31, 0.98, 0.77, 0.45, 0.05, 0.66};
  const std::vector<double> y{0.2, 0.9, 0.4, 0.35, 0.85, 0.6, 0.15};
  const auto r = ks_two_sample(x, y);
  EXPECT_NEAR(r.d, 0.25, 1e-15);
  EXPECT_NEAR(r.p, 0.9737661816151203, 1e-12);
  const auto self = ks_two_sample(x, x);
  EXPECT_EQ(self.d, 0.0);
  EXPECT_EQ(self.p, 1.0);
  EXPECT_THROW(ks_two_sample(x, {1.0, 2.0}), ContractError);
}

TEST(Ks, TiesAcrossSamples) {
  const std::vector<double> a{1, 1, 2, 2, 3}, b{1, 2, 2, 3, 3};
  EXPECT_NEAR(ks_two_sample(a, b).d, 0.2, 1e-15);
}

TEST(Ks, PValueMonotoneInD) {
  double prev = 2.0;
  for (double d = 0.0; d <= 0.3; d += 0.01) {
    const double p = kolmogorov_sf(std::sqrt(500.0) * d);
    EXPECT_LE(p, prev);
    prev = p;
  }
}

TEST(Ks, UniformAcceptedSkewedRejected) {
  RandomStream rng(3, 0);
  std::vector<double> u(2000), sq(2000);
  for (std::size_t i = 0; i < u.size(); ++i) {
    u[i] = rng.uniform();
    sq[i] = u[i] * u[i];
  }
  EXPECT_GT(ks_one_sample_uniform(u).p, 0.01);
  EXPECT_LT(ks_one_sample_uniform(sq).p, 1e-6);
}

TEST(Residuals, HugeThresholdGivesOne) {
  ObservationSeries<2> data{{0.0, 0.1}, {SpdMatrix<2>::identity(), mat2(1e6, 0.0, 1e6)}};
  const auto r = generalized_residuals(data, Metric::AffineInvariant, model(), {.k = 200, .sim_dt = 0.01, .seed = 1});
  EXPECT_EQ(r.z(0, 0), 1.0);
  EXPECT_EQ(r.z(0, 2), 1.0);
  EXPECT_EQ(r.entries, (std::vector<std::string>{"x11", "x21", "x22"}));
}

TEST(Residuals, StationaryPointNearMedian) {
  const auto m = mat2(1, 0.9, 1);
  ObservationSeries<2> data{{0.0, 1e-4}, {m, m}};
  for (Metric metric : {Metric::AffineInvariant, Metric::LogEuclidean}) {
    const auto r = generalized_residuals(data, metric, model(), {.k = 3000, .sim_dt = 1e-4, .seed = 2});
    for (int i = 0; i < 3; ++i) {
      EXPECT_GE(r.z(0, i), 0.3);
      EXPECT_LE(r.z(0, i), 0.7);
    }
  }
}

TEST(Residuals, SeedVariationWithinBinomialError) {
  const auto data = model_data(60, 0.2, 0.02, 5);
  const auto a = generalized_residuals(data, Metric::AffineInvariant, model(), {.k = 3000, .sim_dt = 0.02, .seed = 10});
  const auto b = generalized_residuals(data, Metric::AffineInvariant, model(), {.k = 3000, .sim_dt = 0.02, .seed = 11});
  // the difference of two independent estimates has variance 2 p (1 - p) / k
  int within = 0;
  for (Eigen::Index j = 0; j < a.z.rows(); ++j)
    for (Eigen::Index i = 0; i < 3; ++i) within += std::abs(a.z(j, i) - b.z(j, i)) < 3 * std::sqrt(0.5 / 3000) ? 1 : 0;
  EXPECT_GE(within, static_cast<int>(std::floor(0.99 * 180)));
  EXPECT_TRUE((a.z.array() >= 0.0).all() && (a.z.array() <= 1.0).all());
}

TEST(Residuals, SelfTestUniform) {
  const auto data = model_data(150, 0.2, 0.02, 6);
  const auto r = generalized_residuals(data, Metric::AffineInvariant, model(), {.k = 500, .sim_dt = 0.02, .seed = 12});
  for (const auto& ks : residual_ks(r)) EXPECT_GT(ks.p, 0.01);
  EXPECT_EQ(r.failed_paths, 0u);
}

TEST(Residuals, Contracts) {
  const auto data = model_data(3, 0.2, 0.1, 1);
  EXPECT_THROW(generalized_residuals(data, Metric::AffineInvariant, model(), {.k = 99}), ContractError);
  EXPECT_THROW(generalized_residuals(data, Metric::AffineInvariant, model(), {.k = 100, .sim_dt = 0.0}),
               ContractError);
}

TEST(Residuals, EcdfTableShape) {
  const auto data = model_data(10, 0.2, 0.1, 1);
  const auto r = generalized_residuals(data, Metric::AffineInvariant, model(), {.k = 100, .sim_dt = 0.1, .seed = 1});
  std::ostringstream os;
  write_ecdf_csv(os, r);
  const std::string out = os.str();
  EXPECT_EQ(out.substr(0, out.find('\n')), "rank,ecdf,uniform,x11,x21,x22");
  EXPECT_EQ(std::count(out.begin(), out.end(), '\n'), 11);
  std::ostringstream res;
  write_residuals_csv(res, std::span<const double>(data.times).subspan(1), r);
  EXPECT_EQ(res.str().substr(0, res.str().find('\n')), "t,x11,x21,x22");
}
