#pragma once

// Kolmogorov-Smirnov tests and probability-integral-transform residuals of
// observed transitions under a fitted OU model.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "spdou/errors.hpp"
#include "spdou/geometry.hpp"
#include "spdou/parallel.hpp"
#include "spdou/rng.hpp"
#include "spdou/sde.hpp"
#include "spdou/symkernel.hpp"

namespace spdou {

struct KsResult {
  double d;
  double p;
};

/// P(K > lambda) for the Kolmogorov limit distribution.
inline double kolmogorov_sf(double lambda) {
  if (!(lambda > 0.0)) return 1.0;
  if (lambda < 1.18) {
    // theta-function form, converges fast for small lambda
    const double c = -std::numbers::pi * std::numbers::pi / (8.0 * lambda * lambda);
    double s = 0.0;
    for (int k = 1; k <= 20; ++k) s += std::exp(c * (2 * k - 1) * (2 * k - 1));
    return std::clamp(1.0 - std::sqrt(2.0 * std::numbers::pi) / lambda * s, 0.0, 1.0);
  }
  double s = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    s += (k % 2 == 1 ? term : -term);
    if (term < 1e-300) break;
  }
  return std::clamp(2.0 * s, 0.0, 1.0);
}

/// One-sample KS against U[0, 1].
inline KsResult ks_one_sample_uniform(std::vector<double> x) {
  if (x.size() < 5) throw ContractError("ks_one_sample_uniform: need at least 5 values");
  for (double v : x)
    if (!std::isfinite(v)) throw ContractError("ks_one_sample_uniform: non-finite value");
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = std::clamp(x[i], 0.0, 1.0);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
  }
  return {d, kolmogorov_sf(std::sqrt(n) * d)};
}

inline KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.size() < 5 || b.size() < 5) throw ContractError("ks_two_sample: need at least 5 values per sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == v) ++i;
    while (j < b.size() && b[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return {d, kolmogorov_sf(std::sqrt(na * nb / (na + nb)) * d)};
}

struct ResidualOptions {
  int k = 3000;
  /// Euler-Maruyama step used for the forward simulations.
  double sim_dt = 0.01;
  std::uint64_t seed = 0;
  int threads = 1;
};

/// Rows: transitions j = 1..N; columns: entries in half-vectorization order.
struct ResidualMatrix {
  Eigen::MatrixXd z;
  std::vector<std::string> entries;
  std::size_t failed_paths = 0;
  std::size_t total_paths = 0;

  std::vector<double> column(Eigen::Index i) const {
    return std::vector<double>(z.col(i).data(), z.col(i).data() + z.rows());
  }
};

/// Z_j^(i) = fraction of k simulated endpoints from y_{j-1} whose entry i is
/// <= y_j^(i). Paths that fail numerically are dropped; more than 1% failed
/// paths fails the run.
template <int N>
ResidualMatrix generalized_residuals(const ObservationSeries<N>& data, Metric metric, const OuParams<N>& params,
                                     const ResidualOptions& opt) {
  data.validate();
  if (opt.k < 100) throw ContractError("generalized_residuals: k must be >= 100");
  if (!(opt.sim_dt > 0.0)) throw ContractError("generalized_residuals: sim_dt must be > 0");
  if (params.dim() != data.dim()) throw ContractError("generalized_residuals: dimension mismatch");
  const int n = data.dim(), d = tangent_dim(n);
  const std::size_t rows = data.intervals();
  ResidualMatrix out;
  out.z.resize(static_cast<Eigen::Index>(rows), d);
  out.entries = half_vec_names(n);
  std::vector<std::size_t> failed(rows, 0);
  parallel_for(rows, opt.threads, [&](std::size_t j) {
    RandomStream rng(opt.seed, stream_id({0x676f66, j}));  // "gof"
    const double dt_total = data.times[j + 1] - data.times[j];
    const int steps = std::max(1, static_cast<int>(std::ceil(dt_total / opt.sim_dt - 1e-9)));
    const double dt = dt_total / steps;
    const auto target = half_vec(data.obs[j + 1].sym());
    Eigen::VectorXd below = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd z(d);
    std::size_t ok = 0;
    for (int s = 0; s < opt.k; ++s) {
      try {
        SpdMatrix<N> x = data.obs[j];
        for (int t = 0; t < steps; ++t) {
          for (int i = 0; i < d; ++i) z(i) = rng.normal();
          x = em_step(metric, x, params, dt, z);
        }
        const auto v = half_vec(x.sym());
        for (int i = 0; i < d; ++i) below(i) += v(i) <= target(i) ? 1.0 : 0.0;
        ++ok;
      } catch (const BoundaryError&) {
        ++failed[j];
      } catch (const NumericFailure&) {
        ++failed[j];
      }
    }
    out.z.row(static_cast<Eigen::Index>(j)) = (ok == 0 ? below : below / static_cast<double>(ok)).transpose();
  });
  for (std::size_t f : failed) out.failed_paths += f;
  out.total_paths = rows * static_cast<std::size_t>(opt.k);
  if (static_cast<double>(out.failed_paths) > 0.01 * static_cast<double>(out.total_paths))
    throw NumericFailure("generalized_residuals: " + std::to_string(out.failed_paths) + " of " +
                         std::to_string(out.total_paths) + " simulated paths failed");
  return out;
}

/// Per-entry KS of residuals against U[0, 1].
inline std::vector<KsResult> residual_ks(const ResidualMatrix& r) {
  std::vector<KsResult> out;
  for (Eigen::Index i = 0; i < r.z.cols(); ++i) out.push_back(ks_one_sample_uniform(r.column(i)));
  return out;
}

/// Q-Q / ECDF table: rank, ecdf level rank/N, uniform quantile (rank - 0.5)/N
/// and the sorted residuals of every entry.
inline void write_ecdf_csv(std::ostream& os, const ResidualMatrix& r) {
  os << "rank,ecdf,uniform";
  for (const auto& e : r.entries) os << ',' << e;
  os << '\n';
  std::vector<std::vector<double>> cols;
  for (Eigen::Index i = 0; i < r.z.cols(); ++i) {
    cols.push_back(r.column(i));
    std::sort(cols.back().begin(), cols.back().end());
  }
  const auto rows = static_cast<std::size_t>(r.z.rows());
  for (std::size_t k = 0; k < rows; ++k) {
    os << k + 1 << ',';
    detail::put_double(os, static_cast<double>(k + 1) / static_cast<double>(rows));
    os << ',';
    detail::put_double(os, (static_cast<double>(k) + 0.5) / static_cast<double>(rows));
    for (const auto& c : cols) {
      os << ',';
      detail::put_double(os, c[k]);
    }
    os << '\n';
  }
}

/// One row per transition: its end time and the residual of every entry.
inline void write_residuals_csv(std::ostream& os, std::span<const double> end_times, const ResidualMatrix& r) {
  if (end_times.size() != static_cast<std::size_t>(r.z.rows()))
    throw ContractError("write_residuals_csv: one time per row required");
  os << 't';
  for (const auto& e : r.entries) os << ',' << e;
  os << '\n';
  for (Eigen::Index j = 0; j < r.z.rows(); ++j) {
    detail::put_double(os, end_times[static_cast<std::size_t>(j)]);
    for (Eigen::Index i = 0; i < r.z.cols(); ++i) {
      os << ',';
      detail::put_double(os, r.z(j, i));
    }
    os << '\n';
  }
}

}  // namespace spdou
