#pragma once

// Daily realized covariance from intraday prices and the per-interval
// imputation counts of an unevenly spaced observation grid.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <iterator>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "spdou/errors.hpp"
#include "spdou/parallel.hpp"
#include "spdou/rng.hpp"
#include "spdou/sde.hpp"
#include "spdou/symkernel.hpp"

namespace spdou {

/// Seconds since 1970-01-01T00:00:00 in exchange-local time.
using Timestamp = std::int64_t;

inline Timestamp make_timestamp(int y, int mo, int d, int h = 0, int mi = 0, int s = 0) {
  namespace c = std::chrono;
  const c::sys_days date{c::year{y} / c::month{static_cast<unsigned>(mo)} / c::day{static_cast<unsigned>(d)}};
  return static_cast<Timestamp>(date.time_since_epoch().count()) * 86400 + h * 3600 + mi * 60 + s;
}

/// Days since the epoch of the local calendar date containing ts.
inline std::int64_t day_number(Timestamp ts) { return ts >= 0 ? ts / 86400 : -((-ts + 86399) / 86400); }

inline std::string format_date(std::int64_t day) {
  namespace c = std::chrono;
  const c::year_month_day ymd{c::sys_days{c::days{day}}};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

inline std::string format_timestamp(Timestamp ts) {
  const std::int64_t day = day_number(ts);
  const std::int64_t sec = ts - day * 86400;
  char buf[16];
  std::snprintf(buf, sizeof buf, "T%02d:%02d:%02d", static_cast<int>(sec / 3600), static_cast<int>(sec / 60 % 60),
                static_cast<int>(sec % 60));
  return format_date(day) + buf;
}

/// ISO-8601 date-time: YYYY-MM-DD[T| ]hh:mm[:ss[.fff]][Z|+hh:mm|-hh:mm].
/// Without a zone the value is taken as exchange-local; with one it is
/// converted to UTC and shifted by utc_offset_minutes.
inline Timestamp parse_timestamp(const std::string& text, int utc_offset_minutes = 0) {
  int y, mo, d, h = 0, mi = 0, consumed = 0;
  double sec = 0.0;
  auto fail = [&]() { return ContractError("parse_timestamp: not an ISO-8601 date-time: '" + text + "'"); };
  if (std::sscanf(text.c_str(), "%4d-%2d-%2d%n", &y, &mo, &d, &consumed) != 3 || consumed != 10) throw fail();
  std::size_t pos = 10;
  if (pos < text.size() && (text[pos] == 'T' || text[pos] == ' ')) {
    int c = 0;
    if (std::sscanf(text.c_str() + pos + 1, "%2d:%2d%n", &h, &mi, &c) != 2 || c != 5) throw fail();
    pos += 1 + static_cast<std::size_t>(c);
    if (pos < text.size() && text[pos] == ':') {
      char* end = nullptr;
      sec = std::strtod(text.c_str() + pos + 1, &end);
      if (end == text.c_str() + pos + 1) throw fail();
      pos = static_cast<std::size_t>(end - text.c_str());
    }
  }
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || sec < 0.0 || sec >= 61.0) throw fail();
  Timestamp ts = make_timestamp(y, mo, d, h, mi, 0) + static_cast<Timestamp>(std::llround(sec));
  if (pos < text.size()) {
    if (text[pos] == 'Z' && pos + 1 == text.size()) {
      ts += 60 * utc_offset_minutes;
    } else if ((text[pos] == '+' || text[pos] == '-') && text.size() - pos == 6 && text[pos + 3] == ':') {
      int oh = 0, om = 0;
      if (std::sscanf(text.c_str() + pos + 1, "%2d:%2d", &oh, &om) != 2) throw fail();
      const int off = (text[pos] == '+' ? 1 : -1) * (oh * 60 + om);
      ts += 60 * (utc_offset_minutes - off);
    } else {
      throw fail();
    }
  }
  return ts;
}

struct TickSeries {
  std::string instrument;
  std::vector<Timestamp> time;
  std::vector<double> price;

  std::size_t size() const { return time.size(); }

  void validate() const {
    if (time.size() != price.size()) throw ContractError("TickSeries " + instrument + ": column lengths differ");
    for (std::size_t k = 0; k < time.size(); ++k) {
      if (!(price[k] > 0.0) || !std::isfinite(price[k]))
        throw ContractError("TickSeries " + instrument + ": price must be > 0 at " + format_timestamp(time[k]));
      if (k > 0 && time[k] <= time[k - 1])
        throw ContractError("TickSeries " + instrument + ": timestamps not strictly increasing at " +
                            format_timestamp(time[k]));
    }
  }
};

namespace detail {
inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\"");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\"");
  return s.substr(b, e - b + 1);
}
}  // namespace detail

/// CSV with header timestamp,price (column order taken from the header).
inline TickSeries read_tick_csv(std::istream& is, const std::string& instrument, int utc_offset_minutes = 0) {
  std::string line;
  if (!std::getline(is, line)) throw ContractError("read_tick_csv " + instrument + ": empty input");
  int tcol = -1, pcol = -1, col = 0;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      const std::string c = detail::trim(cell);
      if (c == "timestamp") tcol = col;
      if (c == "price") pcol = col;
      ++col;
    }
  }
  if (tcol < 0 || pcol < 0) throw ContractError("read_tick_csv " + instrument + ": header needs timestamp and price");
  TickSeries out{instrument, {}, {}};
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(detail::trim(cell));
    if (static_cast<int>(cells.size()) <= std::max(tcol, pcol))
      throw ContractError("read_tick_csv " + instrument + ": line " + std::to_string(lineno) + " is short");
    char* end = nullptr;
    const double px = std::strtod(cells[static_cast<std::size_t>(pcol)].c_str(), &end);
    if (end == cells[static_cast<std::size_t>(pcol)].c_str() || *end != '\0')
      throw ContractError("read_tick_csv " + instrument + ": bad price on line " + std::to_string(lineno));
    out.time.push_back(parse_timestamp(cells[static_cast<std::size_t>(tcol)], utc_offset_minutes));
    out.price.push_back(px);
  }
  out.validate();
  return out;
}

inline void write_tick_csv(std::ostream& os, const TickSeries& t) {
  os << "timestamp,price\n";
  for (std::size_t k = 0; k < t.size(); ++k) {
    os << format_timestamp(t.time[k]) << ',';
    detail::put_double(os, t.price[k]);
    os << '\n';
  }
}

enum class Alignment { InnerJoin, PreviousTick };

/// A tick belongs to the session of its local date if open <= time-of-day <= close.
struct SessionConfig {
  int open_seconds = 9 * 3600 + 30 * 60;
  int close_seconds = 16 * 3600;
  int utc_offset_minutes = 0;
  Alignment alignment = Alignment::InnerJoin;
  /// Keep every stride-th aligned tick (5 for 5-minute returns from 1-minute data).
  int stride = 1;
  bool drop_degenerate = false;

  void validate() const {
    if (open_seconds < 0 || close_seconds > 86400 || open_seconds >= close_seconds)
      throw ContractError("SessionConfig: need 0 <= open < close <= 24h");
    if (stride < 1) throw ContractError("SessionConfig: stride must be >= 1");
  }
};

/// Raised when a day's matrix is not SPD and dropping was not requested.
class DegenerateDays : public std::runtime_error {
 public:
  explicit DegenerateDays(std::vector<std::string> days)
      : std::runtime_error("realized covariance is not SPD on " + std::to_string(days.size()) +
                           " day(s), first " + (days.empty() ? std::string("?") : days.front())),
        days_(std::move(days)) {}
  const std::vector<std::string>& days() const { return days_; }

 private:
  std::vector<std::string> days_;
};

template <int N>
struct RealizedCovResult {
  std::vector<std::string> dates;
  /// Model time of each kept day: calendar days since the first kept day.
  ObservationSeries<N> series;
  std::vector<std::string> flagged;
  /// Raw (possibly non-SPD) matrices of the flagged days, same order.
  std::vector<Eigen::MatrixXd> flagged_matrices;
};

/// Sum over intraday returns of dlog p_a dlog p_b; columns of `log_prices`
/// are aligned instants, rows instruments.
inline Eigen::MatrixXd realized_cov_matrix(const Eigen::MatrixXd& log_prices) {
  if (log_prices.cols() < 2) throw ContractError("realized_cov: need at least 2 aligned ticks per day");
  const Eigen::MatrixXd r =
      log_prices.rightCols(log_prices.cols() - 1) - log_prices.leftCols(log_prices.cols() - 1);
  Eigen::MatrixXd c = r * r.transpose();
  return (0.5 * (c + c.transpose())).eval();
}

namespace detail {

/// Aligned log prices for one day: rows instruments, columns instants.
inline Eigen::MatrixXd align_day(const std::vector<TickSeries>& ticks,
                                 const std::vector<std::pair<std::size_t, std::size_t>>& ranges, Alignment how) {
  const std::size_t n = ticks.size();
  std::vector<Timestamp> grid;
  if (how == Alignment::InnerJoin) {
    grid.assign(ticks[0].time.begin() + static_cast<std::ptrdiff_t>(ranges[0].first),
                ticks[0].time.begin() + static_cast<std::ptrdiff_t>(ranges[0].second));
    for (std::size_t a = 1; a < n; ++a) {
      std::vector<Timestamp> keep;
      std::set_intersection(grid.begin(), grid.end(),
                            ticks[a].time.begin() + static_cast<std::ptrdiff_t>(ranges[a].first),
                            ticks[a].time.begin() + static_cast<std::ptrdiff_t>(ranges[a].second),
                            std::back_inserter(keep));
      grid.swap(keep);
    }
  } else {
    // union of instants after every instrument has ticked once
    Timestamp start = std::numeric_limits<Timestamp>::min();
    for (std::size_t a = 0; a < n; ++a) {
      if (ranges[a].first == ranges[a].second) return {};
      start = std::max(start, ticks[a].time[ranges[a].first]);
    }
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t k = ranges[a].first; k < ranges[a].second; ++k)
        if (ticks[a].time[k] >= start) grid.push_back(ticks[a].time[k]);
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  }
  Eigen::MatrixXd lp(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(grid.size()));
  for (std::size_t a = 0; a < n; ++a) {
    std::size_t k = ranges[a].first;
    for (std::size_t g = 0; g < grid.size(); ++g) {
      while (k + 1 < ranges[a].second && ticks[a].time[k + 1] <= grid[g]) ++k;
      lp(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(g)) = std::log(ticks[a].price[k]);
    }
  }
  return lp;
}

}  // namespace detail

/// Daily realized covariance of n instruments. Days are local dates with at
/// least one in-session tick from every instrument.
template <int N>
RealizedCovResult<N> realized_cov(const std::vector<TickSeries>& ticks, const SessionConfig& session, int threads = 1) {
  session.validate();
  if (ticks.empty()) throw ContractError("realized_cov: no instruments");
  if (N != Dynamic && static_cast<int>(ticks.size()) != N) throw ContractError("realized_cov: instrument count differs from N");
  for (const auto& t : ticks) t.validate();
  const std::size_t n = ticks.size();
  // in-session index ranges per day and instrument
  std::map<std::int64_t, std::vector<std::pair<std::size_t, std::size_t>>> days;
  for (std::size_t a = 0; a < n; ++a) {
    const auto& t = ticks[a].time;
    for (std::size_t k = 0; k < t.size(); ++k) {
      const std::int64_t day = day_number(t[k]);
      const std::int64_t tod = t[k] - day * 86400;
      if (tod < session.open_seconds || tod > session.close_seconds) continue;
      auto& r = days[day];
      if (r.empty()) r.assign(n, {0, 0});
      if (r[a].first == r[a].second) r[a] = {k, k};
      r[a].second = k + 1;
    }
  }
  std::vector<std::int64_t> keys;
  for (auto& [day, r] : days) {
    bool all = true;
    for (const auto& rg : r) all = all && rg.second > rg.first;
    if (all) keys.push_back(day);
  }
  std::vector<Eigen::MatrixXd> mats(keys.size());
  std::vector<std::string> why(keys.size());
  parallel_for(keys.size(), threads, [&](std::size_t i) {
    Eigen::MatrixXd lp = detail::align_day(ticks, days[keys[i]], session.alignment);
    if (session.stride > 1 && lp.cols() > 0) {
      const Eigen::Index keep = (lp.cols() - 1) / session.stride + 1;
      Eigen::MatrixXd s(lp.rows(), keep);
      for (Eigen::Index c = 0; c < keep; ++c) s.col(c) = lp.col(c * session.stride);
      lp = s;
    }
    if (lp.cols() < 2) {
      why[i] = "fewer than 2 aligned ticks";
      mats[i] = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
      return;
    }
    mats[i] = realized_cov_matrix(lp);
  });
  RealizedCovResult<N> out;
  std::optional<std::int64_t> first;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    std::optional<SpdMatrix<N>> spd;
    if (why[i].empty()) {
      try {
        spd.emplace(Mat<N>(mats[i]));
      } catch (const BoundaryError&) {
      }
    }
    if (!spd) {
      out.flagged.push_back(format_date(keys[i]));
      out.flagged_matrices.push_back(mats[i]);
      continue;
    }
    if (!first) first = keys[i];
    out.dates.push_back(format_date(keys[i]));
    out.series.times.push_back(static_cast<double>(keys[i] - *first));
    out.series.obs.push_back(*spd);
  }
  if (!out.flagged.empty() && !session.drop_degenerate) throw DegenerateDays(out.flagged);
  return out;
}

/// m_j = round((t_j - t_{j-1}) / target_dt), at least 1.
inline std::vector<int> imputation_grid(std::span<const double> times, double target_dt) {
  if (!(target_dt > 0.0)) throw ContractError("imputation_grid: target_dt must be > 0");
  std::vector<int> m;
  for (std::size_t j = 1; j < times.size(); ++j) {
    const double gap = times[j] - times[j - 1];
    if (!(gap > 0.0)) throw ContractError("imputation_grid: times must be strictly increasing");
    m.push_back(std::max(1, static_cast<int>(std::lround(gap / target_dt))));
  }
  return m;
}

/// date, half-vectorized entries, det, trace.
template <int N>
void write_realized_csv(std::ostream& os, const RealizedCovResult<N>& r) {
  const int n = r.series.dim();
  os << "date,t";
  for (const auto& name : half_vec_names(n)) os << ',' << name;
  os << ",det,trace\n";
  for (std::size_t k = 0; k < r.dates.size(); ++k) {
    os << r.dates[k] << ',';
    detail::put_double(os, r.series.times[k]);
    const auto& p = r.series.obs[k];
    const auto v = half_vec(p.sym());
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      os << ',';
      detail::put_double(os, v(i));
    }
    os << ',';
    detail::put_double(os, p.mat().determinant());
    os << ',';
    detail::put_double(os, p.mat().trace());
    os << '\n';
  }
}

/// Correlated geometric Brownian motion sampled on a regular intraday grid
/// (ticks_per_day returns per session), weekdays only. Session k has
/// log-return covariance daily_covs[k].
inline std::vector<TickSeries> simulate_gbm_ticks(const std::vector<Eigen::MatrixXd>& daily_covs, int ticks_per_day,
                                                  Timestamp first_day, const SessionConfig& session,
                                                  std::uint64_t seed) {
  session.validate();
  if (daily_covs.empty() || ticks_per_day < 1)
    throw ContractError("simulate_gbm_ticks: need at least one day and ticks_per_day >= 1");
  const Eigen::Index n = daily_covs.front().rows();
  const double scale = std::sqrt(1.0 / ticks_per_day);
  const int span = session.close_seconds - session.open_seconds;
  std::vector<TickSeries> out(static_cast<std::size_t>(n));
  for (Eigen::Index a = 0; a < n; ++a) out[static_cast<std::size_t>(a)].instrument = "asset" + std::to_string(a + 1);
  Eigen::VectorXd logp = Eigen::VectorXd::Constant(n, std::log(100.0));
  RandomStream rng(seed, stream_id({0x67626d}));  // "gbm"
  std::int64_t day = day_number(first_day);
  Eigen::VectorXd z(n);
  for (std::size_t kept = 0; kept < daily_covs.size(); ++day) {
    const std::int64_t weekday = (day + 4) % 7;  // 1970-01-01 was a Thursday; 0 = Sunday
    if (weekday == 0 || weekday == 6) continue;
    const Eigen::MatrixXd& cov = daily_covs[kept++];
    if (cov.rows() != n || cov.cols() != n) throw ContractError("simulate_gbm_ticks: covariance size mismatch");
    const Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) throw ContractError("simulate_gbm_ticks: daily covariance must be SPD");
    const Eigen::MatrixXd chol = llt.matrixL();
    for (int k = 0; k <= ticks_per_day; ++k) {
      if (k > 0) {
        for (Eigen::Index a = 0; a < n; ++a) z(a) = rng.normal();
        logp += scale * (chol * z) - 0.5 * scale * scale * cov.diagonal();
      }
      const Timestamp ts = day * 86400 + session.open_seconds + static_cast<Timestamp>(k) * span / ticks_per_day;
      for (Eigen::Index a = 0; a < n; ++a) {
        out[static_cast<std::size_t>(a)].time.push_back(ts);
        out[static_cast<std::size_t>(a)].price.push_back(std::exp(logp(a)));
      }
    }
  }
  return out;
}

/// Constant-covariance version.
inline std::vector<TickSeries> simulate_gbm_ticks(const Eigen::MatrixXd& daily_cov, int days, int ticks_per_day,
                                                  Timestamp first_day, const SessionConfig& session,
                                                  std::uint64_t seed) {
  if (days < 1) throw ContractError("simulate_gbm_ticks: need days >= 1");
  return simulate_gbm_ticks(std::vector<Eigen::MatrixXd>(static_cast<std::size_t>(days), daily_cov), ticks_per_day,
                            first_day, session, seed);
}

}  // namespace spdou
