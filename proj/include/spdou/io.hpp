#pragma once

// CSV readers for observation series and chains, and all-or-nothing file writes.

#include <Eigen/Dense>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "spdou/errors.hpp"
#include "spdou/sde.hpp"
#include "spdou/symkernel.hpp"

namespace spdou {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }
};

inline CsvTable read_csv(std::istream& is) {
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      const auto b = cell.find_first_not_of(" \t\r");
      const auto e = cell.find_last_not_of(" \t\r");
      cells.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
    }
    return cells;
  };
  CsvTable t;
  std::string line;
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (t.header.empty()) {
      t.header = split(line);
      continue;
    }
    t.rows.push_back(split(line));
  }
  if (t.header.empty()) throw ContractError("read_csv: no header line");
  return t;
}

inline double parse_double(const std::string& s, const std::string& what) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw ContractError(what + ": not a number: '" + s + "'");
  return v;
}

/// Reads columns t (model time) and x11, x21, ... (half-vectorized entries);
/// other columns are ignored. The dimension follows from the entry columns.
template <int N>
ObservationSeries<N> read_observations_csv(std::istream& is) {
  const CsvTable t = read_csv(is);
  const int tc = t.column("t");
  if (tc < 0) throw ContractError("observations: missing column 't'");
  int n = 0;
  while (t.column("x" + std::to_string(n + 1) + std::to_string(n + 1)) >= 0) ++n;
  if (n == 0) throw ContractError("observations: missing column 'x11'");
  if (N != Dynamic && n != N) throw ContractError("observations: expected n = " + std::to_string(N));
  std::vector<int> cols;
  for (const auto& name : half_vec_names(n)) {
    const int c = t.column(name);
    if (c < 0) throw ContractError("observations: missing column '" + name + "'");
    cols.push_back(c);
  }
  ObservationSeries<N> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string where = "observations row " + std::to_string(r + 1);
    if (row.size() < t.header.size()) throw ContractError(where + ": too few cells");
    Eigen::VectorXd v(static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i)
      v(static_cast<Eigen::Index>(i)) = parse_double(row[static_cast<std::size_t>(cols[i])], where);
    out.times.push_back(parse_double(row[static_cast<std::size_t>(tc)], where));
    try {
      out.obs.emplace_back(from_half_vec<N>(v, n).mat());
    } catch (const BoundaryError& e) {
      throw ContractError(where + ": observation is not SPD (" + e.what() + ")");
    }
  }
  out.validate();
  return out;
}

/// Dimension n of an observation CSV, from its header.
inline int observation_dim(std::istream& is) {
  std::string line;
  while (std::getline(is, line))
    if (line.find_first_not_of(" \t\r") != std::string::npos) break;
  std::stringstream ss(line);
  CsvTable t;
  t.header = read_csv(ss).header;
  int n = 0;
  while (t.column("x" + std::to_string(n + 1) + std::to_string(n + 1)) >= 0) ++n;
  return n;
}

/// Writes via a sibling temporary file and renames it into place, so the
/// target either keeps its old content or receives the complete new one.
inline void write_atomic(const std::filesystem::path& target, const std::function<void(std::ostream&)>& body) {
  const auto dir = target.parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  std::filesystem::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw ContractError("cannot open '" + tmp.string() + "' for writing");
    try {
      body(os);
    } catch (...) {
      os.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw;
    }
    os.flush();
    if (!os) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw ContractError("write to '" + tmp.string() + "' failed");
    }
  }
  std::filesystem::rename(tmp, target);
}

}  // namespace spdou
