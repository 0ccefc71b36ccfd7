#pragma once

// Friedman mean ranks with the Nemenyi post-hoc critical difference.

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "idda/tensor.hpp"

namespace idda {

struct RunRecord {
  std::string dataset;
  std::string method;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
};

/// Critical values q_alpha of the Studentized range statistic divided by
/// sqrt(2), for k = 2..10 compared methods.
inline double nemenyi_q(std::size_t k, double alpha) {
  static constexpr std::array<double, 9> q05{1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164};
  static constexpr std::array<double, 9> q10{1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920};
  if (k < 2 || k > 10) throw Error("nemenyi: supported for 2..10 methods");
  if (std::abs(alpha - 0.05) < 1e-12) return q05[k - 2];
  if (std::abs(alpha - 0.10) < 1e-12) return q10[k - 2];
  throw Error("nemenyi: alpha must be 0.05 or 0.10");
}

inline double nemenyi_cd(std::size_t k, std::size_t blocks, double alpha) {
  if (blocks == 0) throw Error("nemenyi: need at least one block");
  const double kd = static_cast<double>(k);
  return nemenyi_q(k, alpha) * std::sqrt(kd * (kd + 1.0) / (6.0 * static_cast<double>(blocks)));
}

/// Ranks within one block: the highest value gets rank 1; ties share the
/// average of the ranks they span.
inline std::vector<double> rank_descending(const std::vector<double>& values) {
  const std::size_t k = values.size();
  std::vector<std::size_t> order(k);
  for (std::size_t i = 0; i < k; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  std::vector<double> ranks(k);
  for (std::size_t i = 0; i < k;) {
    std::size_t j = i;
    while (j + 1 < k && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
    i = j + 1;
  }
  return ranks;
}

struct PairwiseDifference {
  std::string a;
  std::string b;
  double rank_gap = 0.0;
  bool significant = false;
};

struct NemenyiResult {
  std::vector<std::string> methods;
  std::vector<double> mean_ranks;
  std::size_t blocks = 0;
  double cd = 0.0;
  double friedman_chi2 = 0.0;
  std::vector<PairwiseDifference> pairs;

  double mean_rank(const std::string& method) const {
    for (std::size_t i = 0; i < methods.size(); ++i) {
      if (methods[i] == method) return mean_ranks[i];
    }
    throw Error("nemenyi: unknown method " + method);
  }
};

/// Blocks are (dataset, seed) pairs; every method must appear exactly once
/// in every block.
inline NemenyiResult friedman_nemenyi(const std::vector<RunRecord>& records, double alpha) {
  std::set<std::string> method_set;
  std::map<std::pair<std::string, std::uint64_t>, std::map<std::string, double>> blocks;
  for (const RunRecord& r : records) {
    method_set.insert(r.method);
    auto& block = blocks[{r.dataset, r.seed}];
    if (!block.emplace(r.method, r.accuracy).second) {
      throw Error("friedman_nemenyi: duplicate record for " + r.method + " in block " + r.dataset + "/" +
                  std::to_string(r.seed));
    }
  }
  NemenyiResult out;
  out.methods.assign(method_set.begin(), method_set.end());
  const std::size_t k = out.methods.size();
  if (k < 2) throw Error("friedman_nemenyi: need at least two methods");
  out.blocks = blocks.size();
  out.mean_ranks.assign(k, 0.0);
  for (const auto& [key, block] : blocks) {
    if (block.size() != k) {
      throw Error("friedman_nemenyi: incomplete block " + key.first + "/" + std::to_string(key.second));
    }
    std::vector<double> v;
    for (const auto& m : out.methods) v.push_back(block.at(m));
    const auto ranks = rank_descending(v);
    for (std::size_t i = 0; i < k; ++i) out.mean_ranks[i] += ranks[i];
  }
  const double n = static_cast<double>(out.blocks), kd = static_cast<double>(k);
  double sumsq = 0.0;
  for (auto& r : out.mean_ranks) {
    r /= n;
    sumsq += r * r;
  }
  out.friedman_chi2 = 12.0 * n / (kd * (kd + 1.0)) * (sumsq - kd * (kd + 1.0) * (kd + 1.0) / 4.0);
  out.cd = nemenyi_cd(k, out.blocks, alpha);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      const double gap = std::abs(out.mean_ranks[i] - out.mean_ranks[j]);
      out.pairs.push_back({out.methods[i], out.methods[j], gap, gap > out.cd});
    }
  }
  return out;
}

/// CSV with header dataset,method,seed,accuracy.
inline void write_records(std::ostream& os, const std::vector<RunRecord>& records) {
  os << "dataset,method,seed,accuracy\n" << std::setprecision(9);
  for (const auto& r : records) os << r.dataset << ',' << r.method << ',' << r.seed << ',' << r.accuracy << '\n';
}

inline std::vector<RunRecord> read_records(std::istream& in, const std::string& origin = "records") {
  std::vector<RunRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (lineno == 1 && line.rfind("dataset,", 0) == 0)) continue;
    std::stringstream ss(line);
    RunRecord r;
    std::string seed, acc;
    if (!std::getline(ss, r.dataset, ',') || !std::getline(ss, r.method, ',') || !std::getline(ss, seed, ',') ||
        !std::getline(ss, acc)) {
      throw Error(origin + ":" + std::to_string(lineno) + ": expected dataset,method,seed,accuracy");
    }
    try {
      std::size_t used = 0;
      r.seed = std::stoull(seed, &used);
      if (used != seed.size()) throw std::invalid_argument(seed);
      r.accuracy = std::stod(acc, &used);
      if (used != acc.size()) throw std::invalid_argument(acc);
    } catch (const std::exception&) {
      throw Error(origin + ":" + std::to_string(lineno) + ": bad seed or accuracy");
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace idda
