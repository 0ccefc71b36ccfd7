#pragma once

#include <vector>

#include "idda/experiments.hpp"

namespace idda {

struct SweepRow {
  double lambda = 0.0;
  std::vector<double> domain_accuracy;  // per seed, held-out
  std::vector<double> target_accuracy;  // per seed
  double mean_domain_accuracy = 0.0;
  double median_domain_accuracy = 0.0;
  double mean_target_accuracy = 0.0;
  double median_target_accuracy = 0.0;
};

/// Trains one model per (lambda, seed) and reports held-out discriminator
/// domain accuracy and target accuracy per lambda.
inline std::vector<SweepRow> lambda_sweep(const Benchmark& b, Method method, const std::vector<double>& lambdas,
                                          const std::vector<std::uint64_t>& seeds, std::size_t threads = 1) {
  if (method == Method::source_only) throw Error("lambda_sweep: source_only has no discriminator");
  if (seeds.empty()) throw Error("lambda_sweep: no seeds");
  for (double l : lambdas) {
    if (!(l >= 0.0)) throw Error("lambda_sweep: lambda values must be >= 0");
  }
  std::vector<std::function<RunOutcome()>> jobs;
  for (double l : lambdas) {
    for (std::uint64_t s : seeds) {
      jobs.push_back([&b, method, l, s] {
        RunOptions o;
        o.lambda = l;
        o.heldout_domain_accuracy = true;
        return run_method(b, method, s, o);
      });
    }
  }
  const auto results = run_jobs(jobs, threads);
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    SweepRow row;
    row.lambda = lambdas[i];
    for (std::size_t j = 0; j < seeds.size(); ++j) {
      const RunOutcome& r = results[i * seeds.size() + j];
      row.domain_accuracy.push_back(*r.heldout_domain_accuracy);
      row.target_accuracy.push_back(r.target_accuracy);
    }
    row.mean_domain_accuracy = mean(row.domain_accuracy);
    row.median_domain_accuracy = median(row.domain_accuracy);
    row.mean_target_accuracy = mean(row.target_accuracy);
    row.median_target_accuracy = median(row.target_accuracy);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace idda
