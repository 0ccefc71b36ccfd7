#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "idda/autodiff.hpp"

namespace idda {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  bool has_grad_reverse = false;
  /// Every grad_reverse node emitted exactly -lambda * upstream.
  bool reversal_contract_holds = true;
  bool passed = false;
};

/// Builds a scalar loss from the given parameters on a fresh graph.
using LossBuilder = std::function<Var(Graph<double>&, const ParamSet<double>&)>;

/// Compares analytic gradients with fourth-order central differences
/// (five-point stencil), whose error is O(step^4) plus rounding.
///
/// Relative error is |a - n| / max(|a|, |n|, floor). A graph containing a
/// grad_reverse node is not the gradient of its own forward map, so for such
/// graphs the verdict comes from the reversal contract instead of the
/// finite-difference comparison (which is still reported).
inline GradCheckReport gradient_check(const LossBuilder& build, ParamSet<double> params,
                                      double tolerance, double step = 1e-4,
                                      double floor = 1e-6) {
  GradCheckReport rep;
  GradMap<double> analytic;
  {
    Graph<double> g;
    const Var loss = build(g, params);
    analytic = g.backward(loss);
    for (const auto& t : g.reversal_trace()) {
      rep.has_grad_reverse = true;
      const Tensor<double> expect = grad_reverse_backward(t.upstream, t.lambda);
      if (!t.emitted || !(*t.emitted == expect)) rep.reversal_contract_holds = false;
    }
  }
  auto eval = [&](const ParamSet<double>& p) {
    Graph<double> g;
    const Var loss = build(g, p);
    return g.value(loss)[0];
  };
  for (auto& [name, tensor] : params) {
    auto it = analytic.find(name);
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double orig = tensor[i];
      auto at = [&](double offset) {
        tensor[i] = orig + offset;
        return eval(params);
      };
      const double numeric =
          (at(-2.0 * step) - 8.0 * at(-step) + 8.0 * at(step) - at(2.0 * step)) / (12.0 * step);
      tensor[i] = orig;
      const double a = it == analytic.end() ? 0.0 : it->second[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++rep.checked;
      if (rel > rep.max_rel_error || rep.worst_param.empty()) {
        rep.max_rel_error = std::max(rep.max_rel_error, rel);
        if (rel >= rep.max_rel_error) {
          rep.worst_param = name;
          rep.worst_index = i;
          rep.worst_analytic = a;
          rep.worst_numeric = numeric;
        }
      }
    }
  }
  rep.passed = rep.has_grad_reverse ? rep.reversal_contract_holds
                                    : rep.max_rel_error <= tolerance;
  return rep;
}

}  // namespace idda
