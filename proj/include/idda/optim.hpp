#pragma once

#include <cmath>
#include <map>
#include <string>

#include "idda/autodiff.hpp"

namespace idda {

/// Momentum SGD state: v <- momentum * v + g; p <- p - lr * v.
/// With max_grad_norm > 0 the gradients are first rescaled so that their
/// global L2 norm is at most max_grad_norm (0 disables clipping).
template <typename T>
struct SgdState {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double max_grad_norm = 0.0;
  std::map<std::string, Tensor<T>> velocity;

  SgdState() = default;
  SgdState(double lr, double mom, double clip = 0.0) : learning_rate(lr), momentum(mom), max_grad_norm(clip) {
    validate();
  }

  void validate() const {
    if (!(learning_rate > 0.0)) throw Error("sgd: learning rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("sgd: momentum must be in [0, 1)");
    if (!(max_grad_norm >= 0.0)) throw Error("sgd: max_grad_norm must be >= 0");
  }
};

template <typename T>
double global_grad_norm(const GradMap<T>& grads) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) {
    for (T v : g.values()) sq += static_cast<double>(v) * static_cast<double>(v);
  }
  return std::sqrt(sq);
}

/// Applies one update to every parameter that has a gradient. Parameters
/// without a gradient keep their velocity and value.
template <typename T>
void sgd_step(ParamSet<T>& params, const GradMap<T>& grads, SgdState<T>& state) {
  state.validate();
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw Error("sgd: gradient for unknown parameter '" + name + "'");
    if (g.shape() != it->second.shape()) {
      throw ShapeError("sgd: gradient shape " + shape_str(g.shape()) + " does not match parameter '" +
                       name + "' " + shape_str(it->second.shape()));
    }
    if (!g.all_finite()) throw NumericError("sgd: non-finite gradient for '" + name + "'");
  }
  const T lr = static_cast<T>(state.learning_rate);
  const T mom = static_cast<T>(state.momentum);
  T scale = T{1};
  if (state.max_grad_norm > 0.0) {
    const double norm = global_grad_norm(grads);
    if (norm > state.max_grad_norm) scale = static_cast<T>(state.max_grad_norm / norm);
  }
  for (const auto& [name, g] : grads) {
    Tensor<T>& p = params.at(name);
    auto [vit, inserted] = state.velocity.try_emplace(name, p.shape());
    Tensor<T>& v = vit->second;
    if (v.shape() != p.shape()) throw ShapeError("sgd: velocity shape mismatch for '" + name + "'");
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = mom * v[i] + scale * g[i];
      p[i] -= lr * v[i];
    }
  }
}

}  // namespace idda
