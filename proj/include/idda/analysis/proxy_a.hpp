#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "idda/rng.hpp"
#include "idda/tensor.hpp"

namespace idda {

struct ProbeResult {
  /// Held-out domain classification error, clipped to [0, 0.5].
  double epsilon = 0.5;
  double d_a = 0.0;
};

inline double proxy_a_from_error(double epsilon) {
  const double e = std::clamp(epsilon, 0.0, 0.5);
  return 2.0 * (1.0 - 2.0 * e);
}

struct LogisticProbeOptions {
  double l2 = 1.0;
  std::size_t max_iter = 30;
  double tol = 1e-8;
};

/// L2-regularised logistic regression fitted by Newton iterations.
/// Returns weights with the bias last.
inline Eigen::VectorXd fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                    const LogisticProbeOptions& opt = {}) {
  const Eigen::Index n = x.rows(), d = x.cols();
  Eigen::MatrixXd xa(n, d + 1);
  xa << x, Eigen::VectorXd::Ones(n);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(d + 1);
  Eigen::VectorXd reg = Eigen::VectorXd::Constant(d + 1, opt.l2);
  reg(d) = 1e-8;  // bias is not shrunk
  for (std::size_t it = 0; it < opt.max_iter; ++it) {
    const Eigen::VectorXd z = xa * w;
    Eigen::VectorXd p(n), s(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      p(i) = 1.0 / (1.0 + std::exp(-z(i)));
      s(i) = std::max(p(i) * (1.0 - p(i)), 1e-12);
    }
    const Eigen::VectorXd grad = xa.transpose() * (p - y) + reg.cwiseProduct(w);
    Eigen::MatrixXd h = xa.transpose() * s.asDiagonal() * xa;
    h.diagonal() += reg;
    const Eigen::VectorXd delta = h.ldlt().solve(grad);
    w -= delta;
    if (delta.norm() < opt.tol * (1.0 + w.norm())) break;
  }
  return w;
}

/// Proxy A-distance d_A = 2(1 - 2 eps) from a linear probe trained on half
/// of each domain and tested on the other half.
template <typename T>
ProbeResult proxy_a_distance(const Tensor<T>& source, const Tensor<T>& target, std::uint64_t seed,
                             const LogisticProbeOptions& opt = {}) {
  if (source.rank() != 2 || target.rank() != 2) throw ShapeError("proxy_a_distance: features must be 2-D");
  if (source.dim(1) != target.dim(1)) throw ShapeError("proxy_a_distance: feature width mismatch");
  if (source.rows() < 2 || target.rows() < 2) throw Error("proxy_a_distance: need at least two samples per domain");
  const std::size_t d = source.dim(1);
  Rng rng(seed, "proxy_a");
  const auto ps = rng.permutation(source.rows());
  const auto pt = rng.permutation(target.rows());
  const std::size_t ns_tr = ps.size() / 2, nt_tr = pt.size() / 2;
  const std::size_t n_tr = ns_tr + nt_tr, n_te = ps.size() + pt.size() - n_tr;
  Eigen::MatrixXd xtr(n_tr, d), xte(n_te, d);
  Eigen::VectorXd ytr(n_tr), yte(n_te);
  std::size_t a = 0, b = 0;
  auto put = [&](const Tensor<T>& src, std::size_t row, double label, bool train) {
    Eigen::MatrixXd& m = train ? xtr : xte;
    Eigen::VectorXd& y = train ? ytr : yte;
    std::size_t& k = train ? a : b;
    for (std::size_t j = 0; j < d; ++j) m(k, j) = static_cast<double>(src[row * d + j]);
    y(k++) = label;
  };
  for (std::size_t i = 0; i < ps.size(); ++i) put(source, ps[i], 0.0, i < ns_tr);
  for (std::size_t i = 0; i < pt.size(); ++i) put(target, pt[i], 1.0, i < nt_tr);

  // Standardise with training statistics.
  const Eigen::RowVectorXd mean = xtr.colwise().mean();
  Eigen::RowVectorXd sd = ((xtr.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(n_tr)).sqrt();
  for (Eigen::Index j = 0; j < sd.size(); ++j) sd(j) = sd(j) > 1e-12 ? sd(j) : 1.0;
  xtr = (xtr.rowwise() - mean).array().rowwise() / sd.array();
  xte = (xte.rowwise() - mean).array().rowwise() / sd.array();

  const Eigen::VectorXd w = fit_logistic(xtr, ytr, opt);
  std::size_t wrong = 0;
  for (Eigen::Index i = 0; i < xte.rows(); ++i) {
    const double z = xte.row(i).dot(w.head(d)) + w(d);
    const double pred = z > 0.0 ? 1.0 : 0.0;
    wrong += pred != yte(i);
  }
  ProbeResult r;
  r.epsilon = std::clamp(static_cast<double>(wrong) / static_cast<double>(n_te), 0.0, 0.5);
  r.d_a = proxy_a_from_error(r.epsilon);
  return r;
}

}  // namespace idda
