#pragma once

// Empirical H-delta-H quantities over finite families of axis-aligned stumps.
//
// H       : stumps h(x) = [polarity * (x_axis - threshold) > 0], plus the two
//           constant hypotheses.
// Hc^Hc   : XORs of `classifier_order` members of H.
// H_d     : XORs of `disc_order` members of H. Contains Hc^Hc whenever
//           disc_order >= classifier_order (H holds the constant 0).
// H_d'    : h XOR g for h in H_d and g in G, where G is the constant 0 plus
//           every stump of H that is 0 on all source samples.
//
// With alpha(h) = P_s[h=1] + P_t[h=0] the report carries
//   d_hat      = 2 max_{Hc^Hc} |P_s[h=1] - P_t[h=1]|
//   bound      = 2 max_{H_d}  |alpha(h) - 1|
//   bound_aug  = 2 max_{H_d'} |alpha(h') - 1|

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <vector>

#include "idda/tensor.hpp"

namespace idda {

struct Stump {
  std::size_t axis = 0;
  double threshold = 0.0;
  int polarity = 1;  // +1: 1 above threshold, -1: 1 below
  bool constant = false;
  bool constant_value = false;

  bool operator()(const double* x) const {
    if (constant) return constant_value;
    const double v = x[axis] - threshold;
    return polarity > 0 ? v > 0.0 : v < 0.0;
  }
};

struct HypothesisFamily {
  std::vector<Stump> stumps;
  std::size_t classifier_order = 2;
  std::size_t disc_order = 2;

  bool disc_contains_classifier_delta() const { return disc_order >= classifier_order; }

  /// Thresholds at evenly spaced quantiles (k/(m+1), k = 1..m) of the pooled
  /// samples on each axis, both polarities, plus the constants.
  template <typename T>
  static HypothesisFamily quantile_grid(const Tensor<T>& a, const Tensor<T>& b, std::size_t per_axis) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
      throw ShapeError("hypothesis family: samples must be 2-D with equal width");
    }
    HypothesisFamily f;
    const std::size_t d = a.dim(1);
    for (std::size_t axis = 0; axis < d; ++axis) {
      std::vector<double> v;
      for (std::size_t i = 0; i < a.rows(); ++i) v.push_back(static_cast<double>(a[i * d + axis]));
      for (std::size_t i = 0; i < b.rows(); ++i) v.push_back(static_cast<double>(b[i * d + axis]));
      std::sort(v.begin(), v.end());
      for (std::size_t k = 1; k <= per_axis; ++k) {
        const double q = static_cast<double>(k) / static_cast<double>(per_axis + 1);
        const double pos = q * static_cast<double>(v.size() - 1);
        const std::size_t lo = static_cast<std::size_t>(pos);
        const std::size_t hi = std::min(lo + 1, v.size() - 1);
        const double thr = v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
        f.stumps.push_back({axis, thr, +1});
        f.stumps.push_back({axis, thr, -1});
      }
    }
    f.add_constants();
    return f;
  }

  /// Evenly spaced thresholds on [lo, hi] per axis, both polarities.
  static HypothesisFamily uniform_grid(std::size_t dims, double lo, double hi, std::size_t per_axis) {
    HypothesisFamily f;
    for (std::size_t axis = 0; axis < dims; ++axis) {
      for (std::size_t k = 0; k < per_axis; ++k) {
        const double thr = per_axis == 1 ? (lo + hi) / 2
                                         : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(per_axis - 1);
        f.stumps.push_back({axis, thr, +1});
        f.stumps.push_back({axis, thr, -1});
      }
    }
    f.add_constants();
    return f;
  }

  void add_constants() {
    Stump zero;
    zero.constant = true;
    zero.constant_value = false;
    Stump one = zero;
    one.constant_value = true;
    stumps.push_back(zero);
    stumps.push_back(one);
  }
};

struct HdhReport {
  double d_hat = 0.0;
  double bound = 0.0;
  double bound_augmented = 0.0;
  bool holds = false;
  bool holds_augmented = false;
  bool disc_contains_classifier_delta = false;
  std::size_t classifier_family_size = 0;
  std::size_t disc_family_size = 0;
  std::size_t augmented_family_size = 0;
};

namespace detail {

class Bits {
 public:
  explicit Bits(std::size_t n = 0) : words_((n + 63) / 64, 0) {}
  void set(std::size_t i) { words_[i / 64] |= std::uint64_t{1} << (i % 64); }
  Bits operator^(const Bits& o) const {
    Bits r = *this;
    for (std::size_t i = 0; i < words_.size(); ++i) r.words_[i] ^= o.words_[i];
    return r;
  }
  std::size_t count_and(const Bits& mask) const {
    std::size_t c = 0;
    for (std::size_t i = 0; i < words_.size(); ++i) c += std::popcount(words_[i] & mask.words_[i]);
    return c;
  }

 private:
  std::vector<std::uint64_t> words_;
};

/// Calls fn on the XOR of every multiset of `order` members (order >= 1).
template <typename Fn>
void for_each_xor(const std::vector<Bits>& h, std::size_t order, Fn&& fn) {
  std::vector<Bits> prefix(order);
  auto rec = [&](auto&& self, std::size_t depth, std::size_t start) -> void {
    for (std::size_t i = start; i < h.size(); ++i) {
      prefix[depth] = depth == 0 ? h[i] : prefix[depth - 1] ^ h[i];
      if (depth + 1 == order) {
        fn(prefix[depth]);
      } else {
        self(self, depth + 1, i);
      }
    }
  };
  if (order > 0 && !h.empty()) rec(rec, 0, 0);
}

}  // namespace detail

template <typename T>
HdhReport empirical_hdh(const Tensor<T>& source, const Tensor<T>& target, const HypothesisFamily& family) {
  if (family.stumps.empty()) throw Error("empirical_hdh: empty hypothesis family");
  if (family.classifier_order == 0 || family.disc_order == 0) throw Error("empirical_hdh: XOR order must be >= 1");
  if (source.rank() != 2 || target.rank() != 2 || source.dim(1) != target.dim(1)) {
    throw ShapeError("empirical_hdh: samples must be 2-D with equal width");
  }
  if (source.rows() == 0 || target.rows() == 0) throw Error("empirical_hdh: empty sample");
  const std::size_t d = source.dim(1), ns = source.rows(), nt = target.rows(), n = ns + nt;
  std::vector<double> pts(n * d);
  for (std::size_t i = 0; i < ns * d; ++i) pts[i] = static_cast<double>(source[i]);
  for (std::size_t i = 0; i < nt * d; ++i) pts[ns * d + i] = static_cast<double>(target[i]);
  for (const Stump& s : family.stumps) {
    if (!s.constant && s.axis >= d) throw Error("empirical_hdh: stump axis out of range");
  }

  detail::Bits smask(n), tmask(n);
  for (std::size_t i = 0; i < ns; ++i) smask.set(i);
  for (std::size_t i = ns; i < n; ++i) tmask.set(i);

  std::vector<detail::Bits> h;
  std::vector<detail::Bits> source_silent;  // G: zero on every source sample
  source_silent.emplace_back(n);
  for (const Stump& s : family.stumps) {
    detail::Bits b(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (s(&pts[i * d])) b.set(i);
    }
    if (b.count_and(smask) == 0) source_silent.push_back(b);
    h.push_back(std::move(b));
  }

  // Every probability here is a count over ns or nt, so all quantities are
  // kept as exact integer numerators over ns * nt.
  const auto ns64 = static_cast<std::int64_t>(ns), nt64 = static_cast<std::int64_t>(nt);
  auto alpha_minus_one = [&](const detail::Bits& b) {
    const auto s1 = static_cast<std::int64_t>(b.count_and(smask));
    const auto t0 = nt64 - static_cast<std::int64_t>(b.count_and(tmask));
    return std::abs(s1 * nt64 + t0 * ns64 - ns64 * nt64);
  };

  HdhReport r;
  r.disc_contains_classifier_delta = family.disc_contains_classifier_delta();
  std::int64_t sup_c = 0;
  detail::for_each_xor(h, family.classifier_order, [&](const detail::Bits& b) {
    ++r.classifier_family_size;
    const auto s1 = static_cast<std::int64_t>(b.count_and(smask));
    const auto t1 = static_cast<std::int64_t>(b.count_and(tmask));
    sup_c = std::max(sup_c, std::abs(s1 * nt64 - t1 * ns64));
  });
  std::int64_t sup_d = 0, sup_aug = 0;
  detail::for_each_xor(h, family.disc_order, [&](const detail::Bits& b) {
    ++r.disc_family_size;
    sup_d = std::max(sup_d, alpha_minus_one(b));
    for (const auto& g : source_silent) {
      ++r.augmented_family_size;
      sup_aug = std::max(sup_aug, alpha_minus_one(b ^ g));
    }
  });
  const double denom = static_cast<double>(ns64 * nt64);
  r.d_hat = 2.0 * static_cast<double>(sup_c) / denom;
  r.bound = 2.0 * static_cast<double>(sup_d) / denom;
  r.bound_augmented = 2.0 * static_cast<double>(sup_aug) / denom;
  r.holds = sup_c <= sup_d;
  r.holds_augmented = sup_c <= sup_aug;
  return r;
}

}  // namespace idda
