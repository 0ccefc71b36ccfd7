#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace idda {

/// Raised for every contract violation in the library (bad shapes, bad
/// configuration, malformed files). Runtime numeric failures use the
/// NumericError subclass so callers can tell the two apart.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major n-dimensional array.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    check_dims();
  }

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims();
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::initializer_list<T> values) {
    return Tensor({rows, cols}, std::vector<T>(values));
  }

  static Tensor vector(std::initializer_list<T> values) {
    return Tensor({values.size()}, std::vector<T>(values));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const T& at(std::size_t r, std::size_t c) const {
    return data_[r * shape_[1] + c];
  }

  /// Number of rows when viewed as a matrix with the leading dimension kept.
  std::size_t rows() const { return shape_.empty() ? 1 : shape_[0]; }
  std::size_t row_size() const { return shape_.empty() ? 1 : size() / shape_[0]; }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size()) {
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " +
                       shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  /// Copy of rows [begin, end) along the leading dimension.
  Tensor slice_rows(std::size_t begin, std::size_t end) const {
    if (begin > end || end > rows()) throw ShapeError("row slice out of range");
    Shape s = shape_;
    s[0] = end - begin;
    const std::size_t stride = row_size();
    return Tensor(std::move(s),
                  std::vector<T>(data_.begin() + begin * stride,
                                 data_.begin() + end * stride));
  }

  /// Copy of the selected rows along the leading dimension.
  Tensor gather_rows(const std::vector<std::size_t>& idx) const {
    Shape s = shape_;
    s[0] = idx.size();
    const std::size_t stride = row_size();
    std::vector<T> out;
    out.reserve(idx.size() * stride);
    for (std::size_t r : idx) {
      if (r >= rows()) throw ShapeError("row index out of range");
      out.insert(out.end(), data_.begin() + r * stride,
                 data_.begin() + (r + 1) * stride);
    }
    return Tensor(std::move(s), std::move(out));
  }

  bool all_finite() const {
    if constexpr (std::is_same_v<T, float> || std::is_same_v<T, double>) {
      // Branch-free exponent test so the scan vectorizes.
      using Bits = std::conditional_t<std::is_same_v<T, float>, std::uint32_t, std::uint64_t>;
      constexpr Bits exp_mask = static_cast<Bits>(std::is_same_v<T, float> ? 0x7f800000ull : 0x7ff0000000000000ull);
      Bits bad = 0;
      for (T v : data_) bad |= static_cast<Bits>((std::bit_cast<Bits>(v) & exp_mask) == exp_mask);
      return bad == 0;
    } else {
      return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_dims() const {
    for (std::size_t d : shape_) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive");
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

/// Concatenate along the leading dimension; trailing dimensions must agree.
template <typename T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != b.rank() || a.rank() == 0 ||
      !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1)) {
    throw ShapeError("concat_rows: incompatible shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  Shape s = a.shape();
  s[0] += b.shape()[0];
  std::vector<T> out(a.values());
  out.insert(out.end(), b.values().begin(), b.values().end());
  return Tensor<T>(std::move(s), std::move(out));
}

/// Row-wise argmax; ties resolve to the lowest index.
template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& m) {
  std::vector<std::size_t> out(m.rows());
  const std::size_t cols = m.row_size();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const T* row = m.data() + r * cols;
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c) {
      if (row[c] > row[best]) best = c;
    }
    out[r] = best;
  }
  return out;
}

/// Row-wise numerically stable softmax of a 2-D tensor.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  Tensor<T> out(logits.shape());
  const std::size_t cols = logits.row_size();
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const T* in = logits.data() + r * cols;
    T* o = out.data() + r * cols;
    const T mx = *std::max_element(in, in + cols);
    T sum = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - mx);
      sum += o[c];
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= sum;
  }
  return out;
}

}  // namespace idda
