#pragma once

// Tape-based reverse-mode differentiation over a fixed operator set.
//
// A Graph records operations eagerly as they are applied; the node list is
// therefore already in topological order and backward() is a single reverse
// sweep. Parameters are referenced (not copied) so a graph must not outlive
// the tensors bound to it.

#include <Eigen/Core>

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "idda/tensor.hpp"

namespace idda {

enum class OpKind {
  input,
  parameter,
  matmul,
  add_bias,
  relu,
  conv2d,
  max_pool2d,
  flatten,
  softmax_cross_entropy,
  grad_reverse,
  concat,
  scale,
  add,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::input: return "input";
    case OpKind::parameter: return "parameter";
    case OpKind::matmul: return "matmul";
    case OpKind::add_bias: return "add_bias";
    case OpKind::relu: return "relu";
    case OpKind::conv2d: return "conv2d";
    case OpKind::max_pool2d: return "max_pool2d";
    case OpKind::flatten: return "flatten";
    case OpKind::softmax_cross_entropy: return "softmax_cross_entropy";
    case OpKind::grad_reverse: return "grad_reverse";
    case OpKind::concat: return "concat";
    case OpKind::scale: return "scale";
    case OpKind::add: return "add";
  }
  return "?";
}

/// Handle to a node of a Graph.
struct Var {
  std::size_t id = 0;
};

template <typename T>
using ParamSet = std::map<std::string, Tensor<T>>;

template <typename T>
using GradMap = std::map<std::string, Tensor<T>>;

/// Standalone gradient reversal: forward is the identity, the backward map
/// sends an upstream gradient g to -lambda * g.
template <typename T>
Tensor<T> grad_reverse_apply(const Tensor<T>& x, double lambda) {
  if (!(lambda >= 0.0)) throw Error("grad_reverse: lambda must be >= 0");
  return x;
}

template <typename T>
Tensor<T> grad_reverse_backward(const Tensor<T>& upstream, double lambda) {
  if (!(lambda >= 0.0)) throw Error("grad_reverse: lambda must be >= 0");
  Tensor<T> out(upstream.shape());
  const T factor = -static_cast<T>(lambda);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * upstream[i];
  return out;
}

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

template <typename T>
class Graph {
 public:
  using Bindings = std::map<std::string, Tensor<T>>;
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapMat = Eigen::Map<Mat>;
  using CMapMat = Eigen::Map<const Mat>;

  Graph() = default;
  explicit Graph(Bindings bindings) : bindings_(std::move(bindings)) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Placeholder bound by name at construction time.
  Var input(const std::string& name) {
    auto it = bindings_.find(name);
    if (it == bindings_.end()) throw Error("unbound placeholder '" + name + "'");
    Node n;
    n.kind = OpKind::input;
    n.external = &it->second;
    return push(std::move(n));
  }

  Var constant(Tensor<T> value) {
    Node n;
    n.kind = OpKind::input;
    n.value = std::move(value);
    return push(std::move(n));
  }

  /// Differentiable leaf. The tensor is referenced and must stay alive (and
  /// unmodified) until backward() has run.
  Var parameter(const std::string& name, const Tensor<T>& value) {
    if (auto it = param_ids_.find(name); it != param_ids_.end()) {
      return Var{it->second};
    }
    Node n;
    n.kind = OpKind::parameter;
    n.external = &value;
    n.requires_grad = true;
    n.name = name;
    const Var v = push(std::move(n));
    param_ids_[name] = v.id;
    return v;
  }

  Var matmul(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
      throw ShapeError("matmul: incompatible shapes " + shape_str(A.shape()) +
                       " and " + shape_str(B.shape()));
    }
    Tensor<T> out({A.dim(0), B.dim(1)});
    MapMat(out.data(), A.dim(0), B.dim(1)).noalias() =
        CMapMat(A.data(), A.dim(0), A.dim(1)) * CMapMat(B.data(), B.dim(0), B.dim(1));
    return record(OpKind::matmul, {a, b}, std::move(out));
  }

  /// Adds b[j] along dimension 1 (features of a matrix, channels of NCHW).
  Var add_bias(Var x, Var b) {
    const auto& X = value(x);
    const auto& B = value(b);
    if (X.rank() < 2 || B.rank() != 1 || B.dim(0) != X.dim(1)) {
      throw ShapeError("add_bias: bias " + shape_str(B.shape()) +
                       " does not match input " + shape_str(X.shape()));
    }
    Tensor<T> out = X;
    const std::size_t channels = X.dim(1);
    const std::size_t inner = X.row_size() / channels;
    for (std::size_t n = 0; n < X.dim(0); ++n) {
      for (std::size_t c = 0; c < channels; ++c) {
        T* p = out.data() + (n * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) p[i] += B[c];
      }
    }
    return record(OpKind::add_bias, {x, b}, std::move(out));
  }

  Var relu(Var x) {
    Tensor<T> out = value(x);
    for (auto& v : out.values()) v = v > T{0} ? v : T{0};
    return record(OpKind::relu, {x}, std::move(out));
  }

  /// x: [N, C, H, W], w: [O, C, KH, KW] -> [N, O, Ho, Wo] with symmetric zero
  /// padding and the given stride (no bias; follow with add_bias).
  Var conv2d(Var x, Var w, Conv2dOptions opt = {}) {
    const auto& X = value(x);
    const auto& W = value(w);
    if (X.rank() != 4 || W.rank() != 4 || X.dim(1) != W.dim(1)) {
      throw ShapeError("conv2d: input " + shape_str(X.shape()) +
                       " incompatible with kernel " + shape_str(W.shape()));
    }
    if (opt.stride == 0) throw ShapeError("conv2d: stride must be positive");
    ConvGeom g = conv_geom(X.shape(), W.shape(), opt);
    // im2col over the whole batch: [C*KH*KW, N*Ho*Wo]
    Tensor<T> cols({g.patch, g.n * g.spatial});
    im2col(X, g, cols);
    Mat out_mat = CMapMat(W.data(), g.out_c, g.patch) *
                  CMapMat(cols.data(), g.patch, g.n * g.spatial);
    Tensor<T> out({g.n, g.out_c, g.oh, g.ow});
    for (std::size_t n = 0; n < g.n; ++n) {
      for (std::size_t o = 0; o < g.out_c; ++o) {
        const T* src = out_mat.data() + o * g.n * g.spatial + n * g.spatial;
        std::copy(src, src + g.spatial, out.data() + (n * g.out_c + o) * g.spatial);
      }
    }
    const Var v = record(OpKind::conv2d, {x, w}, std::move(out));
    Node& node = nodes_[v.id];
    node.conv = opt;
    node.cache = std::move(cols);
    return v;
  }

  /// Non-overlapping max pooling with a square window; trailing rows and
  /// columns that do not fill a window are dropped.
  Var max_pool2d(Var x, std::size_t window) {
    const auto& X = value(x);
    if (X.rank() != 4 || window == 0 || X.dim(2) < window || X.dim(3) < window) {
      throw ShapeError("max_pool2d: bad input " + shape_str(X.shape()));
    }
    const std::size_t N = X.dim(0), C = X.dim(1), H = X.dim(2), Wd = X.dim(3);
    const std::size_t oh = H / window, ow = Wd / window;
    Tensor<T> out({N, C, oh, ow});
    std::vector<std::size_t> argmax(out.size());
    std::size_t k = 0;
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      const T* plane = X.data() + nc * H * Wd;
      for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j, ++k) {
          std::size_t best = (i * window) * Wd + j * window;
          for (std::size_t di = 0; di < window; ++di) {
            for (std::size_t dj = 0; dj < window; ++dj) {
              const std::size_t idx = (i * window + di) * Wd + (j * window + dj);
              if (plane[idx] > plane[best]) best = idx;
            }
          }
          out[k] = plane[best];
          argmax[k] = nc * H * Wd + best;
        }
      }
    }
    const Var v = record(OpKind::max_pool2d, {x}, std::move(out));
    nodes_[v.id].indices = std::move(argmax);
    return v;
  }

  Var flatten(Var x) {
    const auto& X = value(x);
    Tensor<T> out = X.reshaped({X.rows(), X.row_size()});
    return record(OpKind::flatten, {x}, std::move(out));
  }

  /// Sum over rows of weight[i] * -log softmax(logits[i])[labels[i]].
  /// Rows with zero weight contribute nothing. Empty weights mean 1/N each.
  Var softmax_cross_entropy(Var logits, std::vector<std::size_t> labels,
                            std::vector<T> weights = {}) {
    const auto& Z = value(logits);
    if (Z.rank() != 2) throw ShapeError("softmax_cross_entropy: logits must be 2-D");
    const std::size_t N = Z.dim(0), C = Z.dim(1);
    if (labels.size() != N) throw ShapeError("softmax_cross_entropy: label count mismatch");
    if (weights.empty()) weights.assign(N, T{1} / static_cast<T>(N));
    if (weights.size() != N) throw ShapeError("softmax_cross_entropy: weight count mismatch");
    Tensor<T> probs = softmax_rows(Z);
    T loss = 0;
    for (std::size_t i = 0; i < N; ++i) {
      if (labels[i] >= C) throw ShapeError("softmax_cross_entropy: label out of range");
      if (weights[i] == T{0}) continue;
      // log-sum-exp form keeps the loss exact for confident predictions.
      const T* z = Z.data() + i * C;
      const T mx = *std::max_element(z, z + C);
      T s = 0;
      for (std::size_t c = 0; c < C; ++c) s += std::exp(z[c] - mx);
      loss += weights[i] * (mx + std::log(s) - z[labels[i]]);
    }
    const Var v = record(OpKind::softmax_cross_entropy, {logits}, Tensor<T>({1}, {loss}));
    Node& node = nodes_[v.id];
    node.cache = std::move(probs);
    node.indices = std::move(labels);
    node.weights = std::move(weights);
    return v;
  }

  Var grad_reverse(Var x, double lambda) {
    if (!(lambda >= 0.0)) throw Error("grad_reverse: lambda must be >= 0");
    const Var v = record(OpKind::grad_reverse, {x}, grad_reverse_apply(value(x), lambda));
    nodes_[v.id].factor = lambda;
    return v;
  }

  /// Concatenate along the leading dimension.
  Var concat(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    Tensor<T> out = value(parts[0]);
    for (std::size_t i = 1; i < parts.size(); ++i) out = concat_rows(out, value(parts[i]));
    return record(OpKind::concat, parts, std::move(out));
  }

  Var scale(Var x, double factor) {
    Tensor<T> out = value(x);
    const T f = static_cast<T>(factor);
    for (auto& v : out.values()) v *= f;
    const Var r = record(OpKind::scale, {x}, std::move(out));
    nodes_[r.id].factor = factor;
    return r;
  }

  Var add(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.shape() != B.shape()) {
      throw ShapeError("add: shapes differ " + shape_str(A.shape()) + " vs " +
                       shape_str(B.shape()));
    }
    Tensor<T> out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
    return record(OpKind::add, {a, b}, std::move(out));
  }

  const Tensor<T>& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.external ? *n.external : n.value;
  }

  OpKind kind(Var v) const { return nodes_.at(v.id).kind; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  /// Gradient of a node computed by the last backward(); empty when no
  /// gradient reached it.
  const std::optional<Tensor<T>>& grad(Var v) const { return nodes_.at(v.id).grad; }

  /// Upstream/emitted gradient pairs seen at every grad_reverse node during
  /// backward, for contract checks.
  struct ReversalTrace {
    double lambda;
    Tensor<T> upstream;
    std::optional<Tensor<T>> emitted;
  };
  const std::vector<ReversalTrace>& reversal_trace() const { return reversal_trace_; }

  /// Reverse sweep from a scalar node. Returns gradients for every parameter
  /// reached. Caches are released afterwards; a second call is an error.
  GradMap<T> backward(Var loss) {
    if (consumed_) throw Error("backward: graph already consumed");
    const Tensor<T>& L = value(loss);
    if (L.size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(L.shape()));
    consumed_ = true;
    nodes_[loss.id].grad = Tensor<T>(L.shape(), T{1});
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.grad || !n.requires_grad) continue;
      propagate(n);
    }
    GradMap<T> out;
    for (const auto& [name, id] : param_ids_) {
      if (nodes_[id].grad) out.emplace(name, *nodes_[id].grad);
    }
    for (auto& n : nodes_) {
      n.cache = Tensor<T>();
      n.weights.clear();
      if (n.kind != OpKind::parameter && n.kind != OpKind::input) n.indices.clear();
    }
    return out;
  }

 private:
  struct Node {
    OpKind kind = OpKind::input;
    std::vector<std::size_t> inputs;
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    std::optional<Tensor<T>> grad;
    bool requires_grad = false;
    std::string name;
    double factor = 1.0;
    Conv2dOptions conv;
    Tensor<T> cache;
    std::vector<std::size_t> indices;
    std::vector<T> weights;
  };

  struct ConvGeom {
    std::size_t n, c, h, w, out_c, kh, kw, oh, ow, stride, pad, patch, spatial;
  };

  static ConvGeom conv_geom(const Shape& xs, const Shape& ws, Conv2dOptions opt) {
    ConvGeom g{};
    g.n = xs[0];
    g.c = xs[1];
    g.h = xs[2];
    g.w = xs[3];
    g.out_c = ws[0];
    g.kh = ws[2];
    g.kw = ws[3];
    g.stride = opt.stride;
    g.pad = opt.padding;
    if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw) {
      throw ShapeError("conv2d: kernel larger than padded input");
    }
    g.oh = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
    g.ow = (g.w + 2 * g.pad - g.kw) / g.stride + 1;
    g.patch = g.c * g.kh * g.kw;
    g.spatial = g.oh * g.ow;
    return g;
  }

  /// Output columns [j0, j1) whose input column oj + kj - pad is in range
  /// (stride 1 only).
  static std::pair<std::size_t, std::size_t> unit_stride_span(const ConvGeom& g, std::size_t kj) {
    const std::size_t j0 = g.pad > kj ? g.pad - kj : 0;
    const std::size_t j1 = std::min(g.ow, g.w + g.pad - kj);
    return {std::min(j0, j1), j1};
  }

  static void im2col(const Tensor<T>& X, const ConvGeom& g, Tensor<T>& cols) {
    const std::size_t width = g.n * g.spatial;
    for (std::size_t c = 0; c < g.c; ++c) {
      for (std::size_t ki = 0; ki < g.kh; ++ki) {
        for (std::size_t kj = 0; kj < g.kw; ++kj) {
          T* row = cols.data() + ((c * g.kh + ki) * g.kw + kj) * width;
          for (std::size_t n = 0; n < g.n; ++n) {
            const T* plane = X.data() + (n * g.c + c) * g.h * g.w;
            T* dst = row + n * g.spatial;
            if (g.stride == 1) {
              // Each output row reads one contiguous span of an input row.
              const auto [j0, j1] = unit_stride_span(g, kj);
              for (std::size_t oi = 0; oi < g.oh; ++oi) {
                T* out = dst + oi * g.ow;
                const long ii = static_cast<long>(oi + ki) - static_cast<long>(g.pad);
                if (ii < 0 || ii >= static_cast<long>(g.h) || j0 >= j1) {
                  std::fill(out, out + g.ow, T{0});
                  continue;
                }
                std::fill(out, out + j0, T{0});
                std::copy_n(plane + ii * g.w + (j0 + kj - g.pad), j1 - j0, out + j0);
                std::fill(out + j1, out + g.ow, T{0});
              }
              continue;
            }
            for (std::size_t oi = 0; oi < g.oh; ++oi) {
              const long ii = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.pad);
              for (std::size_t oj = 0; oj < g.ow; ++oj) {
                const long jj = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.pad);
                const bool inside = ii >= 0 && jj >= 0 && ii < static_cast<long>(g.h) &&
                                    jj < static_cast<long>(g.w);
                dst[oi * g.ow + oj] = inside ? plane[ii * g.w + jj] : T{0};
              }
            }
          }
        }
      }
    }
  }

  static void col2im(const Mat& dcols, const ConvGeom& g, Tensor<T>& dx) {
    const std::size_t width = g.n * g.spatial;
    for (std::size_t c = 0; c < g.c; ++c) {
      for (std::size_t ki = 0; ki < g.kh; ++ki) {
        for (std::size_t kj = 0; kj < g.kw; ++kj) {
          const T* row = dcols.data() + ((c * g.kh + ki) * g.kw + kj) * width;
          for (std::size_t n = 0; n < g.n; ++n) {
            T* plane = dx.data() + (n * g.c + c) * g.h * g.w;
            const T* src = row + n * g.spatial;
            if (g.stride == 1) {
              const auto [j0, j1] = unit_stride_span(g, kj);
              for (std::size_t oi = 0; oi < g.oh; ++oi) {
                const long ii = static_cast<long>(oi + ki) - static_cast<long>(g.pad);
                if (ii < 0 || ii >= static_cast<long>(g.h)) continue;
                T* dst = plane + ii * g.w + kj - g.pad;
                const T* in = src + oi * g.ow;
                for (std::size_t oj = j0; oj < j1; ++oj) dst[oj] += in[oj];
              }
              continue;
            }
            for (std::size_t oi = 0; oi < g.oh; ++oi) {
              const long ii = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.pad);
              if (ii < 0 || ii >= static_cast<long>(g.h)) continue;
              for (std::size_t oj = 0; oj < g.ow; ++oj) {
                const long jj = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.pad);
                if (jj < 0 || jj >= static_cast<long>(g.w)) continue;
                plane[ii * g.w + jj] += src[oi * g.ow + oj];
              }
            }
          }
        }
      }
    }
  }

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  Var record(OpKind kind, const std::vector<Var>& inputs, Tensor<T> out) {
    if (!out.all_finite()) {
      throw NumericError(std::string("non-finite value produced by ") + op_name(kind));
    }
    Node n;
    n.kind = kind;
    n.value = std::move(out);
    for (Var v : inputs) {
      n.inputs.push_back(v.id);
      n.requires_grad = n.requires_grad || nodes_.at(v.id).requires_grad;
    }
    return push(std::move(n));
  }

  void accumulate(std::size_t id, Tensor<T> g) {
    Node& target = nodes_[id];
    if (!target.requires_grad) return;
    if (!target.grad) {
      target.grad = std::move(g);
      return;
    }
    auto& acc = *target.grad;
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
  }

  void propagate(Node& n) {
    const Tensor<T>& G = *n.grad;
    switch (n.kind) {
      case OpKind::input:
      case OpKind::parameter:
        return;
      case OpKind::matmul: {
        const auto& A = value(Var{n.inputs[0]});
        const auto& B = value(Var{n.inputs[1]});
        const std::size_t m = A.dim(0), k = A.dim(1), p = B.dim(1);
        CMapMat g(G.data(), m, p);
        if (nodes_[n.inputs[0]].requires_grad) {
          Tensor<T> dA(A.shape());
          MapMat(dA.data(), m, k).noalias() = g * CMapMat(B.data(), k, p).transpose();
          accumulate(n.inputs[0], std::move(dA));
        }
        if (nodes_[n.inputs[1]].requires_grad) {
          Tensor<T> dB(B.shape());
          MapMat(dB.data(), k, p).noalias() = CMapMat(A.data(), m, k).transpose() * g;
          accumulate(n.inputs[1], std::move(dB));
        }
        return;
      }
      case OpKind::add_bias: {
        const auto& X = value(Var{n.inputs[0]});
        if (nodes_[n.inputs[1]].requires_grad) {
          const std::size_t channels = X.dim(1);
          const std::size_t inner = X.row_size() / channels;
          Tensor<T> db({channels});
          for (std::size_t b = 0; b < X.dim(0); ++b) {
            for (std::size_t c = 0; c < channels; ++c) {
              const T* p = G.data() + (b * channels + c) * inner;
              T s = 0;
              for (std::size_t i = 0; i < inner; ++i) s += p[i];
              db[c] += s;
            }
          }
          accumulate(n.inputs[1], std::move(db));
        }
        accumulate(n.inputs[0], G);
        return;
      }
      case OpKind::relu: {
        const auto& X = value(Var{n.inputs[0]});
        Tensor<T> dx(X.shape());
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = X[i] > T{0} ? G[i] : T{0};
        accumulate(n.inputs[0], std::move(dx));
        return;
      }
      case OpKind::conv2d: {
        const auto& X = value(Var{n.inputs[0]});
        const auto& W = value(Var{n.inputs[1]});
        const ConvGeom g = conv_geom(X.shape(), W.shape(), n.conv);
        // Rearrange NCHW upstream gradient to [O, N*spatial].
        Mat gout(g.out_c, g.n * g.spatial);
        for (std::size_t b = 0; b < g.n; ++b) {
          for (std::size_t o = 0; o < g.out_c; ++o) {
            const T* src = G.data() + (b * g.out_c + o) * g.spatial;
            std::copy(src, src + g.spatial, gout.data() + o * g.n * g.spatial + b * g.spatial);
          }
        }
        CMapMat cols(n.cache.data(), g.patch, g.n * g.spatial);
        if (nodes_[n.inputs[1]].requires_grad) {
          Tensor<T> dW(W.shape());
          MapMat(dW.data(), g.out_c, g.patch).noalias() = gout * cols.transpose();
          accumulate(n.inputs[1], std::move(dW));
        }
        if (nodes_[n.inputs[0]].requires_grad) {
          Mat dcols = CMapMat(W.data(), g.out_c, g.patch).transpose() * gout;
          Tensor<T> dx(X.shape());
          col2im(dcols, g, dx);
          accumulate(n.inputs[0], std::move(dx));
        }
        return;
      }
      case OpKind::max_pool2d: {
        const auto& X = value(Var{n.inputs[0]});
        Tensor<T> dx(X.shape());
        for (std::size_t k = 0; k < G.size(); ++k) dx[n.indices[k]] += G[k];
        accumulate(n.inputs[0], std::move(dx));
        return;
      }
      case OpKind::flatten: {
        accumulate(n.inputs[0], G.reshaped(value(Var{n.inputs[0]}).shape()));
        return;
      }
      case OpKind::softmax_cross_entropy: {
        const Tensor<T>& P = n.cache;
        const std::size_t N = P.dim(0), C = P.dim(1);
        const T up = G[0];
        Tensor<T> dz(P.shape());
        for (std::size_t i = 0; i < N; ++i) {
          const T w = n.weights[i] * up;
          if (w == T{0}) continue;
          for (std::size_t c = 0; c < C; ++c) dz[i * C + c] = w * P[i * C + c];
          dz[i * C + n.indices[i]] -= w;
        }
        accumulate(n.inputs[0], std::move(dz));
        return;
      }
      case OpKind::grad_reverse: {
        ReversalTrace trace{n.factor, G, std::nullopt};
        // At lambda = 0 this is a tensor of (signed) zeros; adding it leaves
        // every downstream sum unchanged bit for bit.
        Tensor<T> dx = grad_reverse_backward(G, n.factor);
        trace.emitted = dx;
        accumulate(n.inputs[0], std::move(dx));
        reversal_trace_.push_back(std::move(trace));
        return;
      }
      case OpKind::concat: {
        std::size_t offset = 0;
        for (std::size_t in : n.inputs) {
          const std::size_t rows = value(Var{in}).rows();
          if (nodes_[in].requires_grad) {
            accumulate(in, G.slice_rows(offset, offset + rows).reshaped(value(Var{in}).shape()));
          }
          offset += rows;
        }
        return;
      }
      case OpKind::scale: {
        Tensor<T> dx = G;
        const T f = static_cast<T>(n.factor);
        for (auto& v : dx.values()) v *= f;
        accumulate(n.inputs[0], std::move(dx));
        return;
      }
      case OpKind::add: {
        accumulate(n.inputs[0], G);
        accumulate(n.inputs[1], G);
        return;
      }
    }
  }

  Bindings bindings_;
  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> param_ids_;
  std::vector<ReversalTrace> reversal_trace_;
  bool consumed_ = false;
};

}  // namespace idda
