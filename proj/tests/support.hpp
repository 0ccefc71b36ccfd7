#pragma once

// Fixtures shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "idda/idda.hpp"

namespace idda::testing {

struct RandomGraph {
  OpKind focus = OpKind::matmul;
  LossBuilder build;
  ParamSet<double> params;
};

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = scale * rng.normal();
  return t;
}

inline std::vector<std::size_t> random_labels(std::size_t n, std::size_t classes, Rng& rng) {
  std::vector<std::size_t> y(n);
  for (auto& v : y) v = static_cast<std::size_t>(rng.below(classes));
  return y;
}

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

/// Op kinds with a finite-difference-checkable gradient. input and parameter
/// appear as leaves in every graph.
inline const std::vector<OpKind>& differentiable_ops() {
  static const std::vector<OpKind> ops{OpKind::matmul,     OpKind::add_bias, OpKind::relu,
                                       OpKind::conv2d,     OpKind::max_pool2d, OpKind::flatten,
                                       OpKind::softmax_cross_entropy, OpKind::concat, OpKind::scale,
                                       OpKind::add};
  return ops;
}

/// A small random graph exercising `focus`, reduced to a scalar by a
/// weighted softmax cross-entropy over a random linear read-out.
inline RandomGraph random_graph(OpKind focus, Rng& rng) {
  RandomGraph rg;
  rg.focus = focus;
  const std::size_t n = pick(rng, 2, 4), classes = pick(rng, 2, 4);
  auto& p = rg.params;
  const auto labels = random_labels(n, classes, rng);
  std::vector<double> weights(n);
  for (auto& w : weights) w = rng.uniform(0.1, 1.0);
  // A constant input keeps the "input" leaf in every graph.
  const Tensor<double> data = random_tensor({n, 3}, rng);

  auto readout = [labels, weights](Graph<double>& g, const ParamSet<double>& ps, Var h) {
    return g.softmax_cross_entropy(g.matmul(h, g.parameter("readout", ps.at("readout"))), labels, weights);
  };
  auto with_data = [data](Graph<double>& g, const ParamSet<double>& ps, Var h) {
    const Var x = g.constant(data);
    const Var proj = g.matmul(x, g.parameter("proj", ps.at("proj")));
    return g.add(h, proj);
  };

  switch (focus) {
    case OpKind::matmul:
    case OpKind::add:
    case OpKind::scale: {
      const std::size_t d = pick(rng, 2, 5);
      p["a"] = random_tensor({n, d}, rng);
      p["proj"] = random_tensor({3, d}, rng);
      p["w"] = random_tensor({d, d}, rng);
      p["readout"] = random_tensor({d, classes}, rng);
      const double factor = rng.uniform(-2.0, 2.0);
      rg.build = [=](Graph<double>& g, const ParamSet<double>& ps) {
        Var h = g.matmul(g.parameter("a", ps.at("a")), g.parameter("w", ps.at("w")));
        h = with_data(g, ps, h);
        if (focus == OpKind::scale) h = g.scale(h, factor);
        if (focus == OpKind::add) h = g.add(h, g.parameter("a", ps.at("a")));
        return readout(g, ps, h);
      };
      break;
    }
    case OpKind::relu: {
      const std::size_t d = pick(rng, 2, 6);
      p["a"] = random_tensor({n, 3}, rng);
      p["w1"] = random_tensor({3, d}, rng);
      p["b1"] = random_tensor({d}, rng);
      p["proj"] = random_tensor({3, d}, rng);
      p["readout"] = random_tensor({d, classes}, rng);
      rg.build = [=](Graph<double>& g, const ParamSet<double>& ps) {
        Var h = g.matmul(g.parameter("a", ps.at("a")), g.parameter("w1", ps.at("w1")));
        h = g.add_bias(h, g.parameter("b1", ps.at("b1")));
        h = g.relu(with_data(g, ps, h));
        return readout(g, ps, h);
      };
      break;
    }
    case OpKind::add_bias: {
      // Alternate between the dense and the channel-wise form.
      const bool spatial = rng.below(2) == 1;
      if (spatial) {
        const std::size_t c = pick(rng, 1, 3), h = pick(rng, 2, 4), w = pick(rng, 2, 4);
        p["x"] = random_tensor({n, c, h, w}, rng);
        p["b"] = random_tensor({c}, rng);
        p["readout"] = random_tensor({c * h * w, classes}, rng);
        rg.build = [=](Graph<double>& g, const ParamSet<double>& ps) {
          const Var y = g.add_bias(g.parameter("x", ps.at("x")), g.parameter("b", ps.at("b")));
          return readout(g, ps, g.flatten(y));
        };
      } else {
        const std::size_t d = pick(rng, 2, 5);
        p["a"] = random_tensor({n, d}, rng);
        p["b"] = random_tensor({d}, rng);
        p["proj"] = random_tensor({3, d}, rng);
        p["readout"] = random_tensor({d, classes}, rng);
        rg.build = [=](Graph<double>& g, const ParamSet<double>& ps) {
          const Var y = g.add_bias(with_data(g, ps, g.parameter("a", ps.at("a"))), g.parameter("b", ps.at("b")));
          return readout(g, ps, y);
        };
      }
      break;
    }
    case OpKind::conv2d: {
      const std::size_t c = pick(rng, 1, 3), o = pick(rng, 1, 3), k = pick(rng, 1, 3);
      const std::size_t h = pick(rng, k, 6), w = pick(rng, k, 6);
      Conv2dOptions opt;
      opt.stride = pick(rng, 1, 2);
      opt.padding = pick(rng, 0, 2);
      const std::size_t oh = (h + 2 * opt.padding - k) / opt.stride + 1;
      const std::size_t ow = (w + 2 * opt.padding - k) / opt.stride + 1;
      p["x"] = random_tensor({n, c, h, w}, rng);
      p["k"] = random_tensor({o, c, k, k}, rng);
      p["readout"] = random_tensor({o * oh * ow, classes}, rng, 0.3);
      rg.build = [=](Graph<double>& g, const ParamSet<double>& ps) {
        const Var y = g.conv2d(g.parameter("x", ps.at("x")), g.parameter("k", ps.at("k")), opt);
        return readout(g, ps, g.flatten(y));
      };
      break;
    }
    case OpKind::max_pool2d: {
      const std::size_t c = pick(rng, 1, 2), win = pick(rng, 2, 3);
      const std::size_t h = pick(rng, win, 7), w = pick(rng, win, 7);
      p["x"] = random_tensor({n, c, h, w}, rng);
      p["readout"] = random_tensor({c * (h / win) * (w / win), classes}, rng);
      rg.build = [=](Graph<double>& g, const ParamSet<double>& ps) {
        return readout(g, ps, g.flatten(g.max_pool2d(g.parameter("x", ps.at("x")), win)));
      };
      break;
    }
    case OpKind::flatten: {
      const std::size_t c = pick(rng, 1, 3), h = pick(rng, 1, 4), w = pick(rng, 1, 4);
      p["x"] = random_tensor({n, c, h, w}, rng);
      p["readout"] = random_tensor({c * h * w, classes}, rng);
      rg.build = [=](Graph<double>& g, const ParamSet<double>& ps) {
        return readout(g, ps, g.flatten(g.parameter("x", ps.at("x"))));
      };
      break;
    }
    case OpKind::softmax_cross_entropy: {
      p["z"] = random_tensor({n, classes}, rng, 2.0);
      p["proj"] = random_tensor({3, classes}, rng);
      rg.build = [=](Graph<double>& g, const ParamSet<double>& ps) {
        const Var z = with_data(g, ps, g.parameter("z", ps.at("z")));
        return g.softmax_cross_entropy(z, labels, weights);
      };
      break;
    }
    case OpKind::concat: {
      const std::size_t d = pick(rng, 2, 4), m = pick(rng, 1, 3);
      p["a"] = random_tensor({n, d}, rng);
      p["b"] = random_tensor({m, d}, rng);
      p["readout"] = random_tensor({d, classes}, rng);
      const auto more = random_labels(m, classes, rng);
      rg.build = [=](Graph<double>& g, const ParamSet<double>& ps) {
        const Var y = g.concat({g.parameter("a", ps.at("a")), g.parameter("b", ps.at("b"))});
        std::vector<std::size_t> all = labels;
        all.insert(all.end(), more.begin(), more.end());
        return g.softmax_cross_entropy(g.matmul(y, g.parameter("readout", ps.at("readout"))), all);
      };
      break;
    }
    default:
      throw Error(std::string("random_graph: no fixture for ") + op_name(focus));
  }
  return rg;
}

struct LossParts {
  double loss_y = 0.0;
  double loss_d = 0.0;
  double total = 0.0;
};

inline double nll(const Tensor<double>& logits, std::size_t row, std::size_t label) {
  const std::size_t C = logits.dim(1);
  const double* z = logits.data() + row * C;
  double mx = z[0];
  for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, z[c]);
  double s = 0.0;
  for (std::size_t c = 0; c < C; ++c) s += std::exp(z[c] - mx);
  return mx + std::log(s) - z[label];
}

/// The training objective recomputed in double precision from the model as
/// it is before the step: mean source classification loss plus lambda times
/// the discriminator loss summed over both halves and divided by their total
/// count. Domain targets are written out here for the informative and binary
/// discriminators only.
inline LossParts reference_losses(const IddaModel<float>& model, const BatchData& b, Method method, double lambda) {
  IddaModel<double> md;
  md.config = model.config;
  for (const auto& [name, t] : model.params) md.params.emplace(name, t.cast<double>());
  Graph<double> g({{"xs", b.source_x.cast<double>()}, {"xt", b.target_x.cast<double>()}});
  const Var fs = feature_graph(g, md, g.input("xs"));
  const auto& zy = g.value(classifier_graph(g, md, fs));
  const std::size_t ns = b.source_y.size();
  LossParts out;
  for (std::size_t i = 0; i < ns; ++i) out.loss_y += nll(zy, i, b.source_y[i]);
  out.loss_y /= static_cast<double>(ns);
  if (method != Method::source_only) {
    const Var ft = feature_graph(g, md, g.input("xt"));
    const auto& zs = g.value(discriminator_graph(g, md, fs));
    const auto& zt = g.value(discriminator_graph(g, md, ft));
    const std::size_t nt = b.target_x.rows(), C = model.config.num_classes;
    const bool binary = method == Method::binary;
    if (!binary && method != Method::informative) throw Error("reference_losses: unsupported method");
    double sum = 0.0;
    for (std::size_t i = 0; i < ns; ++i) sum += nll(zs, i, binary ? 0 : b.source_y[i]);
    for (std::size_t i = 0; i < nt; ++i) sum += nll(zt, i, binary ? 1 : C);
    out.loss_d = sum / static_cast<double>(ns + nt);
  }
  out.total = out.loss_y + lambda * out.loss_d;
  return out;
}

/// MNIST directory: IDDA_MNIST_DIR, else data/mnist under the source tree.
inline std::filesystem::path mnist_dir() {
  if (const char* env = std::getenv("IDDA_MNIST_DIR"); env && *env) return env;
#ifdef IDDA_SOURCE_DIR
  return std::filesystem::path(IDDA_SOURCE_DIR) / "data" / "mnist";
#else
  return "data/mnist";
#endif
}

inline std::filesystem::path mnist_images() { return mnist_dir() / "images-idx3-ubyte"; }
inline std::filesystem::path mnist_labels() { return mnist_dir() / "labels-idx1-ubyte"; }

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("idda-" + tag + "-" + std::to_string(static_cast<unsigned long long>(::getpid())));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace idda::testing
