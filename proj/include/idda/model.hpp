#pragma once

// Feature extractor G_f, label classifier G_c and domain discriminator G_d.
//
// Parameter names carry the network as a prefix ("f.", "c.", "d.") so the
// three parameter groups can be selected from one ParamSet.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "idda/autodiff.hpp"
#include "idda/rng.hpp"

namespace idda {

enum class DiscKind { informative, binary, two_n, parent_label, confidence_filtered };

inline const char* disc_kind_name(DiscKind k) {
  switch (k) {
    case DiscKind::informative: return "informative";
    case DiscKind::binary: return "binary";
    case DiscKind::two_n: return "two_n";
    case DiscKind::parent_label: return "parent_label";
    case DiscKind::confidence_filtered: return "confidence_filtered";
  }
  return "?";
}

/// Discriminator variant. The confidence threshold exists only for
/// confidence_filtered.
class DiscVariant {
 public:
  static DiscVariant informative() { return DiscVariant(DiscKind::informative); }
  static DiscVariant binary() { return DiscVariant(DiscKind::binary); }
  static DiscVariant two_n() { return DiscVariant(DiscKind::two_n); }
  static DiscVariant parent_label() { return DiscVariant(DiscKind::parent_label); }
  static DiscVariant confidence_filtered(double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) {
      throw Error("confidence_filtered: threshold must lie in (0, 1)");
    }
    DiscVariant v(DiscKind::confidence_filtered);
    v.threshold_ = threshold;
    return v;
  }

  DiscKind kind() const { return kind_; }
  std::optional<double> threshold() const { return threshold_; }
  std::string name() const { return disc_kind_name(kind_); }

  friend bool operator==(const DiscVariant&, const DiscVariant&) = default;

 private:
  explicit DiscVariant(DiscKind k) : kind_(k) {}
  DiscKind kind_;
  std::optional<double> threshold_;
};

struct ModelConfig {
  /// Per-sample input shape: {features} for vectors, {C, H, W} for images.
  Shape input_shape{2};
  std::size_t feature_dim = 16;
  std::size_t num_classes = 2;
  /// Dense extractor hidden widths (vector inputs only).
  std::vector<std::size_t> extractor_hidden{64};
  /// Convolution channels for image inputs (5x5 kernels, 2x2 pooling).
  std::vector<std::size_t> conv_channels{32, 48};
  std::size_t conv_kernel = 5;
  std::size_t classifier_hidden = 32;
  std::size_t discriminator_hidden = 32;
  DiscVariant variant = DiscVariant::informative();
  double lambda = 1.0;
  /// class -> parent group, required by parent_label.
  std::optional<std::vector<std::size_t>> parent_map;

  std::size_t num_parents() const {
    if (!parent_map) return 0;
    std::size_t p = 0;
    for (std::size_t v : *parent_map) p = std::max(p, v + 1);
    return p;
  }

  /// Discriminator output width implied by the variant.
  std::size_t disc_width() const {
    switch (variant.kind()) {
      case DiscKind::informative:
      case DiscKind::confidence_filtered: return num_classes + 1;
      case DiscKind::binary: return 2;
      case DiscKind::two_n: return 2 * num_classes;
      case DiscKind::parent_label: return num_parents() + 1;
    }
    return 0;
  }

  void validate() const {
    if (input_shape.empty() || shape_size(input_shape) == 0) throw Error("model: empty input shape");
    if (input_shape.size() != 1 && input_shape.size() != 3) {
      throw Error("model: input shape must be {features} or {channels, height, width}");
    }
    if (feature_dim == 0) throw Error("model: feature_dim must be positive");
    if (num_classes == 0) throw Error("model: num_classes must be positive");
    if (!(lambda >= 0.0)) throw Error("model: lambda must be >= 0");
    if (variant.kind() == DiscKind::parent_label) {
      if (!parent_map) throw Error("model: parent_label variant requires a parent map");
    }
    if (parent_map) {
      if (parent_map->size() != num_classes) {
        throw Error("model: parent map covers " + std::to_string(parent_map->size()) +
                    " classes, expected " + std::to_string(num_classes));
      }
      std::vector<bool> used(num_parents(), false);
      for (std::size_t p : *parent_map) used[p] = true;
      for (bool u : used) {
        if (!u) throw Error("model: parent indices must be contiguous from 0");
      }
    }
  }
};

template <typename T>
struct IddaModel {
  ModelConfig config;
  ParamSet<T> params;

  /// Parameters of one network: 'f', 'c' or 'd'.
  std::vector<std::string> group(char net) const {
    std::vector<std::string> names;
    for (const auto& [name, _] : params) {
      if (name.size() > 1 && name[0] == net && name[1] == '.') names.push_back(name);
    }
    return names;
  }
};

namespace detail {

template <typename T>
Tensor<T> uniform_init(Shape shape, std::size_t fan_in, std::uint64_t seed, const std::string& name) {
  Rng rng(seed, "init/" + name);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
void add_dense(ParamSet<T>& p, const std::string& prefix, std::size_t in, std::size_t out,
               std::uint64_t seed) {
  p[prefix + ".w"] = uniform_init<T>({in, out}, in, seed, prefix + ".w");
  p[prefix + ".b"] = Tensor<T>({out});
}

template <typename T>
void add_conv(ParamSet<T>& p, const std::string& prefix, std::size_t in_c, std::size_t out_c,
              std::size_t k, std::uint64_t seed) {
  p[prefix + ".w"] = uniform_init<T>({out_c, in_c, k, k}, in_c * k * k, seed, prefix + ".w");
  p[prefix + ".b"] = Tensor<T>({out_c});
}

inline std::size_t flat_conv_width(const ModelConfig& cfg) {
  std::size_t h = cfg.input_shape[1], w = cfg.input_shape[2];
  for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) {
    if (h < cfg.conv_kernel || w < cfg.conv_kernel) throw Error("model: image too small for conv stack");
    h = (h - cfg.conv_kernel + 1) / 2;
    w = (w - cfg.conv_kernel + 1) / 2;
    if (h == 0 || w == 0) throw Error("model: image too small for conv stack");
  }
  return cfg.conv_channels.back() * h * w;
}

inline std::string layer(char net, const char* kind, std::size_t i) {
  return std::string(1, net) + "." + kind + std::to_string(i);
}

}  // namespace detail

/// Deterministic initialisation; each tensor draws from its own named stream
/// so unrelated layers (e.g. a different discriminator head) do not perturb
/// the rest of the model.
template <typename T>
IddaModel<T> build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  IddaModel<T> m;
  m.config = config;
  std::size_t width;
  if (config.input_shape.size() == 3) {
    std::size_t in_c = config.input_shape[0];
    for (std::size_t i = 0; i < config.conv_channels.size(); ++i) {
      detail::add_conv(m.params, detail::layer('f', "conv", i), in_c, config.conv_channels[i],
                       config.conv_kernel, seed);
      in_c = config.conv_channels[i];
    }
    width = detail::flat_conv_width(config);
  } else {
    width = config.input_shape[0];
    for (std::size_t i = 0; i < config.extractor_hidden.size(); ++i) {
      detail::add_dense(m.params, detail::layer('f', "fc", i), width, config.extractor_hidden[i], seed);
      width = config.extractor_hidden[i];
    }
  }
  detail::add_dense(m.params, "f.out", width, config.feature_dim, seed);
  detail::add_dense(m.params, "c.fc0", config.feature_dim, config.classifier_hidden, seed);
  detail::add_dense(m.params, "c.out", config.classifier_hidden, config.num_classes, seed);
  detail::add_dense(m.params, "d.fc0", config.feature_dim, config.discriminator_hidden, seed);
  detail::add_dense(m.params, "d.out", config.discriminator_hidden, config.disc_width(), seed);
  return m;
}

/// Checks that parameter shapes agree with the configuration (head widths in
/// particular). Used after loading a checkpoint.
template <typename T>
void validate_model(const IddaModel<T>& m) {
  m.config.validate();
  IddaModel<T> ref = build_model<T>(m.config, 0);
  if (ref.params.size() != m.params.size()) throw Error("model: parameter set does not match config");
  for (const auto& [name, t] : ref.params) {
    auto it = m.params.find(name);
    if (it == m.params.end()) throw Error("model: missing parameter '" + name + "'");
    if (it->second.shape() != t.shape()) {
      throw Error("model: parameter '" + name + "' has shape " + shape_str(it->second.shape()) +
                  ", config requires " + shape_str(t.shape()));
    }
  }
}

namespace detail {

template <typename T>
Var dense(Graph<T>& g, const IddaModel<T>& m, const std::string& prefix, Var x) {
  const Var w = g.parameter(prefix + ".w", m.params.at(prefix + ".w"));
  const Var b = g.parameter(prefix + ".b", m.params.at(prefix + ".b"));
  return g.add_bias(g.matmul(x, w), b);
}

inline void check_width(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw ShapeError(std::string(what) + ": expected width " + std::to_string(want) + ", got " +
                     std::to_string(got));
  }
}

}  // namespace detail

/// G_f on a graph. x is [N, ...input_shape].
template <typename T>
Var feature_graph(Graph<T>& g, const IddaModel<T>& m, Var x) {
  const ModelConfig& cfg = m.config;
  const Shape& xs = g.value(x).shape();
  if (xs.size() != cfg.input_shape.size() + 1 ||
      !std::equal(cfg.input_shape.begin(), cfg.input_shape.end(), xs.begin() + 1)) {
    throw ShapeError("extract_features: input " + shape_str(xs) + " does not match model input " +
                     shape_str(cfg.input_shape));
  }
  Var h = x;
  if (cfg.input_shape.size() == 3) {
    for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) {
      const std::string p = detail::layer('f', "conv", i);
      h = g.conv2d(h, g.parameter(p + ".w", m.params.at(p + ".w")));
      h = g.add_bias(h, g.parameter(p + ".b", m.params.at(p + ".b")));
      h = g.max_pool2d(g.relu(h), 2);
    }
    h = g.flatten(h);
  } else {
    for (std::size_t i = 0; i < cfg.extractor_hidden.size(); ++i) {
      h = g.relu(detail::dense(g, m, detail::layer('f', "fc", i), h));
    }
  }
  return detail::dense(g, m, "f.out", h);
}

template <typename T>
Var classifier_graph(Graph<T>& g, const IddaModel<T>& m, Var f) {
  detail::check_width(g.value(f).row_size(), m.config.feature_dim, "classify");
  return detail::dense(g, m, "c.out", g.relu(detail::dense(g, m, "c.fc0", f)));
}

template <typename T>
Var discriminator_graph(Graph<T>& g, const IddaModel<T>& m, Var f) {
  detail::check_width(g.value(f).row_size(), m.config.feature_dim, "discriminate");
  return detail::dense(g, m, "d.out", g.relu(detail::dense(g, m, "d.fc0", f)));
}

/// Features for a batch, evaluated in chunks to bound memory.
template <typename T>
Tensor<T> extract_features(const IddaModel<T>& m, const Tensor<T>& x, std::size_t chunk = 256) {
  if (x.rank() != m.config.input_shape.size() + 1) {
    throw ShapeError("extract_features: input " + shape_str(x.shape()) + " does not match model input " +
                     shape_str(m.config.input_shape));
  }
  Tensor<T> out;
  for (std::size_t begin = 0; begin < x.rows(); begin += chunk) {
    const std::size_t end = std::min(x.rows(), begin + chunk);
    Graph<T> g({{"x", x.slice_rows(begin, end)}});
    Tensor<T> part = g.value(feature_graph(g, m, g.input("x")));
    out = out.empty() ? std::move(part) : concat_rows(out, part);
  }
  return out;
}

/// Class probabilities (rows sum to one).
template <typename T>
Tensor<T> classify(const IddaModel<T>& m, const Tensor<T>& features) {
  Graph<T> g({{"f", features}});
  return softmax_rows(g.value(classifier_graph(g, m, g.input("f"))));
}

/// Domain-class probabilities with the variant's head width.
template <typename T>
Tensor<T> discriminate(const IddaModel<T>& m, const Tensor<T>& features) {
  Graph<T> g({{"f", features}});
  return softmax_rows(g.value(discriminator_graph(g, m, g.input("f"))));
}

struct DomainLabel {
  std::size_t index = 0;
  /// Left out of the discriminator loss (confidence filtering).
  bool excluded = false;
};

/// Discriminator targets for a batch laid out as [source..., target...].
///
/// informative / confidence_filtered: source y -> y, target -> C.
/// binary: source -> 0, target -> 1.
/// two_n: source y -> y, target -> C + argmax(classifier row).
/// parent_label: source y -> parent(y), target -> P.
/// confidence_filtered additionally excludes target rows whose top class
/// probability is below the threshold.
template <typename T>
std::vector<DomainLabel> assign_domain_labels(const ModelConfig& cfg,
                                              const std::vector<std::size_t>& source_labels,
                                              std::size_t target_count,
                                              const Tensor<T>* target_class_probs = nullptr) {
  const std::size_t C = cfg.num_classes;
  const DiscKind kind = cfg.variant.kind();
  const bool needs_probs = kind == DiscKind::two_n || kind == DiscKind::confidence_filtered;
  if (needs_probs) {
    if (target_class_probs == nullptr) {
      throw Error(std::string(disc_kind_name(kind)) + " requires classifier output for target samples");
    }
    if (target_class_probs->rows() != target_count || target_class_probs->row_size() != C) {
      throw ShapeError("assign_domain_labels: classifier output shape " +
                       shape_str(target_class_probs->shape()) + " does not match target batch");
    }
  }
  if (kind == DiscKind::parent_label && !cfg.parent_map) {
    throw Error("parent_label requires a parent map");
  }
  std::vector<DomainLabel> out;
  out.reserve(source_labels.size() + target_count);
  for (std::size_t y : source_labels) {
    if (y >= C) throw Error("assign_domain_labels: source label out of range");
    switch (kind) {
      case DiscKind::binary: out.push_back({0}); break;
      case DiscKind::parent_label: out.push_back({(*cfg.parent_map)[y]}); break;
      default: out.push_back({y}); break;
    }
  }
  std::vector<std::size_t> pred;
  if (needs_probs) pred = argmax_rows(*target_class_probs);
  for (std::size_t i = 0; i < target_count; ++i) {
    switch (kind) {
      case DiscKind::informative: out.push_back({C}); break;
      case DiscKind::binary: out.push_back({1}); break;
      case DiscKind::two_n: out.push_back({C + pred[i]}); break;
      case DiscKind::parent_label: out.push_back({cfg.num_parents()}); break;
      case DiscKind::confidence_filtered: {
        const double top = static_cast<double>((*target_class_probs)[i * C + pred[i]]);
        out.push_back({C, top < *cfg.variant.threshold()});
        break;
      }
    }
  }
  return out;
}

}  // namespace idda
