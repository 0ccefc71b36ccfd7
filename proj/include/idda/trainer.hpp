#pragma once

// Joint training of G_f, G_c and G_d.
//
// Per step the objective is
//   (1/n_s) * sum_source CE(G_c(G_f(x)), y)
//     + (lambda/(n_s+n_t)) * sum_batch CE(G_d(G_f(x)), d)
// where d are the variant's domain labels. The discriminator loss enters the
// differentiated graph unscaled so G_d descends on it directly; G_f sees it
// through a reversal node with factor lambda, i.e. receives -lambda * dL_d/df.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "idda/autodiff.hpp"
#include "idda/checkpoint.hpp"
#include "idda/datasets.hpp"
#include "idda/model.hpp"
#include "idda/optim.hpp"
#include "idda/rng.hpp"

namespace idda {

enum class Method { source_only, binary, informative, two_n, parent_label, confidence_filtered };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::source_only: return "source_only";
    case Method::binary: return "binary";
    case Method::informative: return "informative";
    case Method::two_n: return "two_n";
    case Method::parent_label: return "parent_label";
    case Method::confidence_filtered: return "confidence_filtered";
  }
  return "?";
}

inline std::optional<DiscKind> method_disc_kind(Method m) {
  switch (m) {
    case Method::source_only: return std::nullopt;
    case Method::binary: return DiscKind::binary;
    case Method::informative: return DiscKind::informative;
    case Method::two_n: return DiscKind::two_n;
    case Method::parent_label: return DiscKind::parent_label;
    case Method::confidence_filtered: return DiscKind::confidence_filtered;
  }
  return std::nullopt;
}

struct TrainConfig {
  Method method = Method::informative;
  std::size_t epochs = 10;
  /// Total batch; half source, half target.
  std::size_t batch_size = 64;
  double lambda = 1.0;
  double learning_rate = 0.01;
  double momentum = 0.9;
  /// Global gradient-norm clip per step (0 disables).
  double max_grad_norm = 0.0;
  std::uint64_t seed = 0;
  /// Epochs between checkpoints (0 disables). Needs checkpoint_dir.
  std::size_t checkpoint_interval = 1;
  std::filesystem::path checkpoint_dir;
  /// Evaluate target accuracy at the end of every epoch (needs hidden labels).
  bool eval_each_epoch = true;

  void validate() const {
    if (batch_size < 2 || batch_size % 2 != 0) throw Error("train: batch size must be even and >= 2");
    if (!(lambda >= 0.0)) throw Error("train: lambda must be >= 0");
    if (epochs == 0) throw Error("train: epochs must be positive");
    SgdState<float>(learning_rate, momentum, max_grad_norm);
  }
};

struct StepMetrics {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss_y = 0.0;
  double loss_d = 0.0;
  double total = 0.0;
  double lambda = 0.0;
  double src_acc = 0.0;
  double disc_acc = 0.0;
  std::size_t n_source = 0;
  std::size_t n_target = 0;
};

struct EpochSummary {
  std::size_t epoch = 0;
  double loss_y = 0.0;
  double loss_d = 0.0;
  double total = 0.0;
  double src_acc = 0.0;
  double disc_acc = 0.0;
  std::optional<double> tgt_acc;
};

struct Batch {
  std::vector<std::size_t> source;
  std::vector<std::size_t> target;
};

/// One epoch of batches. The larger domain is covered exactly once (the last
/// batch may be short); the smaller one is drawn without replacement and
/// reshuffled whenever it runs out. Both halves always have equal size.
inline std::vector<Batch> compose_epoch(std::size_t n_source, std::size_t n_target, std::size_t batch_size,
                                        Rng& rng) {
  if (n_source == 0 || n_target == 0) throw Error("compose_batch: empty domain");
  if (batch_size < 2 || batch_size % 2 != 0) throw Error("compose_batch: batch size must be even");
  const std::size_t half = batch_size / 2;
  std::vector<std::size_t> src = rng.permutation(n_source);
  std::vector<std::size_t> tgt = rng.permutation(n_target);
  const bool source_leads = n_source >= n_target;
  std::vector<std::size_t>& lead = source_leads ? src : tgt;
  std::vector<std::size_t>& follow = source_leads ? tgt : src;
  std::size_t fpos = 0;
  std::vector<Batch> out;
  for (std::size_t begin = 0; begin < lead.size(); begin += half) {
    const std::size_t end = std::min(lead.size(), begin + half);
    std::vector<std::size_t> a(lead.begin() + static_cast<std::ptrdiff_t>(begin),
                               lead.begin() + static_cast<std::ptrdiff_t>(end));
    std::vector<std::size_t> b;
    b.reserve(a.size());
    while (b.size() < a.size()) {
      if (fpos == follow.size()) {
        rng.shuffle(follow.begin(), follow.end());
        fpos = 0;
      }
      b.push_back(follow[fpos++]);
    }
    out.push_back(source_leads ? Batch{std::move(a), std::move(b)} : Batch{std::move(b), std::move(a)});
  }
  return out;
}

/// Batch tensors handed to a training step. Target labels are deliberately
/// absent.
struct BatchData {
  Tensor<float> source_x;
  std::vector<std::size_t> source_y;
  Tensor<float> target_x;
};

inline BatchData gather_batch(const LabeledSet& source, const UnlabeledSet& target, const Batch& b) {
  BatchData d;
  d.source_x = source.x.gather_rows(b.source);
  d.source_y.reserve(b.source.size());
  for (std::size_t i : b.source) d.source_y.push_back(source.labels[i]);
  d.target_x = target.x.gather_rows(b.target);
  return d;
}

template <typename T>
void check_method(const IddaModel<T>& model, Method method) {
  const auto kind = method_disc_kind(method);
  if (kind && *kind != model.config.variant.kind()) {
    throw Error(std::string("variant mismatch: method ") + method_name(method) + " with model variant " +
                model.config.variant.name());
  }
}

/// One optimisation step on a batch. Updates model parameters and optimiser
/// state in place.
template <typename T>
StepMetrics training_step(IddaModel<T>& model, const BatchData& batch, const TrainConfig& cfg,
                          SgdState<T>& opt) {
  check_method(model, cfg.method);
  const std::size_t ns = batch.source_y.size();
  const std::size_t nt = cfg.method == Method::source_only ? 0 : batch.target_x.rows();
  if (ns == 0) throw Error("training_step: empty source half");
  const Tensor<T> xs = batch.source_x.template cast<T>();
  typename Graph<T>::Bindings bind{{"xs", xs}};
  if (cfg.method != Method::source_only) bind.emplace("xt", batch.target_x.template cast<T>());
  Graph<T> g(std::move(bind));

  const Var fs = feature_graph(g, model, g.input("xs"));
  const Var class_logits = classifier_graph(g, model, fs);
  const Var loss_y = g.softmax_cross_entropy(class_logits, batch.source_y);

  StepMetrics m;
  m.lambda = cfg.lambda;
  m.n_source = ns;
  m.n_target = nt;
  {
    const auto pred = argmax_rows(g.value(class_logits));
    std::size_t hit = 0;
    for (std::size_t i = 0; i < ns; ++i) hit += pred[i] == batch.source_y[i];
    m.src_acc = static_cast<double>(hit) / static_cast<double>(ns);
  }
  m.loss_y = static_cast<double>(g.value(loss_y)[0]);

  Var loss = loss_y;
  if (cfg.method != Method::source_only) {
    const Var ft = feature_graph(g, model, g.input("xt"));
    const DiscKind kind = model.config.variant.kind();
    std::optional<Tensor<T>> target_probs;
    if (kind == DiscKind::two_n || kind == DiscKind::confidence_filtered) {
      target_probs = softmax_rows(g.value(classifier_graph(g, model, ft)));
    }
    const auto labels = assign_domain_labels<T>(model.config, batch.source_y, nt,
                                                target_probs ? &*target_probs : nullptr);
    std::vector<std::size_t> idx(labels.size());
    std::vector<T> weights(labels.size());
    const T w = T{1} / static_cast<T>(ns + nt);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      idx[i] = labels[i].index;
      weights[i] = labels[i].excluded ? T{0} : w;
    }
    const Var reversed = g.grad_reverse(g.concat({fs, ft}), cfg.lambda);
    const Var disc_logits = discriminator_graph(g, model, reversed);
    const Var loss_d = g.softmax_cross_entropy(disc_logits, idx, weights);
    m.loss_d = static_cast<double>(g.value(loss_d)[0]);
    const auto dpred = argmax_rows(g.value(disc_logits));
    std::size_t hit = 0, counted = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i].excluded) continue;
      ++counted;
      hit += dpred[i] == labels[i].index;
    }
    m.disc_acc = counted ? static_cast<double>(hit) / static_cast<double>(counted) : 0.0;
    loss = g.add(loss_y, loss_d);
  }
  m.total = m.loss_y + cfg.lambda * m.loss_d;
  if (!std::isfinite(m.total)) throw NumericError("training_step: non-finite loss");

  const GradMap<T> grads = g.backward(loss);
  sgd_step(model.params, grads, opt);
  return m;
}

struct EvalResult {
  double accuracy = 0.0;
  std::vector<double> per_class;
  /// confusion[true][predicted]
  std::vector<std::vector<std::size_t>> confusion;
};

/// Accuracy under argmax of the classifier for labeled inputs.
template <typename T>
EvalResult evaluate(const IddaModel<T>& model, const Tensor<float>& x, const std::vector<std::size_t>& labels) {
  if (labels.size() != x.rows()) throw Error("evaluate: label count does not match inputs");
  const std::size_t C = model.config.num_classes;
  EvalResult r;
  r.confusion.assign(C, std::vector<std::size_t>(C, 0));
  const std::size_t chunk = 512;
  std::size_t hit = 0;
  for (std::size_t begin = 0; begin < x.rows(); begin += chunk) {
    const std::size_t end = std::min(x.rows(), begin + chunk);
    const auto pred = argmax_rows(classify(model, extract_features(model, x.slice_rows(begin, end).template cast<T>())));
    for (std::size_t i = begin; i < end; ++i) {
      if (labels[i] >= C) throw Error("evaluate: label out of range");
      ++r.confusion[labels[i]][pred[i - begin]];
      hit += pred[i - begin] == labels[i];
    }
  }
  r.accuracy = static_cast<double>(hit) / static_cast<double>(labels.size());
  r.per_class.assign(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    std::size_t total = 0;
    for (std::size_t k : r.confusion[c]) total += k;
    r.per_class[c] = total ? static_cast<double>(r.confusion[c][c]) / static_cast<double>(total) : 0.0;
  }
  return r;
}

template <typename T>
EvalResult evaluate(const IddaModel<T>& model, const UnlabeledSet& target) {
  if (!target.hidden_labels) throw Error("evaluate: target set carries no labels");
  return evaluate(model, target.x, *target.hidden_labels);
}

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  ParamSet<float> params;
  std::map<std::string, Tensor<float>> velocity;
  std::size_t epoch = 0;
  std::uint64_t seed = 0;
  std::string variant;
  std::string config_echo;
};

inline std::string train_config_echo(const TrainConfig& cfg) {
  std::ostringstream os;
  os << std::setprecision(17) << "method=" << method_name(cfg.method) << ";epochs=" << cfg.epochs
     << ";batch_size=" << cfg.batch_size << ";lambda=" << cfg.lambda << ";lr=" << cfg.learning_rate
     << ";momentum=" << cfg.momentum << ";max_grad_norm=" << cfg.max_grad_norm << ";seed=" << cfg.seed;
  return os.str();
}

/// The batch stream of an epoch is a pure function of (seed, epoch), so the
/// RNG state is captured by those two values.
inline void save_checkpoint(const std::filesystem::path& path, const IddaModel<float>& model,
                            const SgdState<float>& opt, std::size_t epochs_done, const TrainConfig& cfg) {
  NamedTensors t;
  for (const auto& [name, p] : model.params) t.emplace("param/" + name, p);
  for (const auto& [name, v] : opt.velocity) t.emplace("opt/velocity/" + name, v);
  t.emplace("meta/epoch", encode_u64(epochs_done));
  t.emplace("meta/seed", encode_u64(cfg.seed));
  t.emplace("meta/variant", encode_text(model.config.variant.name()));
  t.emplace("meta/disc_width", encode_u64(model.config.disc_width()));
  t.emplace("meta/config", encode_text(train_config_echo(cfg)));
  write_tensor_file(path, t);
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const NamedTensors t = read_tensor_file(path);
  Checkpoint c;
  for (const auto& [name, tensor] : t) {
    if (name.rfind("param/", 0) == 0) {
      c.params.emplace(name.substr(6), tensor);
    } else if (name.rfind("opt/velocity/", 0) == 0) {
      c.velocity.emplace(name.substr(13), tensor);
    }
  }
  auto need = [&](const char* key) -> const Tensor<float>& {
    auto it = t.find(key);
    if (it == t.end()) throw Error(std::string("checkpoint: missing ") + key);
    return it->second;
  };
  c.epoch = decode_u64(need("meta/epoch"));
  c.seed = decode_u64(need("meta/seed"));
  c.variant = decode_text(need("meta/variant"));
  c.config_echo = decode_text(need("meta/config"));
  return c;
}

/// Installs checkpoint parameters into a model built from the same config.
/// Head widths and the variant are re-checked.
inline void restore_checkpoint(const Checkpoint& c, IddaModel<float>& model, SgdState<float>& opt) {
  if (c.variant != model.config.variant.name()) {
    throw Error("checkpoint: variant " + c.variant + " does not match model variant " + model.config.variant.name());
  }
  IddaModel<float> loaded;
  loaded.config = model.config;
  loaded.params = c.params;
  validate_model(loaded);
  for (const auto& [name, v] : c.velocity) {
    auto it = loaded.params.find(name);
    if (it == loaded.params.end() || it->second.shape() != v.shape()) {
      throw Error("checkpoint: velocity '" + name + "' does not match parameters");
    }
  }
  model.params = std::move(loaded.params);
  opt.velocity = c.velocity;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainHooks {
  /// Called with the model as it is before the step.
  std::function<void(const IddaModel<float>&, const BatchData&)> before_step;
  std::function<void(const StepMetrics&)> after_step;
  std::function<void(const EpochSummary&, const IddaModel<float>&)> after_epoch;
};

struct TrainResult {
  std::vector<StepMetrics> steps;
  std::vector<EpochSummary> epochs;
  std::vector<std::filesystem::path> checkpoints;
};

/// Runs cfg.epochs epochs (or the remainder after a checkpoint).
inline TrainResult train(IddaModel<float>& model, const DomainPair& data, const TrainConfig& cfg,
                         const TrainHooks& hooks = {}, const std::optional<Checkpoint>& resume = std::nullopt) {
  cfg.validate();
  check_method(model, cfg.method);
  if (data.source.size() == 0 || data.target.size() == 0) throw Error("train: empty domain");
  SgdState<float> opt(cfg.learning_rate, cfg.momentum, cfg.max_grad_norm);
  std::size_t first_epoch = 0;
  if (resume) {
    if (resume->seed != cfg.seed) throw Error("train: checkpoint seed does not match config");
    restore_checkpoint(*resume, model, opt);
    first_epoch = resume->epoch;
  }
  TrainResult result;
  std::size_t step = 0;
  for (std::size_t epoch = first_epoch; epoch < cfg.epochs; ++epoch) {
    Rng rng(cfg.seed, "batches", epoch);
    const auto batches = compose_epoch(data.source.size(), data.target.size(), cfg.batch_size, rng);
    EpochSummary summary;
    summary.epoch = epoch;
    for (const Batch& b : batches) {
      const BatchData bd = gather_batch(data.source, data.target, b);
      if (hooks.before_step) hooks.before_step(model, bd);
      StepMetrics m = training_step(model, bd, cfg, opt);
      m.epoch = epoch;
      m.step = step++;
      if (hooks.after_step) hooks.after_step(m);
      summary.loss_y += m.loss_y;
      summary.loss_d += m.loss_d;
      summary.total += m.total;
      summary.src_acc += m.src_acc;
      summary.disc_acc += m.disc_acc;
      result.steps.push_back(m);
    }
    const double nb = static_cast<double>(batches.size());
    summary.loss_y /= nb;
    summary.loss_d /= nb;
    summary.total /= nb;
    summary.src_acc /= nb;
    summary.disc_acc /= nb;
    const bool last = epoch + 1 == cfg.epochs;
    if ((cfg.eval_each_epoch || last) && data.target.hidden_labels) {
      summary.tgt_acc = evaluate(model, data.target).accuracy;
    }
    if (hooks.after_epoch) hooks.after_epoch(summary, model);
    result.epochs.push_back(summary);
    if (cfg.checkpoint_interval > 0 && !cfg.checkpoint_dir.empty() && (epoch + 1) % cfg.checkpoint_interval == 0) {
      std::filesystem::create_directories(cfg.checkpoint_dir);
      const auto path = cfg.checkpoint_dir / ("epoch_" + std::to_string(epoch + 1) + ".ckpt");
      save_checkpoint(path, model, opt, epoch + 1, cfg);
      result.checkpoints.push_back(path);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Metrics CSV

inline const char* kMetricsHeader = "epoch,step,loss_y,loss_d,total,src_acc,tgt_acc,disc_acc,lambda,seed,variant";

/// Per-step rows leave tgt_acc empty; epoch summary rows use step = -1 and
/// carry the evaluated target accuracy.
inline void write_metrics_csv(std::ostream& os, const TrainResult& r, const TrainConfig& cfg, bool header = true) {
  if (header) os << kMetricsHeader << '\n';
  os << std::setprecision(9);
  std::size_t si = 0;
  for (const EpochSummary& e : r.epochs) {
    for (; si < r.steps.size() && r.steps[si].epoch == e.epoch; ++si) {
      const StepMetrics& m = r.steps[si];
      os << m.epoch << ',' << m.step << ',' << m.loss_y << ',' << m.loss_d << ',' << m.total << ',' << m.src_acc
         << ",," << m.disc_acc << ',' << m.lambda << ',' << cfg.seed << ',' << method_name(cfg.method) << '\n';
    }
    os << e.epoch << ",-1," << e.loss_y << ',' << e.loss_d << ',' << e.total << ',' << e.src_acc << ',';
    if (e.tgt_acc) os << *e.tgt_acc;
    os << ',' << e.disc_acc << ',' << cfg.lambda << ',' << cfg.seed << ',' << method_name(cfg.method) << '\n';
  }
}

}  // namespace idda
