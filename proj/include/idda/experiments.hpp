#pragma once

// Benchmarks and experiment runners shared by the CLI and the test suites.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <future>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "idda/analysis/nemenyi.hpp"
#include "idda/analysis/proxy_a.hpp"
#include "idda/datasets.hpp"
#include "idda/model.hpp"
#include "idda/trainer.hpp"

namespace idda {

inline std::optional<Method> parse_method(const std::string& s) {
  for (Method m : {Method::source_only, Method::binary, Method::informative, Method::two_n, Method::parent_label,
                   Method::confidence_filtered}) {
    if (s == method_name(m)) return m;
  }
  return std::nullopt;
}

inline const std::vector<Method>& all_methods() {
  static const std::vector<Method> m{Method::source_only, Method::binary,       Method::informative,
                                     Method::two_n,       Method::parent_label, Method::confidence_filtered};
  return m;
}

/// Data factory plus default model/training settings for one benchmark.
struct Benchmark {
  std::string name;
  ModelConfig model;
  TrainConfig train;
  double confidence_threshold = 0.9;
  /// Training data for a run seed. Target labels are used for evaluation only.
  std::function<std::shared_ptr<const DomainPair>(std::uint64_t)> make_data;
  /// Independent draw from the same domains, for held-out measurements.
  std::function<std::shared_ptr<const DomainPair>(std::uint64_t)> make_heldout;
};

/// Consecutive classes paired into parents: class c -> c / 2.
inline std::vector<std::size_t> paired_parents(std::size_t num_classes) {
  std::vector<std::size_t> p(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) p[c] = c / 2;
  return p;
}

/// Multimodal Gaussian benchmark: three classes with two modes each on a
/// circle; the target is rotated by 20 degrees and translated.
inline SyntheticShiftConfig default_gaussian_config() {
  SyntheticShiftConfig c;
  c.num_classes = 3;
  c.modes_per_class = 2;
  c.center_radius = 4.0;
  c.cov_scale = 0.5;
  c.rotation_deg = 20.0;
  c.translation = {0.8, 0.0};
  c.n_source = 600;
  c.n_target = 600;
  return c;
}

inline ModelConfig synthetic_model_config(std::size_t num_classes) {
  ModelConfig m;
  m.input_shape = {2};
  m.extractor_hidden = {64};
  m.feature_dim = 16;
  m.num_classes = num_classes;
  m.classifier_hidden = 32;
  m.discriminator_hidden = 32;
  m.parent_map = paired_parents(num_classes);
  return m;
}

inline TrainConfig synthetic_train_config() {
  TrainConfig t;
  t.epochs = 40;
  t.batch_size = 64;
  // 0.01 drives the adversarial runs to non-finite weights on these tasks.
  t.learning_rate = 0.001;
  t.momentum = 0.9;
  t.checkpoint_interval = 0;
  t.eval_each_epoch = false;
  return t;
}

inline Benchmark gaussian_benchmark(SyntheticShiftConfig cfg = default_gaussian_config()) {
  Benchmark b;
  b.name = "gaussian_modes";
  b.model = synthetic_model_config(cfg.num_classes);
  b.train = synthetic_train_config();
  b.make_data = [cfg](std::uint64_t seed) {
    SyntheticShiftConfig c = cfg;
    c.seed = split_seed(seed, "data");
    return std::make_shared<const DomainPair>(gen_gaussian_modes(c));
  };
  b.make_heldout = [cfg](std::uint64_t seed) {
    SyntheticShiftConfig c = cfg;
    c.seed = split_seed(seed, "heldout");
    return std::make_shared<const DomainPair>(gen_gaussian_modes(c));
  };
  return b;
}

struct TwoMoonsOptions {
  double shift_angle = 30.0;
  std::size_t n_source = 300;
  std::size_t n_target = 300;
  double noise = 0.1;
};

inline Benchmark two_moons_benchmark(TwoMoonsOptions opt = {}) {
  Benchmark b;
  b.name = "two_moons";
  b.model = synthetic_model_config(2);
  b.train = synthetic_train_config();
  b.make_data = [opt](std::uint64_t seed) {
    return std::make_shared<const DomainPair>(
        gen_two_moons(opt.shift_angle, opt.n_source, opt.n_target, opt.noise, split_seed(seed, "data")));
  };
  b.make_heldout = [opt](std::uint64_t seed) {
    return std::make_shared<const DomainPair>(
        gen_two_moons(opt.shift_angle, opt.n_source, opt.n_target, opt.noise, split_seed(seed, "heldout")));
  };
  return b;
}

struct DigitsOptions {
  std::filesystem::path images;
  std::filesystem::path labels;
  /// Directory of photos to crop patches from; empty selects procedural patches.
  std::filesystem::path patch_dir;
  std::size_t n_source = 10000;
  std::size_t n_target = 10000;
  /// Seed of the MNIST-M synthesis; the benchmark data is fixed across runs.
  std::uint64_t data_seed = 0;
  /// Subtract the per-channel pixel mean of both domains (no labels used).
  bool center = true;
};

/// Subtracts the per-channel mean over both image sets in place.
inline void center_channels(Tensor<float>& a, Tensor<float>& b) {
  if (a.rank() != 4 || b.rank() != 4 || a.dim(1) != b.dim(1)) throw ShapeError("center_channels: expected [N,C,H,W] pairs");
  const std::size_t C = a.dim(1);
  std::vector<double> sum(C, 0.0);
  std::size_t count = 0;
  for (const Tensor<float>* t : {&a, &b}) {
    const std::size_t plane = t->dim(2) * t->dim(3);
    for (std::size_t n = 0; n < t->dim(0); ++n) {
      for (std::size_t c = 0; c < C; ++c) {
        const float* p = t->data() + (n * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sum[c] += p[i];
      }
    }
    count += t->dim(0) * plane;
  }
  for (Tensor<float>* t : {&a, &b}) {
    const std::size_t plane = t->dim(2) * t->dim(3);
    for (std::size_t n = 0; n < t->dim(0); ++n) {
      for (std::size_t c = 0; c < C; ++c) {
        const float mu = static_cast<float>(sum[c] / static_cast<double>(count));
        float* p = t->data() + (n * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] -= mu;
      }
    }
  }
}

/// MNIST -> MNIST-M: digits replicated to three channels as source, the same
/// digits blended over colour patches as target. Data is built once and
/// shared between runs.
inline Benchmark digits_benchmark(const DigitsOptions& opt) {
  Benchmark b;
  b.name = "mnist_mnistm";
  ModelConfig m;
  m.input_shape = {3, 28, 28};
  m.conv_channels = {32, 48};
  m.conv_kernel = 5;
  m.feature_dim = 100;
  m.num_classes = 10;
  m.classifier_hidden = 100;
  m.discriminator_hidden = 100;
  m.parent_map = std::vector<std::size_t>{0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
  b.model = m;
  TrainConfig t;
  t.epochs = 10;
  t.batch_size = 64;
  t.checkpoint_interval = 0;
  t.eval_each_epoch = false;
  b.train = t;
  struct Cache {
    std::mutex mu;
    std::shared_ptr<const DomainPair> pair;
  };
  auto cache = std::make_shared<Cache>();
  b.make_data = [opt, cache](std::uint64_t) {
    const std::lock_guard<std::mutex> lock(cache->mu);
    if (!cache->pair) {
      const std::size_t n = std::max(opt.n_source, opt.n_target);
      LabeledSet digits = load_idx(opt.images, opt.labels, n);
      PatchSource patches = ProceduralPatches{};
      if (!opt.patch_dir.empty()) patches = ImagePatches{load_image_directory(opt.patch_dir)};
      LabeledSet tsrc = digits;
      if (opt.n_target < digits.size()) {
        tsrc.x = digits.x.slice_rows(0, opt.n_target);
        tsrc.labels.resize(opt.n_target);
      }
      auto pair = std::make_shared<DomainPair>();
      pair->target = synth_mnist_m(tsrc, patches, opt.data_seed);
      pair->source.num_classes = 10;
      pair->source.x = gray_to_rgb(opt.n_source < digits.size() ? digits.x.slice_rows(0, opt.n_source) : digits.x);
      pair->source.labels.assign(digits.labels.begin(),
                                 digits.labels.begin() + static_cast<std::ptrdiff_t>(std::min(opt.n_source, digits.size())));
      if (opt.center) center_channels(pair->source.x, pair->target.x);
      cache->pair = std::move(pair);
    }
    return cache->pair;
  };
  return b;
}

/// Model configuration for a method on a benchmark.
inline ModelConfig model_for(const Benchmark& b, Method method, double lambda) {
  ModelConfig m = b.model;
  m.lambda = lambda;
  switch (method) {
    case Method::source_only:
    case Method::informative: m.variant = DiscVariant::informative(); break;
    case Method::binary: m.variant = DiscVariant::binary(); break;
    case Method::two_n: m.variant = DiscVariant::two_n(); break;
    case Method::parent_label: m.variant = DiscVariant::parent_label(); break;
    case Method::confidence_filtered: m.variant = DiscVariant::confidence_filtered(b.confidence_threshold); break;
  }
  return m;
}

/// Whether the discriminator's prediction denotes the target domain.
inline bool predicts_target(const ModelConfig& cfg, std::size_t index) {
  switch (cfg.variant.kind()) {
    case DiscKind::informative:
    case DiscKind::confidence_filtered: return index == cfg.num_classes;
    case DiscKind::binary: return index == 1;
    case DiscKind::two_n: return index >= cfg.num_classes;
    case DiscKind::parent_label: return index == cfg.num_parents();
  }
  return false;
}

/// Source-vs-target accuracy of the discriminator on the given samples.
inline double domain_accuracy(const IddaModel<float>& model, const Tensor<float>& source_x, const Tensor<float>& target_x) {
  std::size_t hit = 0;
  const auto ps = argmax_rows(discriminate(model, extract_features(model, source_x)));
  for (std::size_t i : ps) hit += !predicts_target(model.config, i);
  const auto pt = argmax_rows(discriminate(model, extract_features(model, target_x)));
  for (std::size_t i : pt) hit += predicts_target(model.config, i);
  return static_cast<double>(hit) / static_cast<double>(ps.size() + pt.size());
}

struct RunOutcome {
  Method method = Method::informative;
  std::uint64_t seed = 0;
  double lambda = 0.0;
  double target_accuracy = 0.0;
  double source_accuracy = 0.0;
  std::optional<double> heldout_domain_accuracy;
  IddaModel<float> model;
  TrainResult history;
};

struct RunOptions {
  std::optional<double> lambda;
  std::optional<std::size_t> epochs;
  bool heldout_domain_accuracy = false;
  std::filesystem::path checkpoint_dir;
  std::size_t checkpoint_interval = 0;
  TrainHooks hooks;
};

/// Trains one (method, seed) run of a benchmark and evaluates it.
inline RunOutcome run_method(const Benchmark& b, Method method, std::uint64_t seed, const RunOptions& opt = {}) {
  const auto data = b.make_data(seed);
  TrainConfig tc = b.train;
  tc.method = method;
  tc.seed = seed;
  tc.lambda = method == Method::source_only ? 0.0 : opt.lambda.value_or(b.train.lambda);
  if (opt.epochs) tc.epochs = *opt.epochs;
  tc.checkpoint_dir = opt.checkpoint_dir;
  tc.checkpoint_interval = opt.checkpoint_interval;
  RunOutcome out;
  out.method = method;
  out.seed = seed;
  out.lambda = tc.lambda;
  out.model = build_model<float>(model_for(b, method, tc.lambda), split_seed(seed, "model"));
  out.history = train(out.model, *data, tc, opt.hooks);
  // train() always evaluates the final epoch when target labels are known.
  const auto& last = out.history.epochs.back().tgt_acc;
  out.target_accuracy = last ? *last : evaluate(out.model, data->target).accuracy;
  out.source_accuracy = evaluate(out.model, data->source.x, data->source.labels).accuracy;
  if (opt.heldout_domain_accuracy) {
    if (!b.make_heldout) throw Error("benchmark " + b.name + " has no held-out split");
    const auto held = b.make_heldout(seed);
    out.heldout_domain_accuracy = domain_accuracy(out.model, held->source.x, held->target.x);
  }
  return out;
}

/// Runs independent jobs, optionally on several threads. Results keep job
/// order regardless of completion order.
template <typename R>
std::vector<R> run_jobs(const std::vector<std::function<R()>>& jobs, std::size_t threads) {
  std::vector<R> out;
  out.reserve(jobs.size());
  if (threads <= 1) {
    for (const auto& j : jobs) out.push_back(j());
    return out;
  }
  std::vector<std::optional<R>> slots(jobs.size());
  for (std::size_t begin = 0; begin < jobs.size(); begin += threads) {
    const std::size_t end = std::min(jobs.size(), begin + threads);
    std::vector<std::future<R>> futs;
    for (std::size_t i = begin; i < end; ++i) futs.push_back(std::async(std::launch::async, jobs[i]));
    for (std::size_t i = begin; i < end; ++i) slots[i] = futs[i - begin].get();
  }
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw Error("median of empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) throw Error("mean of empty set");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// One RunRecord per (method, seed).
inline std::vector<RunRecord> ablation_suite(const Benchmark& b, const std::vector<Method>& methods,
                                             const std::vector<std::uint64_t>& seeds, std::size_t threads = 1,
                                             std::vector<RunOutcome>* outcomes = nullptr) {
  std::vector<std::function<RunOutcome()>> jobs;
  for (Method m : methods) {
    for (std::uint64_t s : seeds) jobs.push_back([&b, m, s] { return run_method(b, m, s); });
  }
  auto results = run_jobs(jobs, threads);
  std::vector<RunRecord> records;
  for (const auto& r : results) records.push_back({b.name, method_name(r.method), r.seed, r.target_accuracy});
  if (outcomes) *outcomes = std::move(results);
  return records;
}

}  // namespace idda
