#pragma once

// Experiment configuration: a line-oriented `key = value` file with dotted
// keys, overridden by `--key=value` flags. Every key is declared in one
// schema table; anything else is rejected.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "idda/experiments.hpp"

namespace idda {

class ConfigError : public Error {
 public:
  using Error::Error;
};

enum class ExperimentKind { train, evaluate, sweep_lambda, ablation_suite, analyze, gen_data };

inline const char* kind_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::train: return "train";
    case ExperimentKind::evaluate: return "evaluate";
    case ExperimentKind::sweep_lambda: return "sweep_lambda";
    case ExperimentKind::ablation_suite: return "ablation_suite";
    case ExperimentKind::analyze: return "analyze";
    case ExperimentKind::gen_data: return "gen_data";
  }
  return "?";
}

enum class ValueType { integer, real, boolean, text, path, choice, real_list, seed_list };

struct KeySpec {
  std::string key;
  ValueType type;
  std::vector<std::string> choices;  // for ValueType::choice
  std::string help;
};

inline const std::vector<KeySpec>& config_schema() {
  static const std::vector<KeySpec> keys{
      {"experiment.kind", ValueType::choice,
       {"train", "evaluate", "sweep_lambda", "ablation_suite", "analyze", "gen_data"}, "experiment to run"},
      {"experiment.seeds", ValueType::seed_list, {}, "comma-separated run seeds, or a range a..b"},
      {"experiment.threads", ValueType::integer, {}, "independent runs executed concurrently"},
      {"output.root", ValueType::path, {}, "artifact root (IDDA_OUT overrides)"},

      {"data.benchmark", ValueType::choice, {"gaussian", "two_moons", "digits"}, "benchmark"},
      {"data.n_source", ValueType::integer, {}, "source sample count"},
      {"data.n_target", ValueType::integer, {}, "target sample count"},
      {"data.classes", ValueType::integer, {}, "gaussian: number of classes"},
      {"data.modes_per_class", ValueType::integer, {}, "gaussian: modes per class"},
      {"data.radius", ValueType::real, {}, "gaussian: radius of the mode circle"},
      {"data.cov_scale", ValueType::real, {}, "gaussian: isotropic mode variance"},
      {"data.rotation", ValueType::real, {}, "gaussian: target rotation in degrees"},
      {"data.translation_x", ValueType::real, {}, "gaussian: target translation, x"},
      {"data.translation_y", ValueType::real, {}, "gaussian: target translation, y"},
      {"data.shift_angle", ValueType::real, {}, "two_moons: target rotation in degrees"},
      {"data.noise", ValueType::real, {}, "two_moons: noise scale"},
      {"data.mnist_images", ValueType::path, {}, "digits: IDX image file"},
      {"data.mnist_labels", ValueType::path, {}, "digits: IDX label file"},
      {"data.patch_dir", ValueType::path, {}, "digits: photo directory for target patches (empty: procedural)"},

      {"model.variant", ValueType::choice,
       {"source_only", "binary", "informative", "two_n", "parent_label", "confidence_filtered"}, "training method"},
      {"model.confidence_threshold", ValueType::real, {}, "confidence_filtered: threshold in (0, 1)"},
      {"model.feature_dim", ValueType::integer, {}, "feature width D"},
      {"model.classifier_hidden", ValueType::integer, {}, "classifier hidden width"},
      {"model.discriminator_hidden", ValueType::integer, {}, "discriminator hidden width"},

      {"train.epochs", ValueType::integer, {}, "epochs"},
      {"train.batch_size", ValueType::integer, {}, "total batch (half source, half target)"},
      {"train.lambda", ValueType::real, {}, "gradient reversal weight"},
      {"train.lr", ValueType::real, {}, "learning rate"},
      {"train.momentum", ValueType::real, {}, "momentum in [0, 1)"},
      {"train.max_grad_norm", ValueType::real, {}, "global gradient-norm clip (0 disables)"},
      {"train.checkpoint_interval", ValueType::integer, {}, "epochs between checkpoints (0 disables)"},
      {"train.eval_each_epoch", ValueType::boolean, {}, "evaluate target accuracy after every epoch"},

      {"sweep.lambdas", ValueType::real_list, {}, "comma-separated lambda values"},

      {"eval.checkpoint", ValueType::path, {}, "checkpoint to evaluate or analyze"},

      {"analyze.metric", ValueType::choice, {"proxy_a", "purity", "hdh", "nemenyi", "export"}, "analysis to run"},
      {"analyze.records", ValueType::path, {}, "nemenyi: CSV of dataset,method,seed,accuracy rows"},
      {"analyze.alpha", ValueType::real, {}, "nemenyi: significance level (0.05 or 0.10)"},
      {"analyze.with_target_labels", ValueType::boolean, {}, "export: write hidden target labels instead of -1"},
      {"analyze.grid", ValueType::integer, {}, "hdh: quantile thresholds per axis"},
  };
  return keys;
}

inline const KeySpec* find_key(const std::string& key) {
  for (const auto& k : config_schema()) {
    if (k.key == key) return &k;
  }
  return nullptr;
}

/// Raw key/value pairs; later sources replace earlier ones.
using ConfigValues = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string join(const std::vector<std::string>& v, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}

inline void check_known(const std::string& key, const std::string& where) {
  if (!find_key(key)) throw ConfigError(where + "unknown key '" + key + "'");
}

}  // namespace detail

/// Parses `key = value` lines. '#' starts a comment; blank lines are skipped.
inline ConfigValues parse_config_text(const std::string& text, const std::string& origin = "config") {
  ConfigValues out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    detail::check_known(key, where);
    out[key] = detail::trim(line.substr(eq + 1));
  }
  return out;
}

inline ConfigValues parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

/// Parses `--key=value` and `--key value` flags.
inline ConfigValues parse_config_flags(const std::vector<std::string>& args) {
  ConfigValues out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) != 0) throw ConfigError("unexpected argument '" + a + "'");
    std::string key = a.substr(2), value;
    if (const auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key.erase(eq);
    } else {
      if (i + 1 >= args.size()) throw ConfigError("flag --" + key + " needs a value");
      value = args[++i];
    }
    detail::check_known(key, "");
    out[key] = value;
  }
  return out;
}

/// Typed accessors over resolved values. Every conversion error names the key.
class ConfigReader {
 public:
  explicit ConfigReader(ConfigValues v) : values_(std::move(v)) {
    for (const auto& [k, _] : values_) detail::check_known(k, "");
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const ConfigValues& values() const { return values_; }

  std::string raw(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing required key '" + key + "'");
    return it->second;
  }

  std::optional<long long> integer(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    const std::string v = raw(key);
    long long out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) mismatch(key, v, "an integer");
    return out;
  }

  std::optional<std::size_t> count(const std::string& key) const {
    auto v = integer(key);
    if (v && *v < 0) mismatch(key, raw(key), "a non-negative integer");
    return v ? std::optional<std::size_t>(static_cast<std::size_t>(*v)) : std::nullopt;
  }

  std::optional<double> real(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    return parse_real(key, raw(key));
  }

  std::optional<bool> boolean(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    const std::string v = raw(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    mismatch(key, v, "a boolean (true/false)");
  }

  std::optional<std::string> choice(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    const std::string v = raw(key);
    const KeySpec* spec = find_key(key);
    if (std::find(spec->choices.begin(), spec->choices.end(), v) == spec->choices.end()) {
      throw ConfigError("invalid value '" + v + "' for key '" + key + "'; allowed: " +
                        detail::join(spec->choices, ", "));
    }
    return v;
  }

  std::optional<std::filesystem::path> path(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    return std::filesystem::path(raw(key));
  }

  std::optional<std::vector<double>> reals(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    std::vector<double> out;
    for (const auto& item : split(raw(key))) out.push_back(parse_real(key, item));
    if (out.empty()) mismatch(key, raw(key), "a non-empty list of reals");
    return out;
  }

  /// "0,1,2" or "0..29" (inclusive).
  std::optional<std::vector<std::uint64_t>> seeds(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    const std::string v = raw(key);
    std::vector<std::uint64_t> out;
    if (const auto dots = v.find(".."); dots != std::string::npos) {
      const auto a = parse_u64(key, detail::trim(v.substr(0, dots)));
      const auto b = parse_u64(key, detail::trim(v.substr(dots + 2)));
      if (b < a) mismatch(key, v, "an increasing seed range");
      for (std::uint64_t s = a; s <= b; ++s) out.push_back(s);
    } else {
      for (const auto& item : split(v)) out.push_back(parse_u64(key, item));
    }
    if (out.empty()) mismatch(key, v, "a non-empty seed list");
    return out;
  }

 private:
  ConfigValues values_;

  [[noreturn]] static void mismatch(const std::string& key, const std::string& v, const char* expected) {
    throw ConfigError("type mismatch for key '" + key + "': '" + v + "' is not " + expected);
  }

  static std::vector<std::string> split(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = detail::trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  static double parse_real(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size() || !std::isfinite(out)) mismatch(key, v, "a real number");
    return out;
  }

  static std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || ec != std::errc{} || p != v.data() + v.size()) mismatch(key, v, "an unsigned seed");
    return out;
  }
};

struct ExperimentSpec {
  ExperimentKind kind = ExperimentKind::train;
  std::string benchmark = "gaussian";
  SyntheticShiftConfig gaussian = default_gaussian_config();
  TwoMoonsOptions moons;
  DigitsOptions digits;
  Method method = Method::informative;
  std::optional<double> confidence_threshold;
  std::optional<std::size_t> feature_dim, classifier_hidden, discriminator_hidden;
  /// Training overrides; unset fields keep the benchmark defaults.
  std::optional<std::size_t> epochs, batch_size, checkpoint_interval;
  std::optional<double> lambda, learning_rate, momentum, max_grad_norm;
  std::optional<bool> eval_each_epoch;
  std::vector<std::uint64_t> seeds{0};
  std::size_t threads = 1;
  std::filesystem::path output_root = "runs";
  std::vector<double> lambdas{0.0, 0.1, 0.4, 0.7, 1.0, 1.4, 1.7, 2.0};
  std::filesystem::path checkpoint;
  std::string analyze_metric = "proxy_a";
  std::filesystem::path records;
  double alpha = 0.05;
  bool with_target_labels = false;
  std::size_t grid = 10;
  /// The merged key/value pairs, echoed into manifests.
  ConfigValues resolved;
};

inline std::filesystem::path default_mnist_dir() {
  if (const char* d = std::getenv("IDDA_MNIST_DIR")) return d;
  return "data/mnist";
}

/// Builds a typed spec from merged values and checks the keys each
/// experiment kind requires.
inline ExperimentSpec make_spec(const ConfigValues& values) {
  const ConfigReader r(values);
  ExperimentSpec s;
  s.resolved = values;
  if (auto k = r.choice("experiment.kind")) {
    for (auto kind : {ExperimentKind::train, ExperimentKind::evaluate, ExperimentKind::sweep_lambda,
                      ExperimentKind::ablation_suite, ExperimentKind::analyze, ExperimentKind::gen_data}) {
      if (*k == kind_name(kind)) s.kind = kind;
    }
  } else {
    throw ConfigError("missing required key 'experiment.kind'");
  }
  if (auto v = r.seeds("experiment.seeds")) s.seeds = *v;
  if (auto v = r.count("experiment.threads")) s.threads = std::max<std::size_t>(1, *v);
  if (auto v = r.path("output.root")) s.output_root = *v;

  if (auto v = r.choice("data.benchmark")) s.benchmark = *v;
  auto& g = s.gaussian;
  if (auto v = r.count("data.classes")) g.num_classes = *v;
  if (auto v = r.count("data.modes_per_class")) g.modes_per_class = *v;
  if (auto v = r.real("data.radius")) g.center_radius = *v;
  if (auto v = r.real("data.cov_scale")) g.cov_scale = *v;
  if (auto v = r.real("data.rotation")) g.rotation_deg = *v;
  if (auto v = r.real("data.translation_x")) g.translation[0] = *v;
  if (auto v = r.real("data.translation_y")) g.translation[1] = *v;
  if (auto v = r.real("data.shift_angle")) s.moons.shift_angle = *v;
  if (auto v = r.real("data.noise")) s.moons.noise = *v;
  if (auto v = r.count("data.n_source")) g.n_source = s.moons.n_source = s.digits.n_source = *v;
  if (auto v = r.count("data.n_target")) g.n_target = s.moons.n_target = s.digits.n_target = *v;
  s.digits.images = r.path("data.mnist_images").value_or(default_mnist_dir() / "images-idx3-ubyte");
  s.digits.labels = r.path("data.mnist_labels").value_or(default_mnist_dir() / "labels-idx1-ubyte");
  if (auto v = r.path("data.patch_dir")) s.digits.patch_dir = *v;
  if (s.benchmark == "gaussian") g.validate();
  if (s.benchmark == "two_moons" && !(s.moons.noise >= 0.0)) throw ConfigError("data.noise must be >= 0");

  if (auto v = r.choice("model.variant")) s.method = *parse_method(*v);
  s.confidence_threshold = r.real("model.confidence_threshold");
  if (s.confidence_threshold && !(*s.confidence_threshold > 0.0 && *s.confidence_threshold < 1.0)) {
    throw ConfigError("model.confidence_threshold must be in (0, 1)");
  }
  s.feature_dim = r.count("model.feature_dim");
  s.classifier_hidden = r.count("model.classifier_hidden");
  s.discriminator_hidden = r.count("model.discriminator_hidden");

  s.epochs = r.count("train.epochs");
  s.batch_size = r.count("train.batch_size");
  s.checkpoint_interval = r.count("train.checkpoint_interval");
  s.lambda = r.real("train.lambda");
  s.learning_rate = r.real("train.lr");
  s.momentum = r.real("train.momentum");
  s.max_grad_norm = r.real("train.max_grad_norm");
  s.eval_each_epoch = r.boolean("train.eval_each_epoch");

  if (auto v = r.reals("sweep.lambdas")) s.lambdas = *v;
  if (auto v = r.path("eval.checkpoint")) s.checkpoint = *v;
  if (auto v = r.choice("analyze.metric")) s.analyze_metric = *v;
  if (auto v = r.path("analyze.records")) s.records = *v;
  if (auto v = r.real("analyze.alpha")) s.alpha = *v;
  if (auto v = r.boolean("analyze.with_target_labels")) s.with_target_labels = *v;
  if (auto v = r.count("analyze.grid")) s.grid = *v;

  if (s.kind == ExperimentKind::evaluate) r.raw("eval.checkpoint");
  if (s.kind == ExperimentKind::analyze) {
    if (s.analyze_metric == "nemenyi") {
      r.raw("analyze.records");
    } else if (s.analyze_metric != "hdh") {
      r.raw("eval.checkpoint");
    }
  }
  if (s.kind == ExperimentKind::sweep_lambda && s.method == Method::source_only) {
    throw ConfigError("invalid value 'source_only' for key 'model.variant'; a lambda sweep needs a discriminator");
  }
  return s;
}

/// File values first, then flags on top.
inline ExperimentSpec parse_config(const std::optional<std::filesystem::path>& file,
                                   const std::vector<std::string>& flags) {
  ConfigValues merged;
  if (file) merged = parse_config_file(*file);
  for (auto& [k, v] : parse_config_flags(flags)) merged[k] = v;
  return make_spec(merged);
}

/// The benchmark a spec describes, with its model and training overrides.
inline Benchmark make_benchmark(const ExperimentSpec& s) {
  Benchmark b;
  if (s.benchmark == "gaussian") {
    b = gaussian_benchmark(s.gaussian);
  } else if (s.benchmark == "two_moons") {
    b = two_moons_benchmark(s.moons);
  } else {
    b = digits_benchmark(s.digits);
  }
  if (s.confidence_threshold) b.confidence_threshold = *s.confidence_threshold;
  if (s.feature_dim) b.model.feature_dim = *s.feature_dim;
  if (s.classifier_hidden) b.model.classifier_hidden = *s.classifier_hidden;
  if (s.discriminator_hidden) b.model.discriminator_hidden = *s.discriminator_hidden;
  if (s.epochs) b.train.epochs = *s.epochs;
  if (s.batch_size) b.train.batch_size = *s.batch_size;
  if (s.checkpoint_interval) b.train.checkpoint_interval = *s.checkpoint_interval;
  if (s.lambda) b.train.lambda = *s.lambda;
  if (s.learning_rate) b.train.learning_rate = *s.learning_rate;
  if (s.momentum) b.train.momentum = *s.momentum;
  if (s.max_grad_norm) b.train.max_grad_norm = *s.max_grad_norm;
  if (s.eval_each_epoch) b.train.eval_each_epoch = *s.eval_each_epoch;
  b.train.validate();
  return b;
}

}  // namespace idda
