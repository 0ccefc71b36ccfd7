// idda: train, evaluate, sweep, ablate, analyze and generate data.
//
//   idda <command> [-c FILE] [--key=value ...]
//
// Every run writes into <root>/<command>-<timestamp>/ with a manifest.json
// and a config.ini that reproduces it. Exit codes: 0 ok, 1 usage, 2 runtime.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "idda/idda.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace idda;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y%m%d-%H%M%S");
  return os.str();
}

fs::path output_root(const ExperimentSpec& spec) {
  if (const char* env = std::getenv("IDDA_OUT"); env && *env) return env;
  return spec.output_root;
}

fs::path make_run_dir(const ExperimentSpec& spec, const std::string& command) {
  const fs::path root = output_root(spec);
  fs::create_directories(root);
  const std::string base = command + "-" + timestamp();
  fs::path dir = root / base;
  for (int n = 1; fs::exists(dir); ++n) dir = root / (base + "-" + std::to_string(n));
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << s;
  if (!out) throw Error("write failure on " + p.string());
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

json train_config_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},         {"batch_size", t.batch_size},
          {"lambda", t.lambda},         {"lr", t.learning_rate},
          {"momentum", t.momentum},     {"max_grad_norm", t.max_grad_norm},
          {"checkpoint_interval", t.checkpoint_interval}, {"eval_each_epoch", t.eval_each_epoch}};
}

json model_config_json(const ModelConfig& m) {
  return {{"input_shape", m.input_shape},
          {"feature_dim", m.feature_dim},
          {"num_classes", m.num_classes},
          {"extractor_hidden", m.extractor_hidden},
          {"conv_channels", m.conv_channels},
          {"conv_kernel", m.conv_kernel},
          {"classifier_hidden", m.classifier_hidden},
          {"discriminator_hidden", m.discriminator_hidden}};
}

/// Effective configuration: the user's keys plus the benchmark settings they
/// resolved to.
json config_echo(const ExperimentSpec& spec, const Benchmark& b) {
  json keys = json::object();
  for (const auto& [k, v] : spec.resolved) keys[k] = v;
  return {{"keys", keys},
          {"benchmark", b.name},
          {"method", method_name(spec.method)},
          {"model", model_config_json(b.model)},
          {"train", train_config_json(b.train)},
          {"confidence_threshold", b.confidence_threshold}};
}

/// manifest.json + config.ini. Rerunning `idda <command> -c config.ini`
/// reproduces the directory's metrics.
void write_manifest(const fs::path& dir, const std::string& command, const ExperimentSpec& spec, const json& config,
                    const std::vector<std::string>& argv) {
  json m;
  m["command"] = command;
  m["argv"] = argv;
  m["experiment_kind"] = kind_name(spec.kind);
  m["config"] = config;
  m["seeds"] = spec.seeds;
  m["formats"] = {{"manifest", 1},
                  {"checkpoint", {{"magic", "IDDACKPT"}, {"version", kCheckpointVersion}}},
                  {"metrics_csv", kMetricsHeader},
                  {"report", "{metric, value, config, seeds}"}};
  write_json(dir / "manifest.json", m);
  std::ostringstream ini;
  for (const auto& [k, v] : spec.resolved) ini << k << " = " << v << "\n";
  write_text(dir / "config.ini", ini.str());
}

std::uint64_t checkpoint_seed(const fs::path& p) { return read_checkpoint(p).seed; }

IddaModel<float> load_model(const Benchmark& b, const ExperimentSpec& spec, const fs::path& ckpt) {
  const Checkpoint c = read_checkpoint(ckpt);
  IddaModel<float> model =
      build_model<float>(model_for(b, spec.method, spec.lambda.value_or(b.train.lambda)), split_seed(c.seed, "model"));
  SgdState<float> opt(b.train.learning_rate, b.train.momentum);
  restore_checkpoint(c, model, opt);
  return model;
}

// ---------------------------------------------------------------------------

int cmd_train(const ExperimentSpec& spec, const fs::path& dir, const Benchmark& b) {
  json per_seed = json::array();
  std::ofstream metrics(dir / "metrics.csv", std::ios::binary);
  metrics << kMetricsHeader << '\n';
  for (std::uint64_t seed : spec.seeds) {
    RunOptions o;
    if (spec.lambda) o.lambda = *spec.lambda;
    o.checkpoint_interval = b.train.checkpoint_interval;
    if (o.checkpoint_interval > 0) o.checkpoint_dir = dir / "checkpoints" / ("seed" + std::to_string(seed));
    RunOutcome r = run_method(b, spec.method, seed, o);
    TrainConfig tc = b.train;
    tc.method = spec.method;
    tc.seed = seed;
    tc.lambda = r.lambda;
    write_metrics_csv(metrics, r.history, tc, false);
    const fs::path final_ckpt = dir / ("model_seed" + std::to_string(seed) + ".ckpt");
    SgdState<float> opt(tc.learning_rate, tc.momentum);
    save_checkpoint(final_ckpt, r.model, opt, tc.epochs, tc);
    per_seed.push_back({{"seed", seed},
                        {"target_accuracy", r.target_accuracy},
                        {"source_accuracy", r.source_accuracy},
                        {"checkpoint", final_ckpt.filename().string()}});
    std::cout << "seed " << seed << " target_accuracy " << r.target_accuracy << "\n";
  }
  if (!metrics) throw Error("write failure on metrics.csv");
  write_json(dir / "report.json", make_report("target_accuracy", per_seed, config_echo(spec, b), spec.seeds));
  return 0;
}

int cmd_eval(const ExperimentSpec& spec, const fs::path& dir, const Benchmark& b) {
  const std::uint64_t seed = checkpoint_seed(spec.checkpoint);
  const IddaModel<float> model = load_model(b, spec, spec.checkpoint);
  const auto data = b.make_data(seed);
  const EvalResult t = evaluate(model, data->target);
  const EvalResult s = evaluate(model, data->source.x, data->source.labels);
  json value = {{"target_accuracy", t.accuracy},
                {"source_accuracy", s.accuracy},
                {"target_per_class", t.per_class},
                {"target_confusion", t.confusion}};
  write_json(dir / "report.json", make_report("evaluation", value, config_echo(spec, b), {seed}));
  std::cout << "target_accuracy " << t.accuracy << " source_accuracy " << s.accuracy << "\n";
  return 0;
}

int cmd_sweep(const ExperimentSpec& spec, const fs::path& dir, const Benchmark& b) {
  const auto rows = lambda_sweep(b, spec.method, spec.lambdas, spec.seeds, spec.threads);
  std::ostringstream csv;
  csv << "lambda,mean_domain_accuracy,median_domain_accuracy,mean_target_accuracy,median_target_accuracy\n"
      << std::setprecision(9);
  json value = json::array();
  for (const auto& r : rows) {
    csv << r.lambda << ',' << r.mean_domain_accuracy << ',' << r.median_domain_accuracy << ','
        << r.mean_target_accuracy << ',' << r.median_target_accuracy << '\n';
    value.push_back({{"lambda", r.lambda},
                     {"domain_accuracy", r.domain_accuracy},
                     {"target_accuracy", r.target_accuracy},
                     {"mean_domain_accuracy", r.mean_domain_accuracy},
                     {"median_domain_accuracy", r.median_domain_accuracy},
                     {"mean_target_accuracy", r.mean_target_accuracy},
                     {"median_target_accuracy", r.median_target_accuracy}});
  }
  write_text(dir / "sweep.csv", csv.str());
  write_json(dir / "report.json", make_report("lambda_sweep", value, config_echo(spec, b), spec.seeds));
  std::cout << csv.str();
  return 0;
}

void write_records_csv(const fs::path& p, const std::vector<RunRecord>& records) {
  std::ostringstream csv;
  write_records(csv, records);
  write_text(p, csv.str());
}

std::vector<RunRecord> read_records_csv(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot read records " + p.string());
  return read_records(in, p.string());
}

json nemenyi_json(const NemenyiResult& n, double alpha) {
  json ranks = json::object();
  for (std::size_t i = 0; i < n.methods.size(); ++i) ranks[n.methods[i]] = n.mean_ranks[i];
  json pairs = json::array();
  for (const auto& p : n.pairs) {
    pairs.push_back({{"a", p.a}, {"b", p.b}, {"rank_gap", p.rank_gap}, {"significant", p.significant}});
  }
  return {{"mean_ranks", ranks},
          {"cd", n.cd},
          {"alpha", alpha},
          {"k", n.methods.size()},
          {"blocks", n.blocks},
          {"friedman_chi2", n.friedman_chi2},
          {"pairs", pairs}};
}

int cmd_ablate(const ExperimentSpec& spec, const fs::path& dir, const Benchmark& b) {
  const auto records = ablation_suite(b, all_methods(), spec.seeds, spec.threads);
  write_records_csv(dir / "records.csv", records);
  json summary = json::object();
  for (Method m : all_methods()) {
    std::vector<double> acc;
    for (const auto& r : records) {
      if (r.method == method_name(m)) acc.push_back(r.accuracy);
    }
    summary[method_name(m)] = {{"mean", mean(acc)}, {"median", median(acc)}, {"accuracy", acc}};
    std::cout << method_name(m) << " median_target_accuracy " << median(acc) << "\n";
  }
  json value = {{"methods", summary}};
  if (spec.seeds.size() >= 2) value["nemenyi"] = nemenyi_json(friedman_nemenyi(records, spec.alpha), spec.alpha);
  write_json(dir / "report.json", make_report("ablation_suite", value, config_echo(spec, b), spec.seeds));
  return 0;
}

int cmd_analyze(const ExperimentSpec& spec, const fs::path& dir, const Benchmark& b) {
  const std::string& metric = spec.analyze_metric;
  json value;
  std::vector<std::uint64_t> seeds = spec.seeds;
  if (metric == "nemenyi") {
    value = nemenyi_json(friedman_nemenyi(read_records_csv(spec.records), spec.alpha), spec.alpha);
  } else if (metric == "hdh") {
    // Bound chain on the raw input samples of each seed's data.
    value = json::array();
    for (std::uint64_t seed : spec.seeds) {
      const auto data = b.make_data(seed);
      const auto& xs = data->source.x;
      const auto& xt = data->target.x;
      if (xs.rank() != 2) throw Error("analyze hdh: needs a vector-input benchmark");
      const auto family = HypothesisFamily::quantile_grid(xs, xt, spec.grid);
      const HdhReport r = empirical_hdh(xs, xt, family);
      value.push_back({{"seed", seed},
                       {"d_hat", r.d_hat},
                       {"bound", r.bound},
                       {"bound_augmented", r.bound_augmented},
                       {"holds", r.holds},
                       {"holds_augmented", r.holds_augmented},
                       {"disc_contains_classifier_delta", r.disc_contains_classifier_delta}});
    }
  } else {
    const std::uint64_t seed = checkpoint_seed(spec.checkpoint);
    seeds = {seed};
    const IddaModel<float> model = load_model(b, spec, spec.checkpoint);
    const auto data = b.make_data(seed);
    if (metric == "export") {
      const fs::path out = dir / "features.csv";
      export_features(model, data->source, data->target, out, spec.with_target_labels);
      value = {{"path", out.filename().string()},
               {"rows", data->source.size() + data->target.size()},
               {"columns", model.config.feature_dim + 2}};
    } else {
      const auto fs_ = extract_features(model, data->source.x);
      const auto ft = extract_features(model, data->target.x);
      if (metric == "proxy_a") {
        const ProbeResult p = proxy_a_distance(fs_, ft, split_seed(seed, "probe"));
        value = {{"epsilon", p.epsilon}, {"d_A", p.d_a}};
      } else {
        if (!data->target.hidden_labels) throw Error("analyze purity: target has no evaluation labels");
        value = {{"purity", mode_purity(ft, *data->target.hidden_labels, fs_, data->source.labels)}};
      }
    }
  }
  write_json(dir / "report.json", make_report(metric, value, config_echo(spec, b), seeds));
  std::cout << value.dump() << "\n";
  return 0;
}

int cmd_gen_data(const ExperimentSpec& spec, const fs::path& dir, const Benchmark& b) {
  json files = json::array();
  for (std::uint64_t seed : spec.seeds) {
    const auto data = b.make_data(seed);
    NamedTensors t;
    t.emplace("source/x", data->source.x);
    std::vector<float> ys(data->source.labels.begin(), data->source.labels.end());
    t.emplace("source/y", Tensor<float>({ys.size()}, ys));
    t.emplace("target/x", data->target.x);
    if (data->target.hidden_labels) {
      std::vector<float> yt(data->target.hidden_labels->begin(), data->target.hidden_labels->end());
      t.emplace("target/hidden_y", Tensor<float>({yt.size()}, yt));
    }
    t.emplace("meta/seed", encode_u64(seed));
    t.emplace("meta/benchmark", encode_text(b.name));
    const std::string name = "data_seed" + std::to_string(seed) + ".ckpt";
    write_tensor_file(dir / name, t);
    files.push_back({{"seed", seed}, {"file", name}, {"n_source", data->source.size()}, {"n_target", data->target.size()}});
  }
  write_json(dir / "report.json", make_report("gen_data", files, config_echo(spec, b), spec.seeds));
  std::cout << files.dump() << "\n";
  return 0;
}

struct Command {
  const char* name;
  ExperimentKind kind;
  const char* help;
  int (*run)(const ExperimentSpec&, const fs::path&, const Benchmark&);
};

const Command kCommands[] = {
    {"train", ExperimentKind::train, "train one model per seed", cmd_train},
    {"eval", ExperimentKind::evaluate, "evaluate a checkpoint (eval.checkpoint)", cmd_eval},
    {"sweep", ExperimentKind::sweep_lambda, "lambda sensitivity sweep", cmd_sweep},
    {"ablate", ExperimentKind::ablation_suite, "all six methods over the seed list", cmd_ablate},
    {"analyze", ExperimentKind::analyze, "proxy_a | purity | hdh | nemenyi | export (analyze.metric)", cmd_analyze},
    {"gen-data", ExperimentKind::gen_data, "write benchmark data as tensor containers", cmd_gen_data},
};

std::string keys_help() {
  std::ostringstream os;
  os << "\nConfig keys (file `key = value`, or flag --key=value):\n";
  for (const auto& k : config_schema()) {
    os << "  " << std::left << std::setw(30) << k.key << k.help;
    if (!k.choices.empty()) {
      os << " {";
      for (std::size_t i = 0; i < k.choices.size(); ++i) os << (i ? "," : "") << k.choices[i];
      os << "}";
    }
    os << "\n";
  }
  return os.str();
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
    if (c == '"') c = '\'';
  }
  return s;
}

int fail(const char* kind, int code, const std::string& message) {
  std::cerr << "error kind=" << kind << " exit=" << code << " message=\"" << one_line(message) << "\"\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"informative-discriminator domain adaptation toolkit"};
  app.require_subcommand(1);
  app.footer(keys_help());
  std::map<std::string, std::string> config_files;
  for (const auto& c : kCommands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->allow_extras();
    sub->add_option("-c,--config", config_files[c.name], "config file (key = value lines)")->check(CLI::ExistingFile);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", 1, e.what());
  }

  const CLI::App* sub = app.get_subcommands().front();
  const Command* cmd = nullptr;
  for (const auto& c : kCommands) {
    if (sub->get_name() == c.name) cmd = &c;
  }
  ExperimentSpec spec;
  Benchmark bench;
  try {
    std::optional<fs::path> file;
    if (!config_files[cmd->name].empty()) file = config_files[cmd->name];
    std::vector<std::string> flags = sub->remaining();
    flags.push_back(std::string("--experiment.kind=") + kind_name(cmd->kind));
    spec = parse_config(file, flags);
    spec.resolved["experiment.kind"] = kind_name(cmd->kind);
    bench = make_benchmark(spec);
  } catch (const ConfigError& e) {
    return fail("usage", 1, e.what());
  } catch (const std::exception& e) {
    return fail("usage", 1, e.what());
  }

  try {
    const fs::path dir = make_run_dir(spec, cmd->name);
    write_manifest(dir, cmd->name, spec, config_echo(spec, bench), std::vector<std::string>(argv, argv + argc));
    const int rc = cmd->run(spec, dir, bench);
    std::cout << "artifacts " << dir.string() << "\n";
    return rc;
  } catch (const std::exception& e) {
    return fail("runtime", 2, e.what());
  }
}
