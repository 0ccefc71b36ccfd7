// Acceptance run: one PASS/FAIL line per criterion, details on the lines
// that follow. Exit status is non-zero when any criterion fails.
#include <chrono>
#include <cstring>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

#include "support.hpp"

using namespace idda;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& title, const std::function<Verdict()>& check) {
  const auto t0 = Clock::now();
  Verdict v;
  try {
    v = check();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  failures += !v.pass;
  std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << title << "\n";
  std::cout << "     " << v.detail << " [" << std::fixed << std::setprecision(1) << secs << "s]\n"
            << std::defaultfloat << std::flush;
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

std::string list(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + fmt(v[i]);
  return s + "]";
}

ParamSet<float> shared_layers(const IddaModel<float>& m) {
  ParamSet<float> out;
  for (const auto& [name, t] : m.params)
    if (name[0] != 'd') out.emplace(name, t);
  return out;
}

// ---------------------------------------------------------------------------

Verdict gradients() {
  const auto t0 = Clock::now();
  std::size_t graphs = 0, failed = 0;
  double worst = 0.0;
  std::string worst_op;
  for (OpKind op : idda::testing::differentiable_ops()) {
    Rng rng(2024, op_name(op));
    for (int trial = 0; trial < 12; ++trial) {
      auto rg = idda::testing::random_graph(op, rng);
      const auto rep = gradient_check(rg.build, rg.params, 1e-4);
      ++graphs;
      failed += !rep.passed;
      if (rep.max_rel_error > worst) {
        worst = rep.max_rel_error;
        worst_op = op_name(op);
      }
    }
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  return {failed == 0 && graphs >= 100 && secs < 60.0,
          std::to_string(graphs) + " graphs over " + std::to_string(idda::testing::differentiable_ops().size()) +
              " ops, " + std::to_string(failed) + " failed, max rel error " + fmt(worst, 8) + " (" + worst_op +
              "), " + fmt(secs, 1) + "s"};
}

Verdict reversal() {
  std::size_t mismatches = 0, checked = 0;
  for (double lambda : {0.0, 0.4, 1.0, 2.0}) {
    Rng rng(7, "grl", static_cast<std::uint64_t>(lambda * 10));
    const auto x = idda::testing::random_tensor({6, 4}, rng);
    const auto up = idda::testing::random_tensor({6, 4}, rng);
    const auto fwd = grad_reverse_apply(x, lambda);
    mismatches += std::memcmp(fwd.data(), x.data(), x.size() * sizeof(double)) != 0;
    const auto back = grad_reverse_backward(up, lambda);
    for (std::size_t i = 0; i < up.size(); ++i) mismatches += back[i] != -(lambda * up[i]);

    ParamSet<double> p{{"x", x}, {"w", idda::testing::random_tensor({4, 3}, rng)}};
    auto loss_of = [&](Graph<double>& g, bool reverse) {
      Var h = g.parameter("x", p.at("x"));
      if (reverse) h = g.grad_reverse(h, lambda);
      return g.softmax_cross_entropy(g.matmul(h, g.parameter("w", p.at("w"))), {0, 1, 2, 0, 1, 2});
    };
    Graph<double> plain, rev;
    const Var lp = loss_of(plain, false), lr = loss_of(rev, true);
    mismatches += rev.value(lr)[0] != plain.value(lp)[0];
    const auto gp = plain.backward(lp), gr = rev.backward(lr);
    for (std::size_t i = 0; i < x.size(); ++i) mismatches += gr.at("x")[i] != -(lambda * gp.at("x")[i]);
    checked += 2 * x.size() + 1 + up.size();
  }
  return {mismatches == 0, std::to_string(checked) + " values over lambda {0, 0.4, 1, 2}, " +
                               std::to_string(mismatches) + " not bitwise equal"};
}

Verdict zero_lambda() {
  const Benchmark b = gaussian_benchmark();
  auto trajectory = [&](Method m) {
    std::vector<ParamSet<float>> snaps;
    RunOptions o;
    o.lambda = 0.0;
    o.epochs = 3;
    o.hooks.before_step = [&](const IddaModel<float>& model, const BatchData&) { snaps.push_back(shared_layers(model)); };
    const RunOutcome r = run_method(b, m, 0, o);
    snaps.push_back(shared_layers(r.model));
    return snaps;
  };
  const auto a = trajectory(Method::informative), s = trajectory(Method::source_only);
  if (a.size() != s.size()) return {false, "trajectory lengths differ"};
  std::size_t diverged = 0;
  for (std::size_t k = 0; k < a.size(); ++k)
    for (const auto& [name, t] : a[k])
      diverged += std::memcmp(t.data(), s[k].at(name).data(), t.size() * sizeof(float)) != 0;
  return {diverged == 0, std::to_string(a.size()) + " snapshots of f/c parameters over 3 epochs, " +
                             std::to_string(diverged) + " differing tensors"};
}

Verdict loss_decomposition() {
  const Benchmark b = gaussian_benchmark();
  std::size_t steps = 0, bad = 0;
  double worst = 0.0;
  for (Method m : {Method::informative, Method::binary}) {
    std::vector<idda::testing::LossParts> expect;
    RunOptions o;
    o.epochs = 5;
    o.hooks.before_step = [&](const IddaModel<float>& model, const BatchData& bd) {
      expect.push_back(idda::testing::reference_losses(model, bd, m, b.train.lambda));
    };
    const RunOutcome r = run_method(b, m, 1, o);
    if (expect.size() != r.history.steps.size()) return {false, "step count mismatch"};
    for (std::size_t i = 0; i < expect.size(); ++i) {
      const double e = std::abs(r.history.steps[i].total - expect[i].total);
      worst = std::max(worst, e);
      bad += !(e <= 1e-5);
      ++steps;
    }
  }
  return {bad == 0 && steps > 0, std::to_string(steps) + " logged steps (informative, binary), max |total - reference| " +
                                     fmt(worst, 9) + ", " + std::to_string(bad) + " above 1e-5"};
}

// Gaussian runs shared by criteria 6, 7, 10 and 11.
struct GaussianRuns {
  Benchmark bench = gaussian_benchmark();
  std::vector<RunRecord> records;
  std::map<std::string, std::vector<RunOutcome>> by_method;  // index = seed
};

GaussianRuns& gaussian_runs() {
  static GaussianRuns g = [] {
    GaussianRuns r;
    std::vector<std::uint64_t> seeds(30);
    std::iota(seeds.begin(), seeds.end(), 0);
    std::vector<RunOutcome> outcomes;
    r.records = ablation_suite(r.bench, {Method::source_only, Method::binary, Method::informative}, seeds, 1, &outcomes);
    const std::vector<std::uint64_t> five{0, 1, 2, 3, 4};
    std::vector<RunOutcome> two_n;
    ablation_suite(r.bench, {Method::two_n}, five, 1, &two_n);
    for (auto& o : outcomes) r.by_method[method_name(o.method)].push_back(std::move(o));
    for (auto& o : two_n) r.by_method["two_n"].push_back(std::move(o));
    return r;
  }();
  return g;
}

double median_proxy_a(const std::vector<RunOutcome>& runs, const Benchmark& b, std::size_t n,
                      std::vector<double>* each = nullptr) {
  std::vector<double> d;
  for (std::size_t i = 0; i < n; ++i) {
    const auto data = b.make_data(runs[i].seed);
    const auto fs_ = extract_features(runs[i].model, data->source.x);
    const auto ft = extract_features(runs[i].model, data->target.x);
    d.push_back(proxy_a_distance(fs_, ft, split_seed(runs[i].seed, "probe")).d_a);
  }
  if (each) *each = d;
  return median(d);
}

Verdict nemenyi() {
  const double cd = nemenyi_cd(3, 30, 0.05);
  auto& g = gaussian_runs();
  const NemenyiResult n = friedman_nemenyi(g.records, 0.05);
  const double inf = n.mean_rank("informative"), bin = n.mean_rank("binary"), src = n.mean_rank("source_only");
  const bool cd_ok = std::abs(cd - 0.6051) <= 5e-4 && std::abs(n.cd - cd) < 1e-12 && n.blocks == 30;
  const bool best = inf < bin && inf < src;
  const bool gap = src - inf > n.cd;
  return {cd_ok && best && gap, "CD(3, 30, 0.05) = " + fmt(cd, 5) + "; mean ranks informative " + fmt(inf, 3) +
                                    ", binary " + fmt(bin, 3) + ", source_only " + fmt(src, 3) +
                                    "; source_only - informative = " + fmt(src - inf, 3)};
}

Verdict proxy_a_gaussian() {
  auto& g = gaussian_runs();
  std::vector<double> inf, src;
  const double mi = median_proxy_a(g.by_method["informative"], g.bench, 5, &inf);
  const double ms = median_proxy_a(g.by_method["source_only"], g.bench, 5, &src);
  return {mi < ms, "median d_A informative " + fmt(mi) + " " + list(inf) + " vs source_only " + fmt(ms) + " " + list(src)};
}

Verdict lambda_u_curve() {
  const Benchmark b = gaussian_benchmark();
  const auto rows = lambda_sweep(b, Method::informative, {0.1, 1.0, 2.0}, {0, 1, 2, 3, 4});
  const double a = rows[0].median_domain_accuracy, m = rows[1].median_domain_accuracy, c = rows[2].median_domain_accuracy;
  return {m < a && m < c, "median held-out domain accuracy: lambda 0.1 -> " + fmt(a) + ", 1 -> " + fmt(m) +
                              ", 2 -> " + fmt(c)};
}

Verdict hdh_chain() {
  Rng rng(99, "hdh");
  std::size_t violations = 0, missing_containment = 0;
  const std::size_t trials = 1000;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const std::size_t ns = 2 + rng.below(9), nt = 2 + rng.below(9), d = 1 + rng.below(2);
    const auto s = idda::testing::random_tensor({ns, d}, rng);
    auto t = idda::testing::random_tensor({nt, d}, rng);
    const double shift = rng.uniform(-2.0, 2.0);
    for (std::size_t i = 0; i < nt; ++i) t[i * d] += shift;
    const auto family = HypothesisFamily::quantile_grid(s, t, 1 + rng.below(4));
    const HdhReport r = empirical_hdh(s, t, family);
    missing_containment += !r.disc_contains_classifier_delta;
    violations += !(r.holds && r.holds_augmented);
  }
  return {violations == 0 && missing_containment == 0,
          std::to_string(trials) + " random instances, " + std::to_string(violations) + " bound violations"};
}

Verdict purity() {
  auto& g = gaussian_runs();
  std::size_t wins = 0;
  std::vector<double> pi, pb;
  for (std::size_t seed = 0; seed < 10; ++seed) {
    const auto data = g.bench.make_data(seed);
    auto purity_of = [&](const RunOutcome& r) {
      return mode_purity(extract_features(r.model, data->target.x), *data->target.hidden_labels,
                         extract_features(r.model, data->source.x), data->source.labels);
    };
    pi.push_back(purity_of(g.by_method["informative"][seed]));
    pb.push_back(purity_of(g.by_method["binary"][seed]));
    wins += pi.back() >= pb.back();
  }
  return {wins >= 8, std::to_string(wins) + "/10 seeds informative >= binary; informative " + list(pi) + ", binary " +
                         list(pb)};
}

Verdict two_n() {
  auto& g = gaussian_runs();
  std::vector<double> inf, tn;
  for (std::size_t i = 0; i < 5; ++i) {
    inf.push_back(g.by_method["informative"][i].target_accuracy);
    tn.push_back(g.by_method["two_n"][i].target_accuracy);
  }
  return {median(inf) >= median(tn), "median target accuracy informative " + fmt(median(inf)) + " " + list(inf) +
                                         " vs two_n " + fmt(median(tn)) + " " + list(tn)};
}

Verdict persistence() {
  const Benchmark b = gaussian_benchmark();
  const auto data = b.make_data(21);
  const auto dir = idda::testing::scratch_dir("acceptance_resume");
  TrainConfig cfg = b.train;
  cfg.method = Method::informative;
  cfg.seed = 21;
  cfg.epochs = 6;
  cfg.checkpoint_interval = 3;
  cfg.checkpoint_dir = dir / "full";
  const ModelConfig mc = model_for(b, Method::informative, cfg.lambda);
  IddaModel<float> full = build_model<float>(mc, split_seed(21, "model"));
  train(full, *data, cfg);
  IddaModel<float> resumed = build_model<float>(mc, 0);
  TrainConfig rc = cfg;
  rc.checkpoint_dir = dir / "resumed";
  train(resumed, *data, rc, {}, read_checkpoint(cfg.checkpoint_dir / "epoch_3.ckpt"));
  std::size_t differing = 0;
  for (const auto& [name, t] : full.params)
    differing += std::memcmp(t.data(), resumed.params.at(name).data(), t.size() * sizeof(float)) != 0;
  const bool ckpt_same =
      detail::read_all(cfg.checkpoint_dir / "epoch_6.ckpt") == detail::read_all(rc.checkpoint_dir / "epoch_6.ckpt");
  fs::remove_all(dir);

  const auto images = idda::testing::mnist_images(), labels = idda::testing::mnist_labels();
  const auto ib = detail::read_all(images), lb = detail::read_all(labels);
  const bool idx_same =
      serialize_idx_images(parse_idx_images(ib)) == ib && serialize_idx_labels(parse_idx_labels(lb)) == lb;
  return {differing == 0 && ckpt_same && idx_same,
          "resume at epoch 3 of 6: " + std::to_string(differing) + " differing tensors, final checkpoint " +
              (ckpt_same ? "byte-identical" : "differs") + "; IDX round trip of " + images.filename().string() + " (" +
              std::to_string(ib.size()) + " bytes) and labels " + (idx_same ? "byte-exact" : "differs")};
}

// Digits runs shared by criteria 5 and 6.
struct DigitsRuns {
  Benchmark bench;
  std::map<std::string, std::vector<RunOutcome>> by_method;
  std::string error;
};

DigitsRuns& digits_runs() {
  static DigitsRuns g = [] {
    DigitsRuns r;
    DigitsOptions opt;
    opt.images = idda::testing::mnist_images();
    opt.labels = idda::testing::mnist_labels();
    r.bench = digits_benchmark(opt);
    for (Method m : {Method::source_only, Method::binary, Method::informative}) {
      for (std::uint64_t seed = 0; seed < 5; ++seed) {
        try {
          r.by_method[method_name(m)].push_back(run_method(r.bench, m, seed));
        } catch (const NumericError& e) {
          r.error += std::string(method_name(m)) + " seed " + std::to_string(seed) + ": " + e.what() + "; ";
        }
      }
    }
    return r;
  }();
  return g;
}

Verdict digits_ordering() {
  auto& g = digits_runs();
  std::map<std::string, std::vector<double>> acc;
  for (const char* m : {"source_only", "binary", "informative"})
    for (const auto& r : g.by_method[m]) acc[m].push_back(r.target_accuracy);
  std::string detail;
  for (const char* m : {"informative", "binary", "source_only"}) {
    detail += std::string(m) + " " + (acc[m].empty() ? "n/a" : fmt(median(acc[m]))) + " " + list(acc[m]) + "; ";
  }
  if (!g.error.empty()) return {false, detail + "non-finite training: " + g.error};
  const double i = median(acc["informative"]), b = median(acc["binary"]), s = median(acc["source_only"]);
  return {i > b && b > s && i - b >= 0.02 && b - s >= 0.10, detail + "gaps " + fmt(i - b) + " / " + fmt(b - s)};
}

Verdict proxy_a_digits() {
  auto& g = digits_runs();
  auto& inf = g.by_method["informative"];
  auto& src = g.by_method["source_only"];
  if (inf.size() < 5 || src.size() < 5) return {false, "missing runs: " + g.error};
  std::vector<double> di, ds;
  const double mi = median_proxy_a(inf, g.bench, 5, &di), ms = median_proxy_a(src, g.bench, 5, &ds);
  return {mi < ms, "median d_A informative " + fmt(mi) + " " + list(di) + " vs source_only " + fmt(ms) + " " + list(ds)};
}

}  // namespace

int main() {
  tune_allocator();
  const auto t0 = Clock::now();
  report(1, "gradient correctness on random graphs", gradients);
  report(2, "gradient reversal contract", reversal);
  report(3, "lambda = 0 matches source-only training bitwise", zero_lambda);
  report(4, "logged total loss matches the reference decomposition", loss_decomposition);
  report(5, "MNIST -> MNIST-M ordering", digits_ordering);
  report(6, "proxy A-distance reduction, synthetic and digits", [] {
    const Verdict a = proxy_a_gaussian();
    Verdict b;
    try {
      b = proxy_a_digits();
    } catch (const std::exception& e) {
      b = {false, std::string("exception: ") + e.what()};
    }
    return Verdict{a.pass && b.pass, "synthetic: " + a.detail + (a.pass ? " (ok)" : " (fails)") + "\n     digits: " +
                                         b.detail + (b.pass ? " (ok)" : " (fails)")};
  });
  report(7, "critical difference and synthetic mean ranks", nemenyi);
  report(8, "lambda U-curve of held-out domain accuracy", lambda_u_curve);
  report(9, "H-delta-H bound chain", hdh_chain);
  report(10, "mode preservation", purity);
  report(11, "informative >= two_n", two_n);
  report(12, "checkpoint resume and IDX round trip", persistence);
  std::cout << failures << " failing check(s), " << std::fixed << std::setprecision(0)
            << std::chrono::duration<double>(Clock::now() - t0).count() << "s total\n";
  return failures == 0 ? 0 : 1;
}
