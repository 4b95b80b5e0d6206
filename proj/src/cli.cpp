#include "pswa/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>

#include "pswa/analytics.hpp"
#include "pswa/convex.hpp"
#include "pswa/error.hpp"
#include "pswa/harness.hpp"
#include "pswa/surface.hpp"

namespace pswa {

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config, resume;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const TrainingConfig cfg = load_config(a.config);
  const TrainingData data = load_data(cfg);
  RunHooks hooks;
  hooks.on_warning = [&err](const std::string& w) { err << "pswa train: warning: " << w << "\n"; };
  if (!a.quiet)
    hooks.on_epoch = [&out, &cfg](const MetricsRecord& r) {
      out << "epoch " << r.epoch << "/" << cfg.run.epochs << " lr=" << num(r.lr) << " train_loss=" << num(r.train_loss)
          << " train_acc=" << num(r.train_acc) << " test_loss=" << num(r.test_loss)
          << " test_acc=" << num(r.test_acc) << "\n";
    };
  run_training(cfg, data, a.resume, hooks);
  if (!cfg.run.output_dir.empty()) out << "wrote " << cfg.run.output_dir << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeArgs {
  std::string metrics, baseline, window;
  std::vector<double> thresholds;
  double tol = 0.2;
  bool csv = false;
};

// Test accuracy in percent, evaluated epochs only.
struct Series {
  std::vector<int> epochs;
  std::vector<double> acc;
};

Series load_series(const std::string& path) {
  Series s;
  for (const auto& r : read_metrics_csv(path)) {
    if (std::isnan(r.test_acc)) continue;
    s.epochs.push_back(r.epoch);
    s.acc.push_back(100.0 * r.test_acc);
  }
  if (s.acc.empty()) throw UsageError(path + ": no evaluated epochs");
  return s;
}

// "A:B", 1-based inclusive epochs, into a [start, end) index range of `s`.
std::pair<std::size_t, std::size_t> window_range(const std::string& spec, const Series& s) {
  if (spec.empty()) return {0, s.acc.size()};
  const auto colon = spec.find(':');
  int lo = 0, hi = 0;
  const auto parse = [](std::string_view t, int& v) {
    const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
    return r.ec == std::errc() && r.ptr == t.data() + t.size();
  };
  const std::string_view sv(spec);
  if (colon == std::string::npos || !parse(sv.substr(0, colon), lo) || !parse(sv.substr(colon + 1), hi) || lo < 1 ||
      hi < lo)
    throw UsageError("--window expects A:B with 1 <= A <= B, got '" + spec + "'");
  const auto first = std::lower_bound(s.epochs.begin(), s.epochs.end(), lo);
  const auto last = std::upper_bound(s.epochs.begin(), s.epochs.end(), hi);
  if (first == last) throw UsageError("--window " + spec + " contains no evaluated epoch");
  return {static_cast<std::size_t>(first - s.epochs.begin()), static_cast<std::size_t>(last - s.epochs.begin())};
}

int cmd_analyze(const AnalyzeArgs& a, std::ostream& out) {
  const Series s = load_series(a.metrics);
  const auto [start, end] = window_range(a.window, s);
  std::vector<std::pair<std::string, std::string>> rows;

  for (double t : a.thresholds) {
    const auto idx = threshold_epoch(s.acc, t);
    rows.emplace_back("threshold_epoch@" + num(t), idx ? std::to_string(s.epochs[*idx]) : "never");
  }
  const std::span<const double> win(s.acc.data() + start, end - start);
  const auto ws = window_stats(s.acc, start, end);
  const std::string label = "[" + std::to_string(s.epochs[start]) + "," + std::to_string(s.epochs[end - 1]) + "]";
  rows.emplace_back("window_mean" + label, num(ws.mean));
  rows.emplace_back("window_sd" + label, num(ws.sd));
  const auto ms = monotonic_stats(win, a.tol);
  rows.emplace_back("improve_frac" + label, num(ms.improve_frac));
  rows.emplace_back("stable_frac" + label, num(ms.stable_frac));
  rows.emplace_back("stable_vs_max_frac" + label, num(ms.stable_vs_max_frac));
  if (!a.baseline.empty()) {
    const Series b = load_series(a.baseline);
    if (b.epochs != s.epochs)
      throw UsageError("--baseline has " + std::to_string(b.acc.size()) + " evaluated epochs, metrics has " +
                       std::to_string(s.acc.size()) + " (the epoch lists must match)");
    rows.emplace_back("mean_improvement" + label, num(compare_runs(s.acc, b.acc, start, end)));
  }

  if (a.csv) {
    out << "metric,value\n";
    for (const auto& [k, v] : rows) out << k << "," << v << "\n";
  } else {
    std::size_t w = 0;
    for (const auto& r : rows) w = std::max(w, r.first.size());
    for (const auto& [k, v] : rows) out << k << std::string(w + 2 - k.size(), ' ') << v << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// convex-check

struct ConvexArgs {
  double D = 2.0, G = 1.5;
  std::size_t T = 500, E = 5, runs = 30, dim = 10;
  std::uint64_t seed = 0;
};

int cmd_convex_check(const ConvexArgs& a, std::ostream& out) {
  const auto problem = noisy_quadratic(a.dim, a.D, a.G, a.seed);
  const auto check = verify_stability(problem, a.T, a.E, a.runs, a.seed);
  out << "epoch,sgd_gap,thm1_bound,pswa_gap,thm2_bound,flags\n";
  for (const auto& e : check.epochs) {
    std::string flags = "n/a";
    if (e.applicable) {
      flags.clear();
      if (!e.sgd_ok) flags += "sgd_exceeds_thm1;";
      if (!e.pswa_ok) flags += "pswa_exceeds_thm2;";
      if (flags.empty()) flags = "ok";
      else flags.pop_back();
    }
    out << e.epoch << "," << num(e.sgd_gap) << "," << (e.thm1 ? num(*e.thm1) : "n/a") << "," << num(e.pswa_gap)
        << "," << num(e.thm2) << "," << flags << "\n";
  }
  out << "# final_gap sgd=" << num(check.sgd.final_gap) << " pswa=" << num(check.pswa.final_gap) << "\n";
  out << "# stability S_sgd=" << num(check.sgd.S) << " S_pswa=" << num(check.pswa.S)
      << (check.stability_ok ? " ok" : " FAIL") << "\n";
  out << "# bounds " << (check.bounds_ok ? "ok" : "FAIL") << "\n";
  return check.all_ok() ? kExitOk : kExitFlagFailure;
}

// ---------------------------------------------------------------------------
// surface

struct SurfaceArgs {
  std::string config, checkpoint, checkpoint_b, output;
  std::size_t points = 41;
  double min = -1.0, max = 1.0;
  std::uint64_t seed = 0;
  std::size_t batch_size = 0;
};

int cmd_surface(const SurfaceArgs& a, std::ostream& out) {
  const TrainingConfig cfg = load_config(a.config);
  const TrainingData data = load_data(cfg);
  const std::size_t bs = a.batch_size ? a.batch_size : cfg.run.batch_size;
  const auto grid = lambda_grid(a.points, a.min, a.max);

  Model model = model_from_checkpoint(cfg.model, load_checkpoint(a.checkpoint));
  ScanResult r;
  if (a.checkpoint_b.empty()) {
    const auto d = filter_normalize(random_direction(model.params(), a.seed), model.params());
    r = scan_1d(model, data.train, data.test, d, grid, bs);
  } else {
    Model other = model_from_checkpoint(cfg.model, load_checkpoint(a.checkpoint_b));
    r = interpolate(model, other, data.train, data.test, grid, bs);
  }

  std::ofstream file;
  if (!a.output.empty()) {
    file.open(a.output);
    if (!file) throw Error("cannot write " + a.output);
  }
  std::ostream& dst = a.output.empty() ? out : file;
  dst << "lambda,train_loss,train_acc,test_loss,test_acc\n";
  for (std::size_t i = 0; i < r.lambdas.size(); ++i)
    dst << num(r.lambdas[i]) << "," << num(r.train_loss[i]) << "," << num(r.train_acc[i]) << ","
        << num(r.test_loss[i]) << "," << num(r.test_acc[i]) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// bench-overhead

struct BenchArgs {
  std::string config;
  std::vector<std::string> variants;  // LABEL=JSON sampler section
  int repeats = 10;
};

int cmd_bench_overhead(const BenchArgs& a, std::ostream& out) {
  const TrainingConfig base = load_config(a.config);
  nlohmann::json doc = to_json(base);
  doc["run"]["output_dir"] = "";

  std::vector<TrainingConfig> configs;
  std::vector<std::string> labels;
  bool has_none = false;
  for (const auto& v : a.variants) {
    const auto eq = v.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--variant expects LABEL=JSON, got '" + v + "'");
    nlohmann::json sampler;
    try {
      sampler = nlohmann::json::parse(v.substr(eq + 1));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("--variant " + v.substr(0, eq) + ": " + e.what());
    }
    doc["sampler"] = sampler;
    configs.push_back(parse_config(doc));
    labels.push_back(v.substr(0, eq));
    has_none = has_none || configs.back().sampler.strategy == Strategy::none;
  }
  if (!has_none) {
    doc["sampler"] = nlohmann::json{{"type", "none"}};
    configs.insert(configs.begin(), parse_config(doc));
    labels.insert(labels.begin(), "none");
  }

  const TrainingData data = load_data(base);
  const auto report = measure_overhead(configs, labels, a.repeats, data);
  out << "label,mean_epoch_s,sd_epoch_s,median_epoch_s,ratio,overhead_pct,sample_s,recal_s\n";
  for (const auto& r : report.rows)
    out << r.label << "," << num(r.mean_epoch_s) << "," << num(r.sd_epoch_s) << "," << num(r.median_epoch_s) << ","
        << num(r.ratio) << "," << num(100.0 * (r.ratio - 1.0)) << "," << num(r.sample_s) << "," << num(r.recal_s)
        << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Periodic weight-sampling training, analytics and verification tools", "pswa"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a model from a JSON config");
  t->add_option("--config", train.config, "Config file")->required()->check(CLI::ExistingFile);
  t->add_option("--resume", train.resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
  t->add_flag("--quiet", train.quiet, "Suppress per-epoch lines");

  AnalyzeArgs analyze;
  auto* an = app.add_subcommand("analyze", "Report threshold epochs, volatility and monotonicity of test accuracy");
  an->add_option("--metrics", analyze.metrics, "metrics.csv of a run")->required()->check(CLI::ExistingFile);
  an->add_option("--threshold", analyze.thresholds, "Accuracy thresholds in percent");
  an->add_option("--window", analyze.window, "Epoch window A:B (1-based, inclusive); all epochs when empty");
  an->add_option("--tol", analyze.tol, "Stability tolerance in accuracy points");
  an->add_option("--baseline", analyze.baseline, "metrics.csv to compare against")->check(CLI::ExistingFile);
  an->add_flag("--csv", analyze.csv, "Emit metric,value CSV");

  ConvexArgs convex;
  auto* cx = app.add_subcommand("convex-check", "Check the convex convergence bounds on a noisy quadratic");
  cx->add_option("--D", convex.D, "Domain diameter");
  cx->add_option("--G", convex.G, "Gradient second-moment bound (needs G >= D/2)");
  cx->add_option("--T", convex.T, "Iterations per epoch");
  cx->add_option("--E", convex.E, "Epochs");
  cx->add_option("--runs", convex.runs, "Monte-Carlo runs (>= 10)");
  cx->add_option("--dim", convex.dim, "Problem dimension");
  cx->add_option("--seed", convex.seed, "Seed");

  SurfaceArgs surface;
  auto* sf = app.add_subcommand("surface", "1-D loss surface scan or interpolation between checkpoints");
  sf->add_option("--config", surface.config, "Config naming the model and data")->required()->check(CLI::ExistingFile);
  sf->add_option("--checkpoint", surface.checkpoint, "Checkpoint A")->required()->check(CLI::ExistingFile);
  sf->add_option("--checkpoint-b", surface.checkpoint_b, "Checkpoint B; interpolates A to B when given")
      ->check(CLI::ExistingFile);
  sf->add_option("--points", surface.points, "Grid points");
  sf->add_option("--min", surface.min, "Smallest lambda");
  sf->add_option("--max", surface.max, "Largest lambda");
  sf->add_option("--seed", surface.seed, "Direction seed");
  sf->add_option("--batch-size", surface.batch_size, "Evaluation batch size; 0 uses run.batch_size");
  sf->add_option("--output", surface.output, "Output CSV; stdout when empty");

  BenchArgs bench;
  auto* bo = app.add_subcommand("bench-overhead", "Per-epoch time of sampler variants against strategy none");
  bo->add_option("--config", bench.config, "Base config")->required()->check(CLI::ExistingFile);
  bo->add_option("--variant", bench.variants, "LABEL=JSON sampler section, e.g. 'pswa={\"type\":\"pswa\"}'");
  bo->add_option("--repeats", bench.repeats, "Repeats per variant")->check(CLI::PositiveNumber);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (*t) return cmd_train(train, out, err);
    if (*an) return cmd_analyze(analyze, out);
    if (*cx) return cmd_convex_check(convex, out);
    if (*sf) return cmd_surface(surface, out);
    return cmd_bench_overhead(bench, out);
  } catch (const ConfigError& e) {
    err << "pswa " << name << ": config error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const UsageError& e) {
    err << "pswa " << name << ": usage error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const FormatError& e) {
    err << "pswa " << name << ": format error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const NumericError& e) {
    err << "pswa " << name << ": numeric error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "pswa " << name << ": error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace pswa
