#include "pswa/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>

#include "pswa/error.hpp"

namespace pswa {

namespace fs = std::filesystem;

namespace {

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

bool parse_double(std::string_view s, double& out) {
  if (s == "nan") {
    out = std::nan("");
    return true;
  }
  if (s == "inf" || s == "-inf") {
    out = s[0] == '-' ? -INFINITY : INFINITY;
    return true;
  }
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw Error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

// Per-channel (dimension 1) mean and population SD over every other axis.
void standardize_from_train(TrainingData& d) {
  const auto& shape = d.train.inputs.shape();
  const std::size_t n = shape[0], c = shape[1];
  const std::size_t inner = d.train.inputs.size() / (n * c);
  std::vector<double> mean(c, 0.0), sd(c, 0.0);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t k = 0; k < inner; ++k) mean[ch] += d.train.inputs[(s * c + ch) * inner + k];
  for (auto& m : mean) m /= static_cast<double>(n * inner);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t k = 0; k < inner; ++k) {
        const double x = d.train.inputs[(s * c + ch) * inner + k] - mean[ch];
        sd[ch] += x * x;
      }
  for (auto& v : sd) v = std::max(std::sqrt(v / static_cast<double>(n * inner)), 1e-12);
  standardize_channels(d.train, mean, sd);
  standardize_channels(d.test, mean, sd);
}

const std::string kParam = "param/", kOptim = "optim/", kSampler = "sampler/", kEpoch = "meta/epoch";

std::vector<NamedTensor> strip_prefix(const Checkpoint& ckpt, const std::string& prefix) {
  std::vector<NamedTensor> out;
  for (const auto& t : ckpt.tensors)
    if (t.name.rfind(prefix, 0) == 0) out.push_back({t.name.substr(prefix.size()), t.value});
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Metrics CSV

std::string format_metrics_row(const MetricsRecord& r) {
  std::string s = std::to_string(r.epoch);
  for (double v : {r.train_loss, r.train_acc, r.test_loss, r.test_acc, r.lr, r.t_backprop_s, r.t_sample_s,
                   r.t_recal_s, r.t_total_s}) {
    s += ',';
    s += format_double(v);
  }
  return s;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& rows) {
  std::string text = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) text += format_metrics_row(r) + "\n";
  write_text(path, text);
}

std::vector<MetricsRecord> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read metrics file " + path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": empty metrics file", 1, FormatError::Unit::line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv(line);
  std::map<std::string, std::size_t> where;
  for (std::size_t i = 0; i < header.size(); ++i) where[std::string(header[i])] = i;
  std::vector<std::size_t> index;
  for (auto col : split_csv(kMetricsHeader)) {
    auto it = where.find(std::string(col));
    if (it == where.end())
      throw FormatError(path + ": missing column '" + std::string(col) + "'", 1, FormatError::Unit::line);
    index.push_back(it->second);
  }

  std::vector<MetricsRecord> rows;
  std::uint64_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != header.size())
      throw FormatError(path + ": expected " + std::to_string(header.size()) + " fields, got " +
                            std::to_string(fields.size()),
                        line_no, FormatError::Unit::line);
    double v[10];
    for (std::size_t c = 0; c < 10; ++c)
      if (!parse_double(fields[index[c]], v[c]))
        throw FormatError(path + ": bad number '" + std::string(fields[index[c]]) + "' in column " +
                              std::string(split_csv(kMetricsHeader)[c]),
                          line_no, FormatError::Unit::line);
    if (v[0] != std::floor(v[0]) || v[0] < 0)
      throw FormatError(path + ": epoch must be a non-negative integer", line_no, FormatError::Unit::line);
    rows.push_back({static_cast<int>(v[0]), v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9]});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Evaluation and data

EvalResult evaluate(Model& model, const Dataset& data, std::size_t batch_size) {
  if (data.size() == 0) throw UsageError("evaluate: empty dataset");
  if (batch_size == 0) throw UsageError("evaluate: batch_size must be > 0");
  double loss = 0.0, correct = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t end = std::min(data.size(), begin + batch_size);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const auto b = gather(data, idx);
    const auto fwd = model.forward(b.inputs, BnMode::eval);
    const double n = static_cast<double>(idx.size());
    loss += cross_entropy(fwd.logits, b.labels).loss * n;
    correct += accuracy(fwd.logits, b.labels) * n;
  }
  const double total = static_cast<double>(data.size());
  return {loss / total, correct / total};
}

TrainingData load_data(const TrainingConfig& cfg) {
  const auto& d = cfg.data;
  TrainingData out;
  switch (d.source) {
    case DataKind::synthetic: {
      auto all = make_synthetic(derive_seed(cfg.run.seed, 0xda7a), d.train_size + d.test_size, d.dims, d.classes,
                                d.separation);
      Shape shape = cfg.model.input_shape;
      shape.insert(shape.begin(), all.size());
      all.inputs = all.inputs.reshaped(shape);
      out.train = slice(all, 0, d.train_size);
      out.test = slice(all, d.train_size, all.size());
      break;
    }
    case DataKind::idx:
      out.train = load_idx(d.train_images, d.train_labels);
      out.test = load_idx(d.test_images, d.test_labels);
      break;
    case DataKind::cifar10:
      out.train = load_cifar10_bin(d.train_files);
      out.test = load_cifar10_bin(d.test_files);
      break;
  }
  if (d.train_limit && d.train_limit < out.train.size()) out.train = slice(out.train, 0, d.train_limit);
  if (d.test_limit && d.test_limit < out.test.size()) out.test = slice(out.test, 0, d.test_limit);
  if (out.train.sample_shape() != cfg.model.input_shape)
    throw ConfigError("data sample shape " + shape_string(out.train.sample_shape()) +
                      " does not match model.input_shape " + shape_string(cfg.model.input_shape));
  if (d.standardize) standardize_from_train(out);
  return out;
}

// ---------------------------------------------------------------------------
// Training

Checkpoint make_checkpoint(const TrainingConfig& cfg, const ParameterSet& params, const Optimizer& opt,
                           const Sampler& sampler, int epoch) {
  Checkpoint ckpt;
  for (const auto& e : params) ckpt.tensors.push_back({kParam + e.name, e.weight});
  for (auto& t : opt.export_state()) ckpt.tensors.push_back({kOptim + t.name, std::move(t.value)});
  for (auto& t : sampler.export_state()) ckpt.tensors.push_back({kSampler + t.name, std::move(t.value)});
  ckpt.tensors.push_back({kEpoch, Tensor::scalar(static_cast<float>(epoch))});
  ckpt.config_hash = config_hash(cfg);
  return ckpt;
}

Model model_from_checkpoint(const ModelSpec& spec, const Checkpoint& ckpt) {
  Model model(spec, 0);
  for (auto& e : model.params()) {
    const Tensor* t = ckpt.find(kParam + e.name);
    if (!t) throw UsageError("checkpoint has no parameter '" + e.name + "' for this model");
    if (t->shape() != e.weight.shape())
      throw UsageError("checkpoint parameter '" + e.name + "' has shape " + shape_string(t->shape()) +
                       ", model expects " + shape_string(e.weight.shape()));
    e.weight = *t;
  }
  std::size_t stored = 0;
  for (const auto& t : ckpt.tensors) stored += t.name.rfind(kParam, 0) == 0;
  if (stored != model.params().size()) throw UsageError("checkpoint has parameters this model lacks");
  return model;
}

RunResult run_training(const TrainingConfig& cfg, const TrainingData& data, const std::string& resume,
                       const RunHooks& hooks) {
  validate(cfg);
  validate(data.train);
  validate(data.test);
  const auto& run = cfg.run;
  const BatchPlan plan{run.batch_size, derive_seed(run.seed, 0xba7c), run.drop_last};
  if (run.drop_last && run.batch_size > data.train.size())
    throw ConfigError("run.batch_size " + std::to_string(run.batch_size) + " with drop_last leaves no batches for " +
                      std::to_string(data.train.size()) + " samples");

  Model model(cfg.model, run.seed);
  if (model.class_count() < static_cast<std::size_t>(data.train.class_count))
    throw ConfigError("model has " + std::to_string(model.class_count()) + " outputs but the data has " +
                      std::to_string(data.train.class_count) + " classes");
  Optimizer opt = make_optimizer(cfg.optimizer, model.params());
  Sampler sampler(cfg.sampler, model.params(), derive_seed(run.seed, 0x5a3b));
  if (hooks.on_sampler_event) sampler.observer = hooks.on_sampler_event;

  RunResult result;
  int start = 1;
  if (!resume.empty()) {
    const Checkpoint ckpt = load_checkpoint(resume);
    if (ckpt.config_hash != config_hash(cfg) && hooks.on_warning)
      hooks.on_warning("checkpoint " + resume + " was written by a different config (hash " + hex(ckpt.config_hash) +
                       ")");
    ParameterSet restored = model.params();
    for (auto& e : restored) {
      const Tensor& t = ckpt.at(kParam + e.name);
      if (t.shape() != e.weight.shape())
        throw FormatError("checkpoint tensor " + kParam + e.name + " has shape " + shape_string(t.shape()) +
                              ", model expects " + shape_string(e.weight.shape()),
                          0);
      e.weight = t;
    }
    copy_weights(restored, model.params());
    opt.import_state(strip_prefix(ckpt, kOptim));
    sampler.import_state(strip_prefix(ckpt, kSampler));
    start = static_cast<int>(ckpt.at(kEpoch)[0]) + 1;
  }

  fs::path out_dir;
  if (!run.output_dir.empty()) {
    out_dir = run.output_dir;
    fs::create_directories(out_dir);
    write_text(out_dir / "config.json", to_json(cfg).dump(2) + "\n");
    if (!resume.empty() && fs::exists(out_dir / "metrics.csv")) {
      for (const auto& r : read_metrics_csv((out_dir / "metrics.csv").string()))
        if (r.epoch < start) result.metrics.push_back(r);
    }
    write_metrics_csv((out_dir / "metrics.csv").string(), result.metrics);
  }

  auto disk_row = [&](MetricsRecord r) {
    if (!run.record_timing) r.t_backprop_s = r.t_sample_s = r.t_recal_s = r.t_total_s = 0.0;
    return r;
  };
  std::vector<MetricsRecord> disk_rows;
  for (const auto& r : result.metrics) disk_rows.push_back(r);

  for (int epoch = start; epoch <= run.epochs; ++epoch) {
    const auto epoch_t0 = clock_type::now();
    MetricsRecord rec;
    rec.epoch = epoch;
    rec.lr = lr_at(cfg.schedule, epoch - 1);

    const auto plan_batches = batches(data.train.size(), plan, static_cast<std::uint64_t>(epoch));
    sampler.begin_epoch(static_cast<std::size_t>(epoch), plan_batches.size());
    double loss_sum = 0.0, correct = 0.0, seen = 0.0;
    for (std::size_t i = 0; i < plan_batches.size(); ++i) {
      const auto batch = gather(data.train, plan_batches[i]);
      const auto t0 = clock_type::now();
      auto fwd = model.forward(batch.inputs, BnMode::train);
      const auto ce = cross_entropy(fwd.logits, batch.labels);
      if (!std::isfinite(ce.loss))
        throw NumericError("epoch " + std::to_string(epoch) + " batch " + std::to_string(i + 1) +
                           ": non-finite loss");
      model.backward(fwd.cache, ce.dlogits);
      opt.step(model.params(), rec.lr);
      rec.t_backprop_s += seconds_since(t0);

      const double n = static_cast<double>(batch.labels.size());
      loss_sum += ce.loss * n;
      correct += accuracy(fwd.logits, batch.labels) * n;
      seen += n;

      const auto t1 = clock_type::now();
      sampler.after_batch(i + 1, model.params());
      rec.t_sample_s += seconds_since(t1);
    }
    const auto timing = sampler.epoch_hook(model, data.train, run.batch_size);
    rec.t_sample_s += timing.sample_s;
    rec.t_recal_s = timing.recal_s;
    rec.t_total_s = seconds_since(epoch_t0);
    rec.train_loss = loss_sum / seen;
    rec.train_acc = correct / seen;

    if (epoch % run.eval_every == 0 || epoch == run.epochs) {
      const auto ev = evaluate(model, data.test, run.batch_size);
      rec.test_loss = ev.loss;
      rec.test_acc = ev.accuracy;
    } else {
      rec.test_loss = rec.test_acc = std::nan("");
    }
    result.metrics.push_back(rec);
    disk_rows.push_back(disk_row(rec));

    if (!out_dir.empty()) {
      write_metrics_csv((out_dir / "metrics.csv").string(), disk_rows);
      const auto ckpt = make_checkpoint(cfg, model.params(), opt, sampler, epoch);
      save_checkpoint((out_dir / "last.ckpt").string(), ckpt);
      if (run.checkpoint_every > 0 && epoch % run.checkpoint_every == 0) {
        char name[32];
        std::snprintf(name, sizeof name, "epoch_%04d.ckpt", epoch);
        save_checkpoint((out_dir / name).string(), ckpt);
      }
    }
    if (hooks.on_epoch) hooks.on_epoch(rec);
  }

  result.final_params = model.params();
  result.final_checkpoint = make_checkpoint(cfg, model.params(), opt, sampler, std::max(start - 1, run.epochs));
  if (!out_dir.empty()) save_checkpoint((out_dir / "final.ckpt").string(), result.final_checkpoint);
  return result;
}

RunResult run_training(const TrainingConfig& cfg, const std::string& resume) {
  return run_training(cfg, load_data(cfg), resume);
}

// ---------------------------------------------------------------------------
// Overhead

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

OverheadReport measure_overhead(const std::vector<TrainingConfig>& configs, const std::vector<std::string>& labels,
                                int repeats, const TrainingData& data) {
  if (configs.size() < 2) throw UsageError("measure_overhead needs at least two configs");
  if (labels.size() != configs.size()) throw UsageError("measure_overhead: one label per config");
  if (repeats < 1) throw UsageError("measure_overhead: repeats must be >= 1");
  auto without_sampler = [](const TrainingConfig& c) {
    auto j = to_json(c);
    j.erase("sampler");
    j["run"]["output_dir"] = "";
    return j;
  };
  const auto reference = without_sampler(configs[0]);
  std::optional<std::size_t> baseline;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    if (without_sampler(configs[i]) != reference)
      throw UsageError("measure_overhead: config '" + labels[i] + "' differs outside the sampler section");
    if (!baseline && configs[i].sampler.strategy == Strategy::none) baseline = i;
  }
  if (!baseline) throw UsageError("measure_overhead: one config must use sampler strategy none");

  struct Samples {
    std::vector<double> epoch, sample, recal;
  };
  std::vector<Samples> samples(configs.size());
  for (int r = 0; r < repeats; ++r)
    for (std::size_t i = 0; i < configs.size(); ++i) {
      TrainingConfig c = configs[i];
      c.run.output_dir.clear();
      const auto res = run_training(c, data);
      double total = 0.0, sample = 0.0, recal = 0.0;
      for (const auto& m : res.metrics) {
        total += m.t_total_s;
        sample += m.t_sample_s;
        recal += m.t_recal_s;
      }
      const double n = static_cast<double>(res.metrics.size());
      samples[i].epoch.push_back(total / n);
      samples[i].sample.push_back(sample / n);
      samples[i].recal.push_back(recal / n);
    }

  OverheadReport report;
  report.baseline = *baseline;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const auto& v = samples[i].epoch;
    OverheadRow row;
    row.label = labels[i];
    row.mean_epoch_s = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - row.mean_epoch_s) * (x - row.mean_epoch_s);
    row.sd_epoch_s = std::sqrt(ss / static_cast<double>(v.size()));
    row.median_epoch_s = median(v);
    row.sample_s = median(samples[i].sample);
    row.recal_s = median(samples[i].recal);
    report.rows.push_back(row);
  }
  for (auto& row : report.rows) row.ratio = row.median_epoch_s / report.rows[*baseline].median_epoch_s;
  return report;
}

}  // namespace pswa
