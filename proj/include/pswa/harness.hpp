#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pswa/checkpoint.hpp"
#include "pswa/config.hpp"
#include "pswa/data.hpp"

namespace pswa {

// t_backprop_s brackets forward/backward/optimizer step, t_sample_s the
// snapshot updates plus reassignment, t_recal_s BN recalibration, and
// t_total_s the whole training epoch through the hook (test evaluation
// excluded).
struct MetricsRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_acc = 0.0;  // fraction in [0,1]
  double test_loss = 0.0;  // NaN on epochs skipped by eval_every
  double test_acc = 0.0;
  double lr = 0.0;
  double t_backprop_s = 0.0;
  double t_sample_s = 0.0;
  double t_recal_s = 0.0;
  double t_total_s = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "epoch,train_loss,train_acc,test_loss,test_acc,lr,t_backprop_s,t_sample_s,t_recal_s,t_total_s";

std::string format_metrics_row(const MetricsRecord& r);
void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& rows);
// Columns are located by header name; errors name the missing column or the
// offending line (FormatError with a line number).
std::vector<MetricsRecord> read_metrics_csv(const std::string& path);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;  // fraction
};

// Mean cross-entropy and accuracy in BN eval mode, batched.
EvalResult evaluate(Model& model, const Dataset& data, std::size_t batch_size);

struct TrainingData {
  Dataset train;
  Dataset test;
};

TrainingData load_data(const TrainingConfig& cfg);

struct RunHooks {
  std::function<void(const MetricsRecord&)> on_epoch;
  std::function<void(HookEvent)> on_sampler_event;
  std::function<void(const std::string&)> on_warning;  // e.g. config hash mismatch on resume
};

struct RunResult {
  std::vector<MetricsRecord> metrics;
  ParameterSet final_params;
  Checkpoint final_checkpoint;
};

// Algorithm loop: shuffle, per batch forward/backward/step and gated
// snapshot, then the epoch hook, then evaluation. With a non-empty
// run.output_dir it writes config.json, metrics.csv, last.ckpt every epoch,
// epoch_NNNN.ckpt every checkpoint_every epochs and final.ckpt.
// `resume` continues from a checkpoint's epoch + 1.
RunResult run_training(const TrainingConfig& cfg, const TrainingData& data, const std::string& resume = "",
                       const RunHooks& hooks = {});
RunResult run_training(const TrainingConfig& cfg, const std::string& resume = "");

Checkpoint make_checkpoint(const TrainingConfig& cfg, const ParameterSet& params, const Optimizer& opt,
                           const Sampler& sampler, int epoch);

// Model built from `spec` with the checkpoint's "param/" tensors. Missing,
// extra or mis-shaped parameters raise UsageError.
Model model_from_checkpoint(const ModelSpec& spec, const Checkpoint& ckpt);

struct OverheadRow {
  std::string label;
  double mean_epoch_s = 0.0;
  double sd_epoch_s = 0.0;
  double median_epoch_s = 0.0;
  double ratio = 1.0;  // median / median of the strategy-none config
  double sample_s = 0.0;  // median per-epoch sampler time
  double recal_s = 0.0;   // median per-epoch recalibration time
};

struct OverheadReport {
  std::vector<OverheadRow> rows;
  std::size_t baseline = 0;
};

// Runs every config `repeats` times (interleaved) in memory. Configs must
// differ only in their sampler section; one of them must use strategy none.
OverheadReport measure_overhead(const std::vector<TrainingConfig>& configs, const std::vector<std::string>& labels,
                                int repeats, const TrainingData& data);

}  // namespace pswa
