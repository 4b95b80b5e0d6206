#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pswa/data.hpp"
#include "pswa/nn.hpp"
#include "pswa/rng.hpp"

namespace pswa {

enum class Strategy { none, pswa, pwalks, pswm, swa, bachepoch, bachbatch };
enum class PswmVariant { ema, literal };

std::string to_string(Strategy s);
std::string to_string(PswmVariant v);
Strategy parse_strategy(const std::string& name);      // throws ConfigError
PswmVariant parse_pswm_variant(const std::string& name);  // throws ConfigError

struct SamplerConfig {
  Strategy strategy = Strategy::none;
  double alpha = 1.0;  // pswa: fraction of batches feeding the mean
  double beta = 0.1;   // fraction of training data used for BN recalibration
  double k = 2.0;      // pwalks: percent of final batches feeding the mean
  double m = 0.5;      // pswm: blend factor
  int c = 1;           // swa: reassign every c epochs
  PswmVariant pswm_variant = PswmVariant::ema;
  // Fixed 0-based stride phase for pswa instead of a per-epoch random draw.
  std::optional<std::size_t> phase;
};

void validate(const SamplerConfig& cfg);  // throws ConfigError

// Running mean over snapshots of the trainable entries of a ParameterSet.
// Buffers are kept in double so long runs of online updates stay within
// 1e-6 of the exact average; reassignment rounds back to float.
class WeightAccumulator {
 public:
  WeightAccumulator() = default;
  explicit WeightAccumulator(const ParameterSet& params);

  void reset();

  // mean <- ((i-1)/i) mean + w/i with i the new count.
  void add(const ParameterSet& params);
  // mean <- mean + (weight/W)(w - mean), W the new cumulative weight.
  void add_weighted(const ParameterSet& params, double weight);
  // ema:     mean <- (1-m) mean + m w   (first sample initializes mean = w)
  // literal: mean <- (1-m) ((i-1)/i) mean + m w/i
  void blend(const ParameterSet& params, double m, PswmVariant variant);

  std::size_t count() const noexcept { return count_; }
  double total_weight() const noexcept { return total_weight_; }
  std::size_t slots() const noexcept { return names_.size(); }
  const std::string& name(std::size_t slot) const { return names_.at(slot); }
  std::span<const double> mean(std::size_t slot) const { return mean_.at(slot); }
  std::span<double> mean(std::size_t slot) { return mean_.at(slot); }
  void set_state(std::size_t count, double total_weight);

 private:
  template <class Fn>
  void update(const ParameterSet& params, Fn&& fn);

  std::vector<std::string> names_;
  std::vector<std::vector<double>> mean_;
  std::size_t count_ = 0;
  double total_weight_ = 0.0;
};

void reset_accumulator(WeightAccumulator& acc);
void accumulate_mean(WeightAccumulator& acc, const ParameterSet& params);
void pswm_update(WeightAccumulator& acc, const ParameterSet& params, double m, PswmVariant variant);

// Batches per epoch admitted by the gate: ceil(alpha*b) for pswa,
// ceil(k/100*b) for pwalks, b for pswm/bachbatch, 0 otherwise.
std::size_t samples_per_epoch(const SamplerConfig& cfg, std::size_t b);
// pswa stride floor(b / ceil(alpha*b)); the phase is drawn in [0, stride).
std::size_t sample_stride(const SamplerConfig& cfg, std::size_t b);
std::size_t draw_phase(const SamplerConfig& cfg, std::size_t b, Rng& rng);

// Gate for batch i (1-based) of b. `phase` only matters for pswa.
bool should_sample(const SamplerConfig& cfg, std::size_t i, std::size_t b, std::size_t phase = 0);

// Overwrites every trainable weight with the accumulator mean.
void reassign(ParameterSet& params, const WeightAccumulator& acc);

// Replaces BN running stats with exact statistics over ceil(beta*N) samples
// taken at a fixed stride from a random phase. Returns samples used (0 when
// the model has no BN layer).
std::size_t bn_recalibrate(Model& model, const Dataset& data, double beta, std::size_t batch_size, Rng& rng);

// Persistent buffers for the never-reset baselines.
struct CrossEpochState {
  WeightAccumulator mean;
  std::size_t epoch = 0;
  std::uint64_t global_batch = 0;
};

enum class HookEvent { sample, reassign, recalibrate, reset };

struct HookTiming {
  double sample_s = 0.0;
  double recal_s = 0.0;
};

// Per-run driver: gate + accumulate after each batch, end-of-epoch actions.
class Sampler {
 public:
  Sampler(SamplerConfig cfg, const ParameterSet& params, std::uint64_t seed);

  const SamplerConfig& config() const noexcept { return cfg_; }

  // epoch is 1-based; b = batches in this epoch.
  void begin_epoch(std::size_t epoch, std::size_t b);
  // i is 1-based. Returns true when the snapshot was taken.
  bool after_batch(std::size_t i, const ParameterSet& params);
  HookTiming epoch_hook(Model& model, const Dataset& train, std::size_t batch_size);

  const WeightAccumulator& accumulator() const noexcept { return acc_; }
  const CrossEpochState& cross() const noexcept { return cross_; }
  std::size_t phase() const noexcept { return phase_; }

  // Cross-epoch buffers for checkpointing; each double is stored exactly as
  // three floats (tensor "split/<name>", shape [n,3]).
  std::vector<NamedTensor> export_state() const;
  void import_state(const std::vector<NamedTensor>& tensors);

  std::function<void(HookEvent)> observer;

 private:
  void notify(HookEvent e) {
    if (observer) observer(e);
  }

  SamplerConfig cfg_;
  std::uint64_t seed_;
  WeightAccumulator acc_;
  CrossEpochState cross_;
  std::size_t b_ = 0;
  std::size_t phase_ = 0;
};

}  // namespace pswa
