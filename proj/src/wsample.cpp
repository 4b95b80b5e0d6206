#include "pswa/wsample.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "pswa/error.hpp"

namespace pswa {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::none: return "none";
    case Strategy::pswa: return "pswa";
    case Strategy::pwalks: return "pwalks";
    case Strategy::pswm: return "pswm";
    case Strategy::swa: return "swa";
    case Strategy::bachepoch: return "bachepoch";
    case Strategy::bachbatch: return "bachbatch";
  }
  return "none";
}

std::string to_string(PswmVariant v) { return v == PswmVariant::ema ? "ema" : "literal"; }

Strategy parse_strategy(const std::string& name) {
  for (auto s : {Strategy::none, Strategy::pswa, Strategy::pwalks, Strategy::pswm, Strategy::swa,
                 Strategy::bachepoch, Strategy::bachbatch})
    if (to_string(s) == name) return s;
  throw ConfigError("unknown sampler strategy '" + name + "'");
}

PswmVariant parse_pswm_variant(const std::string& name) {
  if (name == "ema") return PswmVariant::ema;
  if (name == "literal") return PswmVariant::literal;
  throw ConfigError("unknown pswm_variant '" + name + "' (expected ema or literal)");
}

void validate(const SamplerConfig& cfg) {
  if (!(cfg.alpha > 0.0 && cfg.alpha <= 1.0)) throw ConfigError("sampler.alpha must be in (0,1]");
  if (!(cfg.beta > 0.0 && cfg.beta <= 1.0)) throw ConfigError("sampler.beta must be in (0,1]");
  if (!(cfg.k > 0.0 && cfg.k <= 100.0)) throw ConfigError("sampler.k must be in (0,100]");
  if (!(cfg.m > 0.0 && cfg.m <= 1.0)) throw ConfigError("sampler.m must be in (0,1]");
  if (cfg.c < 1) throw ConfigError("sampler.c must be >= 1");
}

// ---------------------------------------------------------------------------
// WeightAccumulator

WeightAccumulator::WeightAccumulator(const ParameterSet& params) {
  for (const auto& e : params) {
    if (!e.trainable()) continue;
    names_.push_back(e.name);
    mean_.emplace_back(e.weight.size(), 0.0);
  }
}

void WeightAccumulator::reset() {
  for (auto& m : mean_) std::fill(m.begin(), m.end(), 0.0);
  count_ = 0;
  total_weight_ = 0.0;
}

void WeightAccumulator::set_state(std::size_t count, double total_weight) {
  count_ = count;
  total_weight_ = total_weight;
}

template <class Fn>
void WeightAccumulator::update(const ParameterSet& params, Fn&& fn) {
  std::size_t slot = 0;
  for (const auto& e : params) {
    if (!e.trainable()) continue;
    if (slot >= names_.size() || names_[slot] != e.name || mean_[slot].size() != e.weight.size())
      throw UsageError("accumulator layout does not match parameter '" + e.name + "'");
    ++slot;
  }
  if (slot != names_.size()) throw UsageError("accumulator layout does not match parameter set");
  slot = 0;
  for (const auto& e : params) {
    if (!e.trainable()) continue;
    auto& mean = mean_[slot++];
    const float* w = e.weight.data();
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] = fn(mean[j], static_cast<double>(w[j]));
  }
}

void WeightAccumulator::add(const ParameterSet& params) {
  const double i = static_cast<double>(count_ + 1);
  const double keep = (i - 1.0) / i;
  update(params, [&](double mean, double w) { return keep * mean + w / i; });
  ++count_;
  total_weight_ += 1.0;
}

void WeightAccumulator::add_weighted(const ParameterSet& params, double weight) {
  if (!(weight > 0.0)) throw UsageError("add_weighted: weight must be > 0");
  const double total = total_weight_ + weight;
  const double frac = weight / total;
  update(params, [&](double mean, double w) { return mean + frac * (w - mean); });
  ++count_;
  total_weight_ = total;
}

void WeightAccumulator::blend(const ParameterSet& params, double m, PswmVariant variant) {
  if (!(m > 0.0 && m <= 1.0)) throw UsageError("pswm blend factor must be in (0,1]");
  if (variant == PswmVariant::ema) {
    if (count_ == 0)
      update(params, [](double, double w) { return w; });
    else
      update(params, [&](double mean, double w) { return (1.0 - m) * mean + m * w; });
  } else {
    const double i = static_cast<double>(count_ + 1);
    const double keep = (1.0 - m) * ((i - 1.0) / i);
    update(params, [&](double mean, double w) { return keep * mean + m * (w / i); });
  }
  ++count_;
  total_weight_ += 1.0;
}

void reset_accumulator(WeightAccumulator& acc) { acc.reset(); }
void accumulate_mean(WeightAccumulator& acc, const ParameterSet& params) { acc.add(params); }
void pswm_update(WeightAccumulator& acc, const ParameterSet& params, double m, PswmVariant variant) {
  acc.blend(params, m, variant);
}

// ---------------------------------------------------------------------------
// Gating

namespace {

// ceil(x) that ignores representation noise like 10.000000000000002.
std::size_t ceil_count(double x) { return static_cast<std::size_t>(std::ceil(x - 1e-9)); }

}  // namespace

std::size_t samples_per_epoch(const SamplerConfig& cfg, std::size_t b) {
  switch (cfg.strategy) {
    case Strategy::pswa:
      return std::clamp<std::size_t>(ceil_count(cfg.alpha * static_cast<double>(b)), 1, b);
    case Strategy::pwalks:
      return std::clamp<std::size_t>(ceil_count(cfg.k / 100.0 * static_cast<double>(b)), 1, b);
    case Strategy::pswm:
    case Strategy::bachbatch:
      return b;
    default:
      return 0;
  }
}

std::size_t sample_stride(const SamplerConfig& cfg, std::size_t b) {
  SamplerConfig pswa = cfg;
  pswa.strategy = Strategy::pswa;
  return b / samples_per_epoch(pswa, b);
}

std::size_t draw_phase(const SamplerConfig& cfg, std::size_t b, Rng& rng) {
  const std::size_t stride = sample_stride(cfg, b);
  if (cfg.phase) {
    if (*cfg.phase >= stride)
      throw ConfigError("sampler.phase " + std::to_string(*cfg.phase) + " must be < stride " +
                        std::to_string(stride));
    return *cfg.phase;
  }
  return static_cast<std::size_t>(rng.below(stride));
}

bool should_sample(const SamplerConfig& cfg, std::size_t i, std::size_t b, std::size_t phase) {
  if (i < 1 || i > b) throw UsageError("should_sample: batch index out of range");
  switch (cfg.strategy) {
    case Strategy::pswa: {
      const std::size_t n = samples_per_epoch(cfg, b);
      const std::size_t stride = b / n;
      const std::size_t pos = i - 1;
      return pos >= phase && (pos - phase) % stride == 0 && (pos - phase) / stride < n;
    }
    case Strategy::pwalks:
      // i > b(1 - k%), written so that exactly ceil(k% * b) batches pass.
      return i > b - samples_per_epoch(cfg, b);
    case Strategy::pswm:
    case Strategy::bachbatch:
      return true;
    default:
      return false;
  }
}

void reassign(ParameterSet& params, const WeightAccumulator& acc) {
  if (acc.count() == 0) throw UsageError("reassign: accumulator holds no samples");
  std::size_t slot = 0;
  for (auto& e : params) {
    if (!e.trainable()) continue;
    if (slot >= acc.slots() || acc.name(slot) != e.name || acc.mean(slot).size() != e.weight.size())
      throw UsageError("reassign: accumulator layout does not match parameter '" + e.name + "'");
    const auto mean = acc.mean(slot++);
    for (std::size_t j = 0; j < mean.size(); ++j) e.weight[j] = static_cast<float>(mean[j]);
  }
}

std::size_t bn_recalibrate(Model& model, const Dataset& data, double beta, std::size_t batch_size, Rng& rng) {
  if (!(beta > 0.0 && beta <= 1.0)) throw UsageError("bn_recalibrate: beta must be in (0,1]");
  if (batch_size == 0) throw UsageError("bn_recalibrate: batch_size must be >= 1");
  if (!model.has_batchnorm()) return 0;
  const std::size_t n = data.size();
  const std::size_t take = std::min(n, ceil_count(beta * static_cast<double>(n)));
  if (take == 0) throw UsageError("bn_recalibrate: empty recalibration subset");
  const std::size_t stride = n / take;
  const std::size_t phase = static_cast<std::size_t>(rng.below(stride));

  std::vector<std::size_t> idx;
  idx.reserve(batch_size);
  model.begin_stat_collection();
  for (std::size_t j = 0; j < take; ++j) {
    idx.push_back(phase + j * stride);
    if (idx.size() == batch_size || j + 1 == take) {
      const Batch batch = gather(data, idx);
      model.forward(batch.inputs, BnMode::collect_stats);
      idx.clear();
    }
  }
  model.finish_stat_collection();
  return take;
}

// ---------------------------------------------------------------------------
// Sampler

Sampler::Sampler(SamplerConfig cfg, const ParameterSet& params, std::uint64_t seed)
    : cfg_(std::move(cfg)), seed_(seed), acc_(params), cross_{WeightAccumulator(params), 0, 0} {
  validate(cfg_);
}

void Sampler::begin_epoch(std::size_t epoch, std::size_t b) {
  if (b == 0) throw UsageError("begin_epoch: epoch has no batches");
  cross_.epoch = epoch;
  b_ = b;
  phase_ = 0;
  if (cfg_.strategy == Strategy::pswa) {
    Rng rng(derive_seed(seed_, 0x9a5e0000ULL + epoch));
    phase_ = draw_phase(cfg_, b, rng);
  }
}

bool Sampler::after_batch(std::size_t i, const ParameterSet& params) {
  if (cfg_.strategy == Strategy::bachbatch) ++cross_.global_batch;
  if (!should_sample(cfg_, i, b_, phase_)) return false;
  switch (cfg_.strategy) {
    case Strategy::pswa:
    case Strategy::pwalks:
      acc_.add(params);
      break;
    case Strategy::pswm:
      acc_.blend(params, cfg_.m, cfg_.pswm_variant);
      break;
    case Strategy::bachbatch:
      cross_.mean.add_weighted(params, static_cast<double>(cross_.global_batch));
      break;
    default:
      return false;
  }
  notify(HookEvent::sample);
  return true;
}

HookTiming Sampler::epoch_hook(Model& model, const Dataset& train, std::size_t batch_size) {
  using clock = std::chrono::steady_clock;
  HookTiming timing;
  Rng recal_rng(derive_seed(seed_, 0xbc000000ULL + cross_.epoch));

  auto reassign_from = [&](const WeightAccumulator& acc) {
    const auto t0 = clock::now();
    reassign(model.params(), acc);
    timing.sample_s += std::chrono::duration<double>(clock::now() - t0).count();
    notify(HookEvent::reassign);
  };
  auto recalibrate = [&] {
    const auto t0 = clock::now();
    bn_recalibrate(model, train, cfg_.beta, batch_size, recal_rng);
    timing.recal_s += std::chrono::duration<double>(clock::now() - t0).count();
    notify(HookEvent::recalibrate);
  };

  switch (cfg_.strategy) {
    case Strategy::none:
      break;
    case Strategy::pswa:
    case Strategy::pwalks:
    case Strategy::pswm:
      reassign_from(acc_);
      recalibrate();
      acc_.reset();
      notify(HookEvent::reset);
      break;
    case Strategy::swa: {
      const auto t0 = clock::now();
      cross_.mean.add(model.params());
      timing.sample_s += std::chrono::duration<double>(clock::now() - t0).count();
      notify(HookEvent::sample);
      if (cross_.epoch % static_cast<std::size_t>(cfg_.c) == 0) {
        reassign_from(cross_.mean);
        recalibrate();
      }
      break;
    }
    case Strategy::bachepoch: {
      const auto t0 = clock::now();
      cross_.mean.add_weighted(model.params(), static_cast<double>(cross_.epoch));
      timing.sample_s += std::chrono::duration<double>(clock::now() - t0).count();
      notify(HookEvent::sample);
      reassign_from(cross_.mean);
      recalibrate();
      break;
    }
    case Strategy::bachbatch:
      reassign_from(cross_.mean);
      recalibrate();
      break;
  }
  return timing;
}

namespace {

// A double as three floats hi + mid + lo; the sum reproduces the double
// exactly whenever |x| is above ~1e-29 (or zero).
void push_split(std::vector<NamedTensor>& out, const std::string& name, std::span<const double> values) {
  Tensor t({values.size(), 3});
  for (std::size_t j = 0; j < values.size(); ++j) {
    double r = values[j];
    for (std::size_t part = 0; part < 3; ++part) {
      t[j * 3 + part] = static_cast<float>(r);
      r -= static_cast<double>(t[j * 3 + part]);
    }
  }
  out.push_back({"split/" + name, std::move(t)});
}

std::vector<double> pull_split(const std::vector<NamedTensor>& in, const std::string& name, std::size_t n) {
  const Tensor* t = nullptr;
  for (const auto& e : in)
    if (e.name == "split/" + name) t = &e.value;
  if (!t || t->shape() != Shape{n, 3}) throw UsageError("sampler state tensor '" + name + "' missing or malformed");
  std::vector<double> v(n);
  for (std::size_t j = 0; j < n; ++j)
    v[j] = static_cast<double>((*t)[j * 3]) + static_cast<double>((*t)[j * 3 + 1]) + static_cast<double>((*t)[j * 3 + 2]);
  return v;
}

}  // namespace

std::vector<NamedTensor> Sampler::export_state() const {
  std::vector<NamedTensor> out;
  const double counters[] = {static_cast<double>(cross_.mean.count()), cross_.mean.total_weight(),
                             static_cast<double>(cross_.global_batch)};
  push_split(out, "counters", counters);
  for (std::size_t s = 0; s < cross_.mean.slots(); ++s) push_split(out, "mean/" + cross_.mean.name(s), cross_.mean.mean(s));
  return out;
}

void Sampler::import_state(const std::vector<NamedTensor>& tensors) {
  const auto counters = pull_split(tensors, "counters", 3);
  for (std::size_t s = 0; s < cross_.mean.slots(); ++s) {
    const auto values = pull_split(tensors, "mean/" + cross_.mean.name(s), cross_.mean.mean(s).size());
    std::copy(values.begin(), values.end(), cross_.mean.mean(s).begin());
  }
  cross_.mean.set_state(static_cast<std::size_t>(counters[0]), counters[1]);
  cross_.global_batch = static_cast<std::uint64_t>(counters[2]);
}

}  // namespace pswa
