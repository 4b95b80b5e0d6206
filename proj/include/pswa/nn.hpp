#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "pswa/tensor.hpp"

namespace pswa {

enum class ParamKind { trainable, bn_running_stat };

struct ParamEntry {
  std::string name;
  Tensor weight;
  Tensor grad;  // same shape as weight; stays zero for running stats
  ParamKind kind = ParamKind::trainable;

  bool trainable() const noexcept { return kind == ParamKind::trainable; }
};

// Named model tensors in insertion order.
class ParameterSet {
 public:
  ParamEntry& add(std::string name, Tensor weight, ParamKind kind = ParamKind::trainable);

  ParamEntry* find(std::string_view name);
  const ParamEntry* find(std::string_view name) const;
  ParamEntry& at(std::string_view name);
  const ParamEntry& at(std::string_view name) const;

  std::size_t size() const noexcept { return entries_.size(); }
  ParamEntry& operator[](std::size_t i) { return entries_[i]; }
  const ParamEntry& operator[](std::size_t i) const { return entries_[i]; }

  auto begin() noexcept { return entries_.begin(); }
  auto end() noexcept { return entries_.end(); }
  auto begin() const noexcept { return entries_.begin(); }
  auto end() const noexcept { return entries_.end(); }

  void zero_grad();
  std::size_t trainable_count() const;  // number of trainable scalars

  // Same names, kinds and shapes in the same order.
  bool same_layout(const ParameterSet& other) const;

 private:
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Copies every weight (trainable and running stats) of `from` into `to`.
void copy_weights(const ParameterSet& from, ParameterSet& to);
bool weights_bit_equal(const ParameterSet& a, const ParameterSet& b, bool trainable_only = false);

// ---------------------------------------------------------------------------
// Model description

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
};
struct ReluLayer {};
struct Conv2dLayer {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 0;
};
struct BatchNormLayer {
  std::size_t features = 0;
  float eps = 1e-5f;
  float momentum = 0.1f;
};
struct FlattenLayer {};

using LayerSpec = std::variant<DenseLayer, ReluLayer, Conv2dLayer, BatchNormLayer, FlattenLayer>;

std::string layer_name(const LayerSpec& layer);

struct ModelSpec {
  Shape input_shape;  // per-sample, without the batch dimension
  std::vector<LayerSpec> layers;
};

// Per-sample output shape of every layer; throws ConfigError when adjacent
// layers are incompatible or there is no trainable layer.
std::vector<Shape> infer_shapes(const ModelSpec& spec);

enum class BnMode { train, eval, collect_stats };

struct LayerCache {
  Tensor input;
  Tensor normalized;              // batchnorm: x-hat
  std::vector<double> inv_std;    // batchnorm: 1/sqrt(var + eps) per feature
};

struct ForwardCache {
  BnMode mode = BnMode::eval;
  std::vector<LayerCache> layers;
};

struct ForwardResult {
  Tensor logits;
  ForwardCache cache;
};

// A ModelSpec bound to its parameters. BatchNorm gamma/beta are trainable
// entries; running mean/var are bn_running_stat entries of the same set.
class Model {
 public:
  // Fresh model with Glorot-uniform weights, zero biases, BN gamma=1 beta=0.
  Model(ModelSpec spec, std::uint64_t seed);
  // Binds existing parameters; layout must match what the spec would create.
  Model(ModelSpec spec, ParameterSet params);

  const ModelSpec& spec() const noexcept { return spec_; }
  ParameterSet& params() noexcept { return params_; }
  const ParameterSet& params() const noexcept { return params_; }
  std::size_t class_count() const noexcept { return classes_; }
  bool has_batchnorm() const noexcept { return !bn_stats_.empty(); }

  ForwardResult forward(const Tensor& batch, BnMode mode);
  // Chain rule from dlogits into every trainable gradient (overwrites them).
  void backward(const ForwardCache& cache, const Tensor& dlogits);

  // Collect-stats bracket: reset exact accumulators, run forwards in
  // BnMode::collect_stats, then write the aggregate into the running stats.
  void begin_stat_collection();
  void finish_stat_collection();

 private:
  struct LayerParams {
    std::size_t weight = SIZE_MAX;  // index into params_ (gamma for BN)
    std::size_t bias = SIZE_MAX;    // beta for BN
    std::size_t running_mean = SIZE_MAX;
    std::size_t running_var = SIZE_MAX;
    std::size_t bn_slot = SIZE_MAX;
  };
  struct BnAccumulator {
    std::vector<double> count, mean, m2;
  };

  void bind_layers();

  ModelSpec spec_;
  std::vector<Shape> shapes_;
  ParameterSet params_;
  std::vector<LayerParams> layer_params_;
  std::vector<BnAccumulator> bn_stats_;
  std::size_t classes_ = 0;
};

struct LossResult {
  double loss = 0.0;
  Tensor dlogits;
};

// Mean softmax cross-entropy; dlogits = (softmax - onehot) / B.
LossResult cross_entropy(const Tensor& logits, std::span<const int> labels);

// Fraction of rows whose argmax (lowest index on ties) equals the label.
double accuracy(const Tensor& logits, std::span<const int> labels);

}  // namespace pswa
