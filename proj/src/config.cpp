#include "pswa/config.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <set>
#include <sstream>

#include "pswa/error.hpp"

namespace pswa {

using nlohmann::json;

namespace {

// Reads typed keys out of one JSON object and rejects whatever is left over.
class Section {
 public:
  Section(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(path_ + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        if (!it->is_number_integer() || it->template get<std::int64_t>() < 0) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!it->is_number_integer()) throw ConfigError("");
      }
      out = it->template get<T>();
    } catch (const std::exception&) {
      throw ConfigError(path_ + "." + key + ": wrong type (" + std::string(it->type_name()) + ")");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  // Keys that only make sense for another variant are treated as unknown.
  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown key " + path_ + "." + it.key());
  }

  const std::string& path() const { return path_; }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

LayerSpec parse_layer(const json& j, const std::string& path) {
  Section s(j, path);
  std::string type;
  s.get("type", type);
  LayerSpec out;
  if (type == "dense") {
    DenseLayer d;
    s.get("in", d.in);
    s.get("out", d.out);
    out = d;
  } else if (type == "relu") {
    out = ReluLayer{};
  } else if (type == "conv2d") {
    Conv2dLayer c;
    s.get("in_channels", c.in_channels);
    s.get("out_channels", c.out_channels);
    s.get("kernel", c.kernel);
    s.get("stride", c.stride);
    s.get("pad", c.pad);
    out = c;
  } else if (type == "batchnorm") {
    BatchNormLayer b;
    s.get("features", b.features);
    s.get("eps", b.eps);
    s.get("momentum", b.momentum);
    out = b;
  } else if (type == "flatten") {
    out = FlattenLayer{};
  } else {
    throw ConfigError(path + ".type: unknown layer type '" + type + "'");
  }
  s.finish();
  return out;
}

json layer_json(const LayerSpec& layer) {
  json j{{"type", layer_name(layer)}};
  if (const auto* d = std::get_if<DenseLayer>(&layer)) {
    j["in"] = d->in;
    j["out"] = d->out;
  } else if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
    j["in_channels"] = c->in_channels;
    j["out_channels"] = c->out_channels;
    j["kernel"] = c->kernel;
    j["stride"] = c->stride;
    j["pad"] = c->pad;
  } else if (const auto* b = std::get_if<BatchNormLayer>(&layer)) {
    j["features"] = b->features;
    j["eps"] = b->eps;
    j["momentum"] = b->momentum;
  }
  return j;
}

std::string data_kind_name(DataKind k) {
  switch (k) {
    case DataKind::synthetic: return "synthetic";
    case DataKind::idx: return "idx";
    case DataKind::cifar10: return "cifar10";
  }
  return "synthetic";
}

std::string schedule_name(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::constant: return "constant";
    case ScheduleKind::step: return "step";
    case ScheduleKind::poly: return "poly";
  }
  return "constant";
}

void parse_model(const json& j, ModelSpec& m) {
  Section s(j, "model");
  if (const json* shape = s.child("input_shape")) {
    if (!shape->is_array()) throw ConfigError("model.input_shape must be an array");
    for (const auto& v : *shape) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
        throw ConfigError("model.input_shape entries must be positive integers");
      m.input_shape.push_back(v.get<std::size_t>());
    }
  }
  if (const json* layers = s.child("layers")) {
    if (!layers->is_array()) throw ConfigError("model.layers must be an array");
    for (std::size_t i = 0; i < layers->size(); ++i)
      m.layers.push_back(parse_layer((*layers)[i], "model.layers[" + std::to_string(i) + "]"));
  }
  s.finish();
}

void parse_data(const json& j, DataConfig& d) {
  Section s(j, "data");
  std::string source = "synthetic";
  s.get("source", source);
  if (source == "synthetic") {
    d.source = DataKind::synthetic;
    s.get("train_size", d.train_size);
    s.get("test_size", d.test_size);
    s.get("dims", d.dims);
    s.get("classes", d.classes);
    s.get("separation", d.separation);
  } else if (source == "idx") {
    d.source = DataKind::idx;
    s.get("train_images", d.train_images);
    s.get("train_labels", d.train_labels);
    s.get("test_images", d.test_images);
    s.get("test_labels", d.test_labels);
  } else if (source == "cifar10") {
    d.source = DataKind::cifar10;
    s.get("train_files", d.train_files);
    s.get("test_files", d.test_files);
  } else {
    throw ConfigError("data.source: unknown source '" + source + "' (expected synthetic, idx or cifar10)");
  }
  s.get("train_limit", d.train_limit);
  s.get("test_limit", d.test_limit);
  s.get("standardize", d.standardize);
  s.finish();
}

void parse_optimizer(const json& j, OptimizerConfig& o) {
  Section s(j, "optimizer");
  s.get("type", o.type);
  if (o.type == "sgd") {
    s.get("momentum", o.momentum);
    s.get("weight_decay", o.weight_decay);
  } else if (o.type == "adam") {
    o.weight_decay = 0.0;
    s.get("beta1", o.beta1);
    s.get("beta2", o.beta2);
    s.get("eps", o.eps);
    s.get("weight_decay", o.weight_decay);
  } else {
    throw ConfigError("optimizer.type: unknown optimizer '" + o.type + "' (expected sgd or adam)");
  }
  s.finish();
}

void parse_schedule(const json& j, LRSchedule& l, bool& total_given) {
  Section s(j, "schedule");
  std::string type = "constant";
  s.get("type", type);
  s.get("lr", l.base_lr);
  if (type == "constant") {
    l.kind = ScheduleKind::constant;
  } else if (type == "step") {
    l.kind = ScheduleKind::step;
    s.get("milestones", l.milestones);
    s.get("gamma", l.gamma);
  } else if (type == "poly") {
    l.kind = ScheduleKind::poly;
    s.get("power", l.power);
    total_given = j.contains("total_epochs");
    s.get("total_epochs", l.total_epochs);
  } else {
    throw ConfigError("schedule.type: unknown schedule '" + type + "' (expected constant, step or poly)");
  }
  s.finish();
}

void parse_sampler(const json& j, SamplerConfig& c) {
  Section s(j, "sampler");
  std::string type = "none", variant = "ema";
  s.get("type", type);
  c.strategy = parse_strategy(type);
  s.get("alpha", c.alpha);
  s.get("beta", c.beta);
  s.get("k", c.k);
  s.get("m", c.m);
  s.get("c", c.c);
  s.get("pswm_variant", variant);
  c.pswm_variant = parse_pswm_variant(variant);
  if (const json* p = s.child("phase"); p && !p->is_null()) {
    if (!p->is_number_integer() || p->get<std::int64_t>() < 0) throw ConfigError("sampler.phase must be a non-negative integer or null");
    c.phase = p->get<std::size_t>();
  }
  s.finish();
}

void parse_run(const json& j, RunConfig& r) {
  Section s(j, "run");
  s.get("epochs", r.epochs);
  s.get("batch_size", r.batch_size);
  s.get("seed", r.seed);
  s.get("output_dir", r.output_dir);
  s.get("eval_every", r.eval_every);
  s.get("drop_last", r.drop_last);
  s.get("checkpoint_every", r.checkpoint_every);
  s.get("record_timing", r.record_timing);
  s.finish();
}

}  // namespace

TrainingConfig parse_config(const json& doc) {
  TrainingConfig cfg;
  Section top(doc, "config");
  const json* model = top.child("model");
  if (!model) throw ConfigError("config.model is required");
  parse_model(*model, cfg.model);
  if (const json* j = top.child("data")) parse_data(*j, cfg.data);
  if (const json* j = top.child("optimizer")) parse_optimizer(*j, cfg.optimizer);
  if (const json* j = top.child("run")) parse_run(*j, cfg.run);
  bool total_given = false;
  if (const json* j = top.child("schedule")) parse_schedule(*j, cfg.schedule, total_given);
  if (!total_given) cfg.schedule.total_epochs = cfg.run.epochs;
  if (const json* j = top.child("sampler")) parse_sampler(*j, cfg.sampler);
  top.finish();
  validate(cfg);
  return cfg;
}

TrainingConfig parse_config_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(doc);
}

TrainingConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

void validate(const TrainingConfig& cfg) {
  infer_shapes(cfg.model);
  const auto& d = cfg.data;
  if (d.source == DataKind::synthetic) {
    if (d.train_size == 0 || d.test_size == 0) throw ConfigError("data.train_size and data.test_size must be > 0");
    if (d.dims == 0) throw ConfigError("data.dims must be > 0");
    if (d.classes < 2) throw ConfigError("data.classes must be >= 2");
    if (!(d.separation > 0.0)) throw ConfigError("data.separation must be > 0");
    std::size_t volume = 1;
    for (std::size_t v : cfg.model.input_shape) volume *= v;
    // Synthetic vectors are reshaped to the model's input shape.
    if (cfg.model.input_shape.empty() || volume != d.dims)
      throw ConfigError("model.input_shape " + shape_string(cfg.model.input_shape) + " does not hold data.dims " +
                        std::to_string(d.dims) + " values");
  } else if (d.source == DataKind::idx) {
    if (d.train_images.empty() || d.train_labels.empty() || d.test_images.empty() || d.test_labels.empty())
      throw ConfigError("data: idx source needs train_images, train_labels, test_images, test_labels");
  } else if (d.train_files.empty() || d.test_files.empty()) {
    throw ConfigError("data: cifar10 source needs train_files and test_files");
  }
  const auto& o = cfg.optimizer;
  if (o.type == "sgd") {
    if (!(o.momentum >= 0.0 && o.momentum < 1.0)) throw ConfigError("optimizer.momentum must be in [0,1)");
  } else {
    if (!(o.beta1 >= 0.0 && o.beta1 < 1.0) || !(o.beta2 >= 0.0 && o.beta2 < 1.0))
      throw ConfigError("optimizer.beta1/beta2 must be in [0,1)");
    if (!(o.eps > 0.0)) throw ConfigError("optimizer.eps must be > 0");
  }
  if (!(o.weight_decay >= 0.0)) throw ConfigError("optimizer.weight_decay must be >= 0");
  validate(cfg.schedule);
  validate(cfg.sampler);
  const auto& r = cfg.run;
  if (r.epochs < 1) throw ConfigError("run.epochs must be >= 1");
  if (r.batch_size == 0) throw ConfigError("run.batch_size must be > 0");
  if (r.eval_every < 1) throw ConfigError("run.eval_every must be >= 1");
  if (r.checkpoint_every < 0) throw ConfigError("run.checkpoint_every must be >= 0");
}

json to_json(const TrainingConfig& cfg) {
  json layers = json::array();
  for (const auto& l : cfg.model.layers) layers.push_back(layer_json(l));
  json model{{"input_shape", cfg.model.input_shape}, {"layers", layers}};

  const auto& d = cfg.data;
  json data{{"source", data_kind_name(d.source)},
            {"train_limit", d.train_limit},
            {"test_limit", d.test_limit},
            {"standardize", d.standardize}};
  if (d.source == DataKind::synthetic) {
    data["train_size"] = d.train_size;
    data["test_size"] = d.test_size;
    data["dims"] = d.dims;
    data["classes"] = d.classes;
    data["separation"] = d.separation;
  } else if (d.source == DataKind::idx) {
    data["train_images"] = d.train_images;
    data["train_labels"] = d.train_labels;
    data["test_images"] = d.test_images;
    data["test_labels"] = d.test_labels;
  } else {
    data["train_files"] = d.train_files;
    data["test_files"] = d.test_files;
  }

  const auto& o = cfg.optimizer;
  json optimizer{{"type", o.type}, {"weight_decay", o.weight_decay}};
  if (o.type == "sgd") {
    optimizer["momentum"] = o.momentum;
  } else {
    optimizer["beta1"] = o.beta1;
    optimizer["beta2"] = o.beta2;
    optimizer["eps"] = o.eps;
  }

  const auto& l = cfg.schedule;
  json schedule{{"type", schedule_name(l.kind)}, {"lr", l.base_lr}};
  if (l.kind == ScheduleKind::step) {
    schedule["milestones"] = l.milestones;
    schedule["gamma"] = l.gamma;
  } else if (l.kind == ScheduleKind::poly) {
    schedule["power"] = l.power;
    schedule["total_epochs"] = l.total_epochs;
  }

  const auto& s = cfg.sampler;
  json sampler{{"type", to_string(s.strategy)}, {"alpha", s.alpha}, {"beta", s.beta},
               {"k", s.k},  {"m", s.m},  {"c", s.c},
               {"pswm_variant", to_string(s.pswm_variant)}};
  sampler["phase"] = s.phase ? json(*s.phase) : json(nullptr);

  const auto& r = cfg.run;
  json run{{"epochs", r.epochs},
           {"batch_size", r.batch_size},
           {"seed", r.seed},
           {"output_dir", r.output_dir},
           {"eval_every", r.eval_every},
           {"drop_last", r.drop_last},
           {"checkpoint_every", r.checkpoint_every},
           {"record_timing", r.record_timing}};

  return json{{"model", model},         {"data", data},       {"optimizer", optimizer},
              {"schedule", schedule},   {"sampler", sampler}, {"run", run}};
}

std::array<std::uint8_t, 32> config_hash(const TrainingConfig& cfg) {
  json doc = to_json(cfg);
  doc["run"]["output_dir"] = "";
  const std::string text = doc.dump();
  std::array<std::uint8_t, 32> out{};
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 || len != out.size())
    throw Error("SHA-256 digest failed");
  return out;
}

std::string hex(const std::array<std::uint8_t, 32>& digest) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s;
  for (auto b : digest) {
    s += digits[b >> 4];
    s += digits[b & 15];
  }
  return s;
}

Optimizer make_optimizer(const OptimizerConfig& cfg, const ParameterSet& params) {
  if (cfg.type == "adam")
    return Optimizer(make_adam_state(params, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay));
  return Optimizer(make_sgd_state(params, cfg.momentum, cfg.weight_decay));
}

}  // namespace pswa
