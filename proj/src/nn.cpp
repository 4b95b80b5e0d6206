#include "pswa/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "pswa/error.hpp"
#include "pswa/rng.hpp"

namespace pswa {

// ---------------------------------------------------------------------------
// ParameterSet

ParamEntry& ParameterSet::add(std::string name, Tensor weight, ParamKind kind) {
  if (index_.count(name)) throw UsageError("duplicate parameter name '" + name + "'");
  Tensor grad(weight.shape(), 0.0f);
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(weight), std::move(grad), kind});
  return entries_.back();
}

ParamEntry* ParameterSet::find(std::string_view name) {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &entries_[it->second];
}

const ParamEntry* ParameterSet::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &entries_[it->second];
}

ParamEntry& ParameterSet::at(std::string_view name) {
  if (auto* e = find(name)) return *e;
  throw UsageError("no parameter named '" + std::string(name) + "'");
}

const ParamEntry& ParameterSet::at(std::string_view name) const {
  if (const auto* e = find(name)) return *e;
  throw UsageError("no parameter named '" + std::string(name) + "'");
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) e.grad.fill(0.0f);
}

std::size_t ParameterSet::trainable_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (e.trainable()) n += e.weight.size();
  return n;
}

bool ParameterSet::same_layout(const ParameterSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.kind != b.kind || a.weight.shape() != b.weight.shape()) return false;
  }
  return true;
}

void copy_weights(const ParameterSet& from, ParameterSet& to) {
  if (!from.same_layout(to)) throw UsageError("copy_weights: parameter layouts differ");
  for (std::size_t i = 0; i < from.size(); ++i) to[i].weight = from[i].weight;
}

bool weights_bit_equal(const ParameterSet& a, const ParameterSet& b, bool trainable_only) {
  if (!a.same_layout(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (trainable_only && !a[i].trainable()) continue;
    if (!bit_equal(a[i].weight, b[i].weight)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Shape inference

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

[[noreturn]] void shape_fail(std::size_t layer, const LayerSpec& spec, const Shape& in,
                             const std::string& why) {
  throw ConfigError("layer " + std::to_string(layer) + " (" + layer_name(spec) +
                    "): input shape " + shape_string(in) + " " + why);
}

}  // namespace

std::string layer_name(const LayerSpec& layer) {
  return std::visit(overloaded{
                        [](const DenseLayer&) { return std::string("dense"); },
                        [](const ReluLayer&) { return std::string("relu"); },
                        [](const Conv2dLayer&) { return std::string("conv2d"); },
                        [](const BatchNormLayer&) { return std::string("batchnorm"); },
                        [](const FlattenLayer&) { return std::string("flatten"); },
                    },
                    layer);
}

std::vector<Shape> infer_shapes(const ModelSpec& spec) {
  if (spec.input_shape.empty() || shape_numel(spec.input_shape) == 0)
    throw ConfigError("model input shape must be non-empty with positive dimensions");
  if (spec.layers.empty()) throw ConfigError("model has no layers");

  std::vector<Shape> shapes;
  Shape cur = spec.input_shape;
  bool trainable = false;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& layer = spec.layers[i];
    std::visit(overloaded{
                   [&](const DenseLayer& d) {
                     if (d.in == 0 || d.out == 0) shape_fail(i, layer, cur, "needs positive in/out");
                     if (cur.size() != 1 || cur[0] != d.in)
                       shape_fail(i, layer, cur, "expected [" + std::to_string(d.in) + "]");
                     cur = {d.out};
                     trainable = true;
                   },
                   [&](const ReluLayer&) {},
                   [&](const Conv2dLayer& c) {
                     if (c.in_channels == 0 || c.out_channels == 0 || c.kernel == 0 || c.stride == 0)
                       shape_fail(i, layer, cur, "needs positive channels, kernel and stride");
                     if (cur.size() != 3 || cur[0] != c.in_channels)
                       shape_fail(i, layer, cur,
                                  "expected [" + std::to_string(c.in_channels) + ",H,W]");
                     if (cur[1] + 2 * c.pad < c.kernel || cur[2] + 2 * c.pad < c.kernel)
                       shape_fail(i, layer, cur, "is smaller than the kernel");
                     const std::size_t oh = (cur[1] + 2 * c.pad - c.kernel) / c.stride + 1;
                     const std::size_t ow = (cur[2] + 2 * c.pad - c.kernel) / c.stride + 1;
                     cur = {c.out_channels, oh, ow};
                     trainable = true;
                   },
                   [&](const BatchNormLayer& b) {
                     if (!(b.eps > 0.0f)) shape_fail(i, layer, cur, "needs eps > 0");
                     if (!(b.momentum >= 0.0f && b.momentum <= 1.0f))
                       shape_fail(i, layer, cur, "needs momentum in [0,1]");
                     if ((cur.size() != 1 && cur.size() != 3) || cur[0] != b.features)
                       shape_fail(i, layer, cur,
                                  "expected [" + std::to_string(b.features) + "] or [" +
                                      std::to_string(b.features) + ",H,W]");
                     trainable = true;
                   },
                   [&](const FlattenLayer&) { cur = {shape_numel(cur)}; },
               },
               layer);
    shapes.push_back(cur);
  }
  if (!trainable) throw ConfigError("model has no trainable layer");
  if (cur.size() != 1) throw ConfigError("model output " + shape_string(cur) + " is not [classes]");
  return shapes;
}

// ---------------------------------------------------------------------------
// Model construction

namespace {

Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-s, s));
  return t;
}

ParameterSet make_params(const ModelSpec& spec, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x1417));
  ParameterSet params;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const std::string p = std::to_string(i) + ".";
    std::visit(overloaded{
                   [&](const DenseLayer& d) {
                     params.add(p + "weight", glorot({d.out, d.in}, d.in, d.out, rng));
                     params.add(p + "bias", Tensor({d.out}, 0.0f));
                   },
                   [&](const Conv2dLayer& c) {
                     const std::size_t k2 = c.kernel * c.kernel;
                     params.add(p + "weight",
                                glorot({c.out_channels, c.in_channels, c.kernel, c.kernel},
                                       c.in_channels * k2, c.out_channels * k2, rng));
                     params.add(p + "bias", Tensor({c.out_channels}, 0.0f));
                   },
                   [&](const BatchNormLayer& b) {
                     params.add(p + "gamma", Tensor({b.features}, 1.0f));
                     params.add(p + "beta", Tensor({b.features}, 0.0f));
                     params.add(p + "running_mean", Tensor({b.features}, 0.0f),
                                ParamKind::bn_running_stat);
                     params.add(p + "running_var", Tensor({b.features}, 1.0f),
                                ParamKind::bn_running_stat);
                   },
                   [](const auto&) {},
               },
               spec.layers[i]);
  }
  return params;
}

}  // namespace

Model::Model(ModelSpec spec, std::uint64_t seed)
    : spec_(std::move(spec)), shapes_(infer_shapes(spec_)), params_(make_params(spec_, seed)) {
  bind_layers();
}

Model::Model(ModelSpec spec, ParameterSet params)
    : spec_(std::move(spec)), shapes_(infer_shapes(spec_)), params_(std::move(params)) {
  if (!params_.same_layout(make_params(spec_, 0)))
    throw UsageError("parameter set does not match the model architecture");
  bind_layers();
}

void Model::bind_layers() {
  classes_ = shapes_.back()[0];
  layer_params_.assign(spec_.layers.size(), {});
  bn_stats_.clear();
  std::size_t next = 0;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    auto& lp = layer_params_[i];
    std::visit(overloaded{
                   [&](const DenseLayer&) {
                     lp.weight = next++;
                     lp.bias = next++;
                   },
                   [&](const Conv2dLayer&) {
                     lp.weight = next++;
                     lp.bias = next++;
                   },
                   [&](const BatchNormLayer& b) {
                     lp.weight = next++;
                     lp.bias = next++;
                     lp.running_mean = next++;
                     lp.running_var = next++;
                     lp.bn_slot = bn_stats_.size();
                     bn_stats_.push_back({std::vector<double>(b.features, 0.0),
                                          std::vector<double>(b.features, 0.0),
                                          std::vector<double>(b.features, 0.0)});
                   },
                   [](const auto&) {},
               },
               spec_.layers[i]);
  }
}

// ---------------------------------------------------------------------------
// Kernels

namespace {

Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t batch = x.dim(0), in = w.dim(1), out = w.dim(0);
  Tensor y({batch, out});
  for (std::size_t n = 0; n < batch; ++n) {
    const float* xr = x.data() + n * in;
    for (std::size_t o = 0; o < out; ++o) {
      const float* wr = w.data() + o * in;
      double acc = b[o];
      for (std::size_t i = 0; i < in; ++i) acc += static_cast<double>(wr[i]) * xr[i];
      y[n * out + o] = static_cast<float>(acc);
    }
  }
  return y;
}

Tensor dense_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& dw, Tensor& db) {
  const std::size_t batch = x.dim(0), in = w.dim(1), out = w.dim(0);
  std::vector<double> gw(out * in, 0.0), gb(out, 0.0), gx(batch * in, 0.0);
  for (std::size_t n = 0; n < batch; ++n) {
    const float* xr = x.data() + n * in;
    for (std::size_t o = 0; o < out; ++o) {
      const double g = dy[n * out + o];
      if (g == 0.0) continue;
      gb[o] += g;
      const float* wr = w.data() + o * in;
      double* gwr = gw.data() + o * in;
      double* gxr = gx.data() + n * in;
      for (std::size_t i = 0; i < in; ++i) {
        gwr[i] += g * xr[i];
        gxr[i] += g * wr[i];
      }
    }
  }
  for (std::size_t i = 0; i < gw.size(); ++i) dw[i] = static_cast<float>(gw[i]);
  for (std::size_t i = 0; i < gb.size(); ++i) db[i] = static_cast<float>(gb[i]);
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < gx.size(); ++i) dx[i] = static_cast<float>(gx[i]);
  return dx;
}

struct ConvGeom {
  std::size_t batch, cin, h, w, cout, k, stride, pad, oh, ow;
};

ConvGeom conv_geom(const Tensor& x, const Conv2dLayer& c) {
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), c.out_channels, c.kernel, c.stride, c.pad, 0, 0};
  g.oh = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.ow = (g.w + 2 * g.pad - g.k) / g.stride + 1;
  return g;
}

Tensor conv_forward(const Tensor& x, const Tensor& w, const Tensor& b, const Conv2dLayer& c) {
  const ConvGeom g = conv_geom(x, c);
  Tensor y({g.batch, g.cout, g.oh, g.ow});
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t o = 0; o < g.cout; ++o)
      for (std::size_t oy = 0; oy < g.oh; ++oy)
        for (std::size_t ox = 0; ox < g.ow; ++ox) {
          double acc = b[o];
          for (std::size_t ci = 0; ci < g.cin; ++ci)
            for (std::size_t ky = 0; ky < g.k; ++ky) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                        static_cast<std::ptrdiff_t>(g.pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
              for (std::size_t kx = 0; kx < g.k; ++kx) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                          static_cast<std::ptrdiff_t>(g.pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                acc += static_cast<double>(w[((o * g.cin + ci) * g.k + ky) * g.k + kx]) *
                       x[((n * g.cin + ci) * g.h + iy) * g.w + ix];
              }
            }
          y[((n * g.cout + o) * g.oh + oy) * g.ow + ox] = static_cast<float>(acc);
        }
  return y;
}

Tensor conv_backward(const Tensor& x, const Tensor& w, const Tensor& dy, const Conv2dLayer& c,
                     Tensor& dw, Tensor& db) {
  const ConvGeom g = conv_geom(x, c);
  std::vector<double> gw(w.size(), 0.0), gb(g.cout, 0.0), gx(x.size(), 0.0);
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t o = 0; o < g.cout; ++o)
      for (std::size_t oy = 0; oy < g.oh; ++oy)
        for (std::size_t ox = 0; ox < g.ow; ++ox) {
          const double d = dy[((n * g.cout + o) * g.oh + oy) * g.ow + ox];
          if (d == 0.0) continue;
          gb[o] += d;
          for (std::size_t ci = 0; ci < g.cin; ++ci)
            for (std::size_t ky = 0; ky < g.k; ++ky) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                        static_cast<std::ptrdiff_t>(g.pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
              for (std::size_t kx = 0; kx < g.k; ++kx) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                          static_cast<std::ptrdiff_t>(g.pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                const std::size_t wi = ((o * g.cin + ci) * g.k + ky) * g.k + kx;
                const std::size_t xi = ((n * g.cin + ci) * g.h + iy) * g.w + ix;
                gw[wi] += d * x[xi];
                gx[xi] += d * w[wi];
              }
            }
        }
  for (std::size_t i = 0; i < gw.size(); ++i) dw[i] = static_cast<float>(gw[i]);
  for (std::size_t i = 0; i < gb.size(); ++i) db[i] = static_cast<float>(gb[i]);
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < gx.size(); ++i) dx[i] = static_cast<float>(gx[i]);
  return dx;
}

// BatchNorm views its input as [B, F, S] with S = spatial size (1 for dense).
struct BnGeom {
  std::size_t batch, features, spatial;
  std::size_t count() const { return batch * spatial; }
  std::size_t at(std::size_t n, std::size_t f, std::size_t s) const {
    return (n * features + f) * spatial + s;
  }
};

BnGeom bn_geom(const Tensor& x) {
  return {x.dim(0), x.dim(1), x.size() / (x.dim(0) * x.dim(1))};
}

}  // namespace

// ---------------------------------------------------------------------------
// Forward / backward

ForwardResult Model::forward(const Tensor& batch, BnMode mode) {
  if (batch.rank() != spec_.input_shape.size() + 1 ||
      !std::equal(spec_.input_shape.begin(), spec_.input_shape.end(), batch.shape().begin() + 1))
    throw ConfigError("batch shape " + shape_string(batch.shape()) +
                      " does not match model input " + shape_string(spec_.input_shape));
  const std::size_t nbatch = batch.dim(0);

  ForwardResult result;
  result.cache.mode = mode;
  result.cache.layers.resize(spec_.layers.size());
  Tensor cur = batch;

  for (std::size_t li = 0; li < spec_.layers.size(); ++li) {
    auto& lc = result.cache.layers[li];
    const auto& lp = layer_params_[li];
    Tensor next = std::visit(
        overloaded{
            [&](const DenseLayer&) {
              return dense_forward(cur, params_[lp.weight].weight, params_[lp.bias].weight);
            },
            [&](const ReluLayer&) {
              Tensor y = cur;
              for (auto& v : y.values()) v = v > 0.0f ? v : 0.0f;
              return y;
            },
            [&](const Conv2dLayer& c) {
              return conv_forward(cur, params_[lp.weight].weight, params_[lp.bias].weight, c);
            },
            [&](const BatchNormLayer& b) {
              const BnGeom g = bn_geom(cur);
              const Tensor& gamma = params_[lp.weight].weight;
              const Tensor& beta = params_[lp.bias].weight;
              Tensor& rmean = params_[lp.running_mean].weight;
              Tensor& rvar = params_[lp.running_var].weight;
              Tensor y(cur.shape());
              Tensor xhat(cur.shape());
              lc.inv_std.assign(g.features, 0.0);
              const double n = static_cast<double>(g.count());
              for (std::size_t f = 0; f < g.features; ++f) {
                double mean = 0.0, var = 0.0;
                if (mode == BnMode::eval) {
                  mean = rmean[f];
                  var = rvar[f];
                } else {
                  for (std::size_t s0 = 0; s0 < g.batch; ++s0)
                    for (std::size_t s = 0; s < g.spatial; ++s) mean += cur[g.at(s0, f, s)];
                  mean /= n;
                  for (std::size_t s0 = 0; s0 < g.batch; ++s0)
                    for (std::size_t s = 0; s < g.spatial; ++s) {
                      const double d = cur[g.at(s0, f, s)] - mean;
                      var += d * d;
                    }
                  var /= n;
                }
                const double inv = 1.0 / std::sqrt(var + static_cast<double>(b.eps));
                lc.inv_std[f] = inv;
                for (std::size_t s0 = 0; s0 < g.batch; ++s0)
                  for (std::size_t s = 0; s < g.spatial; ++s) {
                    const std::size_t idx = g.at(s0, f, s);
                    const double xh = (cur[idx] - mean) * inv;
                    xhat[idx] = static_cast<float>(xh);
                    y[idx] = static_cast<float>(gamma[f] * xh + beta[f]);
                  }
                if (mode == BnMode::train) {
                  const double unbiased = n > 1.0 ? var * n / (n - 1.0) : var;
                  const double mom = b.momentum;
                  rmean[f] = static_cast<float>((1.0 - mom) * rmean[f] + mom * mean);
                  rvar[f] = static_cast<float>((1.0 - mom) * rvar[f] + mom * unbiased);
                } else if (mode == BnMode::collect_stats) {
                  // Chan et al. pairwise merge of (count, mean, M2).
                  auto& acc = bn_stats_[lp.bn_slot];
                  const double na = acc.count[f];
                  const double total = na + n;
                  const double delta = mean - acc.mean[f];
                  acc.mean[f] += delta * n / total;
                  acc.m2[f] += var * n + delta * delta * na * n / total;
                  acc.count[f] = total;
                }
              }
              lc.normalized = std::move(xhat);
              return y;
            },
            [&](const FlattenLayer&) { return cur.reshaped({nbatch, shape_numel(shapes_[li])}); },
        },
        spec_.layers[li]);

    if (!next.all_finite())
      throw NumericError("layer " + std::to_string(li) + " (" + layer_name(spec_.layers[li]) +
                         "): non-finite activation");
    lc.input = std::move(cur);
    cur = std::move(next);
  }
  result.logits = std::move(cur);
  return result;
}

void Model::backward(const ForwardCache& cache, const Tensor& dlogits) {
  if (cache.mode == BnMode::eval)
    throw UsageError("backward requires a cache from a train-mode forward");
  if (cache.layers.size() != spec_.layers.size())
    throw UsageError("forward cache does not belong to this model");
  for (std::size_t li = 0; li < spec_.layers.size(); ++li) {
    const Tensor& in = cache.layers[li].input;
    const Shape& expected = li == 0 ? spec_.input_shape : shapes_[li - 1];
    if (in.rank() != expected.size() + 1 ||
        !std::equal(expected.begin(), expected.end(), in.shape().begin() + 1))
      throw UsageError("forward cache does not belong to this model");
  }
  const std::size_t nbatch = cache.layers.front().input.dim(0);
  if (dlogits.rank() != 2 || dlogits.dim(0) != nbatch || dlogits.dim(1) != classes_)
    throw UsageError("dlogits shape " + shape_string(dlogits.shape()) + " does not match logits");

  params_.zero_grad();
  Tensor grad = dlogits;
  for (std::size_t li = spec_.layers.size(); li-- > 0;) {
    const auto& lc = cache.layers[li];
    const auto& lp = layer_params_[li];
    grad = std::visit(
        overloaded{
            [&](const DenseLayer&) {
              auto& w = params_[lp.weight];
              return dense_backward(lc.input, w.weight, grad, w.grad, params_[lp.bias].grad);
            },
            [&](const ReluLayer&) {
              Tensor dx = grad;
              for (std::size_t i = 0; i < dx.size(); ++i)
                if (!(lc.input[i] > 0.0f)) dx[i] = 0.0f;
              return dx;
            },
            [&](const Conv2dLayer& c) {
              auto& w = params_[lp.weight];
              return conv_backward(lc.input, w.weight, grad, c, w.grad, params_[lp.bias].grad);
            },
            [&](const BatchNormLayer&) {
              const BnGeom g = bn_geom(lc.input);
              const Tensor& gamma = params_[lp.weight].weight;
              Tensor& dgamma = params_[lp.weight].grad;
              Tensor& dbeta = params_[lp.bias].grad;
              const double n = static_cast<double>(g.count());
              Tensor dx(lc.input.shape());
              for (std::size_t f = 0; f < g.features; ++f) {
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (std::size_t s0 = 0; s0 < g.batch; ++s0)
                  for (std::size_t s = 0; s < g.spatial; ++s) {
                    const std::size_t idx = g.at(s0, f, s);
                    sum_dy += grad[idx];
                    sum_dy_xhat += static_cast<double>(grad[idx]) * lc.normalized[idx];
                  }
                dgamma[f] = static_cast<float>(sum_dy_xhat);
                dbeta[f] = static_cast<float>(sum_dy);
                const double scale = gamma[f] * lc.inv_std[f] / n;
                for (std::size_t s0 = 0; s0 < g.batch; ++s0)
                  for (std::size_t s = 0; s < g.spatial; ++s) {
                    const std::size_t idx = g.at(s0, f, s);
                    dx[idx] = static_cast<float>(
                        scale * (n * grad[idx] - sum_dy - lc.normalized[idx] * sum_dy_xhat));
                  }
              }
              return dx;
            },
            [&](const FlattenLayer&) { return grad.reshaped(lc.input.shape()); },
        },
        spec_.layers[li]);
  }
}

void Model::begin_stat_collection() {
  for (auto& acc : bn_stats_) {
    std::fill(acc.count.begin(), acc.count.end(), 0.0);
    std::fill(acc.mean.begin(), acc.mean.end(), 0.0);
    std::fill(acc.m2.begin(), acc.m2.end(), 0.0);
  }
}

void Model::finish_stat_collection() {
  for (std::size_t li = 0; li < spec_.layers.size(); ++li) {
    const auto& lp = layer_params_[li];
    if (lp.bn_slot == SIZE_MAX) continue;
    const auto& acc = bn_stats_[lp.bn_slot];
    Tensor& rmean = params_[lp.running_mean].weight;
    Tensor& rvar = params_[lp.running_var].weight;
    for (std::size_t f = 0; f < acc.count.size(); ++f) {
      const double n = acc.count[f];
      if (n == 0.0) throw UsageError("finish_stat_collection: no batches were collected");
      rmean[f] = static_cast<float>(acc.mean[f]);
      rvar[f] = static_cast<float>(n > 1.0 ? acc.m2[f] / (n - 1.0) : 0.0);
    }
  }
}

// ---------------------------------------------------------------------------
// Loss and metrics

namespace {

void check_labels(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw UsageError("logits must be [B,C], got " + shape_string(logits.shape()));
  if (labels.size() != logits.dim(0))
    throw UsageError("got " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(logits.dim(0)));
  const int classes = static_cast<int>(logits.dim(1));
  for (int y : labels)
    if (y < 0 || y >= classes)
      throw UsageError("label " + std::to_string(y) + " out of range [0," + std::to_string(classes) + ")");
}

}  // namespace

LossResult cross_entropy(const Tensor& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  LossResult r{0.0, Tensor(logits.shape())};
  std::vector<double> p(classes);
  for (std::size_t n = 0; n < batch; ++n) {
    const float* row = logits.data() + n * classes;
    const double mx = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) z += p[c] = std::exp(row[c] - mx);
    const double log_z = std::log(z) + mx;
    r.loss += log_z - row[labels[n]];
    for (std::size_t c = 0; c < classes; ++c) {
      const double onehot = static_cast<int>(c) == labels[n] ? 1.0 : 0.0;
      r.dlogits[n * classes + c] = static_cast<float>((p[c] / z - onehot) / static_cast<double>(batch));
    }
  }
  r.loss /= static_cast<double>(batch);
  return r;
}

double accuracy(const Tensor& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t n = 0; n < batch; ++n) {
    const float* row = logits.data() + n * classes;
    const auto best = static_cast<int>(std::max_element(row, row + classes) - row);
    if (best == labels[n]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(batch);
}

}  // namespace pswa
