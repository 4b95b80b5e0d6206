#pragma once

// Central finite-difference oracle for model gradients. Test-only and
// independent of the library's kernels: the loss is recomputed by a separate
// double-precision reference forward (dense, conv2d, relu, flatten,
// train-mode batchnorm) so the differences are free of float32 round-off.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <variant>
#include <vector>

#include "pswa/nn.hpp"

namespace pswa::testing {

struct RefTensor {
  std::vector<std::size_t> shape;  // includes batch
  std::vector<double> v;
};

// Weights of a ParameterSet as doubles, indexed like the set itself.
using RefParams = std::vector<std::vector<double>>;

inline RefParams to_ref(const ParameterSet& params) {
  RefParams out;
  for (const auto& e : params) out.emplace_back(e.weight.values().begin(), e.weight.values().end());
  return out;
}

// `relu_signs`, when given, receives the sign of every ReLU input in order.
inline double reference_loss(const ModelSpec& spec, const ParameterSet& layout, const RefParams& w,
                             const Tensor& x, std::span<const int> labels, std::vector<char>* relu_signs = nullptr) {
  RefTensor cur{x.shape(), std::vector<double>(x.values().begin(), x.values().end())};
  const std::size_t batch = x.dim(0);
  for (std::size_t li = 0; li < spec.layers.size(); ++li) {
    const std::string p = std::to_string(li) + ".";
    auto idx = [&](const std::string& n) {
      for (std::size_t i = 0; i < layout.size(); ++i)
        if (layout[i].name == p + n) return i;
      return std::size_t(-1);
    };
    const auto& layer = spec.layers[li];
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      const auto& W = w[idx("weight")];
      const auto& B = w[idx("bias")];
      RefTensor y{{batch, d->out}, std::vector<double>(batch * d->out)};
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t o = 0; o < d->out; ++o) {
          double s = B[o];
          for (std::size_t i = 0; i < d->in; ++i) s += W[o * d->in + i] * cur.v[n * d->in + i];
          y.v[n * d->out + o] = s;
        }
      cur = std::move(y);
    } else if (std::holds_alternative<ReluLayer>(layer)) {
      if (relu_signs)
        for (double v : cur.v) relu_signs->push_back(v > 0.0);
      for (auto& v : cur.v) v = std::max(v, 0.0);
    } else if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
      const auto& W = w[idx("weight")];
      const auto& B = w[idx("bias")];
      const std::size_t C = cur.shape[1], H = cur.shape[2], Wd = cur.shape[3], K = c->kernel;
      const std::size_t OH = (H + 2 * c->pad - K) / c->stride + 1, OW = (Wd + 2 * c->pad - K) / c->stride + 1;
      RefTensor y{{batch, c->out_channels, OH, OW}, std::vector<double>(batch * c->out_channels * OH * OW)};
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t o = 0; o < c->out_channels; ++o)
          for (std::size_t oy = 0; oy < OH; ++oy)
            for (std::size_t ox = 0; ox < OW; ++ox) {
              double s = B[o];
              for (std::size_t ci = 0; ci < C; ++ci)
                for (std::size_t ky = 0; ky < K; ++ky)
                  for (std::size_t kx = 0; kx < K; ++kx) {
                    const long iy = static_cast<long>(oy * c->stride + ky) - static_cast<long>(c->pad);
                    const long ix = static_cast<long>(ox * c->stride + kx) - static_cast<long>(c->pad);
                    if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(Wd)) continue;
                    s += W[((o * C + ci) * K + ky) * K + kx] * cur.v[((n * C + ci) * H + iy) * Wd + ix];
                  }
              y.v[((n * c->out_channels + o) * OH + oy) * OW + ox] = s;
            }
      cur = std::move(y);
    } else if (const auto* b = std::get_if<BatchNormLayer>(&layer)) {
      const auto& G = w[idx("gamma")];
      const auto& Be = w[idx("beta")];
      const std::size_t F = cur.shape[1];
      const std::size_t S = cur.v.size() / (batch * F);
      for (std::size_t f = 0; f < F; ++f) {
        double mean = 0, var = 0;
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t s = 0; s < S; ++s) mean += cur.v[(n * F + f) * S + s];
        mean /= static_cast<double>(batch * S);
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t s = 0; s < S; ++s) var += std::pow(cur.v[(n * F + f) * S + s] - mean, 2);
        var /= static_cast<double>(batch * S);
        const double inv = 1.0 / std::sqrt(var + static_cast<double>(b->eps));
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t s = 0; s < S; ++s) {
            double& v = cur.v[(n * F + f) * S + s];
            v = G[f] * (v - mean) * inv + Be[f];
          }
      }
    } else {
      cur.shape = {batch, cur.v.size() / batch};
    }
  }
  const std::size_t classes = cur.v.size() / batch;
  double loss = 0.0;
  for (std::size_t n = 0; n < batch; ++n) {
    const double* row = cur.v.data() + n * classes;
    const double mx = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t k = 0; k < classes; ++k) z += std::exp(row[k] - mx);
    loss += std::log(z) + mx - row[labels[n]];
  }
  return loss / static_cast<double>(batch);
}

struct GradCheckResult {
  std::size_t checked = 0;  // coordinates with magnitude > floor
  std::size_t passed = 0;
  std::size_t kinked = 0;  // skipped: the +-h stencil crosses a ReLU kink
  double worst_rel = 0.0;

  double pass_fraction() const { return checked ? static_cast<double>(passed) / checked : 1.0; }
};

// Compares analytic gradients already stored in model.params() against
// (L(w+h) - L(w-h)) / 2h from the reference forward, one coordinate at a time.
// With `skip_kinks`, coordinates whose two stencil points put some ReLU input
// on different sides of zero are counted in `kinked` instead of checked.
inline GradCheckResult finite_difference_check(const Model& model, const Tensor& x, std::span<const int> labels,
                                               double h = 1e-3, double rel_tol = 1e-2, double floor = 1e-6,
                                               bool skip_kinks = false) {
  GradCheckResult r;
  const auto& params = model.params();
  RefParams w = to_ref(params);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const auto& e = params[pi];
    if (!e.trainable()) continue;
    for (std::size_t j = 0; j < e.weight.size(); ++j) {
      const double orig = w[pi][j];
      std::vector<char> sp, sm;
      w[pi][j] = orig + h;
      const double lp = reference_loss(model.spec(), params, w, x, labels, skip_kinks ? &sp : nullptr);
      w[pi][j] = orig - h;
      const double lm = reference_loss(model.spec(), params, w, x, labels, skip_kinks ? &sm : nullptr);
      w[pi][j] = orig;
      if (sp != sm) {
        ++r.kinked;
        continue;
      }
      const double numeric = (lp - lm) / (2.0 * h);
      const double analytic = e.grad[j];
      const double mag = std::max(std::abs(numeric), std::abs(analytic));
      if (mag <= floor) continue;
      const double rel = std::abs(numeric - analytic) / mag;
      ++r.checked;
      if (rel <= rel_tol) ++r.passed;
      r.worst_rel = std::max(r.worst_rel, rel);
    }
  }
  return r;
}

}  // namespace pswa::testing
