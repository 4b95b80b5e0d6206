#include "pswa/surface.hpp"

#include <cmath>
#include <limits>

#include "pswa/error.hpp"
#include "pswa/harness.hpp"
#include "pswa/rng.hpp"

namespace pswa {

namespace {

void check_direction(const Direction& d, const ParameterSet& params) {
  std::size_t slot = 0;
  for (const auto& e : params) {
    if (!e.trainable()) continue;
    if (slot >= d.size() || d[slot].name != e.name || d[slot].value.shape() != e.weight.shape())
      throw UsageError("direction does not match parameter '" + e.name + "'");
    ++slot;
  }
  if (slot != d.size()) throw UsageError("direction has entries the parameter set lacks");
}

ScanPoint failed_point() {
  const double inf = std::numeric_limits<double>::infinity(), nan = std::numeric_limits<double>::quiet_NaN();
  return {inf, nan, inf, nan};
}

void append(ScanResult& r, double lambda, const ScanPoint& p) {
  auto loss = [](double v) { return std::isfinite(v) ? v : std::numeric_limits<double>::infinity(); };
  r.lambdas.push_back(lambda);
  r.train_loss.push_back(loss(p.train_loss));
  r.train_acc.push_back(p.train_acc);
  r.test_loss.push_back(loss(p.test_loss));
  r.test_acc.push_back(p.test_acc);
}

ScanPoint guarded(const ScanEvaluator& evaluate, const ParameterSet& params) {
  try {
    return evaluate(params);
  } catch (const NumericError&) {
    return failed_point();
  }
}

ScanEvaluator model_evaluator(Model& model, const Dataset& train, const Dataset& test, std::size_t batch_size) {
  return [&model, &train, &test, batch_size](const ParameterSet&) {
    const auto tr = evaluate(model, train, batch_size);
    const auto te = evaluate(model, test, batch_size);
    return ScanPoint{tr.loss, tr.accuracy, te.loss, te.accuracy};
  };
}

}  // namespace

Direction random_direction(const ParameterSet& params, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xd1));
  Direction d;
  for (const auto& e : params) {
    if (!e.trainable()) continue;
    Tensor t(e.weight.shape());
    if (e.weight.rank() >= 2)
      for (auto& v : t.values()) v = static_cast<float>(rng.normal());
    d.push_back({e.name, std::move(t)});
  }
  return d;
}

Direction filter_normalize(const Direction& d, const ParameterSet& weights) {
  check_direction(d, weights);
  Direction out = d;
  std::size_t slot = 0;
  for (const auto& e : weights) {
    if (!e.trainable()) continue;
    Tensor& t = out[slot++].value;
    if (e.weight.rank() < 2) {
      t.fill(0.0f);
      continue;
    }
    const std::size_t groups = e.weight.dim(0), width = e.weight.size() / groups;
    for (std::size_t g = 0; g < groups; ++g) {
      double wn = 0.0, dn = 0.0;
      for (std::size_t j = g * width; j < (g + 1) * width; ++j) {
        wn += static_cast<double>(e.weight[j]) * e.weight[j];
        dn += static_cast<double>(t[j]) * t[j];
      }
      const double scale = (wn > 0.0 && dn > 0.0) ? std::sqrt(wn) / std::sqrt(dn) : 0.0;
      for (std::size_t j = g * width; j < (g + 1) * width; ++j) t[j] = static_cast<float>(t[j] * scale);
    }
  }
  return out;
}

std::vector<double> lambda_grid(std::size_t count, double lo, double hi) {
  if (count < 1) throw UsageError("lambda grid needs at least one point");
  if (!(lo <= hi)) throw UsageError("lambda grid needs min <= max");
  if (count == 1) return {lo};
  std::vector<double> g(count);
  const double n = static_cast<double>(count - 1);
  // Weighted-endpoint form so a grid symmetric about 0 mirrors exactly and hits 0.
  for (std::size_t i = 0; i < count; ++i) {
    const double k = static_cast<double>(i);
    g[i] = lo * ((n - k) / n) + hi * (k / n);
  }
  return g;
}

ScanResult scan_1d(ParameterSet& params, const Direction& d, std::span<const double> lambdas,
                   const ScanEvaluator& evaluate) {
  check_direction(d, params);
  bool has_zero = false;
  for (double l : lambdas) has_zero = has_zero || l == 0.0;
  if (!has_zero) throw UsageError("scan_1d: lambda grid must contain 0");

  const ParameterSet original = params;
  ScanResult r;
  try {
    for (double lambda : lambdas) {
      std::size_t slot = 0;
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto& e = params[i];
        if (!e.trainable()) continue;
        const auto& w0 = original[i].weight;
        const auto& dir = d[slot++].value;
        for (std::size_t j = 0; j < w0.size(); ++j)
          e.weight[j] = static_cast<float>(w0[j] + lambda * static_cast<double>(dir[j]));
      }
      append(r, lambda, guarded(evaluate, params));
    }
  } catch (...) {
    copy_weights(original, params);
    throw;
  }
  copy_weights(original, params);
  return r;
}

ScanResult scan_1d(Model& model, const Dataset& train, const Dataset& test, const Direction& d,
                   std::span<const double> lambdas, std::size_t batch_size) {
  return scan_1d(model.params(), d, lambdas, model_evaluator(model, train, test, batch_size));
}

ScanResult interpolate(const Model& a, const Model& b, const Dataset& train, const Dataset& test,
                       std::span<const double> lambdas, std::size_t batch_size) {
  if (!a.params().same_layout(b.params())) throw UsageError("interpolate: models have different architectures");
  Model scratch(a.spec(), a.params());
  const auto eval = model_evaluator(scratch, train, test, batch_size);
  ScanResult r;
  for (double lambda : lambdas) {
    for (std::size_t i = 0; i < scratch.params().size(); ++i) {
      const auto& wa = a.params()[i].weight;
      const auto& wb = b.params()[i].weight;
      auto& w = scratch.params()[i].weight;
      for (std::size_t j = 0; j < w.size(); ++j)
        w[j] = static_cast<float>((1.0 - lambda) * static_cast<double>(wa[j]) + lambda * static_cast<double>(wb[j]));
    }
    append(r, lambda, guarded(eval, scratch.params()));
  }
  return r;
}

}  // namespace pswa
