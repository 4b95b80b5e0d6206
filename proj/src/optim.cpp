#include "pswa/optim.hpp"

#include <cmath>

#include "pswa/error.hpp"

namespace pswa {

namespace {

std::vector<NamedTensor> zeros_like_trainable(const ParameterSet& params) {
  std::vector<NamedTensor> out;
  for (const auto& e : params)
    if (e.trainable()) out.push_back({e.name, Tensor(e.weight.shape(), 0.0f)});
  return out;
}

// Pairs each trainable entry with its state slot, checking the layout.
template <class Fn>
void for_each_trainable(ParameterSet& params, const std::vector<NamedTensor>& slots, Fn&& fn) {
  std::size_t k = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& e = params[i];
    if (!e.trainable()) continue;
    if (k >= slots.size() || slots[k].name != e.name || slots[k].value.shape() != e.weight.shape())
      throw UsageError("optimizer state does not match parameter '" + e.name + "'");
    if (!e.grad.all_finite()) throw NumericError("non-finite gradient in '" + e.name + "'");
    fn(e, k);
    ++k;
  }
  if (k != slots.size()) throw UsageError("optimizer state has extra entries");
}

}  // namespace

SgdState make_sgd_state(const ParameterSet& params, double momentum, double weight_decay) {
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("sgd momentum must be in [0,1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("sgd weight_decay must be >= 0");
  return {momentum, weight_decay, zeros_like_trainable(params)};
}

AdamState make_adam_state(const ParameterSet& params, double beta1, double beta2, double eps,
                          double weight_decay) {
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("adam betas must be in [0,1)");
  if (!(eps > 0.0)) throw ConfigError("adam eps must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("adam weight_decay must be >= 0");
  return {beta1, beta2, eps, weight_decay, 0, zeros_like_trainable(params), zeros_like_trainable(params)};
}

void sgd_step(ParameterSet& params, SgdState& state, double lr) {
  if (!(lr >= 0.0)) throw UsageError("learning rate must be >= 0");
  for_each_trainable(params, state.velocity, [&](ParamEntry& e, std::size_t k) {
    Tensor& v = state.velocity[k].value;
    for (std::size_t i = 0; i < e.weight.size(); ++i) {
      const double g = static_cast<double>(e.grad[i]) + state.weight_decay * e.weight[i];
      const double vel = state.momentum * v[i] + g;
      v[i] = static_cast<float>(vel);
      e.weight[i] = static_cast<float>(e.weight[i] - lr * vel);
    }
  });
}

void adam_step(ParameterSet& params, AdamState& state, double lr) {
  if (!(lr >= 0.0)) throw UsageError("learning rate must be >= 0");
  const auto t = static_cast<double>(state.step_count + 1);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for_each_trainable(params, state.m, [&](ParamEntry& e, std::size_t k) {
    Tensor& m = state.m[k].value;
    Tensor& v = state.v.at(k).value;
    for (std::size_t i = 0; i < e.weight.size(); ++i) {
      const double g = static_cast<double>(e.grad[i]) + state.weight_decay * e.weight[i];
      const double mi = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      const double vi = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      e.weight[i] = static_cast<float>(e.weight[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + state.eps));
    }
  });
  ++state.step_count;
}

void Optimizer::step(ParameterSet& params, double lr) {
  std::visit(
      [&](auto& s) {
        if constexpr (std::is_same_v<std::decay_t<decltype(s)>, SgdState>)
          sgd_step(params, s, lr);
        else
          adam_step(params, s, lr);
      },
      state_);
}

std::vector<NamedTensor> Optimizer::export_state() const {
  std::vector<NamedTensor> out;
  if (const auto* s = std::get_if<SgdState>(&state_)) {
    for (const auto& t : s->velocity) out.push_back({"velocity/" + t.name, t.value});
  } else {
    const auto& a = std::get<AdamState>(state_);
    out.push_back({"adam_step", Tensor::scalar(static_cast<float>(a.step_count))});
    for (const auto& t : a.m) out.push_back({"adam_m/" + t.name, t.value});
    for (const auto& t : a.v) out.push_back({"adam_v/" + t.name, t.value});
  }
  return out;
}

void Optimizer::import_state(const std::vector<NamedTensor>& tensors) {
  auto lookup = [&](const std::string& name) -> const Tensor& {
    for (const auto& t : tensors)
      if (t.name == name) return t.value;
    throw UsageError("optimizer state tensor '" + name + "' missing");
  };
  auto fill = [&](std::vector<NamedTensor>& slots, const std::string& prefix) {
    for (auto& slot : slots) {
      const Tensor& src = lookup(prefix + slot.name);
      if (src.shape() != slot.value.shape())
        throw UsageError("optimizer state tensor '" + prefix + slot.name + "' has wrong shape");
      slot.value = src;
    }
  };
  if (auto* s = std::get_if<SgdState>(&state_)) {
    fill(s->velocity, "velocity/");
  } else {
    auto& a = std::get<AdamState>(state_);
    a.step_count = static_cast<std::uint64_t>(lookup("adam_step")[0]);
    fill(a.m, "adam_m/");
    fill(a.v, "adam_v/");
  }
}

void validate(const LRSchedule& s) {
  if (!(s.base_lr >= 0.0) || !std::isfinite(s.base_lr)) throw ConfigError("schedule base_lr must be finite and >= 0");
  switch (s.kind) {
    case ScheduleKind::constant:
      break;
    case ScheduleKind::step:
      for (std::size_t i = 0; i < s.milestones.size(); ++i) {
        if (s.milestones[i] < 0) throw ConfigError("schedule milestones must be >= 0");
        if (i && s.milestones[i] <= s.milestones[i - 1])
          throw ConfigError("schedule milestones must be strictly increasing");
      }
      if (!(s.gamma > 0.0 && s.gamma <= 1.0)) throw ConfigError("schedule gamma must be in (0,1]");
      break;
    case ScheduleKind::poly:
      if (s.total_epochs < 1) throw ConfigError("schedule total_epochs must be >= 1");
      if (!(s.power > 0.0)) throw ConfigError("schedule power must be > 0");
      break;
  }
}

double lr_at(const LRSchedule& s, int epoch) {
  if (epoch < 0) throw UsageError("lr_at: epoch must be >= 0");
  switch (s.kind) {
    case ScheduleKind::constant:
      return s.base_lr;
    case ScheduleKind::step: {
      double lr = s.base_lr;
      for (int m : s.milestones)
        if (m <= epoch) lr *= s.gamma;
      return lr;
    }
    case ScheduleKind::poly: {
      if (epoch >= s.total_epochs) return 0.0;
      return s.base_lr * std::pow(1.0 - static_cast<double>(epoch) / s.total_epochs, s.power);
    }
  }
  return s.base_lr;
}

}  // namespace pswa
