#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "pswa/nn.hpp"

namespace pswa {

// SGD with heavy-ball momentum and coupled L2 penalty:
//   g' = g + weight_decay * w;  v <- mu * v + g';  w <- w - lr * v
struct SgdState {
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<NamedTensor> velocity;  // one per trainable entry, same order
};

// Bias-corrected Adam. weight_decay is coupled L2 (added to g), 0 by default.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::uint64_t step_count = 0;
  std::vector<NamedTensor> m;
  std::vector<NamedTensor> v;
};

SgdState make_sgd_state(const ParameterSet& params, double momentum, double weight_decay);
AdamState make_adam_state(const ParameterSet& params, double beta1 = 0.9, double beta2 = 0.999,
                          double eps = 1e-8, double weight_decay = 0.0);

void sgd_step(ParameterSet& params, SgdState& state, double lr);
void adam_step(ParameterSet& params, AdamState& state, double lr);

// Either optimizer behind one interface, for the training loop and checkpoints.
class Optimizer {
 public:
  explicit Optimizer(SgdState state) : state_(std::move(state)) {}
  explicit Optimizer(AdamState state) : state_(std::move(state)) {}

  void step(ParameterSet& params, double lr);

  // Flattened state tensors, prefixed "velocity/", "adam_m/", "adam_v/";
  // Adam's step count is exported as a one-element tensor "adam_step".
  std::vector<NamedTensor> export_state() const;
  void import_state(const std::vector<NamedTensor>& tensors);

  const std::variant<SgdState, AdamState>& state() const noexcept { return state_; }

 private:
  std::variant<SgdState, AdamState> state_;
};

enum class ScheduleKind { constant, step, poly };

struct LRSchedule {
  ScheduleKind kind = ScheduleKind::constant;
  double base_lr = 0.1;
  std::vector<int> milestones;  // step: strictly increasing epochs
  double gamma = 0.1;           // step: decay factor per milestone
  double power = 1.0;           // poly
  int total_epochs = 1;         // poly
};

void validate(const LRSchedule& schedule);  // throws ConfigError

// Learning rate for a 0-based absolute epoch index.
double lr_at(const LRSchedule& schedule, int epoch);

}  // namespace pswa
