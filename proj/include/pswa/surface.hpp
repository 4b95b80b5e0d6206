#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "pswa/data.hpp"
#include "pswa/nn.hpp"

namespace pswa {

// One tensor per trainable parameter entry, same names and shapes.
using Direction = std::vector<NamedTensor>;

// Gaussian direction over the trainable entries of rank >= 2; 1-D entries
// (biases, BN gamma/beta) get zeros.
Direction random_direction(const ParameterSet& params, std::uint64_t seed);

// Rescales each output row (dense) or output filter (conv) group of `d` to
// the norm of the matching weight group. Zero weight groups and 1-D entries
// come out zero.
Direction filter_normalize(const Direction& d, const ParameterSet& weights);

struct ScanResult {
  std::vector<double> lambdas;
  std::vector<double> train_loss, train_acc, test_loss, test_acc;  // accuracy as a fraction
};

struct ScanPoint {
  double train_loss = 0.0, train_acc = 0.0, test_loss = 0.0, test_acc = 0.0;
};

// Evaluates the current contents of a ParameterSet.
using ScanEvaluator = std::function<ScanPoint(const ParameterSet&)>;

// `count` points evenly spaced on [lo, hi] (endpoints exact).
std::vector<double> lambda_grid(std::size_t count, double lo, double hi);

// w + lambda d for each lambda; the set is restored bit-exactly afterwards.
// A NumericError during evaluation records +inf loss and NaN accuracy.
ScanResult scan_1d(ParameterSet& params, const Direction& d, std::span<const double> lambdas,
                   const ScanEvaluator& evaluate);
// Model form: BN eval mode with the stored running statistics.
ScanResult scan_1d(Model& model, const Dataset& train, const Dataset& test, const Direction& d,
                   std::span<const double> lambdas, std::size_t batch_size);

// (1 - lambda) w_a + lambda w_b over every entry, running stats included.
ScanResult interpolate(const Model& a, const Model& b, const Dataset& train, const Dataset& test,
                       std::span<const double> lambdas, std::size_t batch_size);

}  // namespace pswa
