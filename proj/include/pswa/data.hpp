#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pswa/tensor.hpp"

namespace pswa {

// Inputs are [N, ...per-sample shape]; labels in [0, class_count).
struct Dataset {
  Tensor inputs;
  std::vector<int> labels;
  int class_count = 0;

  std::size_t size() const noexcept { return labels.size(); }
  Shape sample_shape() const;
};

void validate(const Dataset& data);  // throws UsageError

struct BatchPlan {
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  bool drop_last = false;
};

// Gaussian blobs (sigma = 1), one per class, pairwise center distance equal
// to `separation`. Class counts are balanced; sample order is shuffled.
Dataset make_synthetic(std::uint64_t seed, std::size_t n, std::size_t dims, int classes,
                       double separation);

// IDX (MNIST) image/label pair; images become [N,1,rows,cols] in [0,1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// CIFAR-10 binary batches concatenated in order; [N,3,32,32] in [0,1].
Dataset load_cifar10_bin(std::span<const std::string> paths);

// In-place (x - mean[c]) / std[c] over dimension 1 of the inputs.
void standardize_channels(Dataset& data, std::span<const double> mean, std::span<const double> stddev);

// Seeded Fisher-Yates permutation of [0, n) for the given epoch, chunked.
std::vector<std::vector<std::size_t>> batches(std::size_t n, const BatchPlan& plan, std::uint64_t epoch);

// Rows `indices` of the dataset as a batch tensor plus labels.
struct Batch {
  Tensor inputs;
  std::vector<int> labels;
};
Batch gather(const Dataset& data, std::span<const std::size_t> indices);

// Samples [begin, end) as a new dataset.
Dataset slice(const Dataset& data, std::size_t begin, std::size_t end);

}  // namespace pswa
