#include "pswa/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include "pswa/error.hpp"
#include "pswa/rng.hpp"

namespace pswa {

Shape Dataset::sample_shape() const {
  if (inputs.rank() < 2) return {};
  return Shape(inputs.shape().begin() + 1, inputs.shape().end());
}

void validate(const Dataset& data) {
  if (data.size() == 0) throw UsageError("dataset is empty");
  if (data.inputs.rank() < 2 || data.inputs.dim(0) != data.size())
    throw UsageError("dataset inputs " + shape_string(data.inputs.shape()) + " do not match " +
                     std::to_string(data.size()) + " labels");
  for (int y : data.labels)
    if (y < 0 || y >= data.class_count)
      throw UsageError("dataset label " + std::to_string(y) + " outside [0," +
                       std::to_string(data.class_count) + ")");
  if (!data.inputs.all_finite()) throw UsageError("dataset inputs contain non-finite values");
}

Dataset make_synthetic(std::uint64_t seed, std::size_t n, std::size_t dims, int classes,
                       double separation) {
  if (classes < 2) throw UsageError("make_synthetic: classes must be >= 2");
  if (n < static_cast<std::size_t>(classes)) throw UsageError("make_synthetic: n must be >= classes");
  if (dims == 0) throw UsageError("make_synthetic: dims must be >= 1");
  if (!(separation >= 0.0)) throw UsageError("make_synthetic: separation must be >= 0");

  const auto nc = static_cast<std::size_t>(classes);
  std::vector<double> centers(nc * dims, 0.0);
  if (dims >= nc) {
    // Scaled one-hot centers: every pair is exactly `separation` apart.
    const double a = separation / std::sqrt(2.0);
    for (std::size_t c = 0; c < nc; ++c) centers[c * dims + c] = a;
  } else {
    Rng crng(derive_seed(seed, 1));
    for (auto& v : centers) v = crng.normal();
    double min_dist = INFINITY;
    for (std::size_t a = 0; a < nc; ++a)
      for (std::size_t b = a + 1; b < nc; ++b) {
        double d2 = 0.0;
        for (std::size_t k = 0; k < dims; ++k) {
          const double d = centers[a * dims + k] - centers[b * dims + k];
          d2 += d * d;
        }
        min_dist = std::min(min_dist, std::sqrt(d2));
      }
    const double s = min_dist > 0.0 ? separation / min_dist : 0.0;
    for (auto& v : centers) v *= s;
  }

  Rng rng(derive_seed(seed, 2));
  Dataset d{Tensor({n, dims}), std::vector<int>(n), classes};
  for (std::size_t i = 0; i < n; ++i) d.labels[i] = static_cast<int>(i % nc);
  for (std::size_t i = n; i > 1; --i) std::swap(d.labels[i - 1], d.labels[rng.below(i)]);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::size_t>(d.labels[i]);
    for (std::size_t k = 0; k < dims; ++k)
      d.inputs[i * dims + k] = static_cast<float>(centers[c * dims + k] + rng.normal());
  }
  return d;
}

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'", 0);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t off, const std::string& path) {
  if (off + 4 > buf.size()) throw FormatError("'" + path + "': truncated header", buf.size());
  return (std::uint32_t{buf[off]} << 24) | (std::uint32_t{buf[off + 1]} << 16) |
         (std::uint32_t{buf[off + 2]} << 8) | std::uint32_t{buf[off + 3]};
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);

  if (const auto magic = read_be32(img, 0, images_path); magic != 0x00000803)
    throw FormatError("'" + images_path + "': bad IDX image magic " + std::to_string(magic), 0);
  if (const auto magic = read_be32(lab, 0, labels_path); magic != 0x00000801)
    throw FormatError("'" + labels_path + "': bad IDX label magic " + std::to_string(magic), 0);

  const std::size_t count = read_be32(img, 4, images_path);
  const std::size_t rows = read_be32(img, 8, images_path);
  const std::size_t cols = read_be32(img, 12, images_path);
  const std::size_t label_count = read_be32(lab, 4, labels_path);
  if (count != label_count)
    throw FormatError("image count " + std::to_string(count) + " != label count " +
                          std::to_string(label_count),
                      4);
  if (count == 0 || rows == 0 || cols == 0) throw FormatError("'" + images_path + "': empty IDX dimensions", 4);

  const std::size_t pixels = rows * cols;
  if (img.size() < 16 + count * pixels)
    throw FormatError("'" + images_path + "': truncated pixel data", img.size());
  if (lab.size() < 8 + count) throw FormatError("'" + labels_path + "': truncated label data", lab.size());

  Dataset d{Tensor({count, 1, rows, cols}), std::vector<int>(count), 0};
  for (std::size_t i = 0; i < count * pixels; ++i) d.inputs[i] = static_cast<float>(img[16 + i] / 255.0);
  int max_label = 0;
  for (std::size_t i = 0; i < count; ++i) {
    d.labels[i] = lab[8 + i];
    max_label = std::max(max_label, d.labels[i]);
  }
  d.class_count = max_label + 1;
  return d;
}

Dataset load_cifar10_bin(std::span<const std::string> paths) {
  constexpr std::size_t kPixels = 3 * 32 * 32;
  constexpr std::size_t kRecord = 1 + kPixels;
  std::vector<float> values;
  std::vector<int> labels;
  for (const auto& path : paths) {
    const auto buf = read_file(path);
    if (buf.empty()) throw FormatError("'" + path + "': empty CIFAR-10 file", 0);
    if (buf.size() % kRecord != 0)
      throw FormatError("'" + path + "': trailing partial record", buf.size() - buf.size() % kRecord);
    for (std::size_t off = 0; off < buf.size(); off += kRecord) {
      if (buf[off] > 9) throw FormatError("'" + path + "': label " + std::to_string(buf[off]) + " > 9", off);
      labels.push_back(buf[off]);
      for (std::size_t p = 0; p < kPixels; ++p) values.push_back(static_cast<float>(buf[off + 1 + p] / 255.0));
    }
  }
  if (labels.empty()) throw UsageError("load_cifar10_bin: no input files");
  const std::size_t n = labels.size();
  return {Tensor({n, 3, 32, 32}, std::move(values)), std::move(labels), 10};
}

void standardize_channels(Dataset& data, std::span<const double> mean, std::span<const double> stddev) {
  if (data.inputs.rank() < 2) throw UsageError("standardize_channels: inputs need a channel dimension");
  const std::size_t channels = data.inputs.dim(1);
  if (mean.size() != channels || stddev.size() != channels)
    throw UsageError("standardize_channels: expected " + std::to_string(channels) + " mean/std values");
  for (double s : stddev)
    if (!(s > 0.0)) throw UsageError("standardize_channels: std must be > 0");
  const std::size_t inner = data.inputs.size() / (data.inputs.dim(0) * channels);
  for (std::size_t n = 0; n < data.inputs.dim(0); ++n)
    for (std::size_t c = 0; c < channels; ++c) {
      float* p = data.inputs.data() + (n * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) p[i] = static_cast<float>((p[i] - mean[c]) / stddev[c]);
    }
}

std::vector<std::vector<std::size_t>> batches(std::size_t n, const BatchPlan& plan, std::uint64_t epoch) {
  if (plan.batch_size == 0) throw UsageError("batch_size must be >= 1");
  if (plan.batch_size > n) throw UsageError("batch_size exceeds dataset size");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(derive_seed(plan.seed, 0xba7c4000ULL + epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);

  const std::size_t count = plan.drop_last ? n / plan.batch_size : (n + plan.batch_size - 1) / plan.batch_size;
  std::vector<std::vector<std::size_t>> out(count);
  for (std::size_t b = 0; b < count; ++b) {
    const std::size_t lo = b * plan.batch_size;
    const std::size_t hi = std::min(n, lo + plan.batch_size);
    out[b].assign(perm.begin() + static_cast<std::ptrdiff_t>(lo), perm.begin() + static_cast<std::ptrdiff_t>(hi));
  }
  return out;
}

Batch gather(const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw UsageError("gather: empty index list");
  const std::size_t stride = data.inputs.size() / data.size();
  Shape shape = data.inputs.shape();
  shape[0] = indices.size();
  Batch b{Tensor(shape), std::vector<int>(indices.size())};
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    if (i >= data.size()) throw UsageError("gather: index " + std::to_string(i) + " out of range");
    std::memcpy(b.inputs.data() + k * stride, data.inputs.data() + i * stride, stride * sizeof(float));
    b.labels[k] = data.labels[i];
  }
  return b;
}

Dataset slice(const Dataset& data, std::size_t begin, std::size_t end) {
  if (begin >= end || end > data.size()) throw UsageError("slice: invalid range");
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  auto b = gather(data, idx);
  return {std::move(b.inputs), std::move(b.labels), data.class_count};
}

}  // namespace pswa
