#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pswa/tensor.hpp"

namespace pswa {

// Little-endian layout:
//   "PSWA" | u32 version | u32 count |
//   count x (u16 name_len | name | u8 rank | rank x u32 dim | f32 payload) |
//   32-byte config hash
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::vector<NamedTensor> tensors;
  std::array<std::uint8_t, 32> config_hash{};

  const Tensor* find(const std::string& name) const;
  const Tensor& at(const std::string& name) const;  // throws FormatError
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);  // throws FormatError

// Writes to `path + ".tmp"` then renames, so a crash never leaves a torn file.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace pswa
