#pragma once

#include "pics/io.hpp"
#include "pics/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace pics {

// Layout: "PICS" | u32 version (LE) | u64 header length (LE) | JSON header |
// f32 LE blobs in header order. The header is
//   {"tensors": [{"name", "shape", "offset", "nbytes"}, ...], "meta": {...}}
// with offsets relative to the start of the blob section.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct Checkpoint {
  std::vector<NamedTensor> tensors;
  json meta = json::object();
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const fs::path& path);

/// Rounds every value to the nearest f32, the precision checkpoints store.
Tensor round_to_f32(const Tensor& t);

}  // namespace pics
