#pragma once

// Named-tensor blob:
//   magic "MILCKPT\0" | u32 version (1) | u32 n_tensors
//   per tensor: u32 name_len | name bytes | u64 rows | u64 cols | rows*cols f64
// All integers and floats little-endian.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "milbench/numerics.hpp"

namespace milbench {

inline constexpr std::uint32_t kTensorBlobVersion = 1;

struct NamedTensor {
  std::string name;
  Matrix value;
};

void write_tensor_blob(const std::filesystem::path& path, std::span<const NamedTensor> tensors);
/// Throws IoError on a missing, truncated or foreign file.
std::vector<NamedTensor> read_tensor_blob(const std::filesystem::path& path);

}  // namespace milbench
