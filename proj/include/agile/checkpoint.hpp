#pragma once

// AGFK named-tensor container.
//
//   "AGFK" | u32 version (=1) | u32 count
//   per tensor: u16 name_len | name bytes | u8 dtype (0 = f64) | u8 rank |
//               u32 dims[rank] | payload (f64, little-endian)
//
// All integers little-endian.

#include <string>
#include <utility>
#include <vector>

#include "agile/params.hpp"
#include "agile/tensor.hpp"

namespace agile {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const NamedTensors& tensors);
/// Throws FormatError with the byte offset of the first malformed field.
NamedTensors decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::string& path, const ParameterStore& params);
NamedTensors read_checkpoint(const std::string& path);

/// Replaces every parameter with the checkpoint tensor of the same name.
/// Throws ConfigError naming the tensor on a missing name or shape mismatch,
/// or on checkpoint tensors the store does not have.
void load_into(ParameterStore& params, const NamedTensors& tensors);

}  // namespace agile
