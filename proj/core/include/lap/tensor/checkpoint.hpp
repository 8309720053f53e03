#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "lap/tensor/tensor.hpp"

namespace lap {

/// Named tensors, kept in name order so serialization is deterministic.
using TensorMap = std::map<std::string, Tensor>;

/// Binary "LAPW" weight file: little-endian, magic, u32 version, then records
/// of (u32 name length, name bytes, u32 rank, u32 extents, f64 payload).
void save_weights(const std::filesystem::path& path, const TensorMap& tensors);
TensorMap load_weights(const std::filesystem::path& path);

inline constexpr unsigned kWeightFormatVersion = 1;

}  // namespace lap
