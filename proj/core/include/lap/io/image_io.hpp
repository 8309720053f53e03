#pragma once

#include <filesystem>

#include "lap/tensor/tensor.hpp"

namespace lap::io {

/// Writes a [C,H,W] tensor (C = 1 or 3, values in [0,1]) as an 8-bit PNG.
/// Values are clamped and rounded to the nearest level.
void write_png(const std::filesystem::path& path, const Tensor& image);

/// Reads an 8-bit gray or RGB(A) PNG into [C,H,W] with values in [0,1].
/// Alpha is dropped.
Tensor read_png(const std::filesystem::path& path);

/// Raw 8-bit levels of a PNG, [C,H,W] holding integers 0..255.
Tensor read_png_levels(const std::filesystem::path& path);

/// Normal map [3,H,W] stored as (n + 1) / 2.
void write_normals_png(const std::filesystem::path& path, const Tensor& normals);

/// "LAPD" depth raster: magic, u32 H, u32 W, u32 reserved (0), then H*W
/// little-endian float32 values in row-major order.
void write_depth(const std::filesystem::path& path, const Tensor& depth);
/// Returns [1,H,W].
Tensor read_depth(const std::filesystem::path& path);

}  // namespace lap::io
