#pragma once

#include "corrshift/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace corrshift {

/// On-disk element type. Values are held as float64 in memory either way.
enum class DType : std::uint32_t { f32 = 1, f64 = 2, i32 = 3 };

/// Layout: "CSTN" magic, u32 version (1), u32 dtype, u32 rank, rank x u64 dims,
/// then little-endian row-major data.
void write_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype = DType::f32);
Tensor read_tensor(const std::filesystem::path& path);

void write_labels(const std::filesystem::path& path, std::span<const int> labels);
std::vector<int> read_labels(const std::filesystem::path& path);

/// Whole file as bytes; used for byte-identity checks and hashing.
std::vector<char> read_bytes(const std::filesystem::path& path);

} // namespace corrshift
