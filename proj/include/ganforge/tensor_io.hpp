#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "ganforge/tensor.hpp"

namespace ganforge {

// GFT1 block layout (all little-endian):
//   "GFT1" | u32 rank | u32 dims[rank] | f64 values[product(dims)]

void write_gft(std::ostream& os, const Tensor& t);
Tensor read_gft(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Container with a JSON header:
//   magic[4] | u32 header_bytes | header (UTF-8 JSON) | GFT1 block per tensor
// The header must hold a "tensors" array naming the blocks in order.
void write_container(std::ostream& os, const char magic[4], const std::string& header_json,
                     const NamedTensors& tensors);
/// Returns the header text; fills `tensors` in stored order.
std::string read_container(std::istream& is, const char magic[4], NamedTensors& tensors);

/// Writes to a sibling temp file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace ganforge
