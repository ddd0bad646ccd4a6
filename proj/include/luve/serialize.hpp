#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "luve/tensor.hpp"

namespace luve {

// Raw tensor file ("LUVT"): magic, u8 version=1, u8 dtype (0=f32, 1=f64),
// u8 rank, u32 little-endian extents, row-major little-endian payload.
enum class DType : uint8_t { f32 = 0, f64 = 1 };

void write_luvt(std::ostream& os, const Tensor& t, DType dtype);
Tensor read_luvt(std::istream& is);

void save_tensor(const std::string& path, const Tensor& t, DType dtype = DType::f32);
Tensor load_tensor(const std::string& path);

// Checkpoint file ("LUVE"): magic, u8 version=1, u32 record count, then per
// record a u32 name length, the UTF-8 name, and an embedded LUVT tensor.
// Names are stable dotted paths such as "blocks.0.attn.wq".
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void save_checkpoint(const std::string& path, const NamedTensors& tensors,
                     DType dtype = DType::f32);
NamedTensors load_checkpoint(const std::string& path);

}  // namespace luve
