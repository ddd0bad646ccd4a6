#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "luve/tensor.hpp"

namespace luve {

// Minimal RGB8 PNG encoder (zlib-compressed, filter 0).
std::vector<uint8_t> encode_png_rgb8(const uint8_t* rgb, int width, int height);

// [H,W,3] tensor in [0,1] -> PNG bytes (values clamped).
std::vector<uint8_t> frame_to_png(const Tensor& frame);

void write_png(const std::string& path, const Tensor& frame);

std::string base64_encode(const uint8_t* bytes, size_t count);

}  // namespace luve
