#pragma once

#include <cstdint>

#include "luve/tensor.hpp"

namespace luve {

// Layout metadata for a token sequence produced from a [t,h,w,C] latent.
// Tokens are ordered frame-major, then row-major over patch cells.
struct TokenGrid {
    int frames = 0, rows = 0, cols = 0;
    int patch_h = 0, patch_w = 0, channels = 0;

    int64_t tokens() const { return static_cast<int64_t>(frames) * rows * cols; }
    int token_width() const { return patch_h * patch_w * channels; }
    bool valid() const { return frames > 0 && rows > 0 && cols > 0; }
};

// One training example for the diffusion backbone.
struct LatentSample {
    Tensor z;  // [t,h,w,C] clean latent
    int label = 0;
};

struct LatentShape {
    int frames = 8, h = 8, w = 8, c = 16;
};

}  // namespace luve
