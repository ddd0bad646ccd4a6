#pragma once

#include <string>
#include <vector>

#include "luve/data.hpp"
#include "luve/nn.hpp"
#include "luve/tensor.hpp"

namespace luve::vluer {

// Reference full-scale configuration, kept for documentation: MLP hidden
// [512,512,256,256]; encoder embed 120 with 6 TMSA groups of depth 4 at embed
// 180; decoder 16->24->16 with 3 groups of depth 1 at embed 48; ~22M params.
namespace full_scale {
inline constexpr int kMlpHidden[4] = {512, 512, 256, 256};
inline constexpr int kEncoderEmbed = 120;
inline constexpr int kEncoderGroups = 6;
inline constexpr int kEncoderGroupDepth = 4;
inline constexpr int kEncoderGroupEmbed = 180;
inline constexpr int kDecoderEmbed = 24;
inline constexpr int kDecoderGroups = 3;
inline constexpr int kDecoderGroupDepth = 1;
inline constexpr int kDecoderGroupEmbed = 48;
inline constexpr double kTotalParams = 22e6;
}  // namespace full_scale

struct VLUerConfig {
    int in_channels = 16;  // INR output channels == latent C
    int encoder_width = 32;
    int encoder_blocks = 4;  // alternating spatial / temporal-pair attention
    int encoder_heads = 4;
    std::vector<int> inr_hidden = {64, 64, 32, 32};
    int decoder_width = 8;
    int decoder_blocks = 2;
    int decoder_heads = 2;
    uint64_t seed = 0;
};

struct VLUerLossWeights {
    double latent = 1.0;
    double pixel = 1.0;
};

// Query-coordinate table for one frame of an (h,w) -> (H,W) upsampling.
// Target-cell centers in normalized [-1,1] coordinates, the containing source
// cell (equivalently the nearest center, with boundary ties resolved to the
// higher index), the offset from its center in source-cell units, and the
// target cell size in normalized units.
struct CoordinateCell {
    double y = 0.0, x = 0.0;
    int src_row = 0, src_col = 0;
    double off_y = 0.0, off_x = 0.0;
    double cell_h = 0.0, cell_w = 0.0;
};

struct CoordinateGrid {
    int src_h = 0, src_w = 0, dst_h = 0, dst_w = 0;
    std::vector<CoordinateCell> cells;  // row-major over the target grid
};

CoordinateGrid make_coordinate_grid(int src_h, int src_w, int dst_h, int dst_w);

// Latent upsampler: a temporal-attention encoder, a coordinate-conditioned
// MLP performing continuous spatial upsampling, and a temporal refinement
// decoder with a global residual. The MLP combines the nearest source feature
// with a feature-gated coordinate term (a bilinear feature x offset
// interaction), so every path is linear in the features and a zero feature
// map maps to zero output at any scale.
class VLUer {
  public:
    explicit VLUer(const VLUerConfig& cfg);

    // [t,h,w,16] -> [t,h,w,C']; spatial self-attention within frames
    // alternating with mutual attention over consecutive frame pairs.
    Tensor encode_features(GradTape* tape, const Tensor& z);
    // [t,h,w,C'] -> [t,H,W,16] coarse latent; per-frame, no temporal resampling.
    Tensor inr_upsample(GradTape* tape, const Tensor& features, int out_h, int out_w);
    // coarse + R(coarse); R is per-position temporal attention, zero at init.
    Tensor decode_refine(GradTape* tape, const Tensor& coarse);
    // decode_refine(inr_upsample(encode_features(z))), the exported composition.
    Tensor upsample(GradTape* tape, const Tensor& z, int out_h, int out_w);

    NamedParams params();
    const VLUerConfig& config() const { return cfg_; }
    void save(const std::string& path) { save_params(path, params()); }
    void load(const std::string& path) { load_params(path, params()); }

  private:
    struct AttnBlock {
        LayerNorm ln1, ln2;
        MultiheadAttention attn;
        Ffn ffn;
        bool temporal = false;
        int pair_offset = 0;
    };

    VLUerConfig cfg_;
    Linear enc_in_;
    std::vector<AttnBlock> enc_blocks_;
    Linear inr_feat_;      // C' -> hidden[0], content path
    Linear inr_pos_gate_;  // C' -> hidden[0], amplitude of the coordinate term
    Linear inr_coord_;     // 4  -> hidden[0]
    std::vector<Linear> inr_layers_;
    Linear inr_out_;  // -> 16
    Linear dec_in_;
    std::vector<AttnBlock> dec_blocks_;
    Linear dec_out_;  // zero-initialized
};

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// Mean absolute error between latents.
Tensor loss_latent(const Tensor& z_sr, const Tensor& z_hr);
// Entry-averaged L1 between consecutive-frame differences.
Tensor loss_frame(const Tensor& x_sr, const Tensor& x_hr);
// L1(x_sr, x_hr) + frame-difference term.
Tensor loss_pixel(const Tensor& x_sr, const Tensor& x_hr);

// ---------------------------------------------------------------------------
// Interpolation baselines
// ---------------------------------------------------------------------------

// Per-frame bilinear interpolation of each latent channel.
Tensor baseline_latent_interp(const Tensor& z, int out_h, int out_w);
Tensor baseline_latent_interp(const Tensor& z, double scale);
// decode -> per-frame bicubic upscale -> encode; the expensive path.
Tensor baseline_rgb_interp(const Tensor& z, const data::Codec& codec, int out_h, int out_w);
Tensor baseline_rgb_interp(const Tensor& z, const data::Codec& codec, double scale);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct VLUerTrainConfig {
    int iterations = 2000;
    double base_lr = 2e-4;  // cosine annealing with restarts down to min_lr
    double min_lr = 1e-7;
    int64_t lr_period = 400000;
    int batch = 2;
    VLUerLossWeights weights;
    bool frame_term = true;  // frame-difference part of the pixel loss
    int crop = 0;            // pixel-loss crop size in pixels; 0 = full frames
    uint64_t seed = 0;
};

struct VLUerTrainStats {
    std::vector<double> losses;
};

VLUerTrainStats train_vluer(VLUer& model, const std::vector<data::LatentPair>& pairs,
                            const data::Codec& codec, const VLUerTrainConfig& cfg);

}  // namespace luve::vluer
