#pragma once

#include <string>
#include <vector>

#include "luve/backbone.hpp"
#include "luve/data.hpp"
#include "luve/experts.hpp"
#include "luve/vluer.hpp"

namespace luve::pipeline {

struct PipelineConfig {
    int lr_steps = 50;        // low-resolution sampling schedule length
    int hr_steps_total = 50;  // high-resolution schedule length N
    int skipped = 5;          // S: leading HR steps replaced by re-noising
    double scale = 2.0;
    uint64_t seed = 0;
    double t_switch = 0.417;
    double rho = 0.25;
    LatentShape lr_shape{8, 8, 8, 16};
    bool retain_latents = true;

    std::string codec_ckpt, backbone_ckpt, vluer_ckpt;
    std::string lfe_ckpt, hfe_ckpt;  // optional
};

// Loaded model bundle; experts are optional.
struct Models {
    data::Codec codec;
    backbone::DiT* dit = nullptr;
    vluer::VLUer* upsampler = nullptr;
    experts::FrequencyExpert* lfe = nullptr;
    experts::FrequencyExpert* hfe = nullptr;
};

struct GenerationRecord {
    int label = 0;
    uint64_t seed = 0;
    Tensor lr_latent;         // retained when configured
    Tensor upsampled_latent;  // z-hat
    Tensor hr_latent;
    data::VideoTensor video;
    backbone::SampleTrace hr_trace;
    double wall_lr_ms = 0.0, wall_vlu_ms = 0.0, wall_hr_ms = 0.0, wall_decode_ms = 0.0;
};

// Places the upsampled latent on the flow-matching path at t_S = 1 - S/N:
// x = (1 - t_S) * z + t_S * eps with fresh seeded noise. Returns the noised
// latent and the HR schedule start index (== S).
std::pair<Tensor, int> renoise(const Tensor& z_hat, int skipped, int total_steps, uint64_t seed);

// The three-stage cascade: LR motion sampling, latent upsampling, re-noised
// HR refinement with expert routing, decode.
GenerationRecord generate(int label, const PipelineConfig& cfg, Models& models);

struct AblateRow {
    int skipped = 0;
    double t_start = 0.0;
    double flicker = 0.0;
    double latent_change = 0.0;  // RMS distance between HR output and z-hat
};

struct AblateReport {
    std::vector<AblateRow> rows;  // one per S, input order
};

// Runs generate() per S and reports flicker plus deviation-from-z-hat;
// deviation must be monotone non-increasing in S.
AblateReport ablate_skipped_steps(const std::vector<int>& labels, const std::vector<int>& s_values,
                                  const PipelineConfig& cfg, Models& models);

}  // namespace luve::pipeline
