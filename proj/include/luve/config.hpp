#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "luve/backbone.hpp"
#include "luve/experts.hpp"
#include "luve/pipeline.hpp"
#include "luve/vluer.hpp"

namespace luve::cli {

struct DataSection {
    int frames = 4;
    int hr_size = 48;       // HR video side for upsampler pairs
    int lr_video_size = 32; // video side feeding the backbone's LR latents
    int clips = 16;
    int object_count = 2;
    double max_speed = 2.0;
    double border_margin = 0.0;
    std::vector<double> scales = {1.5, 2.0, 3.0};
    double curate_threshold = 6.5;
    double unsharp_sigma = 1.0;
    double unsharp_amount = 1.0;
    std::string background = "gradient";  // or "black"
};

struct TrainSection {
    int iterations = 0;
    double lr = 0.0;
    int batch = 2;
};

struct BackboneSection {
    backbone::DiTConfig model;
    int lr_frames = 8;
    int lr_size = 8;  // LR latent side
    TrainSection train{400, 1e-3, 2};
    TrainSection uhr_train{200, 1e-4, 2};
};

struct VluerSection {
    vluer::VLUerConfig model;
    vluer::VLUerTrainConfig train;
};

struct ExpertsSection {
    int rank = 4;
    double alpha = 8.0;
    double rho = 0.25;
    double t_switch = 0.417;
    TrainSection train{300, 1e-4, 2};
};

struct PipelineSection {
    int lr_steps = 50;
    int hr_steps_total = 50;
    int skipped = 5;
    double scale = 1.5;
    int label = 0;
    bool retain_latents = true;
    bool use_experts = true;
    std::vector<int> ablate_s = {2, 5, 10, 15};
    // empty paths resolve to the standard layout under the output directory
    std::string codec_ckpt, backbone_ckpt, vluer_ckpt, lfe_ckpt, hfe_ckpt;
};

struct EvalSection {
    int fid_patch = 8;
    int fid_frames = 8;
    int fid_dim = 32;
    int mllm_frames = 4;
    int mllm_max_in_flight = 2;
    std::string target_prompt = "bright shapes moving on a dark background";
};

// Union of the module configs; strict parsing rejects unknown keys with the
// offending path named. Every run writes a resolved copy next to its outputs.
struct RunConfig {
    uint64_t seed = 42;
    std::string out = "out";
    DataSection data;
    BackboneSection backbone;
    VluerSection vluer;
    ExpertsSection experts;
    PipelineSection pipeline;
    EvalSection eval;

    static RunConfig from_json(const nlohmann::json& doc);
    static RunConfig from_file(const std::string& path);
    nlohmann::json to_json() const;

    // Standard artifact layout: out/{checkpoints,latents,videos,reports,datasets}
    std::string checkpoint_path(const std::string& stage) const;
    std::string dataset_dir(const std::string& name) const;
    std::string reports_dir() const;
    std::string videos_dir() const;
};

}  // namespace luve::cli
