#include "luve/config.hpp"

#include <fstream>
#include <set>

#include "luve/errors.hpp"

namespace luve::cli {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::string& path, const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError("config section " + path + " must be an object");
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key))
            throw ConfigError("unknown config key: " + (path.empty() ? key : path + "." + key));
    }
}

template <class T>
void read(const json& j, const std::string& path, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("bad value for config key: " + path + "." + key);
    }
}

TrainSection read_train(const json& j, const std::string& path, TrainSection defaults) {
    reject_unknown(j, path, {"iterations", "lr", "batch"});
    TrainSection t = defaults;
    read(j, path, "iterations", t.iterations);
    read(j, path, "lr", t.lr);
    read(j, path, "batch", t.batch);
    return t;
}

}  // namespace

RunConfig RunConfig::from_json(const json& doc) {
    RunConfig cfg;
    reject_unknown(doc, "", {"seed", "out", "data", "backbone", "vluer", "experts", "pipeline", "eval"});
    read(doc, "", "seed", cfg.seed);
    read(doc, "", "out", cfg.out);

    if (doc.contains("data")) {
        const json& d = doc["data"];
        reject_unknown(d, "data",
                       {"frames", "hr_size", "lr_video_size", "clips", "object_count", "max_speed",
                        "border_margin", "scales", "curate_threshold", "unsharp_sigma",
                        "unsharp_amount", "background"});
        read(d, "data", "frames", cfg.data.frames);
        read(d, "data", "hr_size", cfg.data.hr_size);
        read(d, "data", "lr_video_size", cfg.data.lr_video_size);
        read(d, "data", "clips", cfg.data.clips);
        read(d, "data", "object_count", cfg.data.object_count);
        read(d, "data", "max_speed", cfg.data.max_speed);
        read(d, "data", "border_margin", cfg.data.border_margin);
        read(d, "data", "scales", cfg.data.scales);
        read(d, "data", "curate_threshold", cfg.data.curate_threshold);
        read(d, "data", "unsharp_sigma", cfg.data.unsharp_sigma);
        read(d, "data", "unsharp_amount", cfg.data.unsharp_amount);
        read(d, "data", "background", cfg.data.background);
        if (cfg.data.background != "black" && cfg.data.background != "gradient")
            throw ConfigError("bad value for config key: data.background (black|gradient)");
    }

    if (doc.contains("backbone")) {
        const json& b = doc["backbone"];
        reject_unknown(b, "backbone",
                       {"dim", "depth", "heads", "ffn_mult", "patch", "vocab", "lr_frames",
                        "lr_size", "train", "uhr_train"});
        read(b, "backbone", "dim", cfg.backbone.model.dim);
        read(b, "backbone", "depth", cfg.backbone.model.depth);
        read(b, "backbone", "heads", cfg.backbone.model.heads);
        read(b, "backbone", "ffn_mult", cfg.backbone.model.ffn_mult);
        int patch = cfg.backbone.model.patch_h;
        read(b, "backbone", "patch", patch);
        cfg.backbone.model.patch_h = cfg.backbone.model.patch_w = patch;
        read(b, "backbone", "vocab", cfg.backbone.model.vocab);
        read(b, "backbone", "lr_frames", cfg.backbone.lr_frames);
        read(b, "backbone", "lr_size", cfg.backbone.lr_size);
        if (b.contains("train")) cfg.backbone.train = read_train(b["train"], "backbone.train", cfg.backbone.train);
        if (b.contains("uhr_train"))
            cfg.backbone.uhr_train = read_train(b["uhr_train"], "backbone.uhr_train", cfg.backbone.uhr_train);
    }

    if (doc.contains("vluer")) {
        const json& v = doc["vluer"];
        reject_unknown(v, "vluer",
                       {"encoder_width", "encoder_blocks", "encoder_heads", "inr_hidden",
                        "decoder_width", "decoder_blocks", "decoder_heads", "train"});
        read(v, "vluer", "encoder_width", cfg.vluer.model.encoder_width);
        read(v, "vluer", "encoder_blocks", cfg.vluer.model.encoder_blocks);
        read(v, "vluer", "encoder_heads", cfg.vluer.model.encoder_heads);
        read(v, "vluer", "inr_hidden", cfg.vluer.model.inr_hidden);
        read(v, "vluer", "decoder_width", cfg.vluer.model.decoder_width);
        read(v, "vluer", "decoder_blocks", cfg.vluer.model.decoder_blocks);
        read(v, "vluer", "decoder_heads", cfg.vluer.model.decoder_heads);
        if (v.contains("train")) {
            const json& t = v["train"];
            reject_unknown(t, "vluer.train",
                           {"iterations", "base_lr", "min_lr", "lr_period", "batch", "w_latent",
                            "w_pixel", "frame_term", "crop"});
            read(t, "vluer.train", "iterations", cfg.vluer.train.iterations);
            read(t, "vluer.train", "base_lr", cfg.vluer.train.base_lr);
            read(t, "vluer.train", "min_lr", cfg.vluer.train.min_lr);
            read(t, "vluer.train", "lr_period", cfg.vluer.train.lr_period);
            read(t, "vluer.train", "batch", cfg.vluer.train.batch);
            read(t, "vluer.train", "w_latent", cfg.vluer.train.weights.latent);
            read(t, "vluer.train", "w_pixel", cfg.vluer.train.weights.pixel);
            read(t, "vluer.train", "frame_term", cfg.vluer.train.frame_term);
            read(t, "vluer.train", "crop", cfg.vluer.train.crop);
        }
    }

    if (doc.contains("experts")) {
        const json& e = doc["experts"];
        reject_unknown(e, "experts", {"rank", "alpha", "rho", "t_switch", "train"});
        read(e, "experts", "rank", cfg.experts.rank);
        read(e, "experts", "alpha", cfg.experts.alpha);
        read(e, "experts", "rho", cfg.experts.rho);
        read(e, "experts", "t_switch", cfg.experts.t_switch);
        if (e.contains("train")) cfg.experts.train = read_train(e["train"], "experts.train", cfg.experts.train);
    }

    if (doc.contains("pipeline")) {
        const json& p = doc["pipeline"];
        reject_unknown(p, "pipeline",
                       {"lr_steps", "hr_steps_total", "skipped", "scale", "label", "retain_latents",
                        "use_experts", "ablate_s", "codec_ckpt", "backbone_ckpt", "vluer_ckpt",
                        "lfe_ckpt", "hfe_ckpt"});
        read(p, "pipeline", "lr_steps", cfg.pipeline.lr_steps);
        read(p, "pipeline", "hr_steps_total", cfg.pipeline.hr_steps_total);
        read(p, "pipeline", "skipped", cfg.pipeline.skipped);
        read(p, "pipeline", "scale", cfg.pipeline.scale);
        read(p, "pipeline", "label", cfg.pipeline.label);
        read(p, "pipeline", "retain_latents", cfg.pipeline.retain_latents);
        read(p, "pipeline", "use_experts", cfg.pipeline.use_experts);
        read(p, "pipeline", "ablate_s", cfg.pipeline.ablate_s);
        read(p, "pipeline", "codec_ckpt", cfg.pipeline.codec_ckpt);
        read(p, "pipeline", "backbone_ckpt", cfg.pipeline.backbone_ckpt);
        read(p, "pipeline", "vluer_ckpt", cfg.pipeline.vluer_ckpt);
        read(p, "pipeline", "lfe_ckpt", cfg.pipeline.lfe_ckpt);
        read(p, "pipeline", "hfe_ckpt", cfg.pipeline.hfe_ckpt);
    }

    if (doc.contains("eval")) {
        const json& e = doc["eval"];
        reject_unknown(e, "eval",
                       {"fid_patch", "fid_frames", "fid_dim", "mllm_frames", "mllm_max_in_flight",
                        "target_prompt"});
        read(e, "eval", "fid_patch", cfg.eval.fid_patch);
        read(e, "eval", "fid_frames", cfg.eval.fid_frames);
        read(e, "eval", "fid_dim", cfg.eval.fid_dim);
        read(e, "eval", "mllm_frames", cfg.eval.mllm_frames);
        read(e, "eval", "mllm_max_in_flight", cfg.eval.mllm_max_in_flight);
        read(e, "eval", "target_prompt", cfg.eval.target_prompt);
    }

    cfg.backbone.model.seed = cfg.seed ^ 0xB0B0;
    cfg.vluer.model.seed = cfg.seed ^ 0x5150;
    return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file: " + path);
    json doc;
    try {
        doc = json::parse(is, nullptr, true, true);  // allow comments
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    return from_json(doc);
}

json RunConfig::to_json() const {
    return json{
        {"seed", seed},
        {"out", out},
        {"data",
         {{"frames", data.frames},
          {"hr_size", data.hr_size},
          {"lr_video_size", data.lr_video_size},
          {"clips", data.clips},
          {"object_count", data.object_count},
          {"max_speed", data.max_speed},
          {"border_margin", data.border_margin},
          {"scales", data.scales},
          {"curate_threshold", data.curate_threshold},
          {"unsharp_sigma", data.unsharp_sigma},
          {"unsharp_amount", data.unsharp_amount},
          {"background", data.background}}},
        {"backbone",
         {{"dim", backbone.model.dim},
          {"depth", backbone.model.depth},
          {"heads", backbone.model.heads},
          {"ffn_mult", backbone.model.ffn_mult},
          {"patch", backbone.model.patch_h},
          {"vocab", backbone.model.vocab},
          {"lr_frames", backbone.lr_frames},
          {"lr_size", backbone.lr_size},
          {"train",
           {{"iterations", backbone.train.iterations}, {"lr", backbone.train.lr}, {"batch", backbone.train.batch}}},
          {"uhr_train",
           {{"iterations", backbone.uhr_train.iterations},
            {"lr", backbone.uhr_train.lr},
            {"batch", backbone.uhr_train.batch}}}}},
        {"vluer",
         {{"encoder_width", vluer.model.encoder_width},
          {"encoder_blocks", vluer.model.encoder_blocks},
          {"encoder_heads", vluer.model.encoder_heads},
          {"inr_hidden", vluer.model.inr_hidden},
          {"decoder_width", vluer.model.decoder_width},
          {"decoder_blocks", vluer.model.decoder_blocks},
          {"decoder_heads", vluer.model.decoder_heads},
          {"train",
           {{"iterations", vluer.train.iterations},
            {"base_lr", vluer.train.base_lr},
            {"min_lr", vluer.train.min_lr},
            {"lr_period", vluer.train.lr_period},
            {"batch", vluer.train.batch},
            {"w_latent", vluer.train.weights.latent},
            {"w_pixel", vluer.train.weights.pixel},
            {"frame_term", vluer.train.frame_term},
            {"crop", vluer.train.crop}}}}},
        {"experts",
         {{"rank", experts.rank},
          {"alpha", experts.alpha},
          {"rho", experts.rho},
          {"t_switch", experts.t_switch},
          {"train",
           {{"iterations", experts.train.iterations}, {"lr", experts.train.lr}, {"batch", experts.train.batch}}}}},
        {"pipeline",
         {{"lr_steps", pipeline.lr_steps},
          {"hr_steps_total", pipeline.hr_steps_total},
          {"skipped", pipeline.skipped},
          {"scale", pipeline.scale},
          {"label", pipeline.label},
          {"retain_latents", pipeline.retain_latents},
          {"use_experts", pipeline.use_experts},
          {"ablate_s", pipeline.ablate_s},
          {"codec_ckpt", pipeline.codec_ckpt},
          {"backbone_ckpt", pipeline.backbone_ckpt},
          {"vluer_ckpt", pipeline.vluer_ckpt},
          {"lfe_ckpt", pipeline.lfe_ckpt},
          {"hfe_ckpt", pipeline.hfe_ckpt}}},
        {"eval",
         {{"fid_patch", eval.fid_patch},
          {"fid_frames", eval.fid_frames},
          {"fid_dim", eval.fid_dim},
          {"mllm_frames", eval.mllm_frames},
          {"mllm_max_in_flight", eval.mllm_max_in_flight},
          {"target_prompt", eval.target_prompt}}}};
}

std::string RunConfig::checkpoint_path(const std::string& stage) const {
    return out + "/checkpoints/" + stage + "_seed" + std::to_string(seed) + ".luve";
}

std::string RunConfig::dataset_dir(const std::string& name) const {
    return out + "/datasets/" + name + "_seed" + std::to_string(seed);
}

std::string RunConfig::reports_dir() const { return out + "/reports"; }

std::string RunConfig::videos_dir() const { return out + "/videos"; }

}  // namespace luve::cli
