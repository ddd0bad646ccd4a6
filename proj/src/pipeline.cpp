#include "luve/pipeline.hpp"

#include "luve/eval.hpp"

#include <chrono>
#include <cmath>

namespace luve::pipeline {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

double rms_diff(const Tensor& a, const Tensor& b) {
    require(a.same_shape(b), "rms_diff: shape mismatch");
    double s = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(a.size()));
}

}  // namespace

std::pair<Tensor, int> renoise(const Tensor& z_hat, int skipped, int total_steps, uint64_t seed) {
    if (skipped < 0 || skipped >= total_steps)
        throw ConfigError("renoise: skipped steps must satisfy 0 <= S < N, got S=" +
                          std::to_string(skipped) + " N=" + std::to_string(total_steps));
    const double t_s = 1.0 - static_cast<double>(skipped) / total_steps;
    Rng rng(seed);
    Tensor eps = Tensor::randn(z_hat.shape(), rng);
    Tensor x = add(mul_scalar(z_hat, 1.0 - t_s), mul_scalar(eps, t_s));
    return {std::move(x), skipped};
}

GenerationRecord generate(int label, const PipelineConfig& cfg, Models& models) {
    require(models.dit != nullptr && models.upsampler != nullptr, "generate: models not loaded");
    require(cfg.scale >= 1.0, "generate: scale must be >= 1");
    if (cfg.skipped < 0 || cfg.skipped >= cfg.hr_steps_total)
        throw ConfigError("generate: skipped steps out of range");

    GenerationRecord rec;
    rec.label = label;
    rec.seed = cfg.seed;
    Rng root(cfg.seed);

    // stage 1: low-resolution motion sampling
    auto t0 = Clock::now();
    backbone::DiffusionSchedule lr_sched(cfg.lr_steps);
    Tensor z_lr = backbone::sample(*models.dit, lr_sched, cfg.lr_shape, label,
                                   root.fork(0x6c72).next_u64());
    rec.wall_lr_ms = ms_since(t0);

    // stage 2: latent upsampling
    t0 = Clock::now();
    const int hr_h = static_cast<int>(std::lround(cfg.lr_shape.h * cfg.scale));
    const int hr_w = static_cast<int>(std::lround(cfg.lr_shape.w * cfg.scale));
    const int patch = models.dit->config().patch_h;
    if (hr_h % patch != 0 || hr_w % patch != 0)
        throw ConfigError("generate: HR stage shape chain broken, upsampled latent " +
                          std::to_string(hr_h) + "x" + std::to_string(hr_w) +
                          " is not divisible by the backbone token patch " + std::to_string(patch));
    Tensor z_hat = models.upsampler->upsample(nullptr, z_lr, hr_h, hr_w);
    rec.wall_vlu_ms = ms_since(t0);

    // stage 3: re-noise and refine with expert routing
    t0 = Clock::now();
    auto [x_s, start] = renoise(z_hat, cfg.skipped, cfg.hr_steps_total,
                                root.fork(0x6872).next_u64());
    experts::ExpertHooks hooks;
    hooks.router.t_switch = cfg.t_switch;
    hooks.lfe = models.lfe;
    hooks.hfe = models.hfe;
    backbone::DiffusionSchedule hr_sched(cfg.hr_steps_total);
    Tensor z_hr = backbone::sample(*models.dit, hr_sched, cfg.lr_shape, label, 0,
                                   (models.lfe || models.hfe) ? &hooks : nullptr, start, &x_s,
                                   &rec.hr_trace);
    rec.wall_hr_ms = ms_since(t0);

    // stage shape chain
    require(z_hr.extent(1) == hr_h && z_hr.extent(2) == hr_w,
            "generate: HR latent shape broke the stage chain");

    t0 = Clock::now();
    data::VideoTensor video = models.codec.decode(data::LatentTensor(z_hr));
    rec.video = data::clamp01(video);
    rec.wall_decode_ms = ms_since(t0);

    if (cfg.retain_latents) {
        rec.lr_latent = z_lr;
        rec.upsampled_latent = z_hat;
        rec.hr_latent = z_hr;
    }
    return rec;
}

AblateReport ablate_skipped_steps(const std::vector<int>& labels, const std::vector<int>& s_values,
                                  const PipelineConfig& cfg, Models& models) {
    require(!labels.empty(), "ablate_skipped_steps: need at least one label");
    AblateReport report;
    for (int s : s_values) {
        PipelineConfig run_cfg = cfg;
        run_cfg.skipped = s;
        run_cfg.retain_latents = true;
        AblateRow row;
        row.skipped = s;
        row.t_start = 1.0 - static_cast<double>(s) / cfg.hr_steps_total;
        for (int label : labels) {
            GenerationRecord rec = generate(label, run_cfg, models);
            row.flicker += eval::flicker(rec.video);
            row.latent_change += rms_diff(rec.hr_latent, rec.upsampled_latent);
        }
        row.flicker /= static_cast<double>(labels.size());
        row.latent_change /= static_cast<double>(labels.size());
        report.rows.push_back(row);
    }
    return report;
}

}  // namespace luve::pipeline
