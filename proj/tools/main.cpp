// luve - command-line front end for the cascaded video generation pipeline:
// dataset synthesis, stage training, generation, upsampler benchmarking, and
// evaluation.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include <CLI11.hpp>

#include "luve/backbone.hpp"
#include "luve/config.hpp"
#include "luve/data.hpp"
#include "luve/eval.hpp"
#include "luve/experts.hpp"
#include "luve/pipeline.hpp"
#include "luve/png.hpp"
#include "luve/vluer.hpp"

namespace fs = std::filesystem;
using namespace luve;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void write_json(const std::string& path, const json& doc) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path);
    os << doc.dump(2) << "\n";
}

// every run drops the resolved configuration next to its outputs
void write_resolved_config(const cli::RunConfig& cfg, const std::string& command) {
    write_json(cfg.out + "/" + command + "_resolved_config.json", cfg.to_json());
}

void require_file(const std::string& path, const std::string& what) {
    if (!fs::exists(path)) throw IoError("missing " + what + ": " + path);
}

std::string resolved(const std::string& configured, const std::string& fallback) {
    return configured.empty() ? fallback : configured;
}

// ---------------------------------------------------------------------------
// dataset
// ---------------------------------------------------------------------------

// Curated scene generator: draws seeded scenes until `count` clips pass the
// quality threshold (or the attempt budget runs out).
struct CuratedClips {
    std::vector<data::VideoTensor> clips;
    std::vector<int> labels;
    std::vector<uint64_t> seeds;
    std::vector<double> scores;
};

CuratedClips generate_curated(const cli::DataSection& d, int size, int count, uint64_t seed_base,
                              double threshold) {
    CuratedClips out;
    const int max_attempts = count * 6;
    int attempts = 0;
    uint64_t clip_seed = seed_base;
    while (static_cast<int>(out.clips.size()) < count && attempts < max_attempts) {
        ++attempts;
        ++clip_seed;
        data::ShapeSceneConfig scene;
        scene.frames = d.frames;
        scene.height = scene.width = size;
        scene.seed = clip_seed;
        scene.object_count = d.object_count;
        scene.max_speed = d.max_speed;
        scene.border_margin = d.border_margin;
        // object sizes track the resolution so clip statistics stay comparable
        scene.min_size = std::max(2.0, size / 8.0);
        scene.max_size = std::max(scene.min_size + 1.0, size / 4.0);
        scene.background =
            d.background == "black" ? data::Background::black : data::Background::gradient;
        scene.motion_class = static_cast<int>(clip_seed % data::kNumMotionClasses);
        data::VideoTensor clip = data::gen_moving_shapes(scene);
        std::vector<data::VideoTensor> one;
        one.push_back(clip);
        std::vector<size_t> kept = data::curate(one, data::default_quality_score, threshold);
        if (kept.empty()) continue;
        out.clips.push_back(std::move(clip));
        out.labels.push_back(scene.motion_class);
        out.seeds.push_back(clip_seed);
        out.scores.push_back(data::default_quality_score(out.clips.back()));
    }
    if (static_cast<int>(out.clips.size()) < count)
        std::cerr << "dataset: only " << out.clips.size() << " of " << count
                  << " clips passed curation (threshold " << threshold << ")\n";
    require(!out.clips.empty(), "dataset: no clips passed curation");
    return out;
}

int cmd_dataset(const cli::RunConfig& cfg) {
    write_resolved_config(cfg, "dataset");
    fs::create_directories(cfg.out + "/checkpoints");

    data::Codec codec = data::Codec::make(cfg.seed ^ 0xC0DEC);
    codec.save(cfg.checkpoint_path("codec"));

    // backbone training set at the pipeline's LR resolution
    CuratedClips lr = generate_curated(cfg.data, cfg.data.lr_video_size, cfg.data.clips,
                                       cfg.seed * 1000, cfg.data.curate_threshold);
    std::vector<LatentSample> lmg;
    for (size_t i = 0; i < lr.clips.size(); ++i)
        lmg.push_back({codec.encode(lr.clips[i]).t, lr.labels[i]});
    data::save_latent_dataset(cfg.dataset_dir("lmg"), lmg, lr.seeds, lr.scores);

    // upsampler pairs from HR scenes, all configured scales
    CuratedClips hr = generate_curated(cfg.data, cfg.data.hr_size, cfg.data.clips,
                                       cfg.seed * 2000, cfg.data.curate_threshold);
    std::vector<data::LatentPair> pairs;
    std::vector<uint64_t> pair_seeds;
    std::vector<double> pair_scores;
    for (size_t i = 0; i < hr.clips.size(); ++i) {
        for (auto& p : data::make_lr_hr_pairs(hr.clips[i], cfg.data.scales, codec, hr.labels[i])) {
            pairs.push_back(std::move(p));
            pair_seeds.push_back(hr.seeds[i]);
            pair_scores.push_back(hr.scores[i]);
        }
    }
    data::save_pair_dataset(cfg.dataset_dir("pairs"), pairs, pair_seeds, pair_scores);

    // expert sets: clean HR latents for the LFE, unsharp-augmented for the HFE
    std::vector<LatentSample> hr_latents, hr_sharp;
    for (size_t i = 0; i < hr.clips.size(); ++i) {
        hr_latents.push_back({codec.encode(hr.clips[i]).t, hr.labels[i]});
        data::VideoTensor sharp =
            data::unsharp_mask(hr.clips[i], cfg.data.unsharp_sigma, cfg.data.unsharp_amount);
        hr_sharp.push_back({codec.encode(sharp).t, hr.labels[i]});
    }
    data::save_latent_dataset(cfg.dataset_dir("experts_hr"), hr_latents, hr.seeds, hr.scores);
    data::save_latent_dataset(cfg.dataset_dir("experts_hr_unsharp"), hr_sharp, hr.seeds, hr.scores);

    std::cout << "dataset: " << lmg.size() << " LR clips, " << pairs.size() << " pairs, "
              << hr_latents.size() << " HR clips -> " << cfg.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const cli::RunConfig& cfg, const std::string& stage) {
    write_resolved_config(cfg, "train_" + stage);
    fs::create_directories(cfg.out + "/checkpoints");

    if (stage == "lmg" || stage == "uhr") {
        backbone::DiT model(cfg.backbone.model);
        backbone::TrainConfig tc;
        const bool uhr = stage == "uhr";
        const auto& section = uhr ? cfg.backbone.uhr_train : cfg.backbone.train;
        tc.iterations = section.iterations;
        tc.lr = section.lr;
        tc.batch = section.batch;
        tc.seed = cfg.seed + (uhr ? 7 : 3);
        std::string dataset_dir = cfg.dataset_dir(uhr ? "experts_hr" : "lmg");
        require_file(dataset_dir + "/manifest.json", "dataset manifest");
        if (uhr) {
            require_file(cfg.checkpoint_path("lmg"), "lmg checkpoint");
            model.load(cfg.checkpoint_path("lmg"));
        }
        auto dataset = data::load_latent_dataset(dataset_dir);
        backbone::TrainStats stats = backbone::train_backbone(model, dataset, tc);
        model.save(cfg.checkpoint_path(stage));
        write_json(cfg.reports_dir() + "/train_" + stage + "_seed" + std::to_string(cfg.seed) + ".json",
                   {{"stage", stage},
                    {"iterations", tc.iterations},
                    {"val_before", stats.val_before},
                    {"val_after", stats.val_after}});
        std::cout << "train " << stage << ": val loss " << stats.val_before << " -> "
                  << stats.val_after << "\n";
        return 0;
    }

    if (stage == "vluer") {
        const std::string dir = cfg.dataset_dir("pairs");
        require_file(dir + "/manifest.json", "pair dataset manifest");
        require_file(cfg.checkpoint_path("codec"), "codec checkpoint");
        data::Codec codec = data::Codec::load(cfg.checkpoint_path("codec"));
        auto pairs = data::load_pair_dataset(dir);
        vluer::VLUer model(cfg.vluer.model);
        vluer::VLUerTrainConfig tc = cfg.vluer.train;
        tc.seed = cfg.seed + 11;
        vluer::VLUerTrainStats stats = vluer::train_vluer(model, pairs, codec, tc);
        model.save(cfg.checkpoint_path("vluer"));
        write_json(cfg.reports_dir() + "/train_vluer_seed" + std::to_string(cfg.seed) + ".json",
                   {{"stage", "vluer"},
                    {"iterations", tc.iterations},
                    {"final_loss", stats.losses.empty() ? 0.0 : stats.losses.back()}});
        std::cout << "train vluer: " << tc.iterations << " iterations, final loss "
                  << (stats.losses.empty() ? 0.0 : stats.losses.back()) << "\n";
        return 0;
    }

    if (stage == "lfe" || stage == "hfe") {
        const bool is_lfe = stage == "lfe";
        const std::string backbone_path =
            resolved(cfg.pipeline.backbone_ckpt,
                     fs::exists(cfg.checkpoint_path("uhr")) ? cfg.checkpoint_path("uhr")
                                                            : cfg.checkpoint_path("lmg"));
        require_file(backbone_path, "backbone checkpoint");
        backbone::DiT model(cfg.backbone.model);
        model.load(backbone_path);

        const std::string dir = cfg.dataset_dir(is_lfe ? "experts_hr" : "experts_hr_unsharp");
        require_file(dir + "/manifest.json", "expert dataset manifest");
        auto dataset = data::load_latent_dataset(dir);

        experts::ExpertTrainConfig tc;
        tc.iterations = cfg.experts.train.iterations;
        tc.lr = cfg.experts.train.lr;
        tc.batch = cfg.experts.train.batch;
        tc.t_switch = cfg.experts.t_switch;
        tc.rho = cfg.experts.rho;
        tc.rank = cfg.experts.rank;
        tc.alpha = cfg.experts.alpha;
        tc.seed = cfg.seed + (is_lfe ? 13 : 17);
        backbone::TrainStats stats;
        experts::FrequencyExpert expert = experts::train_expert(
            is_lfe ? experts::ExpertKind::lfe : experts::ExpertKind::hfe, model, dataset, tc, &stats);
        expert.save(cfg.checkpoint_path(stage));
        write_json(cfg.reports_dir() + "/train_" + stage + "_seed" + std::to_string(cfg.seed) + ".json",
                   {{"stage", stage},
                    {"iterations", tc.iterations},
                    {"val_before", stats.val_before},
                    {"val_after", stats.val_after}});
        std::cout << "train " << stage << ": interval val loss " << stats.val_before << " -> "
                  << stats.val_after << "\n";
        return 0;
    }

    throw ConfigError("unknown training stage: " + stage + " (expected lmg|uhr|vluer|lfe|hfe)");
}

// ---------------------------------------------------------------------------
// generate / ablate
// ---------------------------------------------------------------------------

struct LoadedModels {
    data::Codec codec;
    std::unique_ptr<backbone::DiT> dit;
    std::unique_ptr<vluer::VLUer> upsampler;
    std::unique_ptr<experts::FrequencyExpert> lfe, hfe;
    pipeline::Models view;
};

LoadedModels load_models(const cli::RunConfig& cfg, bool with_experts) {
    LoadedModels m;
    const std::string codec_path = resolved(cfg.pipeline.codec_ckpt, cfg.checkpoint_path("codec"));
    const std::string backbone_path =
        resolved(cfg.pipeline.backbone_ckpt,
                 fs::exists(cfg.checkpoint_path("uhr")) ? cfg.checkpoint_path("uhr")
                                                        : cfg.checkpoint_path("lmg"));
    const std::string vluer_path = resolved(cfg.pipeline.vluer_ckpt, cfg.checkpoint_path("vluer"));
    require_file(codec_path, "codec checkpoint");
    require_file(backbone_path, "backbone checkpoint");
    require_file(vluer_path, "vluer checkpoint");

    m.codec = data::Codec::load(codec_path);
    m.dit = std::make_unique<backbone::DiT>(cfg.backbone.model);
    m.dit->load(backbone_path);
    m.upsampler = std::make_unique<vluer::VLUer>(cfg.vluer.model);
    m.upsampler->load(vluer_path);

    if (with_experts) {
        const std::string lfe_path = resolved(cfg.pipeline.lfe_ckpt, cfg.checkpoint_path("lfe"));
        const std::string hfe_path = resolved(cfg.pipeline.hfe_ckpt, cfg.checkpoint_path("hfe"));
        if (fs::exists(lfe_path)) {
            m.lfe = std::make_unique<experts::FrequencyExpert>(experts::FrequencyExpert::make(
                experts::ExpertKind::lfe, cfg.backbone.model.depth, cfg.backbone.model.dim,
                cfg.experts.rank, cfg.experts.alpha, cfg.experts.rho, 0));
            m.lfe->load(lfe_path);
        }
        if (fs::exists(hfe_path)) {
            m.hfe = std::make_unique<experts::FrequencyExpert>(experts::FrequencyExpert::make(
                experts::ExpertKind::hfe, cfg.backbone.model.depth, cfg.backbone.model.dim,
                cfg.experts.rank, cfg.experts.alpha, cfg.experts.rho, 0));
            m.hfe->load(hfe_path);
        }
    }

    m.view.codec = m.codec;
    m.view.dit = m.dit.get();
    m.view.upsampler = m.upsampler.get();
    m.view.lfe = m.lfe.get();
    m.view.hfe = m.hfe.get();
    return m;
}

pipeline::PipelineConfig pipeline_config(const cli::RunConfig& cfg) {
    pipeline::PipelineConfig pc;
    pc.lr_steps = cfg.pipeline.lr_steps;
    pc.hr_steps_total = cfg.pipeline.hr_steps_total;
    pc.skipped = cfg.pipeline.skipped;
    pc.scale = cfg.pipeline.scale;
    pc.seed = cfg.seed;
    pc.t_switch = cfg.experts.t_switch;
    pc.rho = cfg.experts.rho;
    pc.lr_shape = LatentShape{cfg.backbone.lr_frames, cfg.backbone.lr_size, cfg.backbone.lr_size, 16};
    pc.retain_latents = cfg.pipeline.retain_latents;
    return pc;
}

int cmd_generate(const cli::RunConfig& cfg, bool ablate, bool dump_png) {
    write_resolved_config(cfg, ablate ? "ablate" : "generate");
    LoadedModels models = load_models(cfg, cfg.pipeline.use_experts);
    pipeline::PipelineConfig pc = pipeline_config(cfg);
    fs::create_directories(cfg.videos_dir());
    fs::create_directories(cfg.reports_dir());

    if (ablate) {
        pipeline::AblateReport report = pipeline::ablate_skipped_steps(
            {cfg.pipeline.label}, cfg.pipeline.ablate_s, pc, models.view);
        json rows = json::array();
        for (const auto& r : report.rows)
            rows.push_back({{"skipped", r.skipped},
                            {"t_start", r.t_start},
                            {"flicker", r.flicker},
                            {"latent_change", r.latent_change}});
        const std::string path =
            cfg.reports_dir() + "/ablate_s_seed" + std::to_string(cfg.seed) + ".json";
        write_json(path, rows);
        std::cout << "ablate: " << report.rows.size() << " rows -> " << path << "\n";
        return 0;
    }

    pipeline::GenerationRecord rec = pipeline::generate(cfg.pipeline.label, pc, models.view);
    const std::string base = "gen_label" + std::to_string(rec.label) + "_seed" +
                             std::to_string(cfg.seed) + "_scale" + std::to_string(cfg.pipeline.scale);
    const std::string video_path = cfg.videos_dir() + "/" + base + ".luvt";
    save_tensor(video_path, rec.video.t);
    if (cfg.pipeline.retain_latents) {
        fs::create_directories(cfg.out + "/latents");
        save_tensor(cfg.out + "/latents/" + base + "_lr.luvt", rec.lr_latent);
        save_tensor(cfg.out + "/latents/" + base + "_upsampled.luvt", rec.upsampled_latent);
        save_tensor(cfg.out + "/latents/" + base + "_hr.luvt", rec.hr_latent);
    }
    if (dump_png) {
        for (int f = 0; f < rec.video.frames(); ++f) {
            Tensor frame = slice_axis0(rec.video.t, f, f + 1)
                               .reshaped({rec.video.height(), rec.video.width(), 3});
            write_png(cfg.videos_dir() + "/" + base + "_f" + std::to_string(f) + ".png", frame);
        }
    }
    // deterministic sidecar; wall-clock timings go to a separate file
    write_json(cfg.videos_dir() + "/" + base + ".json",
               {{"label", rec.label},
                {"seed", rec.seed},
                {"scale", cfg.pipeline.scale},
                {"frames", rec.video.frames()},
                {"height", rec.video.height()},
                {"width", rec.video.width()},
                {"skipped", cfg.pipeline.skipped},
                {"experts", {{"lfe", models.view.lfe != nullptr}, {"hfe", models.view.hfe != nullptr}}}});
    write_json(cfg.videos_dir() + "/" + base + ".timing.json",
               {{"wall_lr_ms", rec.wall_lr_ms},
                {"wall_vlu_ms", rec.wall_vlu_ms},
                {"wall_hr_ms", rec.wall_hr_ms},
                {"wall_decode_ms", rec.wall_decode_ms}});
    std::cout << "generate: " << video_path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// bench-upsampler
// ---------------------------------------------------------------------------

int cmd_bench_upsampler(const cli::RunConfig& cfg) {
    write_resolved_config(cfg, "bench_upsampler");
    const std::string codec_path = resolved(cfg.pipeline.codec_ckpt, cfg.checkpoint_path("codec"));
    const std::string vluer_path = resolved(cfg.pipeline.vluer_ckpt, cfg.checkpoint_path("vluer"));
    require_file(codec_path, "codec checkpoint");
    require_file(vluer_path, "vluer checkpoint");
    data::Codec codec = data::Codec::load(codec_path);
    vluer::VLUer model(cfg.vluer.model);
    model.load(vluer_path);

    // held-out pairs: fresh seeds, disjoint from the training dataset
    CuratedClips held = generate_curated(cfg.data, cfg.data.hr_size, std::max(4, cfg.data.clips / 4),
                                         cfg.seed * 3000 + 500000, cfg.data.curate_threshold);
    std::vector<data::LatentPair> pairs;
    for (size_t i = 0; i < held.clips.size(); ++i)
        for (auto& p : data::make_lr_hr_pairs(held.clips[i], cfg.data.scales, codec, held.labels[i]))
            pairs.push_back(std::move(p));

    struct Row {
        std::string method;
        eval::MetricReport report;
    };
    std::vector<Row> rows{{"vluer", {}}, {"latent_interp", {}}, {"rgb_interp", {}}};
    for (auto& row : rows) {
        row.report.method = row.method;
        double psnr_acc = 0.0;
        int psnr_count = 0;
        auto t0 = Clock::now();
        for (const auto& p : pairs) {
            const int H = p.hr.height(), W = p.hr.width();
            Tensor z_sr;
            if (row.method == "vluer")
                z_sr = model.upsample(nullptr, p.lr.t, H, W);
            else if (row.method == "latent_interp")
                z_sr = vluer::baseline_latent_interp(p.lr.t, H, W);
            else
                z_sr = vluer::baseline_rgb_interp(p.lr.t, codec, H, W);
            row.report.wall_ms += ms_since(t0);
            t0 = Clock::now();

            auto [mae, mse] = eval::latent_errors(data::LatentTensor(z_sr), p.hr);
            row.report.mae_lat += mae;
            row.report.mse_lat += mse;
            data::VideoTensor decoded = codec.decode(data::LatentTensor(z_sr));
            auto [psnr, mse_rgb] = eval::psnr_mse(data::clamp01(decoded), p.hr_video);
            if (std::isfinite(psnr)) {
                psnr_acc += psnr;
                ++psnr_count;
            }
            row.report.mse_rgb += mse_rgb;
            row.report.flicker += eval::flicker(decoded);
        }
        const double n = static_cast<double>(pairs.size());
        row.report.mae_lat /= n;
        row.report.mse_lat /= n;
        row.report.mse_rgb /= n;
        row.report.flicker /= n;
        row.report.psnr_rgb = psnr_count ? psnr_acc / psnr_count : 0.0;
        for (const auto& p : pairs)
            row.report.clip_ids.push_back("scale_" + std::to_string(p.scale));
    }

    fs::create_directories(cfg.reports_dir());
    const std::string path =
        cfg.reports_dir() + "/bench_upsampler_seed" + std::to_string(cfg.seed) + ".json";
    json doc = json::array();
    for (const auto& row : rows) doc.push_back(row.report.to_json());
    write_json(path, doc);
    for (const auto& row : rows)
        std::cout << row.method << ": mse_lat " << row.report.mse_lat << ", mae_lat "
                  << row.report.mae_lat << ", psnr_rgb " << row.report.psnr_rgb << ", wall "
                  << row.report.wall_ms << " ms\n";
    std::cout << "bench-upsampler -> " << path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const cli::RunConfig& cfg, const std::string& mllm_endpoint,
             const std::string& mllm_replay) {
    write_resolved_config(cfg, "eval");
    fs::create_directories(cfg.reports_dir());

    // generated videos under out/videos
    std::vector<std::pair<std::string, data::VideoTensor>> clips;
    if (fs::exists(cfg.videos_dir())) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(cfg.videos_dir()))
            if (e.path().extension() == ".luvt") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files)
            clips.emplace_back(f.stem().string(), data::VideoTensor(load_tensor(f.string())));
    }
    if (clips.empty()) throw IoError("eval: no generated videos under " + cfg.videos_dir());

    // synthetic reference set for the patch-based distance
    CuratedClips ref = generate_curated(cfg.data, clips[0].second.height(),
                                        std::max<int>(4, static_cast<int>(clips.size())),
                                        cfg.seed * 4000 + 900000, cfg.data.curate_threshold);
    std::vector<data::VideoTensor> gen_set, ref_set;
    for (const auto& [id, v] : clips) gen_set.push_back(v);
    ref_set = ref.clips;

    eval::PatchExtractor extractor =
        eval::make_projection_extractor(cfg.eval.fid_patch, cfg.eval.fid_dim, cfg.seed ^ 0xF1D);
    const double fid =
        eval::fid_patch(gen_set, ref_set, cfg.eval.fid_patch, cfg.eval.fid_frames, extractor);

    const std::string path = cfg.reports_dir() + "/eval_seed" + std::to_string(cfg.seed) + ".jsonl";
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path);
    for (const auto& [id, v] : clips) {
        eval::MetricReport r;
        r.method = "pipeline";
        r.clip_ids = {id};
        r.flicker = eval::flicker(v);
        r.fid_patch = fid;
        os << r.to_json().dump() << "\n";
    }

    if (!mllm_endpoint.empty() || !mllm_replay.empty()) {
        std::unique_ptr<eval::MllmTransport> transport;
        if (!mllm_replay.empty()) {
            transport = std::make_unique<eval::ReplayMllmTransport>(mllm_replay);
        } else {
            // endpoint form: host:port/path
            const auto colon = mllm_endpoint.find(':');
            const auto slash = mllm_endpoint.find('/', colon == std::string::npos ? 0 : colon);
            require(colon != std::string::npos, "mllm endpoint must be host:port[/path]");
            const std::string host = mllm_endpoint.substr(0, colon);
            const int port = std::stoi(mllm_endpoint.substr(
                colon + 1, slash == std::string::npos ? std::string::npos : slash - colon - 1));
            const std::string hpath = slash == std::string::npos ? "/" : mllm_endpoint.substr(slash);
            transport = std::make_unique<eval::HttpMllmTransport>(host, port, hpath);
        }
        auto items = eval::run_mllm_eval(
            clips, {eval::MllmAxis::realism, eval::MllmAxis::detailness, eval::MllmAxis::alignment},
            *transport, cfg.eval.target_prompt, cfg.eval.mllm_frames, cfg.eval.mllm_max_in_flight);
        for (const auto& item : items)
            os << json{{"clip", item.clip_id},
                       {"axis", eval::axis_name(item.axis)},
                       {"score", item.score.score},
                       {"reason", item.score.reason}}
                      .dump()
               << "\n";
    }
    std::cout << "eval: fid_patch " << fid << " -> " << path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cascaded latent video generation pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    uint64_t seed_override = 0;
    bool seed_set = false;
    std::string out_override;
    app.add_option("--config", config_path, "JSON config file");
    app.add_option("--seed", seed_override, "override the config seed")->each([&](const std::string&) {
        seed_set = true;
    });
    app.add_option("--out", out_override, "override the output directory");

    auto* c_dataset = app.add_subcommand("dataset", "synthesize and curate the training datasets");
    std::string stage;
    auto* c_train = app.add_subcommand("train", "train a stage checkpoint");
    c_train->add_option("stage", stage, "lmg|uhr|vluer|lfe|hfe")->required();
    auto* c_generate = app.add_subcommand("generate", "run the three-stage cascade");
    bool ablate = false, dump_png = true;
    c_generate->add_flag("--ablate", ablate, "sweep the skipped-steps setting instead");
    c_generate->add_flag("!--no-png", dump_png, "skip PNG frame dumps");
    auto* c_bench = app.add_subcommand("bench-upsampler", "compare the upsampler with both baselines");
    auto* c_eval = app.add_subcommand("eval", "metric reports for generated videos");
    std::string mllm_endpoint, mllm_replay;
    c_eval->add_option("--mllm", mllm_endpoint, "MLLM endpoint host:port[/path]");
    c_eval->add_option("--mllm-replay", mllm_replay, "directory of canned MLLM responses");

    CLI11_PARSE(app, argc, argv);

    try {
        cli::RunConfig cfg =
            config_path.empty() ? cli::RunConfig{} : cli::RunConfig::from_file(config_path);
        if (seed_set) cfg.seed = seed_override;
        if (!out_override.empty()) cfg.out = out_override;
        fs::create_directories(cfg.out);

        if (c_dataset->parsed()) return cmd_dataset(cfg);
        if (c_train->parsed()) return cmd_train(cfg, stage);
        if (c_generate->parsed()) return cmd_generate(cfg, ablate, dump_png);
        if (c_bench->parsed()) return cmd_bench_upsampler(cfg);
        if (c_eval->parsed()) return cmd_eval(cfg, mllm_endpoint, mllm_replay);
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
