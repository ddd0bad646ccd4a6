#include "luve/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "luve/errors.hpp"
#include "luve/serialize.hpp"

namespace luve::data {

namespace fs = std::filesystem;
using nlohmann::json;

VideoTensor::VideoTensor(Tensor tensor) : t(std::move(tensor)) {
    require(t.rank() == 4, "VideoTensor expects [frames,H,W,3], got " + shape_str(t.shape()));
    require(t.extent(3) == 3, "VideoTensor expects 3 channels");
    require(t.extent(0) >= 2, "VideoTensor needs at least 2 frames");
}

LatentTensor::LatentTensor(Tensor tensor) : t(std::move(tensor)) {
    require(t.rank() == 4, "LatentTensor expects [t,h,w,C], got " + shape_str(t.shape()));
    require(t.all_finite(), "LatentTensor holds non-finite values");
}

// ---------------------------------------------------------------------------
// Moving shapes
// ---------------------------------------------------------------------------

namespace {

// Constant velocity with reflection: triangle wave over [lo, hi].
double reflect_pos(double p, double lo, double hi) {
    const double span = hi - lo;
    if (span <= 0.0) return lo;
    double m = std::fmod(p - lo, 2.0 * span);
    if (m < 0.0) m += 2.0 * span;
    return lo + (m <= span ? m : 2.0 * span - m);
}

std::vector<SceneObject> randomize_objects(const ShapeSceneConfig& cfg, Rng& rng) {
    std::vector<SceneObject> objects;
    for (int i = 0; i < cfg.object_count; ++i) {
        SceneObject o;
        o.kind = rng.uniform() < 0.5 ? SceneObject::Kind::rect : SceneObject::Kind::disc;
        o.size_x = std::floor(rng.uniform(cfg.min_size, cfg.max_size + 1.0));
        o.size_y = o.kind == SceneObject::Kind::disc
                       ? o.size_x
                       : std::floor(rng.uniform(cfg.min_size, cfg.max_size + 1.0));
        o.x0 = rng.uniform(cfg.border_margin, cfg.width - o.size_x - cfg.border_margin);
        o.y0 = rng.uniform(cfg.border_margin, cfg.height - o.size_y - cfg.border_margin);
        const double speed = rng.uniform(0.5, cfg.max_speed);
        const double side = rng.uniform(-0.4, 0.4) * speed;
        switch (cfg.motion_class) {
            case kMotionRight: o.vx = speed; o.vy = side; break;
            case kMotionLeft:  o.vx = -speed; o.vy = side; break;
            case kMotionDown:  o.vy = speed; o.vx = side; break;
            case kMotionUp:    o.vy = -speed; o.vx = side; break;
            default: {
                const double ang = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
                o.vx = speed * std::cos(ang);
                o.vy = speed * std::sin(ang);
            }
        }
        for (int c = 0; c < 3; ++c) o.color[c] = rng.uniform(0.35, 1.0);
        objects.push_back(o);
    }
    return objects;
}

}  // namespace

VideoTensor gen_moving_shapes(const ShapeSceneConfig& cfg) {
    if (cfg.height < 16 || cfg.height > 256 || cfg.width < 16 || cfg.width > 256)
        throw ConfigError("scene resolution must be within [16,256] per side");
    if (cfg.frames < 2) throw ConfigError("scene needs at least 2 frames");

    Rng rng(cfg.seed);
    std::vector<SceneObject> objects = cfg.objects.empty() ? randomize_objects(cfg, rng) : cfg.objects;
    for (const auto& o : objects) {
        if (o.size_x > cfg.width || o.size_y > cfg.height)
            throw ConfigError("scene object larger than the frame");
    }

    Tensor out({cfg.frames, cfg.height, cfg.width, 3});
    if (cfg.background == Background::gradient) {
        // static seeded color ramp; objects move across it
        Rng brng = Rng(cfg.seed).fork(0xB6);
        double c0[3], c1[3];
        for (int c = 0; c < 3; ++c) {
            c0[c] = brng.uniform(0.05, 0.45);
            c1[c] = brng.uniform(0.05, 0.45);
        }
        const double ang = brng.uniform(0.0, 2.0 * 3.14159265358979323846);
        const double ax = std::cos(ang), ay = std::sin(ang);
        for (int f = 0; f < cfg.frames; ++f)
            for (int y = 0; y < cfg.height; ++y)
                for (int x = 0; x < cfg.width; ++x) {
                    const double u = 0.5 + 0.5 * (ax * (2.0 * x / cfg.width - 1.0) +
                                                  ay * (2.0 * y / cfg.height - 1.0)) / 1.4142;
                    double* p = out.data() +
                                ((static_cast<int64_t>(f) * cfg.height + y) * cfg.width + x) * 3;
                    for (int c = 0; c < 3; ++c) p[c] = c0[c] + (c1[c] - c0[c]) * u;
                }
    }
    for (int f = 0; f < cfg.frames; ++f) {
        double* frame = out.data() + static_cast<int64_t>(f) * cfg.height * cfg.width * 3;
        for (const auto& o : objects) {
            const double lo_x = cfg.border_margin, hi_x = cfg.width - o.size_x - cfg.border_margin;
            const double lo_y = cfg.border_margin, hi_y = cfg.height - o.size_y - cfg.border_margin;
            const double px = reflect_pos(o.x0 + o.vx * f, lo_x, std::max(lo_x, hi_x));
            const double py = reflect_pos(o.y0 + o.vy * f, lo_y, std::max(lo_y, hi_y));
            const int ix = static_cast<int>(std::lround(px));
            const int iy = static_cast<int>(std::lround(py));
            const int w = static_cast<int>(std::lround(o.size_x));
            const int h = static_cast<int>(std::lround(o.size_y));
            const double cx = px + o.size_x / 2.0, cy = py + o.size_y / 2.0;
            const double r2 = (o.size_x / 2.0) * (o.size_x / 2.0);
            for (int y = std::max(0, iy); y < std::min(cfg.height, iy + h); ++y) {
                for (int x = std::max(0, ix); x < std::min(cfg.width, ix + w); ++x) {
                    if (o.kind == SceneObject::Kind::disc) {
                        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                        if (dx * dx + dy * dy > r2) continue;
                    }
                    double* p = frame + (static_cast<int64_t>(y) * cfg.width + x) * 3;
                    p[0] = o.color[0];
                    p[1] = o.color[1];
                    p[2] = o.color[2];
                }
            }
        }
    }
    return VideoTensor(std::move(out));
}

// ---------------------------------------------------------------------------
// Codec
// ---------------------------------------------------------------------------

Codec::Codec(Tensor enc) : enc_(std::move(enc)) {
    require(enc_.rank() == 2 && enc_.extent(0) == kChannels && enc_.extent(1) == kPatchValues,
            "codec matrix must be [16,48]");
}

Codec Codec::make(uint64_t seed) {
    Rng rng(seed);
    Tensor e = Tensor::randn({kChannels, kPatchValues}, rng);
    // first row spans the constant patch, so uniform regions survive the
    // decode/encode round trip; remaining rows are random
    const double inv = 1.0 / std::sqrt(static_cast<double>(kPatchValues));
    for (int k = 0; k < kPatchValues; ++k) e.data()[k] = inv;
    // Gram-Schmidt on the rows
    for (int i = 1; i < kChannels; ++i) {
        double* ri = e.data() + static_cast<int64_t>(i) * kPatchValues;
        for (int j = 0; j < i; ++j) {
            const double* rj = e.data() + static_cast<int64_t>(j) * kPatchValues;
            double dot = 0.0;
            for (int k = 0; k < kPatchValues; ++k) dot += ri[k] * rj[k];
            for (int k = 0; k < kPatchValues; ++k) ri[k] -= dot * rj[k];
        }
        double norm = 0.0;
        for (int k = 0; k < kPatchValues; ++k) norm += ri[k] * ri[k];
        norm = std::sqrt(norm);
        require(norm > 1e-8, "degenerate codec seed");
        for (int k = 0; k < kPatchValues; ++k) ri[k] /= norm;
    }
    return Codec(std::move(e));
}

namespace {

// video index for patch element k of latent cell (f,y,x)
std::vector<int64_t> patchify_index(int t, int H, int W) {
    const int p = Codec::kPatch;
    const int h = H / p, w = W / p;
    std::vector<int64_t> idx;
    idx.reserve(static_cast<size_t>(t) * h * w * Codec::kPatchValues);
    for (int f = 0; f < t; ++f)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int py = 0; py < p; ++py)
                    for (int px = 0; px < p; ++px)
                        for (int c = 0; c < 3; ++c)
                            idx.push_back(((static_cast<int64_t>(f) * H + (y * p + py)) * W +
                                           (x * p + px)) * 3 + c);
    return idx;
}

std::vector<int64_t> invert_index(const std::vector<int64_t>& idx) {
    std::vector<int64_t> inv(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) inv[static_cast<size_t>(idx[i])] = static_cast<int64_t>(i);
    return inv;
}

}  // namespace

Tensor Codec::encode_tensor(GradTape* tape, const Tensor& video) const {
    (void)tape;  // ops record on the active tape automatically
    require(video.rank() == 4 && video.extent(3) == 3, "encode expects [t,H,W,3]");
    const int t = video.extent(0), H = video.extent(1), W = video.extent(2);
    require(H % kPatch == 0 && W % kPatch == 0,
            "video resolution " + std::to_string(H) + "x" + std::to_string(W) +
                " is not divisible by the codec patch");
    const int h = H / kPatch, w = W / kPatch;
    Tensor patches = gather_elements(video, patchify_index(t, H, W),
                                     {t * h * w, kPatchValues});
    Tensor z = matmul(patches, transpose_last2(enc_));  // [N,16]
    return reshape(z, {t, h, w, kChannels});
}

Tensor Codec::decode_tensor(GradTape* tape, const Tensor& latent) const {
    (void)tape;
    require(latent.rank() == 4 && latent.extent(3) == kChannels, "decode expects [t,h,w,16]");
    const int t = latent.extent(0), h = latent.extent(1), w = latent.extent(2);
    const int H = h * kPatch, W = w * kPatch;
    Tensor patches = matmul(reshape(latent, {t * h * w, kChannels}), enc_);  // [N,48]
    return gather_elements(patches, invert_index(patchify_index(t, H, W)), {t, H, W, 3});
}

LatentTensor Codec::encode(const VideoTensor& video) const {
    return LatentTensor(encode_tensor(nullptr, video.t));
}

VideoTensor Codec::decode(const LatentTensor& latent) const {
    return VideoTensor(decode_tensor(nullptr, latent.t));
}

void Codec::save(const std::string& path) const {
    save_checkpoint(path, {{"enc", enc_}}, DType::f64);
}

Codec Codec::load(const std::string& path) {
    NamedTensors t = load_checkpoint(path);
    require(t.size() == 1 && t[0].first == "enc", "not a codec checkpoint: " + path);
    return Codec(std::move(t[0].second));
}

// ---------------------------------------------------------------------------
// Unsharp masking
// ---------------------------------------------------------------------------

VideoTensor unsharp_mask(const VideoTensor& video, double sigma, double amount) {
    require(sigma > 0.0, "unsharp_mask: sigma must be positive");
    require(amount >= 0.0, "unsharp_mask: amount must be non-negative");
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k1(static_cast<size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k1[static_cast<size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k1[static_cast<size_t>(i + radius)];
    }
    for (auto& v : k1) v /= sum;

    const int n = video.frames(), H = video.height(), W = video.width();
    Tensor out(video.t.shape());
    const double* src = video.t.data();
    double* dst = out.data();
    auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v >= hi ? hi - 1 : v); };
    for (int f = 0; f < n; ++f) {
        const int64_t base = static_cast<int64_t>(f) * H * W * 3;
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                for (int c = 0; c < 3; ++c) {
                    double blur = 0.0;
                    for (int dy = -radius; dy <= radius; ++dy) {
                        const int yy = clampi(y + dy, H);
                        double row = 0.0;
                        for (int dx = -radius; dx <= radius; ++dx) {
                            const int xx = clampi(x + dx, W);
                            row += k1[static_cast<size_t>(dx + radius)] *
                                   src[base + (static_cast<int64_t>(yy) * W + xx) * 3 + c];
                        }
                        blur += k1[static_cast<size_t>(dy + radius)] * row;
                    }
                    const int64_t at = base + (static_cast<int64_t>(y) * W + x) * 3 + c;
                    dst[at] = src[at] + amount * (src[at] - blur);
                }
            }
        }
    }
    return VideoTensor(std::move(out));
}

// ---------------------------------------------------------------------------
// Curation
// ---------------------------------------------------------------------------

double default_quality_score(const VideoTensor& video) {
    const int n = video.frames(), H = video.height(), W = video.width();
    const double* p = video.t.data();
    const int64_t count = video.t.size();
    double mean = 0.0;
    for (int64_t i = 0; i < count; ++i) mean += p[i];
    mean /= static_cast<double>(count);
    double var = 0.0;
    for (int64_t i = 0; i < count; ++i) var += (p[i] - mean) * (p[i] - mean);
    var /= static_cast<double>(count);

    // sharpness as the mean gradient across strong edges only, so neither
    // frame area nor smooth background ramps dilute the score
    double edge = 0.0;
    int64_t edges = 0;
    for (int f = 0; f < n; ++f) {
        const int64_t base = static_cast<int64_t>(f) * H * W * 3;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x + 1 < W; ++x)
                for (int c = 0; c < 3; ++c) {
                    const int64_t at = base + (static_cast<int64_t>(y) * W + x) * 3 + c;
                    const double g = std::abs(p[at + 3] - p[at]);
                    if (g > 0.05) {
                        edge += g;
                        ++edges;
                    }
                }
    }
    if (edges > 0) edge /= static_cast<double>(edges);
    // contrast and sharpness, mapped to a 0..10-ish scale
    return std::min(10.0, 30.0 * std::sqrt(var) + 8.0 * edge);
}

std::vector<size_t> curate(const std::vector<VideoTensor>& clips, const ClipScorer& scorer,
                           double threshold) {
    std::vector<size_t> kept;
    for (size_t i = 0; i < clips.size(); ++i) {
        double score;
        try {
            score = scorer(clips[i]);
        } catch (const std::exception& e) {
            std::cerr << "curate: scorer failed on clip " << i << ": " << e.what() << "\n";
            continue;
        }
        if (score > threshold) kept.push_back(i);  // strictly exceeding
    }
    return kept;
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

namespace {

template <class Sampler>
Tensor resize_with(const Tensor& x, int out_h, int out_w, Sampler sample) {
    require(x.rank() == 4, "resize expects [t,h,w,c]");
    const int t = x.extent(0), h = x.extent(1), w = x.extent(2), c = x.extent(3);
    Tensor out({t, out_h, out_w, c});
    const double sy = static_cast<double>(h) / out_h;
    const double sx = static_cast<double>(w) / out_w;
    for (int f = 0; f < t; ++f) {
        const double* plane = x.data() + static_cast<int64_t>(f) * h * w * c;
        double* dplane = out.data() + static_cast<int64_t>(f) * out_h * out_w * c;
        for (int y = 0; y < out_h; ++y) {
            const double src_y = (y + 0.5) * sy - 0.5;
            for (int xo = 0; xo < out_w; ++xo) {
                const double src_x = (xo + 0.5) * sx - 0.5;
                for (int ch = 0; ch < c; ++ch)
                    dplane[(static_cast<int64_t>(y) * out_w + xo) * c + ch] =
                        sample(plane, h, w, c, src_y, src_x, ch);
            }
        }
    }
    return out;
}

double sample_bilinear(const double* plane, int h, int w, int c, double sy, double sx, int ch) {
    auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v >= hi ? hi - 1 : v); };
    const int y0 = static_cast<int>(std::floor(sy));
    const int x0 = static_cast<int>(std::floor(sx));
    const double fy = sy - y0, fx = sx - x0;
    auto at = [&](int y, int x) {
        return plane[(static_cast<int64_t>(clampi(y, h)) * w + clampi(x, w)) * c + ch];
    };
    return (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
           fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
}

double cubic_weight(double d) {  // Catmull-Rom, a = -0.5
    constexpr double a = -0.5;
    d = std::abs(d);
    if (d <= 1.0) return ((a + 2.0) * d - (a + 3.0)) * d * d + 1.0;
    if (d < 2.0) return (((d - 5.0) * d + 8.0) * d - 4.0) * a;
    return 0.0;
}

double sample_bicubic(const double* plane, int h, int w, int c, double sy, double sx, int ch) {
    auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v >= hi ? hi - 1 : v); };
    const int y0 = static_cast<int>(std::floor(sy));
    const int x0 = static_cast<int>(std::floor(sx));
    double acc = 0.0;
    for (int dy = -1; dy <= 2; ++dy) {
        const double wy = cubic_weight(sy - (y0 + dy));
        if (wy == 0.0) continue;
        for (int dx = -1; dx <= 2; ++dx) {
            const double wx = cubic_weight(sx - (x0 + dx));
            if (wx == 0.0) continue;
            acc += wy * wx *
                   plane[(static_cast<int64_t>(clampi(y0 + dy, h)) * w + clampi(x0 + dx, w)) * c + ch];
        }
    }
    return acc;
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
    return resize_with(x, out_h, out_w, sample_bilinear);
}

Tensor resize_bicubic(const Tensor& x, int out_h, int out_w) {
    return resize_with(x, out_h, out_w, sample_bicubic);
}

VideoTensor resize_bilinear(const VideoTensor& v, int out_h, int out_w) {
    return VideoTensor(resize_bilinear(v.t, out_h, out_w));
}

VideoTensor resize_bicubic(const VideoTensor& v, int out_h, int out_w) {
    return VideoTensor(resize_bicubic(v.t, out_h, out_w));
}

VideoTensor clamp01(const VideoTensor& v) {
    Tensor out = v.t.clone();
    for (int64_t i = 0; i < out.size(); ++i)
        out.data()[i] = std::clamp(out.data()[i], 0.0, 1.0);
    return VideoTensor(std::move(out));
}

// ---------------------------------------------------------------------------
// Pairs and persistence
// ---------------------------------------------------------------------------

std::vector<LatentPair> make_lr_hr_pairs(const VideoTensor& video, const std::vector<double>& scales,
                                         const Codec& codec, int label) {
    LatentTensor hr = codec.encode(video);
    std::vector<LatentPair> pairs;
    for (double scale : scales) {
        require(scale >= 1.0, "make_lr_hr_pairs: scale must be >= 1");
        int lr_h = static_cast<int>(std::lround(video.height() / scale));
        int lr_w = static_cast<int>(std::lround(video.width() / scale));
        VideoTensor lr_video = resize_bilinear(video, lr_h, lr_w);
        const int crop_h = lr_h - lr_h % Codec::kPatch;
        const int crop_w = lr_w - lr_w % Codec::kPatch;
        if (crop_h != lr_h || crop_w != lr_w) {
            std::cerr << "make_lr_hr_pairs: cropping " << lr_h << "x" << lr_w << " to " << crop_h
                      << "x" << crop_w << " for codec patching\n";
            Tensor cropped({video.frames(), crop_h, crop_w, 3});
            for (int f = 0; f < video.frames(); ++f)
                for (int y = 0; y < crop_h; ++y)
                    std::copy_n(lr_video.t.data() + ((static_cast<int64_t>(f) * lr_h + y) * lr_w) * 3,
                                static_cast<size_t>(crop_w) * 3,
                                cropped.data() + ((static_cast<int64_t>(f) * crop_h + y) * crop_w) * 3);
            lr_video = VideoTensor(std::move(cropped));
        }
        LatentPair p;
        p.lr = codec.encode(lr_video);
        p.hr = hr;
        p.hr_video = video;
        p.scale = scale;
        p.label = label;
        pairs.push_back(std::move(p));
    }
    return pairs;
}

void save_pair_dataset(const std::string& dir, const std::vector<LatentPair>& pairs,
                       const std::vector<uint64_t>& seeds, const std::vector<double>& scores) {
    fs::create_directories(dir);
    json manifest = json::array();
    for (size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        DatasetEntry e;
        e.id = "pair_" + std::to_string(i);
        e.lr_file = e.id + "_lr.luvt";
        e.hr_file = e.id + "_hr.luvt";
        e.video_file = e.id + "_video.luvt";
        save_tensor(dir + "/" + e.lr_file, p.lr.t);
        save_tensor(dir + "/" + e.hr_file, p.hr.t);
        save_tensor(dir + "/" + e.video_file, p.hr_video.t);
        manifest.push_back({{"id", e.id},
                            {"seed", i < seeds.size() ? seeds[i] : 0},
                            {"scale", p.scale},
                            {"score", i < scores.size() ? scores[i] : 0.0},
                            {"label", p.label},
                            {"lr", e.lr_file},
                            {"hr", e.hr_file},
                            {"video", e.video_file}});
    }
    std::ofstream os(dir + "/manifest.json");
    if (!os) throw IoError("cannot write manifest in " + dir);
    os << manifest.dump(2) << "\n";
}

std::vector<LatentPair> load_pair_dataset(const std::string& dir) {
    std::ifstream is(dir + "/manifest.json");
    if (!is) throw IoError("cannot read manifest in " + dir);
    json manifest = json::parse(is);
    std::vector<LatentPair> pairs;
    for (const auto& e : manifest) {
        LatentPair p;
        p.lr = LatentTensor(load_tensor(dir + "/" + e.at("lr").get<std::string>()));
        p.hr = LatentTensor(load_tensor(dir + "/" + e.at("hr").get<std::string>()));
        p.hr_video = VideoTensor(load_tensor(dir + "/" + e.at("video").get<std::string>()));
        p.scale = e.at("scale").get<double>();
        p.label = e.at("label").get<int>();
        pairs.push_back(std::move(p));
    }
    return pairs;
}

void save_latent_dataset(const std::string& dir, const std::vector<LatentSample>& samples,
                         const std::vector<uint64_t>& seeds, const std::vector<double>& scores) {
    fs::create_directories(dir);
    json manifest = json::array();
    for (size_t i = 0; i < samples.size(); ++i) {
        const std::string id = "clip_" + std::to_string(i);
        const std::string file = id + ".luvt";
        save_tensor(dir + "/" + file, samples[i].z);
        manifest.push_back({{"id", id},
                            {"seed", i < seeds.size() ? seeds[i] : 0},
                            {"score", i < scores.size() ? scores[i] : 0.0},
                            {"label", samples[i].label},
                            {"latent", file}});
    }
    std::ofstream os(dir + "/manifest.json");
    if (!os) throw IoError("cannot write manifest in " + dir);
    os << manifest.dump(2) << "\n";
}

std::vector<LatentSample> load_latent_dataset(const std::string& dir) {
    std::ifstream is(dir + "/manifest.json");
    if (!is) throw IoError("cannot read manifest in " + dir);
    json manifest = json::parse(is);
    std::vector<LatentSample> samples;
    for (const auto& e : manifest) {
        LatentSample s;
        s.z = load_tensor(dir + "/" + e.at("latent").get<std::string>());
        s.label = e.at("label").get<int>();
        samples.push_back(std::move(s));
    }
    return samples;
}

}  // namespace luve::data
