#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "luve/common.hpp"
#include "luve/tensor.hpp"

namespace luve::data {

// Pixel-space clip, [frames, H, W, 3]. Values live in [0,1] for generated
// content; decoded clips may exceed the range until final export clamps them.
struct VideoTensor {
    Tensor t;

    VideoTensor() = default;
    explicit VideoTensor(Tensor tensor);

    int frames() const { return t.extent(0); }
    int height() const { return t.extent(1); }
    int width() const { return t.extent(2); }
    double px(int f, int y, int x, int c) const { return t.at({f, y, x, c}); }
};

// Latent-space clip, [t, h, w, C]; C is 16 throughout the pipeline.
struct LatentTensor {
    Tensor t;

    LatentTensor() = default;
    explicit LatentTensor(Tensor tensor);

    int frames() const { return t.extent(0); }
    int height() const { return t.extent(1); }
    int width() const { return t.extent(2); }
    int channels() const { return t.extent(3); }
};

// ---------------------------------------------------------------------------
// Synthetic moving-shapes scenes
// ---------------------------------------------------------------------------

struct SceneObject {
    enum class Kind { rect, disc };
    Kind kind = Kind::rect;
    double size_x = 4.0, size_y = 4.0;  // bounding box; disc diameter
    double x0 = 0.0, y0 = 0.0;          // top-left corner at frame 0
    double vx = 0.0, vy = 0.0;          // pixels per frame
    double color[3] = {1.0, 1.0, 1.0};
};

// Motion classes label the dominant direction of a scene's objects; they feed
// the backbone's class conditioning.
enum MotionClass { kMotionRight = 0, kMotionLeft = 1, kMotionDown = 2, kMotionUp = 3 };
constexpr int kNumMotionClasses = 4;

enum class Background { black, gradient };

struct ShapeSceneConfig {
    int frames = 8;
    int height = 32, width = 32;
    uint64_t seed = 0;
    int object_count = 2;  // randomized objects when `objects` is empty
    double min_size = 3.0, max_size = 9.0;
    double max_speed = 2.0;
    int motion_class = -1;  // -1: any direction
    double border_margin = 0.0;  // keeps objects this far from the frame edge
    Background background = Background::black;  // gradient: seeded static color ramp
    std::vector<SceneObject> objects;  // explicit scene (tests); bypasses randomization
};

// Deterministic clip: objects move with constant velocity and reflect off the
// frame bounds (minus border_margin).
VideoTensor gen_moving_shapes(const ShapeSceneConfig& cfg);

// ---------------------------------------------------------------------------
// Toy latent codec (VAE stand-in)
// ---------------------------------------------------------------------------

// Linear per-frame codec: non-overlapping 4x4x3 pixel patches are mapped to 16
// latent channels by a fixed seeded matrix with orthonormal rows; decode is
// the transpose map. No temporal compression. decode(encode(x)) is the
// orthogonal projection of x onto the row space.
class Codec {
  public:
    static constexpr int kPatch = 4;
    static constexpr int kChannels = 16;
    static constexpr int kPatchValues = kPatch * kPatch * 3;

    Codec() = default;
    explicit Codec(Tensor enc);      // [16, 48], orthonormal rows
    static Codec make(uint64_t seed);

    LatentTensor encode(const VideoTensor& video) const;
    VideoTensor decode(const LatentTensor& latent) const;

    // Differentiable paths for training losses.
    Tensor encode_tensor(GradTape* tape, const Tensor& video) const;
    Tensor decode_tensor(GradTape* tape, const Tensor& latent) const;

    const Tensor& matrix() const { return enc_; }
    void save(const std::string& path) const;
    static Codec load(const std::string& path);

  private:
    Tensor enc_;  // [16, 48]
};

// ---------------------------------------------------------------------------
// Augmentation, curation, resizing
// ---------------------------------------------------------------------------

// x + amount * (x - gaussian_blur(x, sigma)) per frame and channel.
// Truncated kernel of radius ceil(3*sigma), normalized, replicate edges.
VideoTensor unsharp_mask(const VideoTensor& video, double sigma, double amount);

using ClipScorer = std::function<double(const VideoTensor&)>;

// Deterministic contrast + sharpness heuristic on a 0..10-ish scale; the
// default stand-in for an external preference scorer.
double default_quality_score(const VideoTensor& video);

// Indices of clips whose score strictly exceeds the threshold, input order
// preserved. A scorer failure skips that clip (logged), it is not fatal.
std::vector<size_t> curate(const std::vector<VideoTensor>& clips, const ClipScorer& scorer,
                           double threshold);

// Per-frame, per-channel resampling on [t,h,w,c] stacks.
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);
Tensor resize_bicubic(const Tensor& x, int out_h, int out_w);
VideoTensor resize_bilinear(const VideoTensor& v, int out_h, int out_w);
VideoTensor resize_bicubic(const VideoTensor& v, int out_h, int out_w);

VideoTensor clamp01(const VideoTensor& v);

// ---------------------------------------------------------------------------
// Training pairs and dataset persistence
// ---------------------------------------------------------------------------

struct LatentPair {
    LatentTensor lr;
    LatentTensor hr;
    VideoTensor hr_video;
    double scale = 1.0;
    int label = 0;
};

// HR video -> encoded HR latent; bilinearly downscaled video -> LR latent.
// Downscaled sizes not divisible by the codec patch are cropped to the
// nearest valid size (logged).
std::vector<LatentPair> make_lr_hr_pairs(const VideoTensor& video, const std::vector<double>& scales,
                                         const Codec& codec, int label = 0);

struct DatasetEntry {
    std::string id;
    uint64_t seed = 0;
    double scale = 1.0;
    double score = 0.0;
    int label = 0;
    std::string lr_file, hr_file, video_file;
};

// LUVT files plus a JSON manifest in `dir`.
void save_pair_dataset(const std::string& dir, const std::vector<LatentPair>& pairs,
                       const std::vector<uint64_t>& seeds, const std::vector<double>& scores);
std::vector<LatentPair> load_pair_dataset(const std::string& dir);

// Labeled latent clips (backbone / expert training sets).
void save_latent_dataset(const std::string& dir, const std::vector<LatentSample>& samples,
                         const std::vector<uint64_t>& seeds, const std::vector<double>& scores);
std::vector<LatentSample> load_latent_dataset(const std::string& dir);

}  // namespace luve::data
