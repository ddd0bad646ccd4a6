#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "luve/data.hpp"
#include "luve/tensor.hpp"

namespace luve::eval {

// ---------------------------------------------------------------------------
// Reconstruction metrics
// ---------------------------------------------------------------------------

// mse = mean squared difference, psnr = 10*log10(1/mse) for [0,1] video;
// identical inputs report psnr = +inf.
std::pair<double, double> psnr_mse(const data::VideoTensor& a, const data::VideoTensor& b);
// (mae, mse) between latents.
std::pair<double, double> latent_errors(const data::LatentTensor& a, const data::LatentTensor& b);
// Mean absolute consecutive-frame difference; 0 for a static clip.
double flicker(const data::VideoTensor& v);

struct MetricReport {
    std::string method;
    std::vector<std::string> clip_ids;
    double psnr_rgb = 0.0;
    double mse_rgb = 0.0;
    double mae_lat = 0.0;
    double mse_lat = 0.0;
    double flicker = 0.0;
    double fid_patch = 0.0;
    double wall_ms = 0.0;

    nlohmann::json to_json() const;
};

// ---------------------------------------------------------------------------
// Patch-based Frechet distance
// ---------------------------------------------------------------------------

// Maps a [p,p,3] patch to a feature vector.
using PatchExtractor = std::function<std::vector<double>(const Tensor& patch)>;

// Default extractor: fixed seeded random projection of the flattened patch.
PatchExtractor make_projection_extractor(int patch, int feature_dim = 64, uint64_t seed = 17);

// Non-overlapping top-left anchored grid over uniformly spaced frames.
std::vector<Tensor> extract_patches(const data::VideoTensor& video, int patch,
                                    int frames_per_video);

// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)); the matrix square root is
// taken by symmetric eigendecomposition of sqrt(S1) S2 sqrt(S1). Singular
// covariances get 1e-6 diagonal jitter (logged).
double frechet_distance(const std::vector<std::vector<double>>& feats_a,
                        const std::vector<std::vector<double>>& feats_b);

double fid_patch(const std::vector<data::VideoTensor>& set_a,
                 const std::vector<data::VideoTensor>& set_b, int patch, int frames_per_video,
                 const PatchExtractor& extractor);

// Jacobi eigendecomposition of a symmetric matrix (row-major n*n). Returns
// eigenvalues; eigenvectors land in `vecs` (columns) when non-null.
std::vector<double> symmetric_eigenvalues(std::vector<double> m, int n,
                                          std::vector<double>* vecs = nullptr);

// ---------------------------------------------------------------------------
// MLLM scoring client
// ---------------------------------------------------------------------------

enum class MllmAxis { realism, detailness, alignment };

std::string axis_name(MllmAxis axis);

struct MllmScore {
    MllmAxis axis = MllmAxis::realism;
    int score = 0;          // integer 1..10
    std::string reason;     // >= 20 characters
};

// Canonical system-prompt template for an axis; byte-identical to the files
// shipped under assets/mllm/.
const std::string& mllm_system_prompt(MllmAxis axis);
// The placeholder substituted into the alignment template.
inline constexpr const char* kTargetPromptSlot = "[Target User Prompt]";

// {model, system_prompt, frames (base64 PNG), user_content}. The alignment
// axis substitutes target_prompt into the template exactly once.
nlohmann::json build_mllm_request(const std::vector<Tensor>& frames, MllmAxis axis,
                                  const std::string& target_prompt = "",
                                  const std::string& model = "mllm-judge");

// Extracts the single JSON object from a raw response body and validates it:
// exactly the two keys "score" (integer 1..10) and "reason" (>= 20 chars).
// Violations raise ValidationError with a category tag.
MllmScore parse_mllm_response(const std::string& body, MllmAxis axis);

// Blocking request/response transport. `tag` identifies the request for
// replay stores; network transports may ignore it.
struct MllmTransport {
    virtual ~MllmTransport() = default;
    virtual std::string post(const nlohmann::json& request, const std::string& tag) = 0;
};

// POSTs the request JSON to an HTTP endpoint (host, port, path).
class HttpMllmTransport : public MllmTransport {
  public:
    HttpMllmTransport(std::string host, int port, std::string path);
    std::string post(const nlohmann::json& request, const std::string& tag) override;

  private:
    std::string host_, path_;
    int port_;
};

// Serves canned responses from files named "<tag>.json" in a directory.
class ReplayMllmTransport : public MllmTransport {
  public:
    explicit ReplayMllmTransport(std::string dir);
    std::string post(const nlohmann::json& request, const std::string& tag) override;

  private:
    std::string dir_;
};

struct MllmEvalItem {
    std::string clip_id;
    MllmAxis axis = MllmAxis::realism;
    MllmScore score;
};

// Scores each clip on each axis; requests run concurrently up to
// max_in_flight, results are ordered by (clip, axis) regardless of completion
// order.
std::vector<MllmEvalItem> run_mllm_eval(
    const std::vector<std::pair<std::string, data::VideoTensor>>& clips,
    const std::vector<MllmAxis>& axes, MllmTransport& transport,
    const std::string& target_prompt = "", int frames_per_video = 4, int max_in_flight = 2);

}  // namespace luve::eval
