#include <atomic>
#include <cctype>
#include <fstream>
#include <thread>

#include <httplib.h>

#include "luve/errors.hpp"
#include "luve/eval.hpp"
#include "luve/png.hpp"

namespace luve::eval {

// ---------------------------------------------------------------------------
// System-prompt templates. The canonical copies live here; the files under
// assets/mllm/ must stay byte-identical (checked by the acceptance suite).
// ---------------------------------------------------------------------------

namespace {

const std::string kRealismPrompt =
    R"(You are a UHR (Ultra-High-Resolution) Visual Realism Expert. Your task is to assess the physical and semantic integrity of high-resolution generated videos. Since these videos feature intricate details, you must look beyond surface-level sharpness and evaluate whether the underlying content remains logically sound.

I. Evaluation Dimensions:
1. Semantic Fidelity & Complexity: Does the UHR content (e.g., skin pores, fabric textures, distant scenery) look genuine or like 'abstract noise'? High resolution should mean more meaningful content, not just sharper artifacts.
2. Object Permanence & Occlusion: In 4K/2K scenarios, check for subtle flickering in small background objects or incorrect layering during complex occlusions.
3. Biomechanically Plausible Motion: Human/animal movements must respect joint limits and weight. No floating limbs or unnatural micro-jitters.
4. Physically Consistent Rendering: Check if high-frequency details (reflections, specular highlights, micro-shadows) align with the global light source.
5. Temporal Coherence: Ensure motion is fluid across frames. Sharp textures must not 'crawl' or deform inconsistently as the camera moves.

II. Scoring Scale (1-10):
10: Masterpiece - Perfect UHR realism. Every fine detail respects physics. No anomalies.
9: Exceptional - Extremely minor, nearly imperceptible texture crawling in one frame.
7-8: Good - Clear UHR details, but occasional micro-shadow misalignment or minor joint stiffness.
5-6: Moderate - Visible semantic errors (e.g., robotic gait, water not splashing) but still recognizable.
3-4: Poor - Frequent UHR artifacts: textures 'floating' off surfaces, teleporting objects, or melting limbs.
1-2: Failed - Physically incoherent chaos: perspective collapses, objects vanish mid-motion, complete hallucination.

III. Critical Auditing Criterion:
Be conservative and rigorous in your scoring. Do not let high image resolution compensate for poor physical logic. A video that is sharp but physically impossible (e.g., an object passing through another, or gravity-defying motions) should be penalized heavily. High contrast or edge-sharpness should NOT mask underlying hallucinations. A score of 9 or 10 is reserved ONLY for content that perfectly emulates the laws of physics and biological movement.

IV. Output Requirements:
- Return ONLY a single JSON object.
- Must contain exactly two keys: "score" (integer 1-10) and "reason" (string, >= 20 characters).
- In "reason", specifically mention how UHR details support or undermine the score, citing approximate timestamps.
)";

const std::string kDetailnessPrompt =
    R"(You are a UHR (Ultra-High-Resolution) Texture & Detail Analyst. Your mission is to evaluate the information density and tactile quality of high-resolution generated videos. You must distinguish between 'true detail' (meaningful, structural information) and 'false detail' (upscaled noise, over-sharpened edges, or repetitive artifacts).

I. Evaluation Dimensions:
1. Texture Granularity & Tactility: Do surfaces (skin, fabric, weathered stone, liquid) exhibit fine-grained, distinct patterns that evoke a sense of touch? Look for micro-textures like pores, fibers, or scratches.
2. Structural High-Frequency Detail: Assess the clarity of fine structures such as individual strands of hair, distant leaves, or intricate mechanical parts. They should be sharp but not aliased or shimmering.
3. Material Authenticity: Does the material look like what it is supposed to be? Metal should have distinct specular highlights; silk should have a soft, micro-fine sheen. Avoid 'plastic-like' or 'mushy' textures.
4. Visual Density: Does the UHR version provide significantly more information than a low-resolution counterpart? Higher resolution must lead to new discernible details in the background and foreground.
5. Detail-to-Motion Stability: Do these fine textures remain stable during movement? Details should not 'vibrate', disappear, or become a blurry mess when the object or camera moves.

II. Scoring Scale (1-10):
10: Masterpiece - Breathtaking UHR richness. Textures are indistinguishable from 4K/2K real-world footage. Exceptional density of meaningful information.
9: Outstanding - High-frequency details are extremely clear and stable, with only microscopic artifacts in the most complex patterns.
7-8: High Quality - Noticeable UHR detail growth. Textures are rich and mostly authentic, though some fine structures may slightly soften during fast motion.
5-6: Moderate - Better than standard HD, but details feel 'reconstructive' or slightly artificial. Some surfaces look overly smooth or lack micro-textures.
3-4: Low Quality - Sharp edges but hollow content. Feels like an upscaled video with sharpening filters rather than true UHR synthesis. Textures are 'mushy'.
1-2: Poor - Significant blurring or chaotic noise. No discernible UHR detail. Surface textures are replaced by blocky artifacts or flat colors.

III. Critical Auditing Criterion:
Be conservative and rigorous in your scoring. Do not be misled by surface-level sharpness; high contrast or 'hard' edges should NOT earn a high score if the underlying texture lacks authentic semantic meaning. If you detect any 'uncanny' artificial patterns, texture crawling, or loss of structural integrity during motion, you MUST penalize the score heavily. A score of 9 or 10 is reserved ONLY for content that is virtually indistinguishable from professional high-end cinematography.

IV. Output Requirements:
- Return ONLY a single JSON object.
- Must contain exactly two keys: "score" (integer 1-10) and "reason" (string, >= 20 characters).
- In "reason", specifically describe the quality of textures (e.g., 'the realistic weave of the fabric') and the stability of fine details, citing approximate timestamps.
)";

const std::string kAlignmentPrompt =
    R"(You are a Semantic Alignment Specialist. Your task is to determine how faithfully the generated video reflects the provided text prompt.

Target Prompt to Compare:
'[Target User Prompt]'

I. Evaluation Dimensions:
1. Entity Presence: Are all subjects, objects, and characters mentioned in the prompt present?
2. Action & Motion Accuracy: Are the described actions (e.g., 'Thomas flare', 'splashing') executed correctly according to the text?
3. Attribute & Style Consistency: Does the video match the specified style (e.g., 'Sci-fi', 'Real photography') and attributes (e.g., 'golden hair', 'blue neon lights')?
4. Spatial & Temporal Logic: Are the relative positions and the sequence of events consistent with the narrative in the prompt?
5. Detail Fidelity: Do fine-grained descriptions (e.g., 'water refracting golden light') actually appear in the UHR frames?

II. Scoring Scale (1-10):
10: Perfect Alignment - Every single detail, action, and entity is perfectly captured.
9: Near Perfect - All major elements are correct; only a tiny, trivial detail is missing.
7-8: Good - The main story and entities are correct, but some secondary attributes are ignored.
5-6: Fair - The general theme is correct, but major actions or key entities are missing/hallucinated.
3-4: Poor - Only vague resemblance to the prompt; many contradictions in actions or subjects.
1-2: Irrelevant - The video has nothing to do with the provided text.

III. Critical Auditing Criterion:
Be conservative and rigorous. Do not reward a video just because it is high-quality if it fails to follow the prompt instructions. If the prompt asks for 'three people' and there are only 'two', or if an action is performed incorrectly, you MUST penalize the score. A score of 10 is reserved for absolute semantic perfection.

IV. Output Requirements:
- Return ONLY a single JSON object.
- Must contain exactly two keys: "score" (integer 1-10) and "reason" (string, >= 20 characters).
- In "reason", cite specific parts of the prompt that were either fulfilled or failed, mentioning approximate timestamps.
- No markdown, no extra text.
)";

}  // namespace

std::string axis_name(MllmAxis axis) {
    switch (axis) {
        case MllmAxis::realism: return "realism";
        case MllmAxis::detailness: return "detailness";
        case MllmAxis::alignment: return "alignment";
    }
    throw ContractError("unknown axis");
}

const std::string& mllm_system_prompt(MllmAxis axis) {
    switch (axis) {
        case MllmAxis::realism: return kRealismPrompt;
        case MllmAxis::detailness: return kDetailnessPrompt;
        case MllmAxis::alignment: return kAlignmentPrompt;
    }
    throw ContractError("unknown axis");
}

// ---------------------------------------------------------------------------
// Request / response
// ---------------------------------------------------------------------------

nlohmann::json build_mllm_request(const std::vector<Tensor>& frames, MllmAxis axis,
                                  const std::string& target_prompt, const std::string& model) {
    require(!frames.empty(), "build_mllm_request: no frames");
    std::string system_prompt = mllm_system_prompt(axis);
    if (axis == MllmAxis::alignment) {
        require(!target_prompt.empty(), "build_mllm_request: alignment axis requires a target prompt");
        const size_t slot = system_prompt.find(kTargetPromptSlot);
        require(slot != std::string::npos, "alignment template lost its prompt slot");
        system_prompt.replace(slot, std::string(kTargetPromptSlot).size(), target_prompt);
        require(system_prompt.find(kTargetPromptSlot) == std::string::npos,
                "alignment template holds more than one prompt slot");
    }

    nlohmann::json frames_json = nlohmann::json::array();
    for (const auto& f : frames) {
        std::vector<uint8_t> png = frame_to_png(f);
        frames_json.push_back(base64_encode(png.data(), png.size()));
    }
    return nlohmann::json{{"model", model},
                          {"system_prompt", system_prompt},
                          {"frames", frames_json},
                          {"user_content", "Evaluate the attached video frames per the system prompt."}};
}

MllmScore parse_mllm_response(const std::string& body, MllmAxis axis) {
    // locate the single JSON object in the raw body
    const size_t start = body.find('{');
    if (start == std::string::npos)
        throw ValidationError("malformed_json", "no JSON object in response");
    int depth = 0;
    bool in_string = false;
    size_t end = std::string::npos;
    for (size_t i = start; i < body.size(); ++i) {
        const char c = body[i];
        if (in_string) {
            if (c == '\\') ++i;
            else if (c == '"') in_string = false;
            continue;
        }
        if (c == '"') in_string = true;
        else if (c == '{') ++depth;
        else if (c == '}') {
            if (--depth == 0) {
                end = i;
                break;
            }
        }
    }
    if (end == std::string::npos) throw ValidationError("malformed_json", "unterminated JSON object");

    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(body.substr(start, end - start + 1));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed_json", e.what());
    }
    if (!doc.is_object()) throw ValidationError("malformed_json", "response is not an object");
    if (!doc.contains("score")) throw ValidationError("missing_key", "no \"score\" key");
    if (!doc.contains("reason")) throw ValidationError("missing_key", "no \"reason\" key");
    if (doc.size() != 2)
        throw ValidationError("extra_key", "response must contain exactly the keys score and reason");
    if (!doc["score"].is_number_integer())
        throw ValidationError("score_type", "score must be an integer");
    const int score = doc["score"].get<int>();
    if (score < 1 || score > 10)
        throw ValidationError("score_range", "score " + std::to_string(score) + " outside 1..10");
    if (!doc["reason"].is_string()) throw ValidationError("reason_type", "reason must be a string");
    const std::string reason = doc["reason"].get<std::string>();
    if (reason.size() < 20)
        throw ValidationError("reason_short", "reason must be at least 20 characters");
    return MllmScore{axis, score, reason};
}

// ---------------------------------------------------------------------------
// Transports
// ---------------------------------------------------------------------------

HttpMllmTransport::HttpMllmTransport(std::string host, int port, std::string path)
    : host_(std::move(host)), path_(std::move(path)), port_(port) {}

std::string HttpMllmTransport::post(const nlohmann::json& request, const std::string& tag) {
    (void)tag;
    httplib::Client client(host_, port_);
    client.set_read_timeout(120, 0);
    auto res = client.Post(path_, request.dump(), "application/json");
    if (!res) throw IoError("MLLM endpoint unreachable: " + host_ + ":" + std::to_string(port_));
    if (res->status != 200)
        throw IoError("MLLM endpoint returned status " + std::to_string(res->status));
    return res->body;
}

ReplayMllmTransport::ReplayMllmTransport(std::string dir) : dir_(std::move(dir)) {}

std::string ReplayMllmTransport::post(const nlohmann::json& request, const std::string& tag) {
    (void)request;
    std::ifstream is(dir_ + "/" + tag + ".json");
    if (!is) throw IoError("replay transport: no canned response for " + tag);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

// ---------------------------------------------------------------------------
// Concurrent evaluation
// ---------------------------------------------------------------------------

std::vector<MllmEvalItem> run_mllm_eval(
    const std::vector<std::pair<std::string, data::VideoTensor>>& clips,
    const std::vector<MllmAxis>& axes, MllmTransport& transport, const std::string& target_prompt,
    int frames_per_video, int max_in_flight) {
    require(max_in_flight >= 1, "run_mllm_eval: need at least one worker");

    struct Job {
        size_t clip;
        MllmAxis axis;
    };
    std::vector<Job> jobs;
    for (size_t c = 0; c < clips.size(); ++c)
        for (MllmAxis a : axes) jobs.push_back({c, a});

    std::vector<MllmEvalItem> results(jobs.size());
    std::vector<std::string> errors(jobs.size());
    std::atomic<size_t> next{0};

    auto worker = [&]() {
        for (size_t j = next.fetch_add(1); j < jobs.size(); j = next.fetch_add(1)) {
            const Job& job = jobs[j];
            const auto& [clip_id, video] = clips[job.clip];
            try {
                const int n = video.frames();
                const int m = std::min(frames_per_video, n);
                std::vector<Tensor> frames;
                for (int k = 0; k < m; ++k) {
                    const int f = static_cast<int>((k + 0.5) * n / m);
                    frames.push_back(
                        slice_axis0(video.t, f, f + 1).reshaped({video.height(), video.width(), 3}));
                }
                nlohmann::json request = build_mllm_request(frames, job.axis, target_prompt);
                const std::string tag = clip_id + "_" + axis_name(job.axis);
                const std::string body = transport.post(request, tag);
                results[j] = MllmEvalItem{clip_id, job.axis, parse_mllm_response(body, job.axis)};
            } catch (const std::exception& e) {
                errors[j] = e.what();
            }
        }
    };

    std::vector<std::thread> pool;
    const size_t workers = std::min<size_t>(static_cast<size_t>(max_in_flight), jobs.size());
    for (size_t i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();

    for (size_t j = 0; j < jobs.size(); ++j)
        if (!errors[j].empty())
            throw ValidationError("mllm_eval",
                                  clips[jobs[j].clip].first + "/" + axis_name(jobs[j].axis) + ": " +
                                      errors[j]);
    return results;
}

}  // namespace luve::eval
