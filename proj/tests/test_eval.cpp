#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "luve/eval.hpp"
#include "luve/png.hpp"

using namespace luve;
using namespace luve::eval;

namespace {

data::VideoTensor make_video(std::function<double(int f, int y, int x, int c)> fn, int n, int hw) {
    Tensor t({n, hw, hw, 3});
    for (int f = 0; f < n; ++f)
        for (int y = 0; y < hw; ++y)
            for (int x = 0; x < hw; ++x)
                for (int c = 0; c < 3; ++c)
                    t.data()[((static_cast<int64_t>(f) * hw + y) * hw + x) * 3 + c] = fn(f, y, x, c);
    return data::VideoTensor(std::move(t));
}

}  // namespace

TEST_CASE("psnr/mse: hand cases and cross-consistency") {
    Rng rng(1);
    data::VideoTensor a(Tensor::rand({2, 8, 8, 3}, rng));

    auto [psnr_same, mse_same] = psnr_mse(a, a);
    CHECK(mse_same == 0.0);
    CHECK(std::isinf(psnr_same));

    data::VideoTensor zeros(Tensor::zeros({2, 8, 8, 3}));
    data::VideoTensor ones(Tensor::full({2, 8, 8, 3}, 1.0));
    auto [psnr01, mse01] = psnr_mse(zeros, ones);
    CHECK(mse01 == doctest::Approx(1.0));
    CHECK(psnr01 == doctest::Approx(0.0));

    // half of one of two frames differs by 0.5: mse = 0.25 * 0.25 = 0.0625
    data::VideoTensor base(Tensor::zeros({2, 8, 8, 3}));
    data::VideoTensor half = make_video(
        [](int f, int y, int, int) { return (f == 0 && y < 4) ? 0.5 : 0.0; }, 2, 8);
    auto [psnr_half, mse_half] = psnr_mse(half, base);
    CHECK(mse_half == doctest::Approx(0.0625));
    CHECK(psnr_half == doctest::Approx(12.0412).epsilon(1e-4));

    // cross-field consistency on a random pair
    data::VideoTensor b(Tensor::rand({2, 8, 8, 3}, rng));
    auto [psnr_r, mse_r] = psnr_mse(a, b);
    CHECK(psnr_r == doctest::Approx(10.0 * std::log10(1.0 / mse_r)).epsilon(1e-12));

    CHECK_THROWS_AS(psnr_mse(a, data::VideoTensor(Tensor::zeros({2, 4, 4, 3}))), ContractError);
}

TEST_CASE("latent errors: hand cases") {
    data::LatentTensor a(Tensor::zeros({1, 1, 2, 2}));
    auto [mae0, mse0] = latent_errors(a, a);
    CHECK(mae0 == 0.0);
    CHECK(mse0 == 0.0);

    data::LatentTensor b(Tensor::full({1, 1, 2, 2}, 1.0));
    auto [mae1, mse1] = latent_errors(a, b);
    CHECK(mae1 == doctest::Approx(1.0));
    CHECK(mse1 == doctest::Approx(1.0));

    // naive loop on a fixed 2x2 case: values 0.5, -1, 2, 0 vs zeros
    data::LatentTensor c(Tensor({1, 1, 2, 2}, {0.5, -1.0, 2.0, 0.0}));
    auto [mae_c, mse_c] = latent_errors(c, a);
    CHECK(mae_c == doctest::Approx((0.5 + 1.0 + 2.0 + 0.0) / 4.0));
    CHECK(mse_c == doctest::Approx((0.25 + 1.0 + 4.0 + 0.0) / 4.0));
}

TEST_CASE("flicker: static, toggle, ramp") {
    data::VideoTensor still(Tensor::full({4, 6, 6, 3}, 0.5));
    CHECK(flicker(still) == 0.0);

    data::VideoTensor toggle =
        make_video([](int f, int, int, int) { return f % 2 ? 1.0 : 0.0; }, 4, 6);
    CHECK(flicker(toggle) == doctest::Approx(1.0));

    const double amplitude = 0.8;
    const int n = 5;
    data::VideoTensor ramp = make_video(
        [&](int f, int, int, int) { return amplitude * f / (n - 1); }, n, 6);
    CHECK(flicker(ramp) == doctest::Approx(amplitude / (n - 1)));
}

TEST_CASE("patch extraction: counts and geometry") {
    Rng rng(3);
    data::VideoTensor v(Tensor::rand({3, 8, 8, 3}, rng));
    // 8x8 frame, patch 4, non-overlapping grid: 4 patches per frame
    auto patches = extract_patches(v, 4, 2);
    CHECK(patches.size() == 8);  // 2 frames x 4 patches
    CHECK(patches[0].shape() == Shape{4, 4, 3});
    // top-left anchored: patch 0 equals the frame corner
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            for (int c = 0; c < 3; ++c) CHECK(patches[0].at({y, x, c}) == v.t.at({0, y, x, c}));
    CHECK_THROWS_AS(extract_patches(v, 8, 2), ContractError);  // needs >= 2 per side
}

TEST_CASE("frechet distance: identical sets, known Gaussians, symmetry") {
    // identical feature sets: distance 0 within 1e-6
    Rng rng(5);
    std::vector<std::vector<double>> feats;
    for (int i = 0; i < 200; ++i) {
        std::vector<double> f(8);
        for (auto& x : f) x = rng.normal();
        feats.push_back(f);
    }
    CHECK(std::abs(frechet_distance(feats, feats)) < 1e-6);

    // 1-D Gaussians N(0,1) vs N(1,1): closed form distance 1
    std::vector<std::vector<double>> ga, gb;
    for (int i = 0; i < 10000; ++i) {
        ga.push_back({rng.normal()});
        gb.push_back({rng.normal() + 1.0});
    }
    CHECK(frechet_distance(ga, gb) == doctest::Approx(1.0).epsilon(0.1));

    // symmetry and nonnegativity on random sets
    std::vector<std::vector<double>> fa, fb;
    for (int i = 0; i < 300; ++i) {
        std::vector<double> x(6), y(6);
        for (auto& v : x) v = rng.normal();
        for (auto& v : y) v = 0.5 * rng.normal() + 0.3;
        fa.push_back(x);
        fb.push_back(y);
    }
    const double dab = frechet_distance(fa, fb);
    const double dba = frechet_distance(fb, fa);
    CHECK(dab >= 0.0);
    CHECK(std::abs(dab - dba) < 1e-6);
}

TEST_CASE("fid_patch: identical video sets give zero") {
    Rng rng(7);
    std::vector<data::VideoTensor> set;
    for (int i = 0; i < 3; ++i) set.emplace_back(Tensor::rand({2, 16, 16, 3}, rng));
    PatchExtractor ex = make_projection_extractor(4, 16, 11);
    CHECK(std::abs(fid_patch(set, set, 4, 2, ex)) < 1e-6);

    std::vector<data::VideoTensor> other;
    for (int i = 0; i < 3; ++i)
        other.emplace_back(
            Tensor::rand({2, 16, 16, 3}, rng, 0.4, 0.6));  // different distribution
    const double d = fid_patch(set, other, 4, 2, ex);
    CHECK(d > 0.0);
}

TEST_CASE("symmetric eigenvalues: known matrix") {
    // [[2,1],[1,2]] has eigenvalues 1 and 3
    std::vector<double> eig = symmetric_eigenvalues({2.0, 1.0, 1.0, 2.0}, 2);
    std::sort(eig.begin(), eig.end());
    CHECK(eig[0] == doctest::Approx(1.0));
    CHECK(eig[1] == doctest::Approx(3.0));
}

TEST_CASE("mllm request: templates and slot substitution") {
    Rng rng(9);
    std::vector<Tensor> frames{Tensor::rand({8, 8, 3}, rng)};

    nlohmann::json req = build_mllm_request(frames, MllmAxis::realism);
    const std::string realism = req.at("system_prompt").get<std::string>();
    CHECK(realism.rfind("You are a UHR (Ultra-High-Resolution) Visual Realism Expert", 0) == 0);
    CHECK(req.at("frames").size() == 1);
    CHECK(req.at("model").get<std::string>() == "mllm-judge");
    // frames are base64 PNG: the prefix encodes the PNG signature
    const std::string b64 = req.at("frames")[0].get<std::string>();
    CHECK(b64.substr(0, 8) == base64_encode(reinterpret_cast<const uint8_t*>("\x89PNG\r\n"), 6).substr(0, 8));

    CHECK(mllm_system_prompt(MllmAxis::detailness)
              .rfind("You are a UHR (Ultra-High-Resolution) Texture & Detail Analyst", 0) == 0);

    nlohmann::json areq = build_mllm_request(frames, MllmAxis::alignment, "a red cube");
    const std::string aprompt = areq.at("system_prompt").get<std::string>();
    CHECK(aprompt.find("a red cube") != std::string::npos);
    CHECK(aprompt.find(kTargetPromptSlot) == std::string::npos);  // substituted exactly once
    // one occurrence only: the prompt appears a single time
    size_t first = aprompt.find("a red cube");
    CHECK(aprompt.find("a red cube", first + 1) == std::string::npos);

    CHECK_THROWS_AS(build_mllm_request({}, MllmAxis::realism), ContractError);
    CHECK_THROWS_AS(build_mllm_request(frames, MllmAxis::alignment, ""), ContractError);
}

TEST_CASE("mllm response parsing: validation categories") {
    MllmScore ok = parse_mllm_response(
        R"({"score": 7, "reason": "textures stable across all motion"})", MllmAxis::realism);
    CHECK(ok.score == 7);
    CHECK(ok.reason == "textures stable across all motion");

    // wrapped in extra text: the single JSON object is still extracted
    MllmScore wrapped = parse_mllm_response(
        "Here is my verdict: {\"score\": 3, \"reason\": \"blocky artifacts dominate every frame\"} done",
        MllmAxis::detailness);
    CHECK(wrapped.score == 3);

    auto category_of = [](const std::string& body) {
        try {
            parse_mllm_response(body, MllmAxis::realism);
        } catch (const ValidationError& e) {
            return e.category;
        }
        return std::string("none");
    };
    CHECK(category_of(R"({"score": 11, "reason": "this reason is long enough to pass"})") ==
          "score_range");
    CHECK(category_of(R"({"score": 0, "reason": "this reason is long enough to pass"})") ==
          "score_range");
    CHECK(category_of(R"({"score": 7})") == "missing_key");
    CHECK(category_of(R"({"reason": "this reason is long enough to pass"})") == "missing_key");
    CHECK(category_of(R"({"score": 7, "reason": "short"})") == "reason_short");
    CHECK(category_of(
              R"({"score": 7, "reason": "this reason is long enough to pass", "extra": 1})") ==
          "extra_key");
    CHECK(category_of(R"({"score": 6.5, "reason": "this reason is long enough to pass"})") ==
          "score_type");
    CHECK(category_of("no json here at all") == "malformed_json");

    // round trip: serializing a valid score and parsing it is the identity
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        MllmScore s;
        s.axis = MllmAxis::realism;
        s.score = 1 + rng.uniform_int(10);
        s.reason = "reason string number " + std::to_string(rng.uniform_int(1000)) + " padded out";
        nlohmann::json doc{{"score", s.score}, {"reason", s.reason}};
        MllmScore parsed = parse_mllm_response(doc.dump(), s.axis);
        CHECK(parsed.score == s.score);
        CHECK(parsed.reason == s.reason);
    }
}

TEST_CASE("replay transport end-to-end evaluation") {
    namespace fs = std::filesystem;
    const std::string dir = (fs::temp_directory_path() / "mllm_replay_test").string();
    fs::create_directories(dir);
    for (const char* clip : {"clip_a", "clip_b"}) {
        for (const char* axis : {"realism", "detailness", "alignment"}) {
            std::ofstream os(dir + "/" + clip + "_" + axis + ".json");
            os << R"({"score": 8, "reason": "canned response with sufficient length"})";
        }
    }

    Rng rng(13);
    std::vector<std::pair<std::string, data::VideoTensor>> clips;
    clips.emplace_back("clip_a", data::VideoTensor(Tensor::rand({2, 8, 8, 3}, rng)));
    clips.emplace_back("clip_b", data::VideoTensor(Tensor::rand({2, 8, 8, 3}, rng)));

    ReplayMllmTransport transport(dir);
    auto items = run_mllm_eval(clips, {MllmAxis::realism, MllmAxis::detailness, MllmAxis::alignment},
                               transport, "two moving shapes", 2, 3);
    REQUIRE(items.size() == 6);
    for (const auto& item : items) {
        CHECK(item.score.score == 8);
        CHECK(item.score.reason.size() >= 20);
    }
    CHECK(items[0].clip_id == "clip_a");
    CHECK(items[5].clip_id == "clip_b");

    // missing canned response is an error
    std::vector<std::pair<std::string, data::VideoTensor>> unknown;
    unknown.emplace_back("clip_missing", clips[0].second);
    CHECK_THROWS(run_mllm_eval(unknown, {MllmAxis::realism}, transport, "", 2, 1));
}

TEST_CASE("metric report serializes the full column set") {
    MetricReport r;
    r.method = "vluer";
    r.clip_ids = {"c1", "c2"};
    r.psnr_rgb = 28.5;
    r.mse_rgb = 0.0014;
    r.mae_lat = 0.14;
    r.mse_lat = 0.039;
    r.flicker = 0.01;
    r.fid_patch = 41.0;
    nlohmann::json doc = r.to_json();
    CHECK(doc.at("method") == "vluer");
    CHECK(doc.at("psnr_rgb") == doctest::Approx(28.5));
    CHECK(doc.at("mse_lat") == doctest::Approx(0.039));
    CHECK(doc.at("clips").size() == 2);
}

TEST_CASE("png writer emits decodable structure") {
    Rng rng(15);
    Tensor frame = Tensor::rand({6, 8, 3}, rng);
    std::vector<uint8_t> png = frame_to_png(frame);
    REQUIRE(png.size() > 20);
    CHECK(png[0] == 0x89);
    CHECK(png[1] == 'P');
    // IHDR starts at byte 12 with width 8, height 6 big-endian
    CHECK(std::string(png.begin() + 12, png.begin() + 16) == "IHDR");
    CHECK(png[19] == 8);
    CHECK(png[23] == 6);
}
