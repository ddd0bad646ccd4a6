#include <doctest.h>

#include <cmath>
#include <complex>

#include "luve/backbone.hpp"
#include "luve/experts.hpp"

using namespace luve;
using namespace luve::experts;

namespace {

TokenGrid grid_for(int frames, int rows, int cols, int width) {
    TokenGrid g;
    g.frames = frames;
    g.rows = rows;
    g.cols = cols;
    g.patch_h = 1;
    g.patch_w = 1;
    g.channels = width;
    return g;
}

// Dense DFT filter oracle: full O(n^2)-per-bin transforms, independent of the
// library's separable implementation.
Tensor low_pass_oracle(const Tensor& x, const TokenGrid& g, double rho) {
    const int t = g.frames, h = g.rows, w = g.cols;
    const int width = g.token_width();
    Tensor out(x.shape());
    auto signed_freq = [](int k, int n) { return k <= n / 2 ? k : k - n; };
    for (int f = 0; f < t; ++f) {
        for (int ch = 0; ch < width; ++ch) {
            std::vector<std::complex<double>> spec(static_cast<size_t>(h) * w);
            for (int ky = 0; ky < h; ++ky)
                for (int kx = 0; kx < w; ++kx) {
                    std::complex<double> acc = 0.0;
                    for (int y = 0; y < h; ++y)
                        for (int xx = 0; xx < w; ++xx) {
                            const double ang = -2.0 * M_PI *
                                               (static_cast<double>(ky) * y / h +
                                                static_cast<double>(kx) * xx / w);
                            acc += x.at({f * h * w + y * w + xx, ch}) *
                                   std::complex<double>(std::cos(ang), std::sin(ang));
                        }
                    const int fy = std::abs(signed_freq(ky, h)), fx = std::abs(signed_freq(kx, w));
                    const double ry = h / 2 > 0 ? static_cast<double>(fy) / (h / 2) : 0.0;
                    const double rx = w / 2 > 0 ? static_cast<double>(fx) / (w / 2) : 0.0;
                    spec[static_cast<size_t>(ky) * w + kx] = std::max(ry, rx) <= rho ? acc : 0.0;
                }
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) {
                    std::complex<double> acc = 0.0;
                    for (int ky = 0; ky < h; ++ky)
                        for (int kx = 0; kx < w; ++kx) {
                            const double ang = 2.0 * M_PI *
                                               (static_cast<double>(ky) * y / h +
                                                static_cast<double>(kx) * xx / w);
                            acc += spec[static_cast<size_t>(ky) * w + kx] *
                                   std::complex<double>(std::cos(ang), std::sin(ang));
                        }
                    out.data()[(static_cast<int64_t>(f) * h * w + static_cast<int64_t>(y) * w + xx) *
                                   width + ch] = acc.real() / (h * w);
                }
        }
    }
    return out;
}

}  // namespace

TEST_CASE("low pass: constants, full band, checkerboard, oracle") {
    TokenGrid g = grid_for(2, 8, 8, 3);

    // constant field is preserved for any rho (DC always kept)
    Tensor c = Tensor::full({128, 3}, 0.8);
    for (double rho : {0.1, 0.25, 0.7, 1.0}) {
        Tensor lp = low_pass(c, g, rho);
        for (int64_t i = 0; i < c.size(); ++i)
            CHECK(lp.data()[i] == doctest::Approx(0.8).epsilon(1e-9));
    }

    // rho = 1 keeps the whole band
    Rng rng(3);
    Tensor x = Tensor::randn({128, 3}, rng);
    Tensor full = low_pass(x, g, 1.0);
    for (int64_t i = 0; i < x.size(); ++i)
        CHECK(full.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-5));

    // 8x8 checkerboard concentrates all energy at Nyquist: wiped at rho=0.25
    TokenGrid g1 = grid_for(1, 8, 8, 1);
    Tensor check({64, 1});
    for (int y = 0; y < 8; ++y)
        for (int xx = 0; xx < 8; ++xx) check.data()[y * 8 + xx] = ((y + xx) % 2) ? 1.0 : -1.0;
    Tensor lp = low_pass(check, g1, 0.25);
    for (int64_t i = 0; i < lp.size(); ++i) CHECK(std::abs(lp.data()[i]) < 1e-5);
    // and the complementary high pass reproduces it
    Tensor hp = high_pass(check, g1, 0.25);
    for (int64_t i = 0; i < hp.size(); ++i)
        CHECK(hp.data()[i] == doctest::Approx(check.data()[i]).epsilon(1e-5));

    // random fields match the dense oracle
    Tensor r = Tensor::randn({128, 3}, rng);
    Tensor lib = low_pass(r, g, 0.5);
    Tensor oracle = low_pass_oracle(r, g, 0.5);
    for (int64_t i = 0; i < r.size(); ++i)
        CHECK(lib.data()[i] == doctest::Approx(oracle.data()[i]).epsilon(1e-8));

    // missing grid metadata
    CHECK_THROWS_AS(low_pass(r, TokenGrid{}, 0.5), ContractError);
    CHECK_THROWS_AS(low_pass(r, g, 0.0), ContractError);
}

TEST_CASE("filter algebra: complementarity and idempotence") {
    Rng rng(5);
    TokenGrid g = grid_for(2, 4, 6, 4);
    auto ulp_of = [](double m) {
        int e;
        std::frexp(m, &e);
        return std::ldexp(1.0, e - 52);
    };
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = Tensor::randn({48, 4}, rng);
        const double rho = rng.uniform(0.1, 1.0);
        Tensor lp = low_pass(x, g, rho);
        Tensor hp = high_pass(x, g, rho);
        for (int64_t i = 0; i < x.size(); ++i) {
            // complementarity by construction: high is exactly x - low
            CHECK(hp.data()[i] == x.data()[i] - lp.data()[i]);
            // and the recomposed sum lands within one ulp of the pieces
            const double m = std::max({std::abs(lp.data()[i]), std::abs(hp.data()[i]),
                                       std::abs(x.data()[i]), 1e-300});
            CHECK(std::abs(lp.data()[i] + hp.data()[i] - x.data()[i]) <= ulp_of(m));
        }
        // projector idempotence
        Tensor lp2 = low_pass(lp, g, rho);
        for (int64_t i = 0; i < x.size(); ++i)
            CHECK(lp2.data()[i] == doctest::Approx(lp.data()[i]).epsilon(1e-5));
    }
}

TEST_CASE("filters are differentiable with a self-adjoint backward") {
    Rng rng(7);
    TokenGrid g = grid_for(1, 4, 4, 2);
    Tensor x = Tensor::randn({16, 2}, rng);
    Tensor target = Tensor::rand({16, 2}, rng);
    CHECK(finite_diff_check(
              [&](const Tensor& in) { return l1_loss(low_pass(in, g, 0.5), target); }, x) < 1e-4);
    CHECK(finite_diff_check(
              [&](const Tensor& in) { return l1_loss(high_pass(in, g, 0.5), target); }, x) < 1e-4);
}

TEST_CASE("lora adapters: zero-init inertness and constant inputs") {
    Rng rng(11);
    const int dim = 16;
    TokenGrid g = grid_for(1, 4, 4, dim);
    MultiheadAttention attn(dim, 2, rng);
    Ffn ffn(dim, 32, rng);
    Tensor x = Tensor::randn({16, dim}, rng);

    LoRAAdapter lfe_adapter(dim, 4, 8.0, Site::attention, rng);
    LoRAAdapter hfe_adapter(dim, 4, 8.0, Site::ffn, rng);

    // zero-initialized up-projection: bit-identical to the host
    Tensor host_attn = attn.forward(nullptr, x);
    Tensor with_lfe = lfe_attention(nullptr, attn, x, g, lfe_adapter, 0.25);
    for (int64_t i = 0; i < x.size(); ++i) CHECK(with_lfe.data()[i] == host_attn.data()[i]);

    Tensor host_ffn = ffn.forward(nullptr, x);
    Tensor with_hfe = hfe_ffn(nullptr, ffn, x, g, hfe_adapter, 0.25);
    for (int64_t i = 0; i < x.size(); ++i) CHECK(with_hfe.data()[i] == host_ffn.data()[i]);

    // wrong site is rejected
    CHECK_THROWS_AS(lfe_attention(nullptr, attn, x, g, hfe_adapter, 0.25), ContractError);
    CHECK_THROWS_AS(hfe_ffn(nullptr, ffn, x, g, lfe_adapter, 0.25), ContractError);

    // train the up matrices away from zero
    Rng wrng(13);
    for (int64_t i = 0; i < lfe_adapter.up.value.size(); ++i)
        lfe_adapter.up.value.data()[i] = 0.1 * wrng.normal();
    for (int64_t i = 0; i < hfe_adapter.up.value.size(); ++i)
        hfe_adapter.up.value.data()[i] = 0.1 * wrng.normal();

    // constant x: the low-pass branch sees x unchanged...
    Tensor cx = Tensor::full({16, dim}, 0.6);
    Tensor y = lfe_attention(nullptr, attn, cx, g, lfe_adapter, 0.25);
    Tensor direct = add(attn.forward(nullptr, cx), lfe_adapter.apply(nullptr, cx));
    for (int64_t i = 0; i < y.size(); ++i)
        CHECK(y.data()[i] == doctest::Approx(direct.data()[i]).epsilon(1e-9));

    // ...while the high-pass branch is annihilated for ANY adapter weights
    Tensor yh = hfe_ffn(nullptr, ffn, cx, g, hfe_adapter, 0.25);
    Tensor host_c = ffn.forward(nullptr, cx);
    for (int64_t i = 0; i < yh.size(); ++i)
        CHECK(yh.data()[i] == doctest::Approx(host_c.data()[i]).epsilon(1e-9));
}

TEST_CASE("gradients reach only the adapter; hosts stay frozen") {
    Rng rng(17);
    const int dim = 8;
    TokenGrid g = grid_for(1, 2, 2, dim);
    MultiheadAttention attn(dim, 2, rng);
    NamedParams host_params = attn.params();
    set_frozen(host_params, true);

    LoRAAdapter adapter(dim, 2, 8.0, Site::attention, rng);
    Rng wrng(19);
    for (int64_t i = 0; i < adapter.up.value.size(); ++i)
        adapter.up.value.data()[i] = 0.1 * wrng.normal();

    Tensor x = Tensor::randn({4, dim}, rng);
    Tensor target = Tensor::rand({4, dim}, rng);

    std::vector<Tensor> host_before;
    for (auto& [name, p] : host_params) host_before.push_back(p->value.clone());

    GradTape tape;
    Tensor y = lfe_attention(&tape, attn, x, g, adapter, 0.5);
    Tensor loss = l1_loss(y, target);
    tape.backward(loss);

    // no gradient exists for any frozen host weight; values are untouched
    for (size_t i = 0; i < host_params.size(); ++i) {
        CHECK(!tape.has_grad(host_params[i].second->live));
        for (int64_t j = 0; j < host_before[i].size(); ++j)
            CHECK(host_params[i].second->value.data()[j] == host_before[i].data()[j]);
    }
    // adapter gradients exist and are nonzero
    CHECK(tape.has_grad(adapter.down.live));
    CHECK(tape.has_grad(adapter.up.live));
    double up_norm = 0.0;
    for (double v : tape.grad(adapter.up.live)) up_norm += v * v;
    CHECK(up_norm > 0.0);

    // finite differences w.r.t. the adapter matrices (tracked handles kept)
    auto run = [&](const Tensor& down, const Tensor& up) {
        LoRAAdapter a = adapter;
        a.down = Parameter(down);
        a.up = Parameter(up);
        Tensor yy = lfe_attention(GradTape::active(), attn, x, g, a, 0.5);
        return l1_loss(yy, target);
    };
    CHECK(finite_diff_check([&](const Tensor& d) { return run(d, adapter.up.value); },
                            adapter.down.value) < 1e-4);
    CHECK(finite_diff_check([&](const Tensor& u) { return run(adapter.down.value, u); },
                            adapter.up.value) < 1e-4);
    set_frozen(host_params, false);
}

TEST_CASE("routing: boundaries and intervals") {
    ExpertRouterConfig cfg;  // t_switch = 0.417
    CHECK(route(1.0, cfg) == ExpertKind::lfe);
    CHECK(route(0.0, cfg) == ExpertKind::hfe);
    CHECK(route(0.417, cfg) == ExpertKind::lfe);  // boundary goes to the LFE
    CHECK(route(0.41699, cfg) == ExpertKind::hfe);
    CHECK_THROWS_AS(route(1.5, cfg), ContractError);

    ExpertRouterConfig bad;
    bad.t_switch = 0.0;
    CHECK_THROWS_AS(route(0.5, bad), ContractError);

    // interval sampler never leaves its interval (1e4 draws each)
    Rng rng(23);
    for (int i = 0; i < 10000; ++i) {
        CHECK(draw_expert_timestep(ExpertKind::lfe, 0.417, rng) >= 0.417);
        CHECK(draw_expert_timestep(ExpertKind::hfe, 0.417, rng) < 0.417);
    }
}

TEST_CASE("mutual exclusion over a 50-step schedule: 30 LFE / 20 HFE") {
    ExpertRouterConfig cfg;
    backbone::DiffusionSchedule sched(50);
    int lfe_steps = 0, hfe_steps = 0;
    for (int i = 0; i < sched.steps; ++i) {
        if (route(sched.t(i), cfg) == ExpertKind::lfe)
            ++lfe_steps;
        else
            ++hfe_steps;
    }
    CHECK(lfe_steps == 30);
    CHECK(hfe_steps == 20);
}

TEST_CASE("expert training: zero iterations keep generation bit-exact") {
    backbone::DiTConfig dcfg;
    dcfg.dim = 32;
    dcfg.depth = 2;
    dcfg.heads = 2;
    dcfg.ffn_mult = 2;
    dcfg.vocab = 2;
    dcfg.time_dim = 16;
    dcfg.seed = 31;
    backbone::DiT model(dcfg);

    Rng rng(37);
    std::vector<LatentSample> dataset;
    for (int i = 0; i < 3; ++i) dataset.push_back({Tensor::randn({2, 4, 4, 16}, rng, 0.4), 0});

    ExpertTrainConfig cfg;
    cfg.iterations = 0;
    cfg.rank = 2;
    cfg.seed = 1;
    FrequencyExpert lfe = train_expert(ExpertKind::lfe, model, dataset, cfg);
    FrequencyExpert hfe = train_expert(ExpertKind::hfe, model, dataset, cfg);
    for (auto& block : lfe.blocks)
        for (int64_t i = 0; i < block.up.value.size(); ++i) CHECK(block.up.value.data()[i] == 0.0);

    LatentShape shape{2, 4, 4, 16};
    backbone::DiffusionSchedule sched(20);
    Tensor bare = backbone::sample(model, sched, shape, 0, 77);
    ExpertHooks hooks;
    hooks.lfe = &lfe;
    hooks.hfe = &hfe;
    Tensor hooked = backbone::sample(model, sched, shape, 0, 77, &hooks);
    for (int64_t i = 0; i < bare.size(); ++i) CHECK(hooked.data()[i] == bare.data()[i]);

    // empty interval is a config error
    ExpertTrainConfig bad = cfg;
    bad.t_switch = 1.0;
    CHECK_THROWS_AS(train_expert(ExpertKind::lfe, model, dataset, bad), ConfigError);
}

TEST_CASE("expert training: interval-restricted validation loss decreases") {
    backbone::DiTConfig dcfg;
    dcfg.dim = 32;
    dcfg.depth = 2;
    dcfg.heads = 2;
    dcfg.ffn_mult = 2;
    dcfg.vocab = 2;
    dcfg.time_dim = 16;
    dcfg.seed = 41;
    backbone::DiT model(dcfg);
    // a zero-initialized host blocks gradients to the adapters through its
    // zero head; give the frozen host non-degenerate weights first
    {
        Rng wrng(53);
        for (auto& [name, p] : model.params()) {
            bool all_zero = true;
            for (int64_t i = 0; i < p->value.size(); ++i)
                if (p->value.data()[i] != 0.0) all_zero = false;
            if (all_zero)
                for (int64_t i = 0; i < p->value.size(); ++i)
                    p->value.data()[i] = 0.05 * wrng.normal();
        }
    }

    Rng rng(43);
    std::vector<LatentSample> dataset;
    for (int i = 0; i < 6; ++i) dataset.push_back({Tensor::randn({2, 4, 4, 16}, rng, 0.4), 0});

    ExpertTrainConfig cfg;
    cfg.iterations = 120;
    cfg.lr = 1e-3;
    cfg.rank = 4;
    cfg.seed = 2;
    cfg.val_count = 2;
    std::vector<Tensor> host_before;
    for (auto& [name, p] : model.params()) host_before.push_back(p->value.clone());

    backbone::TrainStats stats;
    FrequencyExpert lfe = train_expert(ExpertKind::lfe, model, dataset, cfg, &stats);
    CHECK(stats.val_after < stats.val_before);

    // host weights remained bit-identical through training
    NamedParams a = model.params();
    for (size_t i = 0; i < a.size(); ++i)
        for (int64_t j = 0; j < a[i].second->value.size(); ++j)
            CHECK(a[i].second->value.data()[j] == host_before[i].data()[j]);
}
