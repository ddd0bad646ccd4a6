#include "luve/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

namespace luve::backbone {

// ---------------------------------------------------------------------------
// Tokenization
// ---------------------------------------------------------------------------

namespace {

std::vector<int64_t> token_index(const TokenGrid& g, int h, int w) {
    std::vector<int64_t> idx;
    idx.reserve(static_cast<size_t>(g.tokens()) * g.token_width());
    for (int f = 0; f < g.frames; ++f)
        for (int r = 0; r < g.rows; ++r)
            for (int c = 0; c < g.cols; ++c)
                for (int py = 0; py < g.patch_h; ++py)
                    for (int px = 0; px < g.patch_w; ++px)
                        for (int ch = 0; ch < g.channels; ++ch)
                            idx.push_back(((static_cast<int64_t>(f) * h + (r * g.patch_h + py)) * w +
                                           (c * g.patch_w + px)) * g.channels + ch);
    return idx;
}

}  // namespace

std::pair<Tensor, TokenGrid> tokenize(const Tensor& latent, int patch_h, int patch_w) {
    require(latent.rank() == 4, "tokenize expects [t,h,w,C]");
    const int t = latent.extent(0), h = latent.extent(1), w = latent.extent(2), c = latent.extent(3);
    require(h % patch_h == 0 && w % patch_w == 0,
            "latent extents " + shape_str(latent.shape()) + " not divisible by token patch");
    TokenGrid g;
    g.frames = t;
    g.rows = h / patch_h;
    g.cols = w / patch_w;
    g.patch_h = patch_h;
    g.patch_w = patch_w;
    g.channels = c;
    Tensor tokens = gather_elements(latent, token_index(g, h, w),
                                    {static_cast<int>(g.tokens()), g.token_width()});
    return {std::move(tokens), g};
}

Tensor detokenize(const Tensor& tokens, const TokenGrid& grid) {
    require(grid.valid(), "detokenize: missing grid metadata");
    require(tokens.rank() == 2 && tokens.extent(0) == grid.tokens() &&
                tokens.extent(1) == grid.token_width(),
            "detokenize: token shape mismatch");
    const int h = grid.rows * grid.patch_h, w = grid.cols * grid.patch_w;
    std::vector<int64_t> fwd = token_index(grid, h, w);
    std::vector<int64_t> inv(fwd.size());
    for (size_t i = 0; i < fwd.size(); ++i) inv[static_cast<size_t>(fwd[i])] = static_cast<int64_t>(i);
    return gather_elements(tokens, inv, {grid.frames, h, w, grid.channels});
}

// ---------------------------------------------------------------------------
// DiT
// ---------------------------------------------------------------------------

DiT::DiT(const DiTConfig& cfg) : cfg_(cfg) {
    require(cfg.dim % cfg.heads == 0, "model width must divide into heads");
    require(cfg.depth >= 1, "depth must be >= 1");
    Rng rng(cfg.seed);
    const int token_width = cfg.patch_h * cfg.patch_w * 16;
    token_in_ = Linear(token_width, cfg.dim, rng);
    for (int i = 0; i < cfg.depth; ++i) {
        Block b;
        b.ln1 = LayerNorm(cfg.dim, /*affine=*/false);
        b.ln2 = LayerNorm(cfg.dim, /*affine=*/false);
        b.attn = MultiheadAttention(cfg.dim, cfg.heads, rng, /*zero_out_proj=*/true);
        b.ffn = Ffn(cfg.dim, cfg.dim * cfg.ffn_mult, rng, /*zero_out_proj=*/true);
        b.mod = Linear::zero_init(cfg.dim, 4 * cfg.dim);
        blocks_.push_back(std::move(b));
    }
    final_ln_ = LayerNorm(cfg.dim, /*affine=*/false);
    head_ = Linear::zero_init(cfg.dim, token_width);
    time_mlp1_ = Linear(cfg.time_dim, cfg.dim, rng);
    time_mlp2_ = Linear(cfg.dim, cfg.dim, rng);
    label_emb_ = Parameter(Tensor::randn({cfg.vocab, cfg.dim}, rng, 0.02));
}

Tensor DiT::condition(GradTape* tape, double t, int label) {
    require(t >= 0.0 && t <= 1.0, "timestep must lie in [0,1]");
    require(label >= 0 && label < cfg_.vocab,
            "unknown label id " + std::to_string(label) + " (vocab " + std::to_string(cfg_.vocab) + ")");
    Tensor temb = sinusoidal_embedding(t, cfg_.time_dim);
    Tensor h = time_mlp2_.forward(tape, silu(time_mlp1_.forward(tape, temb)));
    Tensor lab = reshape(take_rows(label_emb_.use(tape), {label}), {cfg_.dim});
    return silu(add(h, lab));
}

Tensor DiT::forward(GradTape* tape, const Tensor& tokens, const TokenGrid& grid, double t,
                    int label, const experts::ExpertHooks* hooks) {
    require(grid.valid(), "dit_forward: missing grid metadata");
    Tensor cond = condition(tape, t, label);

    Tensor x = token_in_.forward(tape, tokens);
    x = add(x, positional_embedding_3d(grid.frames, grid.rows, grid.cols, cfg_.dim));

    const experts::ExpertKind active =
        hooks ? experts::route(t, hooks->router) : experts::ExpertKind::lfe;
    experts::FrequencyExpert* lfe =
        (hooks && active == experts::ExpertKind::lfe) ? hooks->lfe : nullptr;
    experts::FrequencyExpert* hfe =
        (hooks && active == experts::ExpertKind::hfe) ? hooks->hfe : nullptr;

    for (size_t bi = 0; bi < blocks_.size(); ++bi) {
        Block& b = blocks_[bi];
        Tensor mods = reshape(b.mod.forward(tape, cond), {4, cfg_.dim});
        auto mod_slice = [&](int i) { return reshape(slice_axis0(mods, i, i + 1), {cfg_.dim}); };
        Tensor shift1 = mod_slice(0), scale1 = mod_slice(1);
        Tensor shift2 = mod_slice(2), scale2 = mod_slice(3);

        Tensor u = rowwise_affine(b.ln1.forward(tape, x), scale1, shift1);
        Tensor a = lfe ? experts::lfe_attention(tape, b.attn, u, grid, lfe->blocks[bi], lfe->rho)
                       : b.attn.forward(tape, u);
        x = add(x, a);

        Tensor v = rowwise_affine(b.ln2.forward(tape, x), scale2, shift2);
        Tensor f = hfe ? experts::hfe_ffn(tape, b.ffn, v, grid, hfe->blocks[bi], hfe->rho)
                       : b.ffn.forward(tape, v);
        x = add(x, f);
    }
    return head_.forward(tape, final_ln_.forward(tape, x));
}

Tensor DiT::predict(GradTape* tape, const Tensor& latent, double t, int label,
                    const experts::ExpertHooks* hooks) {
    auto [tokens, grid] = tokenize(latent, cfg_.patch_h, cfg_.patch_w);
    Tensor out = forward(tape, tokens, grid, t, label, hooks);
    return detokenize(out, grid);
}

NamedParams DiT::params() {
    NamedParams out;
    add_params(out, "token_in", token_in_.params());
    for (size_t i = 0; i < blocks_.size(); ++i) {
        const std::string p = "blocks." + std::to_string(i);
        add_params(out, p + ".attn", blocks_[i].attn.params());
        add_params(out, p + ".ffn", blocks_[i].ffn.params());
        add_params(out, p + ".mod", blocks_[i].mod.params());
    }
    add_params(out, "head", head_.params());
    add_params(out, "time_mlp1", time_mlp1_.params());
    add_params(out, "time_mlp2", time_mlp2_.params());
    out.emplace_back("label_emb", &label_emb_);
    return out;
}

// ---------------------------------------------------------------------------
// Flow matching
// ---------------------------------------------------------------------------

Tensor flow_path_point(const Tensor& z0, const Tensor& eps, double t) {
    require(z0.same_shape(eps), "flow_path_point: noise shape mismatch");
    return add(mul_scalar(z0, 1.0 - t), mul_scalar(eps, t));
}

Tensor flow_target(const Tensor& z0, const Tensor& eps) {
    require(z0.same_shape(eps), "flow_target: noise shape mismatch");
    return sub(eps, z0);
}

Tensor fm_train_step(GradTape* tape, DiT& model, const Tensor& z0, const Tensor& eps, double t,
                     int label, const experts::ExpertHooks* hooks) {
    Tensor x_t = flow_path_point(z0, eps, t);
    Tensor target = flow_target(z0, eps);
    // token-space MSE equals latent-space MSE (tokenization is a permutation)
    auto [target_tokens, grid] = tokenize(target, model.config().patch_h, model.config().patch_w);
    auto [xt_tokens, grid2] = tokenize(x_t, model.config().patch_h, model.config().patch_w);
    Tensor pred = model.forward(tape, xt_tokens, grid2, t, label, hooks);
    return mse_loss(pred, target_tokens);
}

Tensor euler_integrate(const VelocityFn& velocity, const DiffusionSchedule& sched, Tensor x,
                       int start_index) {
    require(start_index >= 0 && start_index <= sched.steps, "euler_integrate: bad start index");
    for (int i = start_index; i < sched.steps; ++i) {
        const double t_i = sched.t(i);
        const double dt = t_i - sched.t(i + 1);
        x = sub(x, mul_scalar(velocity(x, t_i), dt));
    }
    return x;
}

Tensor sample(DiT& model, const DiffusionSchedule& sched, const LatentShape& shape, int label,
              uint64_t seed, const experts::ExpertHooks* hooks, int start_index, const Tensor* init,
              SampleTrace* trace) {
    Tensor x;
    if (init) {
        x = init->clone();
    } else {
        require(start_index == 0, "sample: resuming requires an initial latent");
        Rng rng(seed);
        x = Tensor::randn({shape.frames, shape.h, shape.w, shape.c}, rng);
    }
    auto velocity = [&](const Tensor& xt, double t) {
        if (trace) {
            trace->timesteps.push_back(t);
            if (hooks) trace->active.push_back(experts::route(t, hooks->router));
        }
        return model.predict(nullptr, xt, t, label, hooks);
    };
    return euler_integrate(velocity, sched, std::move(x), start_index);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

TrainStats train_backbone(DiT& model, const std::vector<LatentSample>& dataset,
                          const TrainConfig& cfg) {
    require(!dataset.empty(), "train_backbone: empty dataset");
    Rng rng(cfg.seed);

    // Hold out up to val_count samples with fixed (t, eps) draws.
    const int val_n = std::min<int>(cfg.val_count, static_cast<int>(dataset.size()) - 1);
    const size_t train_n = dataset.size() - static_cast<size_t>(val_n);
    struct ValDraw {
        size_t sample;
        double t;
        Tensor eps;
    };
    std::vector<ValDraw> val;
    Rng vrng = rng.fork(0x76616c);
    for (int i = 0; i < val_n; ++i) {
        for (int d = 0; d < cfg.val_draws; ++d) {
            ValDraw vd;
            vd.sample = train_n + static_cast<size_t>(i);
            vd.t = vrng.uniform();
            vd.eps = Tensor::randn(dataset[vd.sample].z.shape(), vrng);
            val.push_back(std::move(vd));
        }
    }
    auto val_loss = [&]() {
        if (val.empty()) return 0.0;
        double sum = 0.0;
        for (const auto& vd : val) {
            Tensor loss = fm_train_step(nullptr, model, dataset[vd.sample].z, vd.eps, vd.t,
                                        dataset[vd.sample].label);
            sum += loss.item();
        }
        return sum / static_cast<double>(val.size());
    };

    TrainStats stats;
    stats.val_before = val_loss();

    std::vector<Parameter*> params;
    for (auto& [name, p] : model.params()) params.push_back(p);
    Adam opt(params, AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        GradTape tape;
        Tensor total;
        for (int b = 0; b < cfg.batch; ++b) {
            const auto& s = dataset[train_n ? rng.uniform_int(static_cast<int>(train_n)) : 0];
            const double t = rng.uniform();
            Tensor eps = Tensor::randn(s.z.shape(), rng);
            Tensor loss = fm_train_step(&tape, model, s.z, eps, t, s.label);
            total = b == 0 ? loss : add(total, loss);
        }
        total = mul_scalar(total, 1.0 / cfg.batch);
        const double loss_val = total.item();
        if (!std::isfinite(loss_val))
            throw TrainingDiverged("backbone training diverged at iter " + std::to_string(iter) +
                                   " (loss " + std::to_string(loss_val) + ")");
        stats.losses.push_back(loss_val);
        tape.backward(total);
        opt.step(tape);
    }

    stats.val_after = val_loss();
    return stats;
}

}  // namespace luve::backbone
