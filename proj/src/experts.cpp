#include "luve/experts.hpp"

#include <algorithm>
#include <cmath>

#include "luve/backbone.hpp"

namespace luve::experts {

namespace {

// Signed frequency of DFT bin k in an n-point transform.
int signed_freq(int k, int n) { return k <= n / 2 ? k : k - n; }

// Nudges the filtered value v so that v + (x - v) also evaluates to x exactly
// in IEEE arithmetic where such a split exists (it always does when either
// band component is no larger than the input). Perturbations stay below
// 2^-30 relative; when no faithful exact split exists, v is kept unchanged
// and the complementarity identity holds through the construction
// high = x - low instead.
double exact_low_value(double x, double v) {
    if (v == 0.0) return 0.0;
    if (v + (x - v) == x) return v;
    int e;
    std::frexp(v, &e);
    for (int bits = 52; bits >= 30; --bits) {
        const double q = std::ldexp(1.0, e - bits);
        const double a = std::nearbyint(v / q) * q;
        if (a + (x - a) == x) return a;
    }
    return v;
}

// Keep-mask for the low band; DC is always kept, including on length-1 axes.
bool keep_low(int ky, int kx, int h, int w, double rho) {
    const int fy = std::abs(signed_freq(ky, h));
    const int fx = std::abs(signed_freq(kx, w));
    const int fy_max = h / 2, fx_max = w / 2;
    const double ry = fy_max > 0 ? static_cast<double>(fy) / fy_max : 0.0;
    const double rx = fx_max > 0 ? static_cast<double>(fx) / fx_max : 0.0;
    return std::max(ry, rx) <= rho;
}

// Applies the ideal low-pass mask to one [tokens, width] feature matrix laid
// out on `grid`. Pure data transform; gradient handled by the caller.
std::vector<double> low_pass_values(const double* x, const TokenGrid& grid, int width, double rho) {
    const int t = grid.frames, h = grid.rows, w = grid.cols;
    std::vector<double> out(static_cast<size_t>(grid.tokens()) * width);
    std::vector<std::complex<double>> spec(static_cast<size_t>(h) * w);
    std::vector<std::complex<double>> inv(static_cast<size_t>(h) * w);

    for (int f = 0; f < t; ++f) {
        const double* plane = x + static_cast<int64_t>(f) * h * w * width;
        double* oplane = out.data() + static_cast<int64_t>(f) * h * w * width;
        for (int ch = 0; ch < width; ++ch) {
            dft2d_plane(plane + ch, h, w, width, spec.data());
            for (int ky = 0; ky < h; ++ky)
                for (int kx = 0; kx < w; ++kx)
                    if (!keep_low(ky, kx, h, w, rho)) spec[static_cast<size_t>(ky) * w + kx] = 0.0;
            // mask symmetry keeps the inverse real
            idft2d_plane(spec.data(), h, w, inv.data());
            for (int i = 0; i < h * w; ++i) {
                require(std::abs(inv[static_cast<size_t>(i)].imag()) < 1e-6,
                        "low_pass: imaginary residue too large");
                const int64_t at = static_cast<int64_t>(i) * width + ch;
                oplane[at] = exact_low_value(plane[at], inv[static_cast<size_t>(i)].real());
            }
        }
    }
    return out;
}

}  // namespace

Tensor low_pass(const Tensor& x, const TokenGrid& grid, double rho) {
    require(grid.valid(), "low_pass: missing grid metadata");
    require(rho > 0.0 && rho <= 1.0, "low_pass: rho must lie in (0,1]");
    require(x.rank() == 2 && x.extent(0) == grid.tokens(),
            "low_pass: token count does not match grid");
    const int width = x.extent(1);

    Tensor out(x.shape(), low_pass_values(x.data(), grid, width, rho));

    // The mask is even in frequency, so the filter is self-adjoint: the
    // backward pass is the same filter applied to the incoming gradient.
    GradTape* tape = GradTape::active();
    if (tape && x.node >= 0 && x.tape_serial == tape->serial()) {
        const int nx = x.node;
        const TokenGrid g = grid;
        int id = tape->record({nx}, out.size(), [nx, g, width, rho](const double* grad, GradTape& t) {
            std::vector<double> filtered = low_pass_values(grad, g, width, rho);
            double* dx = t.grad_buffer(nx);
            for (size_t i = 0; i < filtered.size(); ++i) dx[i] += filtered[i];
        });
        out.node = id;
        out.tape_serial = tape->serial();
    }
    return out;
}

Tensor high_pass(const Tensor& x, const TokenGrid& grid, double rho) {
    return sub(x, low_pass(x, grid, rho));
}

// ---------------------------------------------------------------------------
// LoRA
// ---------------------------------------------------------------------------

LoRAAdapter::LoRAAdapter(int dim, int r, double alpha_scale, Site target, Rng& rng)
    : rank(r), alpha(alpha_scale), site(target) {
    down = Parameter(Tensor::randn({r, dim}, rng, 1.0 / std::sqrt(static_cast<double>(dim))));
    up = Parameter(Tensor::zeros({dim, r}));
}

Tensor LoRAAdapter::apply(GradTape* tape, const Tensor& x) {
    Tensor h = matmul(x, transpose_last2(down.use(tape)));  // [N, r]
    Tensor y = matmul(h, transpose_last2(up.use(tape)));    // [N, d]
    return mul_scalar(y, alpha);
}

NamedParams LoRAAdapter::params() {
    return {{"down", &down}, {"up", &up}};
}

Tensor lfe_attention(GradTape* tape, MultiheadAttention& frozen_attn, const Tensor& x,
                     const TokenGrid& grid, LoRAAdapter& adapter, double rho) {
    require(adapter.site == Site::attention, "adapter is not bound to the attention site");
    return add(frozen_attn.forward(tape, x), adapter.apply(tape, low_pass(x, grid, rho)));
}

Tensor hfe_ffn(GradTape* tape, Ffn& frozen_ffn, const Tensor& x, const TokenGrid& grid,
               LoRAAdapter& adapter, double rho) {
    require(adapter.site == Site::ffn, "adapter is not bound to the ffn site");
    return add(frozen_ffn.forward(tape, x), adapter.apply(tape, high_pass(x, grid, rho)));
}

// ---------------------------------------------------------------------------
// Routing
// ---------------------------------------------------------------------------

ExpertKind route(double t, const ExpertRouterConfig& cfg) {
    require(t >= 0.0 && t <= 1.0, "route: timestep outside [0,1]");
    require(cfg.t_switch > 0.0 && cfg.t_switch < 1.0, "route: t_switch must lie in (0,1)");
    return t >= cfg.t_switch ? ExpertKind::lfe : ExpertKind::hfe;
}

double draw_expert_timestep(ExpertKind kind, double t_switch, Rng& rng) {
    return kind == ExpertKind::lfe ? rng.uniform(t_switch, 1.0) : rng.uniform(0.0, t_switch);
}

// ---------------------------------------------------------------------------
// Expert containers and training
// ---------------------------------------------------------------------------

FrequencyExpert FrequencyExpert::make(ExpertKind kind, int depth, int dim, int rank, double alpha,
                                      double rho, uint64_t seed) {
    FrequencyExpert e;
    e.kind = kind;
    e.rho = rho;
    Rng rng(seed);
    const Site site = kind == ExpertKind::lfe ? Site::attention : Site::ffn;
    for (int i = 0; i < depth; ++i) e.blocks.emplace_back(dim, rank, alpha, site, rng);
    return e;
}

NamedParams FrequencyExpert::params() {
    NamedParams out;
    const std::string base = kind == ExpertKind::lfe ? "experts.lfe" : "experts.hfe";
    for (size_t i = 0; i < blocks.size(); ++i)
        add_params(out, base + ".blocks." + std::to_string(i), blocks[i].params());
    return out;
}

void FrequencyExpert::save(const std::string& path) const {
    save_params(path, const_cast<FrequencyExpert*>(this)->params());
}

void FrequencyExpert::load(const std::string& path) { load_params(path, params()); }

FrequencyExpert train_expert(ExpertKind kind, backbone::DiT& host,
                             const std::vector<LatentSample>& dataset,
                             const ExpertTrainConfig& cfg, backbone::TrainStats* stats) {
    require(!dataset.empty(), "train_expert: empty dataset");
    if (cfg.t_switch <= 0.0 || cfg.t_switch >= 1.0)
        throw ConfigError("train_expert: expert interval is empty at t_switch = " +
                          std::to_string(cfg.t_switch));

    const auto& dcfg = host.config();
    FrequencyExpert expert = FrequencyExpert::make(kind, dcfg.depth, dcfg.dim, cfg.rank, cfg.alpha,
                                                   cfg.rho, cfg.seed);
    ExpertHooks hooks;
    hooks.router.t_switch = cfg.t_switch;
    if (kind == ExpertKind::lfe)
        hooks.lfe = &expert;
    else
        hooks.hfe = &expert;

    Rng rng(cfg.seed);
    auto draw_t = [&](Rng& r) { return draw_expert_timestep(kind, cfg.t_switch, r); };

    const int val_n = std::min<int>(cfg.val_count, static_cast<int>(dataset.size()) - 1);
    const size_t train_n = dataset.size() - static_cast<size_t>(val_n);
    struct ValDraw {
        size_t sample;
        double t;
        Tensor eps;
    };
    std::vector<ValDraw> val;
    Rng vrng = rng.fork(0x657870);
    for (int i = 0; i < val_n; ++i)
        for (int d = 0; d < cfg.val_draws; ++d) {
            const size_t s = train_n + static_cast<size_t>(i);
            val.push_back({s, draw_t(vrng), Tensor::randn(dataset[s].z.shape(), vrng)});
        }
    auto val_loss = [&]() {
        double sum = 0.0;
        for (const auto& vd : val) {
            Tensor loss = backbone::fm_train_step(nullptr, host, dataset[vd.sample].z, vd.eps, vd.t,
                                                  dataset[vd.sample].label, &hooks);
            sum += loss.item();
        }
        return val.empty() ? 0.0 : sum / static_cast<double>(val.size());
    };

    host.set_frozen(true);
    backbone::TrainStats local;
    local.val_before = val_loss();

    std::vector<Parameter*> params;
    for (auto& [name, p] : expert.params()) params.push_back(p);
    Adam opt(params, AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        GradTape tape;
        Tensor total;
        for (int b = 0; b < cfg.batch; ++b) {
            const auto& s = dataset[train_n ? rng.uniform_int(static_cast<int>(train_n)) : 0];
            const double t = draw_t(rng);
            Tensor eps = Tensor::randn(s.z.shape(), rng);
            Tensor loss = backbone::fm_train_step(&tape, host, s.z, eps, t, s.label, &hooks);
            total = b == 0 ? loss : add(total, loss);
        }
        total = mul_scalar(total, 1.0 / cfg.batch);
        const double loss_val = total.item();
        if (!std::isfinite(loss_val)) {
            host.set_frozen(false);
            throw TrainingDiverged("expert training diverged at iter " + std::to_string(iter));
        }
        local.losses.push_back(loss_val);
        tape.backward(total);
        opt.step(tape);
    }

    local.val_after = val_loss();
    host.set_frozen(false);
    if (stats) *stats = local;
    return expert;
}

}  // namespace luve::experts
