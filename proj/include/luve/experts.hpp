#pragma once

#include <vector>

#include "luve/common.hpp"
#include "luve/nn.hpp"
#include "luve/tensor.hpp"

namespace luve::backbone {
class DiT;
struct TrainStats;
}

namespace luve::experts {

enum class Site { attention, ffn };
enum class ExpertKind { lfe, hfe };

// Ideal band filters over the spatial token grid: per frame and channel, a 2-D
// DFT whose coefficients with max(|fx|/fx_max, |fy|/fy_max) <= rho are kept by
// the low-pass. The mask is symmetric in frequency, so the operator is a real
// self-adjoint projector; its backward pass applies the same filter.
// x: [tokens, width] with grid metadata; rho in (0, 1].
Tensor low_pass(const Tensor& x, const TokenGrid& grid, double rho);
// Defined as x - low_pass(x, rho), so low + high == x holds bit-exactly.
Tensor high_pass(const Tensor& x, const TokenGrid& grid, double rho);

// Low-rank residual adapter around a frozen site. `up` starts at zero, so an
// attached adapter is exactly inert until trained.
struct LoRAAdapter {
    Parameter down;  // [rank, dim]
    Parameter up;    // [dim, rank], zero-initialized
    int rank = 4;
    double alpha = 8.0;
    Site site = Site::attention;

    LoRAAdapter() = default;
    LoRAAdapter(int dim, int r, double alpha_scale, Site target, Rng& rng);

    // alpha * B * A * x, applied row-wise: x [N,d] -> [N,d].
    Tensor apply(GradTape* tape, const Tensor& x);
    NamedParams params();
};

// y = Attention(x) + LoRA(LowPass(x)); host attention stays frozen, gradients
// reach only the adapter.
Tensor lfe_attention(GradTape* tape, MultiheadAttention& frozen_attn, const Tensor& x,
                     const TokenGrid& grid, LoRAAdapter& adapter, double rho);
// y = FFN(x) + LoRA(HighPass(x)); mirror of the above on the FFN site.
Tensor hfe_ffn(GradTape* tape, Ffn& frozen_ffn, const Tensor& x, const TokenGrid& grid,
               LoRAAdapter& adapter, double rho);

struct ExpertRouterConfig {
    double t_switch = 0.417;  // boundary t == t_switch routes to the LFE
};

// Exactly one expert is active at any timestep: t >= t_switch selects the
// LFE (high-noise stage), t < t_switch the HFE.
ExpertKind route(double t, const ExpertRouterConfig& cfg);

// Uniform draw from an expert's own training interval: [t_switch, 1] for the
// LFE, [0, t_switch) for the HFE.
double draw_expert_timestep(ExpertKind kind, double t_switch, Rng& rng);

// One adapter per backbone block, all bound to the same site.
struct FrequencyExpert {
    ExpertKind kind = ExpertKind::lfe;
    double rho = 0.25;
    std::vector<LoRAAdapter> blocks;

    static FrequencyExpert make(ExpertKind kind, int depth, int dim, int rank, double alpha,
                                double rho, uint64_t seed);
    NamedParams params();
    void save(const std::string& path) const;
    void load(const std::string& path);
};

// Routing state threaded through the backbone forward pass.
struct ExpertHooks {
    FrequencyExpert* lfe = nullptr;
    FrequencyExpert* hfe = nullptr;
    ExpertRouterConfig router;
};

struct ExpertTrainConfig {
    int iterations = 300;
    double lr = 1e-4;
    int batch = 2;
    double t_switch = 0.417;
    double rho = 0.25;
    int rank = 4;
    double alpha = 8.0;
    uint64_t seed = 0;
    int val_count = 2;     // held-out samples for the interval-restricted loss
    int val_draws = 4;     // fixed (t, eps) draws per held-out sample
};

// Flow-matching training restricted to the expert's timestep interval; only
// adapter parameters update, the backbone is frozen for the duration.
FrequencyExpert train_expert(ExpertKind kind, backbone::DiT& host,
                             const std::vector<LatentSample>& dataset,
                             const ExpertTrainConfig& cfg, backbone::TrainStats* stats = nullptr);

}  // namespace luve::experts
