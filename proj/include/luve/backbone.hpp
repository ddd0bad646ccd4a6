#pragma once

#include <string>
#include <utility>
#include <vector>

#include "luve/common.hpp"
#include "luve/experts.hpp"
#include "luve/nn.hpp"

namespace luve::backbone {

struct DiTConfig {
    int patch_h = 2, patch_w = 2;  // latent-space token patch
    int dim = 64;
    int depth = 4;
    int heads = 4;
    int ffn_mult = 4;
    int vocab = 4;  // class-label conditioning slots
    int time_dim = 64;
    uint64_t seed = 0;
};

// Flow-matching timesteps t_i = 1 - i/N for i = 0..N; strictly decreasing
// from pure noise (t=1) to clean (t=0).
struct DiffusionSchedule {
    int steps = 50;

    explicit DiffusionSchedule(int n) : steps(n) { require(n >= 1, "schedule needs >= 1 step"); }
    double t(int i) const { return 1.0 - static_cast<double>(i) / steps; }
};

// Latent [t,h,w,C] -> tokens [t*(h/ph)*(w/pw), ph*pw*C], frame-major then
// row-major; detokenize is the exact inverse.
std::pair<Tensor, TokenGrid> tokenize(const Tensor& latent, int patch_h, int patch_w);
Tensor detokenize(const Tensor& tokens, const TokenGrid& grid);

// Toy diffusion transformer. Blocks are split into an attention module and an
// FFN module exactly so the frequency experts can attach to either site:
// x + Attn(mod(LN(x))) then x + FFN(mod(LN(x))), with the modulation
// shift/scale coming from the timestep + label embedding. Output projections
// start at zero, so a freshly initialized network predicts the bias path.
class DiT {
  public:
    explicit DiT(const DiTConfig& cfg);

    // tokens [N, ph*pw*C] -> predicted velocity tokens of the same shape.
    Tensor forward(GradTape* tape, const Tensor& tokens, const TokenGrid& grid, double t,
                   int label, const experts::ExpertHooks* hooks = nullptr);
    // Convenience wrapper operating directly on latents.
    Tensor predict(GradTape* tape, const Tensor& latent, double t, int label,
                   const experts::ExpertHooks* hooks = nullptr);

    NamedParams params();
    const DiTConfig& config() const { return cfg_; }
    void set_frozen(bool frozen) { luve::set_frozen(params(), frozen); }

    void save(const std::string& path) { save_params(path, params()); }
    void load(const std::string& path) { load_params(path, params()); }

  private:
    struct Block {
        LayerNorm ln1, ln2;  // affine-free; modulation supplies shift/scale
        MultiheadAttention attn;
        Ffn ffn;
        Linear mod;  // cond -> [4*dim]: shift/scale per site
    };
    Tensor condition(GradTape* tape, double t, int label);

    DiTConfig cfg_;
    Linear token_in_;
    std::vector<Block> blocks_;
    LayerNorm final_ln_;
    Linear head_;  // zero-initialized
    Linear time_mlp1_, time_mlp2_;
    Parameter label_emb_;  // [vocab, dim]
};

// Linear noising path and its constant velocity target.
Tensor flow_path_point(const Tensor& z0, const Tensor& eps, double t);
Tensor flow_target(const Tensor& z0, const Tensor& eps);

// Flow-matching step: x_t = (1-t) z0 + t eps, target v = eps - z0, MSE between
// the prediction and the target. Token and latent MSE agree because
// tokenization is a permutation.
Tensor fm_train_step(GradTape* tape, DiT& model, const Tensor& z0, const Tensor& eps, double t,
                     int label, const experts::ExpertHooks* hooks = nullptr);

// Per-step record of the sampler; used to assert expert routing accounting.
struct SampleTrace {
    std::vector<double> timesteps;
    std::vector<experts::ExpertKind> active;  // filled only when hooks are present
};

using VelocityFn = std::function<Tensor(const Tensor& x, double t)>;

// Euler integration x_{t-dt} = x_t - dt * v(x_t, t) over schedule indices
// [start_index, N).
Tensor euler_integrate(const VelocityFn& velocity, const DiffusionSchedule& sched, Tensor x,
                       int start_index = 0);

// Draws seeded noise (or resumes from `init` at `start_index`) and integrates
// the model's predicted velocity field, routing experts per step.
Tensor sample(DiT& model, const DiffusionSchedule& sched, const LatentShape& shape, int label,
              uint64_t seed, const experts::ExpertHooks* hooks = nullptr, int start_index = 0,
              const Tensor* init = nullptr, SampleTrace* trace = nullptr);

struct TrainConfig {
    int iterations = 500;
    double lr = 1e-3;
    int batch = 2;
    uint64_t seed = 0;
    int val_count = 2;  // held-out samples
    int val_draws = 4;  // fixed (t, eps) pairs per held-out sample
};

struct TrainStats {
    std::vector<double> losses;
    double val_before = 0.0;
    double val_after = 0.0;
};

// Flow-matching training of the backbone on clean latents ("lmg" on the LR
// set; the optional UHR scaling pass reuses this on HR latents).
TrainStats train_backbone(DiT& model, const std::vector<LatentSample>& dataset,
                          const TrainConfig& cfg);

}  // namespace luve::backbone
