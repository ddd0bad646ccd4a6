#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "luve/serialize.hpp"
#include "luve/tensor.hpp"

namespace luve {

// Trainable weight. `frozen` parameters are never watched by a tape, so no
// gradient ever flows into them — this is how host networks stay fixed while
// adapters train.
struct Parameter {
    Tensor value;
    Tensor live;  // tracked handle from the most recent watch
    bool frozen = false;

    Parameter() = default;
    explicit Parameter(Tensor v) : value(std::move(v)) {}

    Tensor use(GradTape* tape) {
        if (!tape || frozen) return value;
        live = tape->watch(value);
        // remember the tape node on the stored tensor so repeated uses within
        // one step share a single leaf (gradients accumulate in one place)
        value.node = live.node;
        value.tape_serial = live.tape_serial;
        return live;
    }
};

using NamedParams = std::vector<std::pair<std::string, Parameter*>>;

inline void add_params(NamedParams& out, const std::string& prefix, const NamedParams& sub) {
    for (const auto& [name, p] : sub) out.emplace_back(prefix + "." + name, p);
}

void save_params(const std::string& path, const NamedParams& params, DType dtype = DType::f32);
// Strict by name and shape: missing or extra entries raise IoError.
void load_params(const std::string& path, const NamedParams& params);
void set_frozen(const NamedParams& params, bool frozen);

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

struct Linear {
    Parameter weight;  // [out, in]
    Parameter bias;    // [out]
    bool has_bias = true;

    Linear() = default;
    Linear(int in, int out, Rng& rng, bool with_bias = true, double init_scale = -1.0);
    static Linear zero_init(int in, int out, bool with_bias = true);

    // x: [..., in] -> [..., out]
    Tensor forward(GradTape* tape, const Tensor& x);
    NamedParams params();
    int in_features() const { return weight.value.extent(1); }
    int out_features() const { return weight.value.extent(0); }
};

struct LayerNorm {
    Parameter gamma, beta;
    double eps = 1e-5;
    bool elementwise_affine = true;  // false: fixed gamma=1, beta=0 (adaLN hosts)

    LayerNorm() = default;
    explicit LayerNorm(int dim, bool affine = true);
    Tensor forward(GradTape* tape, const Tensor& x);
    NamedParams params();
};

// Full multi-head self-attention over token sets. Accepts [N, d] or batched
// [B, N, d]; every token attends to every token within its batch element.
struct MultiheadAttention {
    Linear wq, wk, wv, wo;
    int heads = 1;

    MultiheadAttention() = default;
    MultiheadAttention(int dim, int num_heads, Rng& rng, bool zero_out_proj = false);
    Tensor forward(GradTape* tape, const Tensor& x);
    NamedParams params();
};

// Two-layer GELU feed-forward block.
struct Ffn {
    Linear fc1, fc2;

    Ffn() = default;
    Ffn(int dim, int hidden, Rng& rng, bool zero_out_proj = false);
    Tensor forward(GradTape* tape, const Tensor& x);
    NamedParams params();
};

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
  public:
    Adam(std::vector<Parameter*> params, AdamConfig cfg);
    // Applies one update from the gradients accumulated on `tape`.
    void step(const GradTape& tape);
    void set_lr(double lr) { cfg_.lr = lr; }
    double lr() const { return cfg_.lr; }

  private:
    std::vector<Parameter*> params_;
    std::vector<std::vector<double>> m_, v_;
    AdamConfig cfg_;
    int64_t t_ = 0;
};

// Cosine annealing with warm restarts; `iter` counts from 0 within a run.
double cosine_restart_lr(double base_lr, double min_lr, int64_t period, int64_t iter);

// Analytic sinusoidal embedding of a scalar in [0, 1]; dim must be even.
Tensor sinusoidal_embedding(double t, int dim);
// Constant 3-D positional table for a (frames, rows, cols) grid, normalized
// per-axis coordinates; shape [frames*rows*cols, dim].
Tensor positional_embedding_3d(int frames, int rows, int cols, int dim);

}  // namespace luve
