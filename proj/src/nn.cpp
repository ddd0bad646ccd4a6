#include "luve/nn.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "luve/errors.hpp"

namespace luve {

void save_params(const std::string& path, const NamedParams& params, DType dtype) {
    NamedTensors tensors;
    tensors.reserve(params.size());
    for (const auto& [name, p] : params) tensors.emplace_back(name, p->value);
    save_checkpoint(path, tensors, dtype);
}

void load_params(const std::string& path, const NamedParams& params) {
    NamedTensors stored = load_checkpoint(path);
    std::map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : stored) by_name[name] = &t;
    if (stored.size() != params.size())
        throw IoError("checkpoint " + path + " holds " + std::to_string(stored.size()) +
                      " tensors, model expects " + std::to_string(params.size()));
    for (const auto& [name, p] : params) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw IoError("checkpoint " + path + " is missing tensor " + name);
        if (it->second->shape() != p->value.shape())
            throw IoError("checkpoint tensor " + name + " has shape " + shape_str(it->second->shape()) +
                          ", model expects " + shape_str(p->value.shape()));
        p->value = it->second->clone();
    }
}

void set_frozen(const NamedParams& params, bool frozen) {
    for (const auto& [name, p] : params) {
        (void)name;
        p->frozen = frozen;
    }
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

Linear::Linear(int in, int out, Rng& rng, bool with_bias, double init_scale) {
    const double scale = init_scale > 0.0 ? init_scale : 1.0 / std::sqrt(static_cast<double>(in));
    weight = Parameter(Tensor::randn({out, in}, rng, scale));
    has_bias = with_bias;
    if (with_bias) bias = Parameter(Tensor::zeros({out}));
}

Linear Linear::zero_init(int in, int out, bool with_bias) {
    Linear l;
    l.weight = Parameter(Tensor::zeros({out, in}));
    l.has_bias = with_bias;
    if (with_bias) l.bias = Parameter(Tensor::zeros({out}));
    return l;
}

Tensor Linear::forward(GradTape* tape, const Tensor& x) {
    Tensor wt = transpose_last2(weight.use(tape));  // [in, out]
    Tensor y;
    if (x.rank() == 1) {
        y = reshape(matmul(reshape(x, {1, x.extent(0)}), wt), {out_features()});
    } else {
        y = matmul(x, wt);
    }
    if (has_bias) y = add_rowvec(y, bias.use(tape));
    return y;
}

NamedParams Linear::params() {
    NamedParams out{{"weight", &weight}};
    if (has_bias) out.emplace_back("bias", &bias);
    return out;
}

// ---------------------------------------------------------------------------
// LayerNorm
// ---------------------------------------------------------------------------

LayerNorm::LayerNorm(int dim, bool affine) : elementwise_affine(affine) {
    gamma = Parameter(Tensor::full({dim}, 1.0));
    beta = Parameter(Tensor::zeros({dim}));
    if (!affine) {
        gamma.frozen = true;
        beta.frozen = true;
    }
}

Tensor LayerNorm::forward(GradTape* tape, const Tensor& x) {
    return layer_norm(x, gamma.use(tape), beta.use(tape), eps);
}

NamedParams LayerNorm::params() {
    if (!elementwise_affine) return {};
    return {{"gamma", &gamma}, {"beta", &beta}};
}

// ---------------------------------------------------------------------------
// MultiheadAttention
// ---------------------------------------------------------------------------

MultiheadAttention::MultiheadAttention(int dim, int num_heads, Rng& rng, bool zero_out_proj)
    : heads(num_heads) {
    require(dim % num_heads == 0, "attention width must divide into heads");
    wq = Linear(dim, dim, rng);
    wk = Linear(dim, dim, rng);
    wv = Linear(dim, dim, rng);
    wo = zero_out_proj ? Linear::zero_init(dim, dim) : Linear(dim, dim, rng);
}

Tensor MultiheadAttention::forward(GradTape* tape, const Tensor& x) {
    require(x.rank() == 2 || x.rank() == 3, "attention input must be [N,d] or [B,N,d]");
    const bool batched = x.rank() == 3;
    const int B = batched ? x.extent(0) : 1;
    const int N = x.extent(batched ? 1 : 0);
    const int d = x.extent(batched ? 2 : 1);
    const int dh = d / heads;

    Tensor x3 = batched ? x : reshape(x, {1, N, d});
    auto split = [&](Tensor y) {
        // [B,N,d] -> [B*heads, N, dh]
        return reshape(permute_0213(reshape(y, {B, N, heads, dh})), {B * heads, N, dh});
    };
    Tensor q = split(wq.forward(tape, x3));
    Tensor k = split(wk.forward(tape, x3));
    Tensor v = split(wv.forward(tape, x3));

    Tensor scores = mul_scalar(matmul(q, transpose_last2(k)), 1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor attn = softmax_last(scores);
    Tensor ctx = matmul(attn, v);  // [B*heads, N, dh]
    Tensor merged = reshape(permute_0213(reshape(ctx, {B, heads, N, dh})), {B, N, d});
    Tensor out = wo.forward(tape, merged);
    return batched ? out : reshape(out, {N, d});
}

NamedParams MultiheadAttention::params() {
    NamedParams out;
    add_params(out, "wq", wq.params());
    add_params(out, "wk", wk.params());
    add_params(out, "wv", wv.params());
    add_params(out, "wo", wo.params());
    return out;
}

Ffn::Ffn(int dim, int hidden, Rng& rng, bool zero_out_proj) {
    fc1 = Linear(dim, hidden, rng);
    fc2 = zero_out_proj ? Linear::zero_init(hidden, dim) : Linear(hidden, dim, rng);
}

Tensor Ffn::forward(GradTape* tape, const Tensor& x) {
    return fc2.forward(tape, gelu(fc1.forward(tape, x)));
}

NamedParams Ffn::params() {
    NamedParams out;
    add_params(out, "fc1", fc1.params());
    add_params(out, "fc2", fc2.params());
    return out;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

Adam::Adam(std::vector<Parameter*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(static_cast<size_t>(params_[i]->value.size()), 0.0);
        v_[i].assign(static_cast<size_t>(params_[i]->value.size()), 0.0);
    }
}

void Adam::step(const GradTape& tape) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Parameter* p = params_[i];
        if (!tape.has_grad(p->live)) continue;  // parameter unused this step
        const auto& g = tape.grad(p->live);
        // updates write through a fresh buffer so shared snapshots stay intact
        p->value = p->value.clone();
        double* w = p->value.data();
        for (size_t j = 0; j < g.size(); ++j) {
            m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g[j];
            v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g[j] * g[j];
            const double mhat = m_[i][j] / bc1;
            const double vhat = v_[i][j] / bc2;
            w[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

double cosine_restart_lr(double base_lr, double min_lr, int64_t period, int64_t iter) {
    require(period > 0, "cosine_restart_lr: period must be positive");
    const int64_t t_cur = iter % period;
    const double cosv = std::cos(3.14159265358979323846 * static_cast<double>(t_cur) /
                                 static_cast<double>(period));
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + cosv);
}

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

Tensor sinusoidal_embedding(double t, int dim) {
    require(dim % 2 == 0, "sinusoidal_embedding: dim must be even");
    Tensor out({dim});
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        // frequencies from 1 to ~1000 keep t in [0,1] injective for N <= 1000
        const double freq = std::pow(1000.0, static_cast<double>(i) / std::max(1, half - 1));
        out.data()[i] = std::sin(t * freq);
        out.data()[half + i] = std::cos(t * freq);
    }
    return out;
}

Tensor positional_embedding_3d(int frames, int rows, int cols, int dim) {
    // per-axis budget: frame gets dim/4, row/col split the rest
    int d_f = (dim / 4) & ~1;
    int d_r = ((dim - d_f) / 2) & ~1;
    int d_c = dim - d_f - d_r;
    require(d_c % 2 == 0, "positional_embedding_3d: dim must be divisible by 4");
    Tensor out({frames * rows * cols, dim});
    auto fill_axis = [](double* dst, double coord, int d) {
        const int half = d / 2;
        for (int i = 0; i < half; ++i) {
            const double freq = std::pow(100.0, static_cast<double>(i) / std::max(1, half - 1));
            dst[i] = std::sin(coord * freq);
            dst[half + i] = std::cos(coord * freq);
        }
    };
    int64_t tok = 0;
    for (int f = 0; f < frames; ++f) {
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c, ++tok) {
                double* dst = out.data() + tok * dim;
                fill_axis(dst, frames > 1 ? static_cast<double>(f) / (frames - 1) : 0.0, d_f);
                fill_axis(dst + d_f, rows > 1 ? static_cast<double>(r) / (rows - 1) : 0.0, d_r);
                fill_axis(dst + d_f + d_r, cols > 1 ? static_cast<double>(c) / (cols - 1) : 0.0, d_c);
            }
        }
    }
    return out;
}

}  // namespace luve
