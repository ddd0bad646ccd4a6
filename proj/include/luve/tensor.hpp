#pragma once

#include <complex>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "luve/errors.hpp"
#include "luve/rng.hpp"

namespace luve {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class GradTape;

// Dense row-major array of doubles. Value type: copies share the underlying
// buffer, and all operations produce fresh buffers, so a Tensor is immutable
// once it has been handed to an operation. `node` links the tensor to the
// active GradTape when it participates in a differentiable computation.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value) { return Tensor({}, {value}); }
    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);
    static Tensor rand(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0);

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int extent(int axis) const { return shape_[static_cast<size_t>(axis)]; }
    int64_t size() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }
    bool defined() const { return static_cast<bool>(data_); }

    double* data() { return data_->data(); }
    const double* data() const { return data_->data(); }
    const std::vector<double>& vec() const { return *data_; }
    std::shared_ptr<std::vector<double>> storage() const { return data_; }

    double item() const;
    double at(std::initializer_list<int> idx) const;

    Tensor clone() const;
    Tensor reshaped(Shape shape) const;  // non-differentiable view copy (same data)

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

    // Gradient-tracking state. `node` is an id on the tape identified by
    // `tape_serial`, -1 when the tensor is a constant. requires_grad marks
    // tape leaves. A node from a dead tape is ignored by later operations.
    int node = -1;
    uint64_t tape_serial = 0;
    bool requires_grad = false;

  private:
    Shape shape_;
    std::shared_ptr<std::vector<double>> data_;
};

// Reverse-mode tape. Operations executed while a tape is active (and touching
// at least one tracked tensor) append one entry each; entries are replayed in
// reverse creation order by backward(), which is a valid topological order
// because an operation is always recorded after its inputs. Confined to one
// thread per training step.
class GradTape {
  public:
    GradTape();
    ~GradTape();
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    static GradTape* active();

    // Marks a tensor as a differentiable leaf and returns the tracked handle.
    Tensor watch(const Tensor& t);

    // Runs the chain rule backward from a scalar loss. Gradients for every
    // node reachable from the loss are accumulated and can be read afterwards.
    void backward(const Tensor& loss);

    // Gradient of the last backward() w.r.t. a tracked tensor; shape matches.
    const std::vector<double>& grad(const Tensor& t) const;
    bool has_grad(const Tensor& t) const;

    size_t num_entries() const { return entries_.size(); }
    uint64_t serial() const { return serial_; }

    // -- used by operation implementations ---------------------------------
    using BackwardFn = std::function<void(const double* grad_out, GradTape& tape)>;
    int record(const std::vector<int>& parents, int64_t out_numel, BackwardFn fn);
    // Accumulation target for a parent node during backward.
    double* grad_buffer(int node);

  private:
    struct Entry {
        std::vector<int> parents;
        int64_t numel;
        BackwardFn backward;
    };
    std::vector<Entry> entries_;
    std::vector<std::vector<double>> grads_;
    uint64_t serial_;
    GradTape* prev_active_ = nullptr;
    bool ran_backward_ = false;
};

// Returns a tracked handle when a tape is supplied, the raw tensor otherwise.
inline Tensor maybe_watch(GradTape* tape, const Tensor& t) {
    return tape ? tape->watch(t) : t;
}

// ---------------------------------------------------------------------------
// Differentiable operations. All record onto the active tape when any input
// is tracked. Shapes are validated eagerly; mismatches raise ContractError.
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor silu(const Tensor& a);

// Matrix product. Accepts [m,k]x[k,n], batched [B,m,k]x[B,k,n], and the mixed
// form [B,m,k]x[k,n] that applies one right-hand matrix to every batch.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose_last2(const Tensor& a);
// [a,b,c,d] -> [a,c,b,d]; used for splitting/merging attention heads.
Tensor permute_0213(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor softmax(const Tensor& a, int axis);
Tensor softmax_last(const Tensor& a);
// Layer normalization over the last axis with learned affine terms.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
// x * (1 + scale) + shift with scale/shift broadcast over all but the last axis.
Tensor rowwise_affine(const Tensor& x, const Tensor& scale, const Tensor& shift);
// Broadcasts a vector over the last axis: out[..., j] = x[..., j] + b[j].
Tensor add_rowvec(const Tensor& x, const Tensor& b);

Tensor slice_axis0(const Tensor& a, int from, int to);
Tensor concat_axis0(const std::vector<Tensor>& parts);
// Gathers rows of a 2-D tensor: out[i, :] = a[index[i], :].
Tensor take_rows(const Tensor& a, const std::vector<int>& index);
// Flat-index gather: out.data()[i] = a.data()[index[i]]; backward scatter-adds.
// Index layouts are data movement only, so this one primitive covers
// patchify/unpatchify and any fixed permutation.
Tensor gather_elements(const Tensor& a, const std::vector<int64_t>& index, Shape out_shape);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor mse_loss(const Tensor& a, const Tensor& b);
Tensor l1_loss(const Tensor& a, const Tensor& b);

// ---------------------------------------------------------------------------
// Discrete Fourier transforms, non-differentiable. Direct separable DFT: the
// grids here never exceed 64x64, correctness beats speed.
// ---------------------------------------------------------------------------

using Spectrum = std::vector<std::complex<double>>;  // h*w*c, row-major

// x: [h,w,c] -> complex spectrum, per channel.
Spectrum dft2d(const Tensor& x);
Tensor idft2d(const Spectrum& spec, int h, int w, int c);
// Raw-buffer 2-D transform over one channel plane laid out with stride `c`.
void dft2d_plane(const double* in, int h, int w, int stride, std::complex<double>* out);
// Inverse of dft2d_plane on a contiguous complex plane.
void idft2d_plane(const std::complex<double>* spec, int h, int w, std::complex<double>* out);

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

// Max over coordinates of |analytic - central difference| / (|analytic| + 1e-8)
// for a scalar-valued function of one tensor. Runs f under its own tape.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double step = 1e-5);

}  // namespace luve
