#include "luve/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>

namespace luve {

namespace {

thread_local GradTape* t_active_tape = nullptr;
uint64_t g_tape_serial = 0;

constexpr double kPi = 3.14159265358979323846;

// Resolves the tape node of a tensor against the currently active tape;
// stale ids from earlier tapes are treated as constants.
int live_node(const Tensor& t, const GradTape* tape) {
    if (!tape) return -1;
    return (t.node >= 0 && t.tape_serial == tape->serial()) ? t.node : -1;
}

void attach(Tensor& out, GradTape* tape, int node) {
    out.node = node;
    out.tape_serial = tape->serial();
}

}  // namespace

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int e : s) n *= e;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    for (int e : shape_) require(e >= 1, "tensor extents must be >= 1, got " + shape_str(shape_));
    data_ = std::make_shared<std::vector<double>>(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
    for (int e : shape_) require(e >= 1, "tensor extents must be >= 1, got " + shape_str(shape_));
    require(shape_numel(shape_) == static_cast<int64_t>(values.size()),
            "value count " + std::to_string(values.size()) + " does not match shape " + shape_str(shape_));
    data_ = std::make_shared<std::vector<double>>(std::move(values));
}

Tensor Tensor::full(Shape shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data_->begin(), t.data_->end(), value);
    return t;
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
    Tensor t(std::move(shape));
    for (auto& v : *t.data_) v = rng.normal() * stddev;
    return t;
}

Tensor Tensor::rand(Shape shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    for (auto& v : *t.data_) v = rng.uniform(lo, hi);
    return t;
}

double Tensor::item() const {
    require(defined() && size() == 1, "item() requires a scalar tensor");
    return (*data_)[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
    require(static_cast<int>(idx.size()) == rank(), "at(): index rank mismatch");
    int64_t off = 0;
    int axis = 0;
    for (int i : idx) {
        require(i >= 0 && i < shape_[static_cast<size_t>(axis)], "at(): index out of range");
        off = off * shape_[static_cast<size_t>(axis)] + i;
        ++axis;
    }
    return (*data_)[static_cast<size_t>(off)];
}

Tensor Tensor::clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<double>>(*data_);
    return t;
}

Tensor Tensor::reshaped(Shape shape) const {
    require(shape_numel(shape) == size(), "reshaped(): element count mismatch");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
}

bool Tensor::all_finite() const {
    for (double v : *data_)
        if (!std::isfinite(v)) return false;
    return true;
}

// ---------------------------------------------------------------------------
// GradTape
// ---------------------------------------------------------------------------

GradTape::GradTape() : serial_(++g_tape_serial) {
    prev_active_ = t_active_tape;
    t_active_tape = this;
}

GradTape::~GradTape() { t_active_tape = prev_active_; }

GradTape* GradTape::active() { return t_active_tape; }

int GradTape::record(const std::vector<int>& parents, int64_t out_numel, BackwardFn fn) {
    entries_.push_back(Entry{parents, out_numel, std::move(fn)});
    return static_cast<int>(entries_.size()) - 1;
}

Tensor GradTape::watch(const Tensor& t) {
    require(t.defined(), "watch(): undefined tensor");
    if (t.node >= 0 && t.tape_serial == serial_) return t;  // already tracked here
    Tensor out = t;
    int id = record({}, t.size(), nullptr);
    attach(out, this, id);
    out.requires_grad = true;
    return out;
}

double* GradTape::grad_buffer(int node) {
    auto& buf = grads_[static_cast<size_t>(node)];
    if (buf.empty()) buf.assign(static_cast<size_t>(entries_[static_cast<size_t>(node)].numel), 0.0);
    return buf.data();
}

void GradTape::backward(const Tensor& loss) {
    require(loss.size() == 1, "backward(): loss must be scalar, got " + shape_str(loss.shape()));
    int root = live_node(loss, this);
    require(root >= 0, "backward(): loss is not tracked on this tape");
    require(!entries_.empty(), "backward(): empty tape");

    grads_.assign(entries_.size(), {});
    grad_buffer(root)[0] = 1.0;
    for (int id = static_cast<int>(entries_.size()) - 1; id >= 0; --id) {
        const Entry& e = entries_[static_cast<size_t>(id)];
        const auto& g = grads_[static_cast<size_t>(id)];
        if (g.empty() || !e.backward) continue;  // unreachable from loss, or leaf
        e.backward(g.data(), *this);
    }
    ran_backward_ = true;
}

bool GradTape::has_grad(const Tensor& t) const {
    int id = live_node(t, this);
    return ran_backward_ && id >= 0 && !grads_[static_cast<size_t>(id)].empty();
}

const std::vector<double>& GradTape::grad(const Tensor& t) const {
    require(ran_backward_, "grad(): backward() has not run");
    int id = live_node(t, this);
    require(id >= 0, "grad(): tensor is not tracked on this tape");
    static const std::vector<double> kEmpty;
    const auto& g = grads_[static_cast<size_t>(id)];
    if (g.empty()) {
        // Tracked but unreachable from the loss: gradient is identically zero.
        const_cast<GradTape*>(this)->grads_[static_cast<size_t>(id)].assign(
            static_cast<size_t>(entries_[static_cast<size_t>(id)].numel), 0.0);
    }
    return grads_[static_cast<size_t>(id)];
}

// ---------------------------------------------------------------------------
// Elementwise operations
// ---------------------------------------------------------------------------

namespace {

// Shared plumbing for binary elementwise ops with per-element gradients.
template <class Fwd, class Bwd>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd, const char* name) {
    require(a.same_shape(b), std::string(name) + ": shape mismatch " + shape_str(a.shape()) +
                                 " vs " + shape_str(b.shape()));
    Tensor out(a.shape());
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    const int64_t n = a.size();
    for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);

    GradTape* tape = GradTape::active();
    int na = live_node(a, tape), nb = live_node(b, tape);
    if (tape && (na >= 0 || nb >= 0)) {
        auto sa = a.storage(), sb = b.storage();
        int id = tape->record({na, nb}, n, [=](const double* g, GradTape& t) {
            double* da = na >= 0 ? t.grad_buffer(na) : nullptr;
            double* db = nb >= 0 ? t.grad_buffer(nb) : nullptr;
            for (int64_t i = 0; i < n; ++i) {
                auto [ga, gb] = bwd((*sa)[static_cast<size_t>(i)], (*sb)[static_cast<size_t>(i)], g[i]);
                if (da) da[i] += ga;
                if (db) db[i] += gb;
            }
        });
        attach(out, tape, id);
    }
    return out;
}

template <class Fwd, class Bwd>
Tensor unary_elementwise(const Tensor& a, Fwd fwd, Bwd bwd) {
    Tensor out(a.shape());
    const double* pa = a.data();
    double* po = out.data();
    const int64_t n = a.size();
    for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i]);

    GradTape* tape = GradTape::active();
    int na = live_node(a, tape);
    if (tape && na >= 0) {
        auto sa = a.storage();
        int id = tape->record({na}, n, [=](const double* g, GradTape& t) {
            double* da = t.grad_buffer(na);
            for (int64_t i = 0; i < n; ++i) da[i] += bwd((*sa)[static_cast<size_t>(i)]) * g[i];
        });
        attach(out, tape, id);
    }
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, [](double x, double y) { return x + y; },
        [](double, double, double g) { return std::pair<double, double>{g, g}; }, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, [](double x, double y) { return x - y; },
        [](double, double, double g) { return std::pair<double, double>{g, -g}; }, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, [](double x, double y) { return x * y; },
        [](double x, double y, double g) { return std::pair<double, double>{g * y, g * x}; }, "mul");
}

Tensor add_scalar(const Tensor& a, double c) {
    return unary_elementwise(a, [c](double x) { return x + c; }, [](double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double c) {
    return unary_elementwise(a, [c](double x) { return x * c; }, [c](double) { return c; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor gelu(const Tensor& a) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    return unary_elementwise(
        a, [=](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
        [=](double x) {
            return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
        });
}

Tensor silu(const Tensor& a) {
    return unary_elementwise(
        a, [](double x) { return x / (1.0 + std::exp(-x)); },
        [](double x) {
            double s = 1.0 / (1.0 + std::exp(-x));
            return s * (1.0 + x * (1.0 - s));
        });
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

namespace {

// C[m,n] += A[m,k] * B[k,n]; i-k-j order keeps the inner loop contiguous.
void gemm_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<int64_t>(i) * k;
        double* crow = c + static_cast<int64_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double aik = arow[p];
            if (aik == 0.0) continue;
            const double* brow = b + static_cast<int64_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

// C[m,n] += A[m,k] * B^T where Bt is [n,k] (i.e. B = Bt^T).
void gemm_bt_acc(const double* a, const double* bt, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<int64_t>(i) * k;
        double* crow = c + static_cast<int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* btrow = bt + static_cast<int64_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += arow[p] * btrow[p];
            crow[j] += acc;
        }
    }
}

// C[k,n] += A^T * B where A is [m,k], B is [m,n].
void gemm_at_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<int64_t>(i) * k;
        const double* brow = b + static_cast<int64_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double aip = arow[p];
            if (aip == 0.0) continue;
            double* crow = c + static_cast<int64_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    const int ra = a.rank(), rb = b.rank();
    require((ra == 2 && rb == 2) || (ra == 3 && rb == 3) || (ra == 3 && rb == 2),
            "matmul: unsupported ranks " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int batch = ra == 3 ? a.extent(0) : 1;
    const int m = a.extent(ra - 2), k = a.extent(ra - 1);
    const int kb = b.extent(rb - 2), n = b.extent(rb - 1);
    require(k == kb, "matmul: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    if (ra == 3 && rb == 3)
        require(a.extent(0) == b.extent(0), "matmul: batch extents differ");

    Shape out_shape = ra == 3 ? Shape{batch, m, n} : Shape{m, n};
    Tensor out(out_shape);
    const bool b_shared = (rb == 2);
    const int64_t a_step = static_cast<int64_t>(m) * k;
    const int64_t b_step = b_shared ? 0 : static_cast<int64_t>(k) * n;
    const int64_t o_step = static_cast<int64_t>(m) * n;
    for (int bi = 0; bi < batch; ++bi)
        gemm_acc(a.data() + bi * a_step, b.data() + bi * b_step, out.data() + bi * o_step, m, k, n);

    GradTape* tape = GradTape::active();
    int na = live_node(a, tape), nb = live_node(b, tape);
    if (tape && (na >= 0 || nb >= 0)) {
        auto sa = a.storage(), sb = b.storage();
        int id = tape->record({na, nb}, out.size(), [=](const double* g, GradTape& t) {
            for (int bi = 0; bi < batch; ++bi) {
                const double* ga = g + bi * o_step;
                const double* pa = sa->data() + bi * a_step;
                const double* pb = sb->data() + bi * b_step;
                if (na >= 0)  // dA = G * B^T
                    gemm_bt_acc(ga, pb, t.grad_buffer(na) + bi * a_step, m, n, k);
                if (nb >= 0)  // dB = A^T * G (accumulates over batches when B is shared)
                    gemm_at_acc(pa, ga, t.grad_buffer(nb) + bi * b_step, m, k, n);
            }
        });
        attach(out, tape, id);
    }
    return out;
}

Tensor transpose_last2(const Tensor& a) {
    require(a.rank() >= 2, "transpose_last2: rank must be >= 2");
    const int r = a.rank();
    const int m = a.extent(r - 2), n = a.extent(r - 1);
    int64_t batch = 1;
    Shape out_shape = a.shape();
    std::swap(out_shape[static_cast<size_t>(r - 2)], out_shape[static_cast<size_t>(r - 1)]);
    for (int i = 0; i < r - 2; ++i) batch *= a.extent(i);

    Tensor out(out_shape);
    const int64_t step = static_cast<int64_t>(m) * n;
    for (int64_t bi = 0; bi < batch; ++bi) {
        const double* src = a.data() + bi * step;
        double* dst = out.data() + bi * step;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) dst[static_cast<int64_t>(j) * m + i] = src[static_cast<int64_t>(i) * n + j];
    }

    GradTape* tape = GradTape::active();
    int na = live_node(a, tape);
    if (tape && na >= 0) {
        int id = tape->record({na}, out.size(), [=](const double* g, GradTape& t) {
            double* da = t.grad_buffer(na);
            for (int64_t bi = 0; bi < batch; ++bi) {
                const double* gsrc = g + bi * step;
                double* ddst = da + bi * step;
                for (int j = 0; j < n; ++j)
                    for (int i = 0; i < m; ++i)
                        ddst[static_cast<int64_t>(i) * n + j] += gsrc[static_cast<int64_t>(j) * m + i];
            }
        });
        attach(out, tape, id);
    }
    return out;
}

Tensor permute_0213(const Tensor& a) {
    require(a.rank() == 4, "permute_0213: rank must be 4");
    const int d0 = a.extent(0), d1 = a.extent(1), d2 = a.extent(2), d3 = a.extent(3);
    Tensor out({d0, d2, d1, d3});
    auto src_off = [=](int i0, int i1, int i2) {
        return ((static_cast<int64_t>(i0) * d1 + i1) * d2 + i2) * d3;
    };
    auto dst_off = [=](int i0, int i2, int i1) {
        return ((static_cast<int64_t>(i0) * d2 + i2) * d1 + i1) * d3;
    };
    for (int i0 = 0; i0 < d0; ++i0)
        for (int i1 = 0; i1 < d1; ++i1)
            for (int i2 = 0; i2 < d2; ++i2)
                std::memcpy(out.data() + dst_off(i0, i2, i1), a.data() + src_off(i0, i1, i2),
                            sizeof(double) * static_cast<size_t>(d3));

    GradTape* tape = GradTape::active();
    int na = live_node(a, tape);
    if (tape && na >= 0) {
        int id = tape->record({na}, out.size(), [=](const double* g, GradTape& t) {
            double* da = t.grad_buffer(na);
            for (int i0 = 0; i0 < d0; ++i0)
                for (int i1 = 0; i1 < d1; ++i1)
                    for (int i2 = 0; i2 < d2; ++i2) {
                        const double* gs = g + dst_off(i0, i2, i1);
                        double* dd = da + src_off(i0, i1, i2);
                        for (int i3 = 0; i3 < d3; ++i3) dd[i3] += gs[i3];
                    }
        });
        attach(out, tape, id);
    }
    return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
    require(shape_numel(shape) == a.size(), "reshape: element count mismatch, " +
                                                shape_str(a.shape()) + " -> " + shape_str(shape));
    Tensor out(shape, a.vec());
    GradTape* tape = GradTape::active();
    int na = live_node(a, tape);
    if (tape && na >= 0) {
        const int64_t n = a.size();
        int id = tape->record({na}, n, [=](const double* g, GradTape& t) {
            double* da = t.grad_buffer(na);
            for (int64_t i = 0; i < n; ++i) da[i] += g[i];
        });
        attach(out, tape, id);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Softmax / normalization
// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& a, int axis) {
    if (axis < 0) axis += a.rank();
    require(axis >= 0 && axis < a.rank(), "softmax: axis out of range");
    const int n = a.extent(axis);
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= a.extent(i);
    for (int i = axis + 1; i < a.rank(); ++i) inner *= a.extent(i);

    Tensor out(a.shape());
    const double* pa = a.data();
    double* po = out.data();
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * n * inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < n; ++j) mx = std::max(mx, pa[base + j * inner]);
            double sum = 0.0;
            for (int j = 0; j < n; ++j) {
                double e = std::exp(pa[base + j * inner] - mx);
                po[base + j * inner] = e;
                sum += e;
            }
            const double inv = 1.0 / sum;
            for (int j = 0; j < n; ++j) po[base + j * inner] *= inv;
        }
    }

    GradTape* tape = GradTape::active();
    int na = live_node(a, tape);
    if (tape && na >= 0) {
        auto so = out.storage();  // backward needs the outputs, not the inputs
        int id = tape->record({na}, out.size(), [=](const double* g, GradTape& t) {
            double* da = t.grad_buffer(na);
            const double* y = so->data();
            for (int64_t o = 0; o < outer; ++o) {
                for (int64_t in = 0; in < inner; ++in) {
                    const int64_t base = o * n * inner + in;
                    double dot = 0.0;
                    for (int j = 0; j < n; ++j) dot += g[base + j * inner] * y[base + j * inner];
                    for (int j = 0; j < n; ++j) {
                        const int64_t k = base + j * inner;
                        da[k] += y[k] * (g[k] - dot);
                    }
                }
            }
        });
        attach(out, tape, id);
    }
    return out;
}

Tensor softmax_last(const Tensor& a) { return softmax(a, a.rank() - 1); }

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const int n = x.extent(x.rank() - 1);
    require(gamma.rank() == 1 && gamma.extent(0) == n, "layer_norm: gamma shape mismatch");
    require(beta.rank() == 1 && beta.extent(0) == n, "layer_norm: beta shape mismatch");
    const int64_t rows = x.size() / n;

    Tensor out(x.shape());
    std::vector<double> xhat(static_cast<size_t>(x.size()));
    std::vector<double> inv_sigma(static_cast<size_t>(rows));
    const double* px = x.data();
    const double* pg = gamma.data();
    const double* pb = beta.data();
    double* po = out.data();
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = px + r * n;
        double mu = 0.0;
        for (int j = 0; j < n; ++j) mu += row[j];
        mu /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= n;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_sigma[static_cast<size_t>(r)] = is;
        for (int j = 0; j < n; ++j) {
            const double xh = (row[j] - mu) * is;
            xhat[static_cast<size_t>(r * n + j)] = xh;
            po[r * n + j] = pg[j] * xh + pb[j];
        }
    }

    GradTape* tape = GradTape::active();
    int nx = live_node(x, tape), ng = live_node(gamma, tape), nb = live_node(beta, tape);
    if (tape && (nx >= 0 || ng >= 0 || nb >= 0)) {
        auto sg = gamma.storage();
        auto xh = std::make_shared<std::vector<double>>(std::move(xhat));
        auto is = std::make_shared<std::vector<double>>(std::move(inv_sigma));
        int id = tape->record({nx, ng, nb}, out.size(), [=](const double* g, GradTape& t) {
            double* dx = nx >= 0 ? t.grad_buffer(nx) : nullptr;
            double* dg = ng >= 0 ? t.grad_buffer(ng) : nullptr;
            double* db = nb >= 0 ? t.grad_buffer(nb) : nullptr;
            for (int64_t r = 0; r < rows; ++r) {
                const double* grow = g + r * n;
                const double* xrow = xh->data() + r * n;
                if (dg || db) {
                    for (int j = 0; j < n; ++j) {
                        if (dg) dg[j] += grow[j] * xrow[j];
                        if (db) db[j] += grow[j];
                    }
                }
                if (dx) {
                    double mean_dh = 0.0, mean_dhx = 0.0;
                    for (int j = 0; j < n; ++j) {
                        const double dh = grow[j] * (*sg)[static_cast<size_t>(j)];
                        mean_dh += dh;
                        mean_dhx += dh * xrow[j];
                    }
                    mean_dh /= n;
                    mean_dhx /= n;
                    const double isr = (*is)[static_cast<size_t>(r)];
                    for (int j = 0; j < n; ++j) {
                        const double dh = grow[j] * (*sg)[static_cast<size_t>(j)];
                        dx[r * n + j] += isr * (dh - mean_dh - xrow[j] * mean_dhx);
                    }
                }
            }
        });
        attach(out, tape, id);
    }
    return out;
}

Tensor rowwise_affine(const Tensor& x, const Tensor& scale, const Tensor& shift) {
    const int n = x.extent(x.rank() - 1);
    require(scale.size() == n && shift.size() == n, "rowwise_affine: modulation size mismatch");
    const int64_t rows = x.size() / n;

    Tensor out(x.shape());
    const double* px = x.data();
    const double* ps = scale.data();
    const double* pb = shift.data();
    double* po = out.data();
    for (int64_t r = 0; r < rows; ++r)
        for (int j = 0; j < n; ++j) po[r * n + j] = px[r * n + j] * (1.0 + ps[j]) + pb[j];

    GradTape* tape = GradTape::active();
    int nx = live_node(x, tape), ns = live_node(scale, tape), nb = live_node(shift, tape);
    if (tape && (nx >= 0 || ns >= 0 || nb >= 0)) {
        auto sx = x.storage(), ss = scale.storage();
        int id = tape->record({nx, ns, nb}, out.size(), [=](const double* g, GradTape& t) {
            double* dx = nx >= 0 ? t.grad_buffer(nx) : nullptr;
            double* ds = ns >= 0 ? t.grad_buffer(ns) : nullptr;
            double* db = nb >= 0 ? t.grad_buffer(nb) : nullptr;
            for (int64_t r = 0; r < rows; ++r) {
                for (int j = 0; j < n; ++j) {
                    const double gv = g[r * n + j];
                    if (dx) dx[r * n + j] += gv * (1.0 + (*ss)[static_cast<size_t>(j)]);
                    if (ds) ds[j] += gv * (*sx)[static_cast<size_t>(r * n + j)];
                    if (db) db[j] += gv;
                }
            }
        });
        attach(out, tape, id);
    }
    return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
    const int n = x.extent(x.rank() - 1);
    require(b.size() == n, "add_rowvec: vector size mismatch");
    const int64_t rows = x.size() / n;

    Tensor out(x.shape());
    const double* px = x.data();
    const double* pb = b.data();
    double* po = out.data();
    for (int64_t r = 0; r < rows; ++r)
        for (int j = 0; j < n; ++j) po[r * n + j] = px[r * n + j] + pb[j];

    GradTape* tape = GradTape::active();
    int nx = live_node(x, tape), nb = live_node(b, tape);
    if (tape && (nx >= 0 || nb >= 0)) {
        int id = tape->record({nx, nb}, out.size(), [=](const double* g, GradTape& t) {
            double* dx = nx >= 0 ? t.grad_buffer(nx) : nullptr;
            double* db = nb >= 0 ? t.grad_buffer(nb) : nullptr;
            for (int64_t r = 0; r < rows; ++r)
                for (int j = 0; j < n; ++j) {
                    if (dx) dx[r * n + j] += g[r * n + j];
                    if (db) db[j] += g[r * n + j];
                }
        });
        attach(out, tape, id);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Slicing / gathering
// ---------------------------------------------------------------------------

Tensor slice_axis0(const Tensor& a, int from, int to) {
    require(a.rank() >= 1, "slice_axis0: rank must be >= 1");
    require(0 <= from && from < to && to <= a.extent(0), "slice_axis0: bad range");
    const int64_t rowsize = a.size() / a.extent(0);
    Shape out_shape = a.shape();
    out_shape[0] = to - from;
    Tensor out(out_shape);
    std::memcpy(out.data(), a.data() + from * rowsize,
                sizeof(double) * static_cast<size_t>(out.size()));

    GradTape* tape = GradTape::active();
    int na = live_node(a, tape);
    if (tape && na >= 0) {
        const int64_t n = out.size();
        int id = tape->record({na}, n, [=](const double* g, GradTape& t) {
            double* da = t.grad_buffer(na) + from * rowsize;
            for (int64_t i = 0; i < n; ++i) da[i] += g[i];
        });
        attach(out, tape, id);
    }
    return out;
}

Tensor concat_axis0(const std::vector<Tensor>& parts) {
    require(!parts.empty(), "concat_axis0: no parts");
    Shape out_shape = parts[0].shape();
    int total = 0;
    for (const auto& p : parts) {
        Shape s = p.shape();
        require(s.size() == out_shape.size(), "concat_axis0: rank mismatch");
        for (size_t i = 1; i < s.size(); ++i)
            require(s[i] == out_shape[i], "concat_axis0: trailing extents differ");
        total += s[0];
    }
    out_shape[0] = total;
    Tensor out(out_shape);
    int64_t off = 0;
    for (const auto& p : parts) {
        std::memcpy(out.data() + off, p.data(), sizeof(double) * static_cast<size_t>(p.size()));
        off += p.size();
    }

    GradTape* tape = GradTape::active();
    bool any = false;
    std::vector<int> nodes(parts.size(), -1);
    std::vector<int64_t> sizes(parts.size());
    for (size_t i = 0; i < parts.size(); ++i) {
        nodes[i] = live_node(parts[i], tape);
        sizes[i] = parts[i].size();
        any = any || nodes[i] >= 0;
    }
    if (tape && any) {
        int id = tape->record(nodes, out.size(), [=](const double* g, GradTape& t) {
            int64_t o = 0;
            for (size_t i = 0; i < nodes.size(); ++i) {
                if (nodes[i] >= 0) {
                    double* d = t.grad_buffer(nodes[i]);
                    for (int64_t j = 0; j < sizes[i]; ++j) d[j] += g[o + j];
                }
                o += sizes[i];
            }
        });
        attach(out, tape, id);
    }
    return out;
}

Tensor take_rows(const Tensor& a, const std::vector<int>& index) {
    require(a.rank() == 2, "take_rows: expects a 2-D tensor");
    const int rows = a.extent(0), cols = a.extent(1);
    for (int i : index) require(i >= 0 && i < rows, "take_rows: index out of range");
    Tensor out({static_cast<int>(index.size()), cols});
    for (size_t i = 0; i < index.size(); ++i)
        std::memcpy(out.data() + i * static_cast<size_t>(cols),
                    a.data() + static_cast<int64_t>(index[i]) * cols,
                    sizeof(double) * static_cast<size_t>(cols));

    GradTape* tape = GradTape::active();
    int na = live_node(a, tape);
    if (tape && na >= 0) {
        auto idx = std::make_shared<std::vector<int>>(index);
        int id = tape->record({na}, out.size(), [=](const double* g, GradTape& t) {
            double* da = t.grad_buffer(na);
            for (size_t i = 0; i < idx->size(); ++i) {
                double* drow = da + static_cast<int64_t>((*idx)[i]) * cols;
                const double* grow = g + i * static_cast<size_t>(cols);
                for (int j = 0; j < cols; ++j) drow[j] += grow[j];
            }
        });
        attach(out, tape, id);
    }
    return out;
}

Tensor gather_elements(const Tensor& a, const std::vector<int64_t>& index, Shape out_shape) {
    require(shape_numel(out_shape) == static_cast<int64_t>(index.size()),
            "gather_elements: index count does not match output shape");
    Tensor out(std::move(out_shape));
    const double* pa = a.data();
    double* po = out.data();
    const int64_t asize = a.size();
    for (size_t i = 0; i < index.size(); ++i) {
        require(index[i] >= 0 && index[i] < asize, "gather_elements: index out of range");
        po[i] = pa[index[i]];
    }

    GradTape* tape = GradTape::active();
    int na = live_node(a, tape);
    if (tape && na >= 0) {
        auto idx = std::make_shared<std::vector<int64_t>>(index);
        int id = tape->record({na}, out.size(), [=](const double* g, GradTape& t) {
            double* da = t.grad_buffer(na);
            for (size_t i = 0; i < idx->size(); ++i) da[(*idx)[i]] += g[i];
        });
        attach(out, tape, id);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions / losses
// ---------------------------------------------------------------------------

Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) s += a.data()[i];
    Tensor out = Tensor::scalar(s);
    GradTape* tape = GradTape::active();
    int na = live_node(a, tape);
    if (tape && na >= 0) {
        const int64_t n = a.size();
        int id = tape->record({na}, 1, [=](const double* g, GradTape& t) {
            double* da = t.grad_buffer(na);
            for (int64_t i = 0; i < n; ++i) da[i] += g[0];
        });
        attach(out, tape, id);
    }
    return out;
}

Tensor mean_all(const Tensor& a) { return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a.size())); }

Tensor mse_loss(const Tensor& a, const Tensor& b) {
    require(a.same_shape(b), "mse_loss: shape mismatch");
    const int64_t n = a.size();
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = a.data()[i] - b.data()[i];
        s += d * d;
    }
    Tensor out = Tensor::scalar(s / static_cast<double>(n));
    GradTape* tape = GradTape::active();
    int na = live_node(a, tape), nb = live_node(b, tape);
    if (tape && (na >= 0 || nb >= 0)) {
        auto sa = a.storage(), sb = b.storage();
        int id = tape->record({na, nb}, 1, [=](const double* g, GradTape& t) {
            const double c = 2.0 * g[0] / static_cast<double>(n);
            double* da = na >= 0 ? t.grad_buffer(na) : nullptr;
            double* db = nb >= 0 ? t.grad_buffer(nb) : nullptr;
            for (int64_t i = 0; i < n; ++i) {
                const double d = (*sa)[static_cast<size_t>(i)] - (*sb)[static_cast<size_t>(i)];
                if (da) da[i] += c * d;
                if (db) db[i] -= c * d;
            }
        });
        attach(out, tape, id);
    }
    return out;
}

Tensor l1_loss(const Tensor& a, const Tensor& b) {
    require(a.same_shape(b), "l1_loss: shape mismatch");
    const int64_t n = a.size();
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += std::abs(a.data()[i] - b.data()[i]);
    Tensor out = Tensor::scalar(s / static_cast<double>(n));
    GradTape* tape = GradTape::active();
    int na = live_node(a, tape), nb = live_node(b, tape);
    if (tape && (na >= 0 || nb >= 0)) {
        auto sa = a.storage(), sb = b.storage();
        int id = tape->record({na, nb}, 1, [=](const double* g, GradTape& t) {
            const double c = g[0] / static_cast<double>(n);
            double* da = na >= 0 ? t.grad_buffer(na) : nullptr;
            double* db = nb >= 0 ? t.grad_buffer(nb) : nullptr;
            for (int64_t i = 0; i < n; ++i) {
                const double d = (*sa)[static_cast<size_t>(i)] - (*sb)[static_cast<size_t>(i)];
                const double sg = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                if (da) da[i] += c * sg;
                if (db) db[i] -= c * sg;
            }
        });
        attach(out, tape, id);
    }
    return out;
}

// ---------------------------------------------------------------------------
// DFT
// ---------------------------------------------------------------------------

void dft2d_plane(const double* in, int h, int w, int stride, std::complex<double>* out) {
    // rows first, then columns; direct sums in both passes
    std::vector<std::complex<double>> rows(static_cast<size_t>(h) * w);
    for (int y = 0; y < h; ++y) {
        for (int v = 0; v < w; ++v) {
            std::complex<double> acc = 0.0;
            for (int x = 0; x < w; ++x) {
                const double ang = -2.0 * kPi * v * x / w;
                acc += in[(static_cast<int64_t>(y) * w + x) * stride] *
                       std::complex<double>(std::cos(ang), std::sin(ang));
            }
            rows[static_cast<size_t>(y) * w + v] = acc;
        }
    }
    for (int v = 0; v < w; ++v) {
        for (int u = 0; u < h; ++u) {
            std::complex<double> acc = 0.0;
            for (int y = 0; y < h; ++y) {
                const double ang = -2.0 * kPi * u * y / h;
                acc += rows[static_cast<size_t>(y) * w + v] *
                       std::complex<double>(std::cos(ang), std::sin(ang));
            }
            out[static_cast<size_t>(u) * w + v] = acc;
        }
    }
}

void idft2d_plane(const std::complex<double>* spec, int h, int w, std::complex<double>* out) {
    std::vector<std::complex<double>> cols(static_cast<size_t>(h) * w);
    for (int v = 0; v < w; ++v) {
        for (int y = 0; y < h; ++y) {
            std::complex<double> acc = 0.0;
            for (int u = 0; u < h; ++u) {
                const double ang = 2.0 * kPi * u * y / h;
                acc += spec[static_cast<size_t>(u) * w + v] *
                       std::complex<double>(std::cos(ang), std::sin(ang));
            }
            cols[static_cast<size_t>(y) * w + v] = acc / static_cast<double>(h);
        }
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            std::complex<double> acc = 0.0;
            for (int v = 0; v < w; ++v) {
                const double ang = 2.0 * kPi * v * x / w;
                acc += cols[static_cast<size_t>(y) * w + v] *
                       std::complex<double>(std::cos(ang), std::sin(ang));
            }
            out[static_cast<size_t>(y) * w + x] = acc / static_cast<double>(w);
        }
    }
}

Spectrum dft2d(const Tensor& x) {
    require(x.rank() == 3, "dft2d: expects [h,w,c], got " + shape_str(x.shape()));
    const int h = x.extent(0), w = x.extent(1), c = x.extent(2);
    Spectrum spec(static_cast<size_t>(h) * w * c);
    std::vector<std::complex<double>> plane(static_cast<size_t>(h) * w);
    for (int ch = 0; ch < c; ++ch) {
        dft2d_plane(x.data() + ch, h, w, c, plane.data());
        for (int i = 0; i < h * w; ++i)
            spec[static_cast<size_t>(i) * c + ch] = plane[static_cast<size_t>(i)];
    }
    return spec;
}

Tensor idft2d(const Spectrum& spec, int h, int w, int c) {
    require(spec.size() == static_cast<size_t>(h) * w * c, "idft2d: spectrum size mismatch");
    Tensor out({h, w, c});
    std::vector<std::complex<double>> plane(static_cast<size_t>(h) * w);
    std::vector<std::complex<double>> inv(static_cast<size_t>(h) * w);
    for (int ch = 0; ch < c; ++ch) {
        for (int i = 0; i < h * w; ++i) plane[static_cast<size_t>(i)] = spec[static_cast<size_t>(i) * c + ch];
        idft2d_plane(plane.data(), h, w, inv.data());
        for (int i = 0; i < h * w; ++i)
            out.data()[static_cast<int64_t>(i) * c + ch] = inv[static_cast<size_t>(i)].real();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double step) {
    std::vector<double> analytic;
    {
        GradTape tape;
        Tensor xt = tape.watch(x);
        Tensor loss = f(xt);
        require(loss.size() == 1, "finite_diff_check: f must return a scalar");
        tape.backward(loss);
        analytic = tape.grad(xt);
    }
    double max_rel = 0.0;
    for (int64_t i = 0; i < x.size(); ++i) {
        Tensor xp = x.clone();
        Tensor xm = x.clone();
        xp.data()[i] += step;
        xm.data()[i] -= step;
        const double fd = (f(xp).item() - f(xm).item()) / (2.0 * step);
        const double rel = std::abs(analytic[static_cast<size_t>(i)] - fd) /
                           (std::abs(analytic[static_cast<size_t>(i)]) + 1e-8);
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace luve
