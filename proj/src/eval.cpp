#include "luve/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>

namespace luve::eval {

// ---------------------------------------------------------------------------
// Reconstruction metrics
// ---------------------------------------------------------------------------

std::pair<double, double> psnr_mse(const data::VideoTensor& a, const data::VideoTensor& b) {
    require(a.t.same_shape(b.t), "psnr_mse: shape mismatch");
    double mse = 0.0;
    for (int64_t i = 0; i < a.t.size(); ++i) {
        const double d = a.t.data()[i] - b.t.data()[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.t.size());
    const double psnr = mse == 0.0 ? std::numeric_limits<double>::infinity()
                                   : 10.0 * std::log10(1.0 / mse);
    return {psnr, mse};
}

std::pair<double, double> latent_errors(const data::LatentTensor& a, const data::LatentTensor& b) {
    require(a.t.same_shape(b.t), "latent_errors: shape mismatch");
    double mae = 0.0, mse = 0.0;
    for (int64_t i = 0; i < a.t.size(); ++i) {
        const double d = a.t.data()[i] - b.t.data()[i];
        mae += std::abs(d);
        mse += d * d;
    }
    const double n = static_cast<double>(a.t.size());
    return {mae / n, mse / n};
}

double flicker(const data::VideoTensor& v) {
    const int n = v.frames();
    require(n >= 2, "flicker: needs at least 2 frames");
    const int64_t per_frame = v.t.size() / n;
    double acc = 0.0;
    const double* p = v.t.data();
    for (int f = 1; f < n; ++f) {
        const double* cur = p + static_cast<int64_t>(f) * per_frame;
        const double* prev = cur - per_frame;
        for (int64_t i = 0; i < per_frame; ++i) acc += std::abs(cur[i] - prev[i]);
    }
    return acc / (static_cast<double>(n - 1) * static_cast<double>(per_frame));
}

nlohmann::json MetricReport::to_json() const {
    return nlohmann::json{{"method", method},   {"clips", clip_ids},     {"psnr_rgb", psnr_rgb},
                          {"mse_rgb", mse_rgb}, {"mae_lat", mae_lat},    {"mse_lat", mse_lat},
                          {"flicker", flicker}, {"fid_patch", fid_patch}, {"wall_ms", wall_ms}};
}

// ---------------------------------------------------------------------------
// Frechet distance over patches
// ---------------------------------------------------------------------------

PatchExtractor make_projection_extractor(int patch, int feature_dim, uint64_t seed) {
    const int in_dim = patch * patch * 3;
    Rng rng(seed);
    auto proj = std::make_shared<Tensor>(
        Tensor::randn({feature_dim, in_dim}, rng, 1.0 / std::sqrt(static_cast<double>(in_dim))));
    return [proj, feature_dim, in_dim](const Tensor& p) {
        require(p.size() == in_dim, "projection extractor: patch size mismatch");
        std::vector<double> out(static_cast<size_t>(feature_dim), 0.0);
        for (int i = 0; i < feature_dim; ++i) {
            const double* row = proj->data() + static_cast<int64_t>(i) * in_dim;
            double acc = 0.0;
            for (int j = 0; j < in_dim; ++j) acc += row[j] * p.data()[j];
            out[static_cast<size_t>(i)] = acc;
        }
        return out;
    };
}

std::vector<Tensor> extract_patches(const data::VideoTensor& video, int patch,
                                    int frames_per_video) {
    const int n = video.frames(), H = video.height(), W = video.width();
    require(H / patch >= 2 && W / patch >= 2, "extract_patches: need at least 2 patches per side");
    const int m = std::min(frames_per_video, n);
    std::vector<Tensor> patches;
    for (int k = 0; k < m; ++k) {
        const int f = static_cast<int>((k + 0.5) * n / m);  // uniformly spaced
        for (int py = 0; py + patch <= H; py += patch) {
            for (int px = 0; px + patch <= W; px += patch) {
                Tensor p({patch, patch, 3});
                for (int y = 0; y < patch; ++y)
                    for (int x = 0; x < patch; ++x)
                        for (int c = 0; c < 3; ++c)
                            p.data()[(static_cast<int64_t>(y) * patch + x) * 3 + c] =
                                video.t.at({f, py + y, px + x, c});
                patches.push_back(std::move(p));
            }
        }
    }
    return patches;
}

std::vector<double> symmetric_eigenvalues(std::vector<double> m, int n, std::vector<double>* vecs) {
    // cyclic Jacobi rotations
    std::vector<double> v;
    if (vecs) {
        v.assign(static_cast<size_t>(n) * n, 0.0);
        for (int i = 0; i < n; ++i) v[static_cast<size_t>(i) * n + i] = 1.0;
    }
    auto at = [&](int i, int j) -> double& { return m[static_cast<size_t>(i) * n + j]; };
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
        if (off < 1e-24) break;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                if (std::abs(at(p, q)) < 1e-300) continue;
                const double theta = (at(q, q) - at(p, p)) / (2.0 * at(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double mkp = at(k, p), mkq = at(k, q);
                    at(k, p) = c * mkp - s * mkq;
                    at(k, q) = s * mkp + c * mkq;
                }
                for (int k = 0; k < n; ++k) {
                    const double mpk = at(p, k), mqk = at(q, k);
                    at(p, k) = c * mpk - s * mqk;
                    at(q, k) = s * mpk + c * mqk;
                }
                if (vecs) {
                    for (int k = 0; k < n; ++k) {
                        const double vkp = v[static_cast<size_t>(k) * n + p];
                        const double vkq = v[static_cast<size_t>(k) * n + q];
                        v[static_cast<size_t>(k) * n + p] = c * vkp - s * vkq;
                        v[static_cast<size_t>(k) * n + q] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    std::vector<double> eig(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) eig[static_cast<size_t>(i)] = at(i, i);
    if (vecs) *vecs = std::move(v);
    return eig;
}

namespace {

struct Gaussian {
    std::vector<double> mu;
    std::vector<double> cov;  // d*d row-major
};

Gaussian fit_gaussian(const std::vector<std::vector<double>>& feats) {
    require(!feats.empty(), "frechet_distance: empty feature set");
    const int d = static_cast<int>(feats[0].size());
    Gaussian g;
    g.mu.assign(static_cast<size_t>(d), 0.0);
    for (const auto& f : feats) {
        require(static_cast<int>(f.size()) == d, "frechet_distance: ragged features");
        for (int i = 0; i < d; ++i) g.mu[static_cast<size_t>(i)] += f[static_cast<size_t>(i)];
    }
    for (auto& m : g.mu) m /= static_cast<double>(feats.size());
    g.cov.assign(static_cast<size_t>(d) * d, 0.0);
    for (const auto& f : feats)
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                g.cov[static_cast<size_t>(i) * d + j] +=
                    (f[static_cast<size_t>(i)] - g.mu[static_cast<size_t>(i)]) *
                    (f[static_cast<size_t>(j)] - g.mu[static_cast<size_t>(j)]);
    const double denom = std::max<size_t>(1, feats.size() - 1);
    for (auto& c : g.cov) c /= static_cast<double>(denom);
    return g;
}

// A^(1/2) for symmetric PSD A via eigendecomposition.
std::vector<double> sqrt_psd(const std::vector<double>& a, int n) {
    std::vector<double> vecs;
    std::vector<double> eig = symmetric_eigenvalues(a, n, &vecs);
    std::vector<double> out(static_cast<size_t>(n) * n, 0.0);
    for (int k = 0; k < n; ++k) {
        const double s = std::sqrt(std::max(0.0, eig[static_cast<size_t>(k)]));
        if (s == 0.0) continue;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                out[static_cast<size_t>(i) * n + j] +=
                    s * vecs[static_cast<size_t>(i) * n + k] * vecs[static_cast<size_t>(j) * n + k];
    }
    return out;
}

std::vector<double> matmul_sq(const std::vector<double>& a, const std::vector<double>& b, int n) {
    std::vector<double> c(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < n; ++k) {
            const double aik = a[static_cast<size_t>(i) * n + k];
            if (aik == 0.0) continue;
            for (int j = 0; j < n; ++j)
                c[static_cast<size_t>(i) * n + j] += aik * b[static_cast<size_t>(k) * n + j];
        }
    return c;
}

double min_eigenvalue(const std::vector<double>& m, int n) {
    std::vector<double> eig = symmetric_eigenvalues(m, n);
    return *std::min_element(eig.begin(), eig.end());
}

}  // namespace

double frechet_distance(const std::vector<std::vector<double>>& feats_a,
                        const std::vector<std::vector<double>>& feats_b) {
    Gaussian ga = fit_gaussian(feats_a);
    Gaussian gb = fit_gaussian(feats_b);
    const int d = static_cast<int>(ga.mu.size());
    require(gb.mu.size() == ga.mu.size(), "frechet_distance: feature dims differ");

    if (min_eigenvalue(ga.cov, d) < 1e-10 || min_eigenvalue(gb.cov, d) < 1e-10) {
        std::cerr << "frechet_distance: near-singular covariance, adding 1e-6 jitter\n";
        for (int i = 0; i < d; ++i) {
            ga.cov[static_cast<size_t>(i) * d + i] += 1e-6;
            gb.cov[static_cast<size_t>(i) * d + i] += 1e-6;
        }
    }

    double mean_term = 0.0;
    for (int i = 0; i < d; ++i) {
        const double dm = ga.mu[static_cast<size_t>(i)] - gb.mu[static_cast<size_t>(i)];
        mean_term += dm * dm;
    }

    // Tr((S1 S2)^(1/2)) via the symmetrized product sqrt(S1) S2 sqrt(S1)
    std::vector<double> s1_half = sqrt_psd(ga.cov, d);
    std::vector<double> inner = matmul_sq(matmul_sq(s1_half, gb.cov, d), s1_half, d);
    // enforce symmetry lost to round-off before the eigen solve
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) {
            const double avg = 0.5 * (inner[static_cast<size_t>(i) * d + j] +
                                      inner[static_cast<size_t>(j) * d + i]);
            inner[static_cast<size_t>(i) * d + j] = avg;
            inner[static_cast<size_t>(j) * d + i] = avg;
        }
    std::vector<double> eig = symmetric_eigenvalues(inner, d);
    double tr_sqrt = 0.0;
    for (double e : eig) tr_sqrt += std::sqrt(std::max(0.0, e));

    double tr1 = 0.0, tr2 = 0.0;
    for (int i = 0; i < d; ++i) {
        tr1 += ga.cov[static_cast<size_t>(i) * d + i];
        tr2 += gb.cov[static_cast<size_t>(i) * d + i];
    }
    return mean_term + tr1 + tr2 - 2.0 * tr_sqrt;
}

double fid_patch(const std::vector<data::VideoTensor>& set_a,
                 const std::vector<data::VideoTensor>& set_b, int patch, int frames_per_video,
                 const PatchExtractor& extractor) {
    require(!set_a.empty() && !set_b.empty(), "fid_patch: empty video set");
    auto featurize = [&](const std::vector<data::VideoTensor>& vids) {
        std::vector<std::vector<double>> feats;
        for (const auto& v : vids)
            for (const auto& p : extract_patches(v, patch, frames_per_video))
                feats.push_back(extractor(p));
        return feats;
    };
    return frechet_distance(featurize(set_a), featurize(set_b));
}

}  // namespace luve::eval
