#include "luve/vluer.hpp"

#include <algorithm>
#include <cmath>

namespace luve::vluer {

// ---------------------------------------------------------------------------
// Coordinates
// ---------------------------------------------------------------------------

CoordinateGrid make_coordinate_grid(int src_h, int src_w, int dst_h, int dst_w) {
    require(src_h >= 1 && src_w >= 1, "make_coordinate_grid: bad source extents");
    require(dst_h >= src_h && dst_w >= src_w, "make_coordinate_grid: downscaling unsupported");
    CoordinateGrid g;
    g.src_h = src_h;
    g.src_w = src_w;
    g.dst_h = dst_h;
    g.dst_w = dst_w;
    g.cells.reserve(static_cast<size_t>(dst_h) * dst_w);
    auto center = [](int i, int n) { return -1.0 + (2.0 * i + 1.0) / n; };
    for (int i = 0; i < dst_h; ++i) {
        for (int j = 0; j < dst_w; ++j) {
            CoordinateCell c;
            c.y = center(i, dst_h);
            c.x = center(j, dst_w);
            // nearest source cell center; offsets in source-cell units
            c.src_row = std::clamp(static_cast<int>(std::floor((c.y + 1.0) / 2.0 * src_h)), 0, src_h - 1);
            c.src_col = std::clamp(static_cast<int>(std::floor((c.x + 1.0) / 2.0 * src_w)), 0, src_w - 1);
            c.off_y = (c.y - center(c.src_row, src_h)) * src_h / 2.0;
            c.off_x = (c.x - center(c.src_col, src_w)) * src_w / 2.0;
            c.cell_h = 2.0 / dst_h;
            c.cell_w = 2.0 / dst_w;
            g.cells.push_back(c);
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

VLUer::VLUer(const VLUerConfig& cfg) : cfg_(cfg) {
    require(cfg.in_channels == 16, "VLUer input channels must be 16");
    require(!cfg.inr_hidden.empty(), "VLUer needs at least one hidden width");
    Rng rng(cfg.seed);

    enc_in_ = Linear(cfg.in_channels, cfg.encoder_width, rng);
    for (int i = 0; i < cfg.encoder_blocks; ++i) {
        AttnBlock b;
        b.ln1 = LayerNorm(cfg.encoder_width);
        b.ln2 = LayerNorm(cfg.encoder_width);
        b.attn = MultiheadAttention(cfg.encoder_width, cfg.encoder_heads, rng);
        b.ffn = Ffn(cfg.encoder_width, 2 * cfg.encoder_width, rng);
        b.temporal = (i % 2) == 1;  // alternate spatial / temporal-pair mixing
        b.pair_offset = (i / 2) % 2;
        enc_blocks_.push_back(std::move(b));
    }

    const int h0 = cfg.inr_hidden[0];
    inr_feat_ = Linear(cfg.encoder_width, h0, rng);
    inr_pos_gate_ = Linear(cfg.encoder_width, h0, rng);
    inr_coord_ = Linear(4, h0, rng);
    for (size_t i = 1; i < cfg.inr_hidden.size(); ++i)
        inr_layers_.emplace_back(cfg.inr_hidden[i - 1], cfg.inr_hidden[i], rng);
    inr_out_ = Linear(cfg.inr_hidden.back(), cfg.in_channels, rng);

    dec_in_ = Linear(cfg.in_channels, cfg.decoder_width, rng);
    for (int i = 0; i < cfg.decoder_blocks; ++i) {
        AttnBlock b;
        b.ln1 = LayerNorm(cfg.decoder_width);
        b.ln2 = LayerNorm(cfg.decoder_width);
        b.attn = MultiheadAttention(cfg.decoder_width, cfg.decoder_heads, rng);
        b.ffn = Ffn(cfg.decoder_width, 2 * cfg.decoder_width, rng);
        dec_blocks_.push_back(std::move(b));
    }
    dec_out_ = Linear::zero_init(cfg.decoder_width, cfg.in_channels);
}

Tensor VLUer::encode_features(GradTape* tape, const Tensor& z) {
    require(z.rank() == 4, "encode_features expects [t,h,w,C]");
    require(z.extent(3) == cfg_.in_channels, "encode_features: latent channels must be 16");
    const int t = z.extent(0), h = z.extent(1), w = z.extent(2);
    const int d = cfg_.encoder_width;

    Tensor x = enc_in_.forward(tape, reshape(z, {t, h * w, cfg_.in_channels}));
    Tensor pos = positional_embedding_3d(t, h, w, d);
    x = add(x, reshape(pos, {t, h * w, d}));

    for (auto& b : enc_blocks_) {
        if (!b.temporal) {
            x = add(x, b.attn.forward(tape, b.ln1.forward(tape, x)));
        } else {
            // mutual attention over consecutive frame pairs; a lone frame
            // degrades to self-attention
            std::vector<Tensor> groups;
            int f = 0;
            if (b.pair_offset == 1 && t > 1) {
                Tensor first = slice_axis0(x, 0, 1);
                groups.push_back(add(first, b.attn.forward(tape, b.ln1.forward(tape, first))));
                f = 1;
            }
            while (f < t) {
                const int len = std::min(2, t - f);
                Tensor g = slice_axis0(x, f, f + len);
                Tensor joint = reshape(g, {1, len * h * w, d});
                Tensor a = b.attn.forward(tape, b.ln1.forward(tape, joint));
                groups.push_back(add(g, reshape(a, {len, h * w, d})));
                f += len;
            }
            x = concat_axis0(groups);
        }
        x = add(x, b.ffn.forward(tape, b.ln2.forward(tape, x)));
    }
    // no final normalization: the residual stream keeps a linear copy of the
    // input content, which the upsampler needs for absolute reconstruction
    return reshape(x, {t, h, w, d});
}

Tensor VLUer::inr_upsample(GradTape* tape, const Tensor& features, int out_h, int out_w) {
    require(features.rank() == 4, "inr_upsample expects [t,h,w,C']");
    require(features.extent(3) == cfg_.encoder_width, "inr_upsample: feature width mismatch");
    const int t = features.extent(0), h = features.extent(1), w = features.extent(2);
    require(out_h >= h && out_w >= w, "inr_upsample: target must not downscale");

    const CoordinateGrid grid = make_coordinate_grid(h, w, out_h, out_w);
    const int q = out_h * out_w;

    // queries share one coordinate table across frames
    Tensor coords({q, 4});
    for (int i = 0; i < q; ++i) {
        const CoordinateCell& c = grid.cells[static_cast<size_t>(i)];
        coords.data()[i * 4 + 0] = c.off_y;
        coords.data()[i * 4 + 1] = c.off_x;
        coords.data()[i * 4 + 2] = c.cell_h;
        coords.data()[i * 4 + 3] = c.cell_w;
    }
    Tensor coord_emb = inr_coord_.forward(tape, coords);  // [q, h0]

    Tensor flat = reshape(features, {t * h * w, cfg_.encoder_width});
    Tensor feat = inr_feat_.forward(tape, flat);      // [t*h*w, h0]
    Tensor gate = inr_pos_gate_.forward(tape, flat);  // [t*h*w, h0]

    std::vector<int> gather_idx(static_cast<size_t>(t) * q);
    std::vector<int> coord_idx(static_cast<size_t>(t) * q);
    for (int f = 0; f < t; ++f)
        for (int i = 0; i < q; ++i) {
            const CoordinateCell& c = grid.cells[static_cast<size_t>(i)];
            gather_idx[static_cast<size_t>(f) * q + i] = f * h * w + c.src_row * w + c.src_col;
            coord_idx[static_cast<size_t>(f) * q + i] = i;
        }
    Tensor nearest = take_rows(feat, gather_idx);          // [t*q, h0]
    Tensor near_gate = take_rows(gate, gather_idx);        // [t*q, h0]
    Tensor coord_tiled = take_rows(coord_emb, coord_idx);  // [t*q, h0]

    // content plus a feature-gated coordinate term; both paths are linear in
    // the features, so zero features annihilate the output at any scale
    Tensor x = gelu(add(nearest, mul(near_gate, coord_tiled)));
    for (auto& layer : inr_layers_) x = gelu(layer.forward(tape, x));
    Tensor out = inr_out_.forward(tape, x);
    return reshape(out, {t, out_h, out_w, cfg_.in_channels});
}

Tensor VLUer::decode_refine(GradTape* tape, const Tensor& coarse) {
    require(coarse.rank() == 4 && coarse.extent(3) == cfg_.in_channels,
            "decode_refine expects [t,H,W,16]");
    const int t = coarse.extent(0), H = coarse.extent(1), W = coarse.extent(2);
    const int p = H * W, d = cfg_.decoder_width;

    // positions become the batch; attention runs over the temporal axis
    Tensor x = reshape(permute_0213(reshape(coarse, {1, t, p, cfg_.in_channels})),
                       {p, t, cfg_.in_channels});
    x = dec_in_.forward(tape, x);

    Tensor tpos({t, d});
    for (int f = 0; f < t; ++f) {
        Tensor e = sinusoidal_embedding(t > 1 ? static_cast<double>(f) / (t - 1) : 0.0, d);
        std::copy_n(e.data(), d, tpos.data() + static_cast<int64_t>(f) * d);
    }
    Tensor tpos_tiled({p, t, d});
    for (int i = 0; i < p; ++i)
        std::copy_n(tpos.data(), static_cast<size_t>(t) * d,
                    tpos_tiled.data() + static_cast<int64_t>(i) * t * d);
    x = add(x, tpos_tiled);

    for (auto& b : dec_blocks_) {
        x = add(x, b.attn.forward(tape, b.ln1.forward(tape, x)));
        x = add(x, b.ffn.forward(tape, b.ln2.forward(tape, x)));
    }
    Tensor r = dec_out_.forward(tape, x);  // zero at init -> identity refinement
    r = reshape(permute_0213(reshape(r, {1, p, t, cfg_.in_channels})), {t, H, W, cfg_.in_channels});
    return add(coarse, r);
}

Tensor VLUer::upsample(GradTape* tape, const Tensor& z, int out_h, int out_w) {
    return decode_refine(tape, inr_upsample(tape, encode_features(tape, z), out_h, out_w));
}

NamedParams VLUer::params() {
    NamedParams out;
    add_params(out, "enc_in", enc_in_.params());
    for (size_t i = 0; i < enc_blocks_.size(); ++i) {
        const std::string p = "enc.blocks." + std::to_string(i);
        add_params(out, p + ".ln1", enc_blocks_[i].ln1.params());
        add_params(out, p + ".ln2", enc_blocks_[i].ln2.params());
        add_params(out, p + ".attn", enc_blocks_[i].attn.params());
        add_params(out, p + ".ffn", enc_blocks_[i].ffn.params());
    }
    add_params(out, "inr.feat", inr_feat_.params());
    add_params(out, "inr.pos_gate", inr_pos_gate_.params());
    add_params(out, "inr.coord", inr_coord_.params());
    for (size_t i = 0; i < inr_layers_.size(); ++i)
        add_params(out, "inr.layers." + std::to_string(i), inr_layers_[i].params());
    add_params(out, "inr.out", inr_out_.params());
    add_params(out, "dec_in", dec_in_.params());
    for (size_t i = 0; i < dec_blocks_.size(); ++i) {
        const std::string p = "dec.blocks." + std::to_string(i);
        add_params(out, p + ".ln1", dec_blocks_[i].ln1.params());
        add_params(out, p + ".ln2", dec_blocks_[i].ln2.params());
        add_params(out, p + ".attn", dec_blocks_[i].attn.params());
        add_params(out, p + ".ffn", dec_blocks_[i].ffn.params());
    }
    add_params(out, "dec_out", dec_out_.params());
    return out;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

Tensor loss_latent(const Tensor& z_sr, const Tensor& z_hr) {
    require(z_sr.same_shape(z_hr), "loss_latent: shape mismatch");
    return l1_loss(z_sr, z_hr);
}

Tensor loss_frame(const Tensor& x_sr, const Tensor& x_hr) {
    require(x_sr.same_shape(x_hr), "loss_frame: shape mismatch");
    const int n = x_sr.extent(0);
    require(n >= 2, "loss_frame: needs at least 2 frames");
    Tensor dsr = sub(slice_axis0(x_sr, 1, n), slice_axis0(x_sr, 0, n - 1));
    Tensor dhr = sub(slice_axis0(x_hr, 1, n), slice_axis0(x_hr, 0, n - 1));
    return l1_loss(dsr, dhr);
}

Tensor loss_pixel(const Tensor& x_sr, const Tensor& x_hr) {
    require(x_sr.same_shape(x_hr), "loss_pixel: shape mismatch");
    require(x_sr.extent(0) >= 2, "loss_pixel: needs at least 2 frames");
    return add(l1_loss(x_sr, x_hr), loss_frame(x_sr, x_hr));
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

Tensor baseline_latent_interp(const Tensor& z, int out_h, int out_w) {
    return data::resize_bilinear(z, out_h, out_w);
}

Tensor baseline_latent_interp(const Tensor& z, double scale) {
    return baseline_latent_interp(z, static_cast<int>(std::lround(z.extent(1) * scale)),
                                  static_cast<int>(std::lround(z.extent(2) * scale)));
}

Tensor baseline_rgb_interp(const Tensor& z, const data::Codec& codec, int out_h, int out_w) {
    Tensor video = codec.decode_tensor(nullptr, z);
    Tensor up = data::resize_bicubic(video, out_h * data::Codec::kPatch, out_w * data::Codec::kPatch);
    return codec.encode_tensor(nullptr, up);
}

Tensor baseline_rgb_interp(const Tensor& z, const data::Codec& codec, double scale) {
    return baseline_rgb_interp(z, codec, static_cast<int>(std::lround(z.extent(1) * scale)),
                               static_cast<int>(std::lround(z.extent(2) * scale)));
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

// Seeded spatial crop applied to both clips of a pair; keeps the pixel loss
// affordable on larger frames.
Tensor crop_video(const Tensor& x, int y0, int x0, int size) {
    const int t = x.extent(0), H = x.extent(1), W = x.extent(2), c = x.extent(3);
    std::vector<int64_t> idx;
    idx.reserve(static_cast<size_t>(t) * size * size * c);
    for (int f = 0; f < t; ++f)
        for (int y = 0; y < size; ++y)
            for (int xx = 0; xx < size; ++xx)
                for (int ch = 0; ch < c; ++ch)
                    idx.push_back(((static_cast<int64_t>(f) * H + (y0 + y)) * W + (x0 + xx)) * c + ch);
    return gather_elements(x, idx, {t, size, size, c});
}

}  // namespace

VLUerTrainStats train_vluer(VLUer& model, const std::vector<data::LatentPair>& pairs,
                            const data::Codec& codec, const VLUerTrainConfig& cfg) {
    require(!pairs.empty(), "train_vluer: no training pairs");
    Rng rng(cfg.seed);
    std::vector<Parameter*> params;
    for (auto& [name, p] : model.params()) params.push_back(p);
    Adam opt(params, AdamConfig{cfg.base_lr, 0.9, 0.999, 1e-8});

    // Pixel supervision targets the decoder-reachable reconstruction of the
    // HR latent. L1 against content outside the codec's range cannot be
    // reduced and only biases the in-range fit through its gradient signs.
    std::vector<Tensor> pixel_targets;
    if (cfg.weights.pixel > 0.0) {
        pixel_targets.reserve(pairs.size());
        for (const auto& p : pairs) pixel_targets.push_back(codec.decode_tensor(nullptr, p.hr.t));
    }

    VLUerTrainStats stats;
    for (int iter = 0; iter < cfg.iterations; ++iter) {
        opt.set_lr(cosine_restart_lr(cfg.base_lr, cfg.min_lr, cfg.lr_period, iter));
        GradTape tape;
        Tensor total;
        for (int b = 0; b < cfg.batch; ++b) {
            const size_t pick = static_cast<size_t>(rng.uniform_int(static_cast<int>(pairs.size())));
            const auto& pair = pairs[pick];
            const int H = pair.hr.height(), W = pair.hr.width();
            Tensor z_sr = model.upsample(&tape, pair.lr.t, H, W);
            Tensor loss = mul_scalar(loss_latent(z_sr, pair.hr.t), cfg.weights.latent);
            if (cfg.weights.pixel > 0.0) {
                Tensor x_sr = codec.decode_tensor(&tape, z_sr);
                Tensor x_hr = pixel_targets[pick];
                if (cfg.crop > 0 && cfg.crop < x_hr.extent(1) && cfg.crop < x_hr.extent(2)) {
                    const int y0 = rng.uniform_int(x_hr.extent(1) - cfg.crop + 1);
                    const int x0 = rng.uniform_int(x_hr.extent(2) - cfg.crop + 1);
                    x_sr = crop_video(x_sr, y0, x0, cfg.crop);
                    x_hr = crop_video(x_hr, y0, x0, cfg.crop);
                }
                Tensor pix = l1_loss(x_sr, x_hr);
                if (cfg.frame_term) pix = add(pix, loss_frame(x_sr, x_hr));
                loss = add(loss, mul_scalar(pix, cfg.weights.pixel));
            }
            total = b == 0 ? loss : add(total, loss);
        }
        total = mul_scalar(total, 1.0 / cfg.batch);
        const double loss_val = total.item();
        if (!std::isfinite(loss_val))
            throw TrainingDiverged("vluer training diverged at iter " + std::to_string(iter));
        stats.losses.push_back(loss_val);
        tape.backward(total);
        opt.step(tape);
    }
    return stats;
}

}  // namespace luve::vluer
