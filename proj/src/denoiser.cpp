#include "crowddiff/denoiser.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "crowddiff/kernels.hpp"
#include "crowddiff/rng.hpp"

namespace crowddiff {

using nlohmann::json;

void DenoiserConfig::validate() const {
    if (base_channels < 1) throw std::invalid_argument("denoiser: base_channels must be >= 1");
    if (channel_multipliers.empty())
        throw std::invalid_argument("denoiser: channel_multipliers empty");
    for (int m : channel_multipliers)
        if (m < 1) throw std::invalid_argument("denoiser: channel multiplier must be >= 1");
    for (int d : attention_depths)
        if (d < 0 || d >= depths())
            throw std::invalid_argument("denoiser: attention depth out of range");
    if (num_res_blocks_per_depth < 1)
        throw std::invalid_argument("denoiser: num_res_blocks_per_depth must be >= 1");
    if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
        throw std::invalid_argument("denoiser: time_embed_dim must be even and >= 2");
    if (in_channels < 1 || out_channels < 1)
        throw std::invalid_argument("denoiser: channel counts must be >= 1");
}

int DenoiserConfig::pooled_width() const {
    int w = 0;
    for (int m : channel_multipliers) w += base_channels * m;
    return w;
}

std::string DenoiserConfig::to_json() const {
    json j{{"base_channels", base_channels},
           {"channel_multipliers", channel_multipliers},
           {"attention_depths", attention_depths},
           {"num_res_blocks_per_depth", num_res_blocks_per_depth},
           {"time_embed_dim", time_embed_dim},
           {"in_channels", in_channels},
           {"out_channels", out_channels}};
    return j.dump();
}

DenoiserConfig DenoiserConfig::from_json(const std::string& text) {
    const json j = json::parse(text);
    DenoiserConfig c;
    c.base_channels = j.at("base_channels").get<int>();
    c.channel_multipliers = j.at("channel_multipliers").get<std::vector<int>>();
    c.attention_depths = j.at("attention_depths").get<std::vector<int>>();
    c.num_res_blocks_per_depth = j.at("num_res_blocks_per_depth").get<int>();
    c.time_embed_dim = j.at("time_embed_dim").get<int>();
    c.in_channels = j.at("in_channels").get<int>();
    c.out_channels = j.at("out_channels").get<int>();
    c.validate();
    return c;
}

namespace detail {

void ResBlock::build(const std::string& name, int in_c, int out_c, int time_dim, uint64_t seed) {
    in_ch = in_c;
    out_ch = out_c;
    gn1.build(name + ".gn1", in_c);
    gn2.build(name + ".gn2", out_c);
    conv1.build(name + ".conv1", in_c, out_c, 3, seed);
    conv2.build(name + ".conv2", out_c, out_c, 3, seed, /*zero_init=*/true);
    time_proj.build(name + ".time", time_dim, out_c, seed);
    has_skip = in_c != out_c;
    if (has_skip) skip.build(name + ".skip", in_c, out_c, 1, seed);
}

Tensor ResBlock::forward(const Tensor& x, const Tensor& temb, bool train) {
    Tensor sk = has_skip ? skip.forward(x, train) : x;
    Tensor h = gn1.forward(x, train);
    h = act1.forward(h, train);
    h = conv1.forward(h, train);
    Tensor tq = act_t.forward(temb, train);
    Tensor tp = time_proj.forward(tq, train);  // [B, out_ch]
    const int64_t hw = h.dim(2) * h.dim(3);
    for (int64_t b = 0; b < h.dim(0); ++b)
        for (int64_t c = 0; c < h.dim(1); ++c) {
            const float add = tp.ptr()[b * out_ch + c];
            float* row = h.ptr() + (b * h.dim(1) + c) * hw;
            for (int64_t i = 0; i < hw; ++i) row[i] += add;
        }
    Tensor h2 = gn2.forward(h, train);
    h2 = act2.forward(h2, train);
    h2 = conv2.forward(h2, train);
    for (int64_t i = 0; i < h2.numel(); ++i) h2[i] += sk[i];
    return h2;
}

Tensor ResBlock::backward(const Tensor& dy, Tensor& dtemb_accum) {
    Tensor d = conv2.backward(dy);
    d = act2.backward(d);
    d = gn2.backward(d);
    // time-projection gradient: spatial sum per (batch, channel)
    Tensor dtp({d.dim(0), d.dim(1)});
    const int64_t hw = d.dim(2) * d.dim(3);
    for (int64_t b = 0; b < d.dim(0); ++b)
        for (int64_t c = 0; c < d.dim(1); ++c) {
            const float* row = d.ptr() + (b * d.dim(1) + c) * hw;
            double acc = 0.0;
#pragma omp simd reduction(+ : acc)
            for (int64_t i = 0; i < hw; ++i) acc += row[i];
            dtp.ptr()[b * d.dim(1) + c] = static_cast<float>(acc);
        }
    Tensor dtq = time_proj.backward(dtp);
    dtq = act_t.backward(dtq);
    for (int64_t i = 0; i < dtemb_accum.numel(); ++i) dtemb_accum[i] += dtq[i];
    d = conv1.backward(d);
    d = act1.backward(d);
    d = gn1.backward(d);
    if (has_skip) {
        Tensor dsk = skip.backward(dy);
        for (int64_t i = 0; i < d.numel(); ++i) d[i] += dsk[i];
    } else {
        for (int64_t i = 0; i < d.numel(); ++i) d[i] += dy[i];
    }
    return d;
}

void ResBlock::collect(std::vector<nn::Param*>& out) {
    gn1.collect(out);
    gn2.collect(out);
    conv1.collect(out);
    conv2.collect(out);
    time_proj.collect(out);
    if (has_skip) skip.collect(out);
}

void AttentionBlock::build(const std::string& name, int ch, uint64_t seed) {
    channels = ch;
    gn.build(name + ".gn", ch);
    qkv.build(name + ".qkv", ch, 3 * ch, 1, seed);
    proj.build(name + ".proj", ch, ch, 1, seed, /*zero_init=*/true);
}

Tensor AttentionBlock::forward(const Tensor& x, bool train) {
    const int B = static_cast<int>(x.dim(0)), C = channels;
    const int N = static_cast<int>(x.dim(2) * x.dim(3));
    Tensor n = gn.forward(x, train);
    Tensor qkv_out = qkv.forward(n, train);  // [B,3C,H,W]
    Tensor q({x.dim(0), C, x.dim(2), x.dim(3)}), k(q.shape), v(q.shape);
    const int64_t cn = static_cast<int64_t>(C) * N;
    for (int64_t b = 0; b < B; ++b) {
        const float* src = qkv_out.ptr() + b * 3 * cn;
        std::memcpy(q.ptr() + b * cn, src, sizeof(float) * cn);
        std::memcpy(k.ptr() + b * cn, src + cn, sizeof(float) * cn);
        std::memcpy(v.ptr() + b * cn, src + 2 * cn, sizeof(float) * cn);
    }
    Tensor att(q.shape);
    Tensor attn_w({x.dim(0), N, N});
    kern::attention_forward(att.ptr(), attn_w.ptr(), q.ptr(), k.ptr(), v.ptr(), B, C, N);
    if (train) {
        q_cache = std::move(q);
        k_cache = std::move(k);
        v_cache = std::move(v);
        attn_cache = std::move(attn_w);
    }
    Tensor y = proj.forward(att, train);
    for (int64_t i = 0; i < y.numel(); ++i) y[i] += x[i];
    return y;
}

Tensor AttentionBlock::backward(const Tensor& dy) {
    const int B = static_cast<int>(dy.dim(0)), C = channels;
    const int N = static_cast<int>(dy.dim(2) * dy.dim(3));
    Tensor datt = proj.backward(dy);
    Tensor dq(datt.shape), dk(datt.shape), dv(datt.shape);
    kern::attention_backward(dq.ptr(), dk.ptr(), dv.ptr(), datt.ptr(), attn_cache.ptr(),
                             q_cache.ptr(), k_cache.ptr(), v_cache.ptr(), B, C, N);
    Tensor dqkv({dy.dim(0), 3 * channels, dy.dim(2), dy.dim(3)});
    const int64_t cn = static_cast<int64_t>(C) * N;
    for (int64_t b = 0; b < B; ++b) {
        float* dst = dqkv.ptr() + b * 3 * cn;
        std::memcpy(dst, dq.ptr() + b * cn, sizeof(float) * cn);
        std::memcpy(dst + cn, dk.ptr() + b * cn, sizeof(float) * cn);
        std::memcpy(dst + 2 * cn, dv.ptr() + b * cn, sizeof(float) * cn);
    }
    Tensor dn = qkv.backward(dqkv);
    Tensor dx = gn.backward(dn);
    for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += dy[i];
    return dx;
}

void AttentionBlock::collect(std::vector<nn::Param*>& out) {
    gn.collect(out);
    qkv.collect(out);
    proj.collect(out);
}

}  // namespace detail

void CountBranch::build(int pooled_width, uint64_t seed) {
    in_width = pooled_width;
    l1.build("count.l1", pooled_width, 256, seed);
    l2.build("count.l2", 256, 64, seed);
    l3.build("count.l3", 64, 1, seed);
    // keep the final ReLU active at init so count gradients flow from step 1
    l3.b.value.fill(1.0f);
}

std::vector<double> CountBranch::forward(const Tensor& pooled, bool train) {
    if (pooled.ndim() != 2 || pooled.dim(1) != in_width)
        throw std::invalid_argument("count branch: pooled width mismatch, expected " +
                                    std::to_string(in_width) + ", got " + pooled.shape_str());
    Tensor h = r1.forward(l1.forward(pooled, train), train);
    h = r2.forward(l2.forward(h, train), train);
    h = r3.forward(l3.forward(h, train), train);
    std::vector<double> out(static_cast<size_t>(h.dim(0)));
    for (int64_t b = 0; b < h.dim(0); ++b) out[static_cast<size_t>(b)] = h[b];
    return out;
}

Tensor CountBranch::backward(const std::vector<double>& dcount) {
    Tensor dy({static_cast<int64_t>(dcount.size()), 1});
    for (size_t i = 0; i < dcount.size(); ++i)
        dy[static_cast<int64_t>(i)] = static_cast<float>(dcount[i]);
    Tensor d = r3.backward(dy);
    d = l3.backward(d);
    d = r2.backward(d);
    d = l2.backward(d);
    d = r1.backward(d);
    return l1.backward(d);
}

void CountBranch::collect(std::vector<nn::Param*>& out) {
    l1.collect(out);
    l2.collect(out);
    l3.collect(out);
}

UNet::UNet(const DenoiserConfig& config, uint64_t init_seed) : config_(config) {
    config_.validate();
    const int L = config_.depths();
    const int R = config_.num_res_blocks_per_depth;
    const int Dt = config_.time_embed_dim;
    const auto attn_at = [&](int depth) {
        for (int d : config_.attention_depths)
            if (d == depth) return true;
        return false;
    };
    const auto ch_at = [&](int depth) {
        return config_.base_channels * config_.channel_multipliers[static_cast<size_t>(depth)];
    };

    stem_.build("stem", config_.in_channels, ch_at(0), 3, init_seed);
    time_mlp1_.build("time.mlp1", Dt, Dt, init_seed);
    time_mlp2_.build("time.mlp2", Dt, Dt, init_seed);

    std::vector<int> skip_ch;
    skip_ch.push_back(ch_at(0));
    int ch = ch_at(0);
    for (int i = 0; i < L; ++i) {
        for (int r = 0; r < R; ++r) {
            detail::ResBlock blk;
            blk.build("enc.d" + std::to_string(i) + ".b" + std::to_string(r), ch, ch_at(i), Dt,
                      init_seed);
            enc_blocks_.push_back(std::move(blk));
            ch = ch_at(i);
            if (attn_at(i)) {
                detail::AttentionBlock ab;
                ab.build("enc.d" + std::to_string(i) + ".a" + std::to_string(r), ch, init_seed);
                enc_attn_.push_back(std::move(ab));
            }
            skip_ch.push_back(ch);
        }
        if (i < L - 1) skip_ch.push_back(ch);
    }
    mid_.resize(2);
    mid_[0].build("mid.b0", ch, ch, Dt, init_seed);
    mid_attn_.build("mid.attn", ch, init_seed);
    mid_[1].build("mid.b1", ch, ch, Dt, init_seed);

    for (int i = L - 1; i >= 0; --i) {
        for (int r = 0; r <= R; ++r) {
            const int s = skip_ch.back();
            skip_ch.pop_back();
            detail::ResBlock blk;
            blk.build("dec.d" + std::to_string(i) + ".b" + std::to_string(r), ch + s, ch_at(i),
                      Dt, init_seed);
            dec_blocks_.push_back(std::move(blk));
            dec_h_channels_.push_back(ch);
            ch = ch_at(i);
            if (attn_at(i)) {
                detail::AttentionBlock ab;
                ab.build("dec.d" + std::to_string(i) + ".a" + std::to_string(r), ch, init_seed);
                dec_attn_.push_back(std::move(ab));
            }
        }
        if (i > 0) {
            nn::Conv2d up;
            up.build("up.d" + std::to_string(i), ch, ch, 3, init_seed);
            up_convs_.push_back(std::move(up));
        }
    }
    if (!skip_ch.empty()) throw std::logic_error("unet: unconsumed skip connections");

    out_norm_.build("out.gn", ch_at(0));
    out_conv_.build("out.conv", ch_at(0), config_.out_channels, 3, init_seed,
                    /*zero_init=*/true);
}

Tensor UNet::time_embedding(const std::vector<int>& t, bool train) {
    const int B = static_cast<int>(t.size());
    const int Dt = config_.time_embed_dim;
    const int half = Dt / 2;
    Tensor emb({B, Dt});
    for (int b = 0; b < B; ++b)
        for (int j = 0; j < half; ++j) {
            const double freq = std::exp(-std::log(10000.0) * j / half);
            const double arg = static_cast<double>(t[static_cast<size_t>(b)]) * freq;
            emb.ptr()[b * Dt + j] = static_cast<float>(std::sin(arg));
            emb.ptr()[b * Dt + half + j] = static_cast<float>(std::cos(arg));
        }
    Tensor h = time_mlp1_.forward(emb, train);
    h = time_act_.forward(h, train);
    return time_mlp2_.forward(h, train);
}

PredictOutput UNet::predict(const Tensor& y, const Tensor& xt, const std::vector<int>& t,
                            bool train) {
    if (y.ndim() != 4 || xt.ndim() != 4 || y.dim(0) != xt.dim(0) || y.dim(2) != xt.dim(2) ||
        y.dim(3) != xt.dim(3))
        throw std::invalid_argument("unet: y and xt spatially misaligned: " + y.shape_str() +
                                    " vs " + xt.shape_str());
    if (y.dim(1) + xt.dim(1) != config_.in_channels)
        throw std::invalid_argument("unet: channel mismatch with config");
    if (static_cast<int64_t>(t.size()) != y.dim(0))
        throw std::invalid_argument("unet: timestep batch size mismatch");
    for (int ti : t)
        if (ti < 1) throw std::out_of_range("unet: timestep must be >= 1");
    const int factor = config_.downsample_factor();
    if (y.dim(2) % factor != 0 || y.dim(3) % factor != 0)
        throw std::invalid_argument("unet: spatial size must be divisible by " +
                                    std::to_string(factor));

    const int L = config_.depths();
    const int R = config_.num_res_blocks_per_depth;
    const auto attn_at = [&](int depth) {
        for (int d : config_.attention_depths)
            if (d == depth) return true;
        return false;
    };

    Tensor temb = time_embedding(t, train);
    if (train) temb_cache_ = temb;

    skips_.clear();
    Tensor h = stem_.forward(nn::concat_channels(y, xt), train);
    skips_.push_back(h);

    size_t ebi = 0, eai = 0;
    for (int i = 0; i < L; ++i) {
        for (int r = 0; r < R; ++r) {
            h = enc_blocks_[ebi++].forward(h, temb, train);
            if (attn_at(i)) h = enc_attn_[eai++].forward(h, train);
            skips_.push_back(h);
        }
        if (i < L - 1) {
            Tensor pooled({h.dim(0), h.dim(1), h.dim(2) / 2, h.dim(3) / 2});
            kern::avgpool2_forward(pooled.ptr(), h.ptr(), static_cast<int>(h.dim(0)),
                                   static_cast<int>(h.dim(1)), static_cast<int>(h.dim(2)),
                                   static_cast<int>(h.dim(3)));
            h = std::move(pooled);
            skips_.push_back(h);
        }
    }

    h = mid_[0].forward(h, temb, train);
    h = mid_attn_.forward(h, train);
    h = mid_[1].forward(h, temb, train);

    FeatureBundle bundle;
    size_t dbi = 0, dai = 0, ui = 0;
    for (int i = L - 1; i >= 0; --i) {
        for (int r = 0; r <= R; ++r) {
            Tensor s = std::move(skips_.back());
            skips_.pop_back();
            h = dec_blocks_[dbi++].forward(nn::concat_channels(h, s), temb, train);
            if (attn_at(i)) h = dec_attn_[dai++].forward(h, train);
        }
        bundle.per_level.push_back(h);
        if (i > 0) {
            Tensor up({h.dim(0), h.dim(1), h.dim(2) * 2, h.dim(3) * 2});
            kern::upsample2_forward(up.ptr(), h.ptr(), static_cast<int>(h.dim(0)),
                                    static_cast<int>(h.dim(1)), static_cast<int>(h.dim(2)),
                                    static_cast<int>(h.dim(3)));
            h = up_convs_[ui++].forward(up, train);
        }
    }
    skips_.clear();

    Tensor o = out_norm_.forward(h, train);
    o = out_act_.forward(o, train);
    o = out_conv_.forward(o, train);

    PredictOutput out;
    nn::split_channels(o, 1, out.eps, out.var_interp);

    // Pooled feature vector: concatenated per-level global averages.
    const int64_t B = y.dim(0);
    bundle.pooled = Tensor({B, config_.pooled_width()});
    int64_t off = 0;
    for (const Tensor& f : bundle.per_level) {
        Tensor g({B, f.dim(1)});
        kern::gap_forward(g.ptr(), f.ptr(), static_cast<int>(B), static_cast<int>(f.dim(1)),
                          f.dim(2) * f.dim(3));
        for (int64_t b = 0; b < B; ++b)
            std::memcpy(bundle.pooled.ptr() + b * config_.pooled_width() + off,
                        g.ptr() + b * f.dim(1), sizeof(float) * static_cast<size_t>(f.dim(1)));
        off += f.dim(1);
    }
    if (train) {
        tap_shapes_.clear();
        for (const Tensor& f : bundle.per_level) tap_shapes_.push_back(f.shape);
    }
    out.features = std::move(bundle);
    trained_forward_ = train;
    return out;
}

void UNet::backward(const Tensor& d_eps, const Tensor& d_var,
                    const std::vector<Tensor>& d_per_level) {
    if (!trained_forward_) throw std::logic_error("unet: backward without train-mode forward");
    const int L = config_.depths();
    const int R = config_.num_res_blocks_per_depth;
    const auto attn_at = [&](int depth) {
        for (int d : config_.attention_depths)
            if (d == depth) return true;
        return false;
    };

    Tensor dtemb(temb_cache_.shape);

    // Out head.
    Tensor dout({d_eps.dim(0), 2, d_eps.dim(2), d_eps.dim(3)});
    const int64_t hw = d_eps.dim(2) * d_eps.dim(3);
    for (int64_t b = 0; b < d_eps.dim(0); ++b) {
        std::memcpy(dout.ptr() + b * 2 * hw, d_eps.ptr() + b * hw,
                    sizeof(float) * static_cast<size_t>(hw));
        std::memcpy(dout.ptr() + b * 2 * hw + hw, d_var.ptr() + b * hw,
                    sizeof(float) * static_cast<size_t>(hw));
    }
    Tensor d = out_conv_.backward(dout);
    d = out_act_.backward(d);
    d = out_norm_.backward(d);

    // Decoder in reverse (shallowest level first); forward appended blocks
    // deepest-first, so the stored indices run backwards here.
    const size_t S = 1 + static_cast<size_t>(L) * R + static_cast<size_t>(L - 1);
    std::vector<Tensor> skip_grads(S);
    size_t dbi = dec_blocks_.size(), dai = dec_attn_.size(), ui = up_convs_.size();
    for (int i = 0; i < L; ++i) {
        if (i > 0) {
            Tensor dup = up_convs_[--ui].backward(d);
            Tensor dsmall({dup.dim(0), dup.dim(1), dup.dim(2) / 2, dup.dim(3) / 2});
            kern::upsample2_backward(dsmall.ptr(), dup.ptr(), static_cast<int>(dsmall.dim(0)),
                                     static_cast<int>(dsmall.dim(1)),
                                     static_cast<int>(dsmall.dim(2)),
                                     static_cast<int>(dsmall.dim(3)));
            d = std::move(dsmall);
        }
        // Count-branch tap; per_level features are ordered deepest-first.
        if (!d_per_level.empty()) {
            const Tensor& df = d_per_level[static_cast<size_t>(L - 1 - i)];
            for (int64_t j = 0; j < d.numel(); ++j) d[j] += df[j];
        }
        for (int r = R; r >= 0; --r) {
            if (attn_at(i)) d = dec_attn_[--dai].backward(d);
            --dbi;
            Tensor dcat = dec_blocks_[dbi].backward(d, dtemb);
            Tensor dh, dskip;
            nn::split_channels(dcat, dec_h_channels_[dbi], dh, dskip);
            // dec block dbi popped the skip that was pushed (S-1-dbi)th.
            skip_grads[S - 1 - dbi] = std::move(dskip);
            d = std::move(dh);
        }
    }

    // Middle.
    d = mid_[1].backward(d, dtemb);
    d = mid_attn_.backward(d);
    d = mid_[0].backward(d, dtemb);

    // Encoder in reverse; push_idx walks the forward push order back to front.
    const auto add_skip_grad = [&](size_t idx) {
        const Tensor& g = skip_grads[idx];
        for (int64_t j = 0; j < d.numel(); ++j) d[j] += g[j];
    };
    size_t ebi = enc_blocks_.size(), eai = enc_attn_.size();
    size_t push_idx = S;
    for (int i = L - 1; i >= 0; --i) {
        if (i < L - 1) {
            add_skip_grad(--push_idx);
            Tensor dbig({d.dim(0), d.dim(1), d.dim(2) * 2, d.dim(3) * 2});
            kern::avgpool2_backward(dbig.ptr(), d.ptr(), static_cast<int>(d.dim(0)),
                                    static_cast<int>(d.dim(1)), static_cast<int>(dbig.dim(2)),
                                    static_cast<int>(dbig.dim(3)));
            d = std::move(dbig);
        }
        for (int r = R - 1; r >= 0; --r) {
            add_skip_grad(--push_idx);
            if (attn_at(i)) d = enc_attn_[--eai].backward(d);
            d = enc_blocks_[--ebi].backward(d, dtemb);
        }
    }
    add_skip_grad(--push_idx);
    stem_.backward(d);  // input gradients discarded

    // Time-embedding MLP.
    Tensor dt2 = time_mlp2_.backward(dtemb);
    dt2 = time_act_.backward(dt2);
    time_mlp1_.backward(dt2);

    trained_forward_ = false;
}

std::vector<nn::Param*> UNet::parameters() {
    std::vector<nn::Param*> out;
    stem_.collect(out);
    time_mlp1_.collect(out);
    time_mlp2_.collect(out);
    for (auto& b : enc_blocks_) b.collect(out);
    for (auto& a : enc_attn_) a.collect(out);
    for (auto& b : mid_) b.collect(out);
    mid_attn_.collect(out);
    for (auto& b : dec_blocks_) b.collect(out);
    for (auto& a : dec_attn_) a.collect(out);
    for (auto& u : up_convs_) u.collect(out);
    out_norm_.collect(out);
    out_conv_.collect(out);
    return out;
}

void UNet::zero_grad() {
    for (nn::Param* p : parameters()) p->grad.zero();
}

Denoiser::Denoiser(const DenoiserConfig& config, uint64_t init_seed, bool with_count_branch)
    : unet_(config, init_seed), with_branch_(with_count_branch) {
    if (with_branch_) branch_.build(config.pooled_width(), init_seed);
}

PredictOutput Denoiser::predict(const Tensor& y, const Tensor& xt, const std::vector<int>& t,
                                bool train) {
    PredictOutput out = unet_.predict(y, xt, t, train);
    if (train) {
        last_level_shapes_.clear();
        for (const Tensor& f : out.features.per_level) last_level_shapes_.push_back(f.shape);
    }
    return out;
}

std::vector<double> Denoiser::regress_count(const Tensor& pooled, bool train) {
    if (!with_branch_) throw std::logic_error("denoiser: count branch disabled");
    return branch_.forward(pooled, train);
}

void Denoiser::backward(const Tensor& d_eps, const Tensor& d_var,
                        const std::vector<double>& d_count) {
    std::vector<Tensor> d_levels;
    if (!d_count.empty()) {
        if (!with_branch_) throw std::logic_error("denoiser: count gradient without branch");
        Tensor d_pooled = branch_.backward(d_count);  // [B, P]
        const int64_t B = d_pooled.dim(0);
        int64_t off = 0;
        for (const auto& shape : last_level_shapes_) {
            const int64_t ch = shape[1];
            Tensor slice({B, ch});
            for (int64_t b = 0; b < B; ++b)
                std::memcpy(slice.ptr() + b * ch, d_pooled.ptr() + b * d_pooled.dim(1) + off,
                            sizeof(float) * static_cast<size_t>(ch));
            Tensor df(shape);
            kern::gap_backward(df.ptr(), slice.ptr(), static_cast<int>(B), static_cast<int>(ch),
                               shape[2] * shape[3]);
            d_levels.push_back(std::move(df));
            off += ch;
        }
    }
    unet_.backward(d_eps, d_var, d_levels);
}

Tensor Denoiser::predict_eps(const Tensor& y, const Tensor& xt, int t) {
    return unet_.predict(y, xt, std::vector<int>{t}, false).eps;
}

std::vector<nn::Param*> Denoiser::parameters() {
    std::vector<nn::Param*> out = unet_.parameters();
    if (with_branch_) branch_.collect(out);
    return out;
}

void Denoiser::zero_grad() {
    for (nn::Param* p : parameters()) p->grad.zero();
}

namespace {

void write_u32(std::ofstream& f, uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
uint32_t read_u32(std::ifstream& f) {
    uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

}  // namespace

void Denoiser::save_checkpoint(const std::string& path, const NoiseSchedule& schedule) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    f.write("CDCK", 4);
    write_u32(f, 1);  // version
    json header{{"denoiser", json::parse(unet_.config().to_json())},
                {"schedule", json::parse(schedule.config_json())},
                {"count_branch", with_branch_}};
    const std::string htext = header.dump();
    write_u32(f, static_cast<uint32_t>(htext.size()));
    f.write(htext.data(), static_cast<std::streamsize>(htext.size()));

    auto params = const_cast<Denoiser*>(this)->parameters();
    write_u32(f, static_cast<uint32_t>(params.size()));
    for (const nn::Param* p : params) {
        write_u32(f, static_cast<uint32_t>(p->name.size()));
        f.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        write_u32(f, static_cast<uint32_t>(p->value.shape.size()));
        for (int64_t dim : p->value.shape) {
            const auto d64 = static_cast<int64_t>(dim);
            f.write(reinterpret_cast<const char*>(&d64), sizeof(d64));
        }
        f.write(reinterpret_cast<const char*>(p->value.ptr()),
                static_cast<std::streamsize>(sizeof(float) * p->value.data.size()));
    }
    if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

DenoiserConfig Denoiser::peek_config(const std::string& path, std::string* schedule_json) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "CDCK", 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    const uint32_t version = read_u32(f);
    if (version != 1) throw std::runtime_error("checkpoint: unsupported version");
    const uint32_t hlen = read_u32(f);
    std::string htext(hlen, '\0');
    f.read(htext.data(), hlen);
    const json header = json::parse(htext);
    if (schedule_json) *schedule_json = header.at("schedule").dump();
    return DenoiserConfig::from_json(header.at("denoiser").dump());
}

void Denoiser::load_checkpoint(const std::string& path, const NoiseSchedule& expected_schedule) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "CDCK", 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    if (read_u32(f) != 1) throw std::runtime_error("checkpoint: unsupported version");
    const uint32_t hlen = read_u32(f);
    std::string htext(hlen, '\0');
    f.read(htext.data(), hlen);
    const json header = json::parse(htext);

    const DenoiserConfig stored = DenoiserConfig::from_json(header.at("denoiser").dump());
    if (!(stored == unet_.config()))
        throw std::runtime_error("checkpoint: denoiser config mismatch, refusing to load");
    const json sched = header.at("schedule");
    const json expect = json::parse(expected_schedule.config_json());
    if (sched != expect)
        throw std::runtime_error("checkpoint: schedule config mismatch, refusing to load");

    std::vector<nn::Param*> params = parameters();
    const uint32_t n = read_u32(f);
    const bool stored_branch = header.value("count_branch", true);
    if (!stored_branch && with_branch_)
        throw std::runtime_error("checkpoint: stored model has no count branch");
    size_t restored = 0;
    for (uint32_t i = 0; i < n; ++i) {
        const uint32_t nlen = read_u32(f);
        std::string name(nlen, '\0');
        f.read(name.data(), nlen);
        const uint32_t ndim = read_u32(f);
        std::vector<int64_t> shape(ndim);
        for (uint32_t d = 0; d < ndim; ++d)
            f.read(reinterpret_cast<char*>(&shape[d]), sizeof(int64_t));
        int64_t numel = 1;
        for (int64_t dd : shape) numel *= dd;
        std::vector<float> buf(static_cast<size_t>(numel));
        f.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(sizeof(float) * buf.size()));
        nn::Param* target = nullptr;
        for (nn::Param* p : params)
            if (p->name == name) {
                target = p;
                break;
            }
        if (!target) continue;  // stored branch weights when this model has none
        if (target->value.shape != shape)
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        target->value.data = std::move(buf);
        ++restored;
    }
    if (!f) throw std::runtime_error("checkpoint: truncated file " + path);
    if (restored != params.size())
        throw std::runtime_error("checkpoint: missing weights (restored " +
                                 std::to_string(restored) + " of " +
                                 std::to_string(params.size()) + ")");
}

}  // namespace crowddiff
