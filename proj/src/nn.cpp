#include "crowddiff/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "crowddiff/kernels.hpp"
#include "crowddiff/rng.hpp"

namespace crowddiff::nn {

void he_normal_init(Param& p, int64_t fan_in, uint64_t seed) {
    Rng rng = make_rng(seed, fnv1a(p.name));
    std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / static_cast<float>(fan_in)));
    for (auto& v : p.value.data) v = dist(rng);
}

void Conv2d::build(const std::string& name, int in_c, int out_c, int k, uint64_t seed,
                   bool zero_init) {
    in_ch = in_c;
    out_ch = out_c;
    ksize = k;
    pad = k / 2;
    w.init_shape(name + ".w", {out_c, in_c, k, k});
    b.init_shape(name + ".b", {out_c});
    if (!zero_init) he_normal_init(w, static_cast<int64_t>(in_c) * k * k, seed);
}

Tensor Conv2d::forward(const Tensor& x, bool train) {
    if (x.dim(1) != in_ch)
        throw std::invalid_argument(w.name + ": expected " + std::to_string(in_ch) +
                                    " channels, got " + x.shape_str());
    if (train) x_cache = x;
    Tensor y({x.dim(0), out_ch, x.dim(2), x.dim(3)});
    kern::conv2d_forward(y.ptr(), x.ptr(), w.value.ptr(), b.value.ptr(),
                         static_cast<int>(x.dim(0)), in_ch, static_cast<int>(x.dim(2)),
                         static_cast<int>(x.dim(3)), out_ch, ksize, pad);
    return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
    const Tensor& x = x_cache;
    const int B = static_cast<int>(x.dim(0)), H = static_cast<int>(x.dim(2)),
              W = static_cast<int>(x.dim(3));
    kern::conv2d_backward_params(w.grad.ptr(), b.grad.ptr(), x.ptr(), dy.ptr(), B, in_ch, H, W,
                                 out_ch, ksize, pad);
    Tensor dx(x.shape);
    kern::conv2d_backward_input(dx.ptr(), dy.ptr(), w.value.ptr(), B, in_ch, H, W, out_ch, ksize,
                                pad);
    return dx;
}

void Linear::build(const std::string& name, int in_d, int out_d, uint64_t seed, bool zero_init) {
    in_dim = in_d;
    out_dim = out_d;
    w.init_shape(name + ".w", {out_d, in_d});
    b.init_shape(name + ".b", {out_d});
    if (!zero_init) he_normal_init(w, in_d, seed);
}

Tensor Linear::forward(const Tensor& x, bool train) {
    if (x.ndim() != 2 || x.dim(1) != in_dim)
        throw std::invalid_argument(w.name + ": expected [B," + std::to_string(in_dim) +
                                    "], got " + x.shape_str());
    if (train) x_cache = x;
    Tensor y({x.dim(0), out_dim});
    kern::linear_forward(y.ptr(), x.ptr(), w.value.ptr(), b.value.ptr(),
                         static_cast<int>(x.dim(0)), in_dim, out_dim);
    return y;
}

Tensor Linear::backward(const Tensor& dy) {
    Tensor dx(x_cache.shape);
    kern::linear_backward(dx.ptr(), w.grad.ptr(), b.grad.ptr(), x_cache.ptr(), dy.ptr(),
                          w.value.ptr(), static_cast<int>(x_cache.dim(0)), in_dim, out_dim);
    return dx;
}

int pick_groups(int channels) {
    int g = std::min(32, channels);
    while (channels % g != 0) --g;
    return g;
}

void GroupNorm::build(const std::string& name, int ch) {
    channels = ch;
    groups = pick_groups(ch);
    gamma.init_shape(name + ".gamma", {ch});
    beta.init_shape(name + ".beta", {ch});
    gamma.value.fill(1.0f);
}

Tensor GroupNorm::forward(const Tensor& x, bool train) {
    if (x.dim(1) != channels)
        throw std::invalid_argument(gamma.name + ": channel mismatch " + x.shape_str());
    const int B = static_cast<int>(x.dim(0));
    Tensor y(x.shape);
    Tensor mu({B, groups}), rs({B, groups});
    kern::group_norm_forward(y.ptr(), mu.ptr(), rs.ptr(), x.ptr(), gamma.value.ptr(),
                             beta.value.ptr(), B, channels, static_cast<int>(x.dim(2)),
                             static_cast<int>(x.dim(3)), groups, 1e-5f);
    if (train) {
        x_cache = x;
        mean = std::move(mu);
        rstd = std::move(rs);
    }
    return y;
}

Tensor GroupNorm::backward(const Tensor& dy) {
    Tensor dx(x_cache.shape);
    kern::group_norm_backward(dx.ptr(), gamma.grad.ptr(), beta.grad.ptr(), dy.ptr(),
                              x_cache.ptr(), mean.ptr(), rstd.ptr(), gamma.value.ptr(),
                              static_cast<int>(x_cache.dim(0)), channels,
                              static_cast<int>(x_cache.dim(2)),
                              static_cast<int>(x_cache.dim(3)), groups);
    return dx;
}

Tensor SiLU::forward(const Tensor& x, bool train) {
    if (train) x_cache = x;
    Tensor y(x.shape);
    kern::silu_forward(y.ptr(), x.ptr(), x.numel());
    return y;
}

Tensor SiLU::backward(const Tensor& dy) {
    Tensor dx(x_cache.shape);
    kern::silu_backward(dx.ptr(), dy.ptr(), x_cache.ptr(), dx.numel());
    return dx;
}

Tensor ReLU::forward(const Tensor& x, bool train) {
    if (train) x_cache = x;
    Tensor y(x.shape);
    kern::relu_forward(y.ptr(), x.ptr(), x.numel());
    return y;
}

Tensor ReLU::backward(const Tensor& dy) {
    Tensor dx(x_cache.shape);
    kern::relu_backward(dx.ptr(), dy.ptr(), x_cache.ptr(), dx.numel());
    return dx;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        throw std::invalid_argument("concat_channels: shape mismatch " + a.shape_str() + " vs " +
                                    b.shape_str());
    Tensor out({a.dim(0), a.dim(1) + b.dim(1), a.dim(2), a.dim(3)});
    const int64_t hw = a.dim(2) * a.dim(3);
    for (int64_t n = 0; n < a.dim(0); ++n) {
        std::copy(a.ptr() + n * a.dim(1) * hw, a.ptr() + (n + 1) * a.dim(1) * hw,
                  out.ptr() + n * out.dim(1) * hw);
        std::copy(b.ptr() + n * b.dim(1) * hw, b.ptr() + (n + 1) * b.dim(1) * hw,
                  out.ptr() + n * out.dim(1) * hw + a.dim(1) * hw);
    }
    return out;
}

void split_channels(const Tensor& x, int64_t c_first, Tensor& first, Tensor& second) {
    const int64_t c2 = x.dim(1) - c_first;
    first = Tensor({x.dim(0), c_first, x.dim(2), x.dim(3)});
    second = Tensor({x.dim(0), c2, x.dim(2), x.dim(3)});
    const int64_t hw = x.dim(2) * x.dim(3);
    for (int64_t n = 0; n < x.dim(0); ++n) {
        std::copy(x.ptr() + n * x.dim(1) * hw, x.ptr() + n * x.dim(1) * hw + c_first * hw,
                  first.ptr() + n * c_first * hw);
        std::copy(x.ptr() + n * x.dim(1) * hw + c_first * hw, x.ptr() + (n + 1) * x.dim(1) * hw,
                  second.ptr() + n * c2 * hw);
    }
}

void AdamW::step(const std::vector<Param*>& params, double lr) {
    if (m.empty()) {
        for (Param* p : params) {
            m.emplace_back(p->value.shape);
            v.emplace_back(p->value.shape);
        }
    }
    if (m.size() != params.size()) throw std::logic_error("AdamW: parameter set changed");
    ++step_count;
    const float bc1 = 1.0f - static_cast<float>(std::pow(beta1, step_count));
    const float bc2 = 1.0f - static_cast<float>(std::pow(beta2, step_count));
    for (size_t i = 0; i < params.size(); ++i) {
        Param* p = params[i];
        kern::adamw_update(p->value.ptr(), p->grad.ptr(), m[i].ptr(), v[i].ptr(),
                           p->value.numel(), static_cast<float>(lr), static_cast<float>(beta1),
                           static_cast<float>(beta2), static_cast<float>(eps),
                           static_cast<float>(weight_decay), bc1, bc2);
    }
}

}  // namespace crowddiff::nn
