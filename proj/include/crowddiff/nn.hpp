#pragma once

#include <string>
#include <vector>

#include "crowddiff/tensor.hpp"

namespace crowddiff::nn {

struct Param {
    std::string name;
    Tensor value;
    Tensor grad;

    void init_shape(std::string n, std::vector<int64_t> shape) {
        name = std::move(n);
        value = Tensor(shape);
        grad = Tensor(shape);
    }
};

// He-normal fill seeded deterministically from (seed, param name), so two
// models built with the same seed share identical weights for identically
// named parameters.
void he_normal_init(Param& p, int64_t fan_in, uint64_t seed);

struct Conv2d {
    int in_ch = 0, out_ch = 0, ksize = 3, pad = 1;
    Param w, b;
    Tensor x_cache;

    void build(const std::string& name, int in_c, int out_c, int k, uint64_t seed,
               bool zero_init = false);
    Tensor forward(const Tensor& x, bool train);
    Tensor backward(const Tensor& dy);
    void collect(std::vector<Param*>& out) {
        out.push_back(&w);
        out.push_back(&b);
    }
};

struct Linear {
    int in_dim = 0, out_dim = 0;
    Param w, b;
    Tensor x_cache;

    void build(const std::string& name, int in_d, int out_d, uint64_t seed,
               bool zero_init = false);
    Tensor forward(const Tensor& x, bool train);  // x: [B, in_dim]
    Tensor backward(const Tensor& dy);
    void collect(std::vector<Param*>& out) {
        out.push_back(&w);
        out.push_back(&b);
    }
};

struct GroupNorm {
    int channels = 0, groups = 1;
    Param gamma, beta;
    Tensor x_cache, mean, rstd;

    void build(const std::string& name, int ch);
    Tensor forward(const Tensor& x, bool train);
    Tensor backward(const Tensor& dy);
    void collect(std::vector<Param*>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }
};

struct SiLU {
    Tensor x_cache;
    Tensor forward(const Tensor& x, bool train);
    Tensor backward(const Tensor& dy);
};

struct ReLU {
    Tensor x_cache;
    Tensor forward(const Tensor& x, bool train);
    Tensor backward(const Tensor& dy);
};

// Channel helpers for skip connections and qkv splits.
Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& x, int64_t c_first, Tensor& first, Tensor& second);

// Largest divisor of `channels` that is <= 32.
int pick_groups(int channels);

struct AdamW {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.0;
    int64_t step_count = 0;
    std::vector<Tensor> m, v;

    void step(const std::vector<Param*>& params, double lr);
};

}  // namespace crowddiff::nn
