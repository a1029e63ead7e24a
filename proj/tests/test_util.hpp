#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "crowddiff/tensor.hpp"

namespace testutil {

inline std::vector<float> randn_vec(size_t n, uint32_t seed, float scale = 1.0f) {
    std::mt19937 rng(seed);
    std::normal_distribution<float> d(0.0f, scale);
    std::vector<float> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

inline crowddiff::Tensor randn_tensor(std::vector<int64_t> shape, uint32_t seed,
                                      float scale = 1.0f) {
    crowddiff::Tensor t(shape);
    std::mt19937 rng(seed);
    std::normal_distribution<float> d(0.0f, scale);
    for (auto& x : t.data) x = d(rng);
    return t;
}

inline double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - b[i]));
    return m;
}

inline double rel_err(double got, double want) {
    return std::abs(got - want) / std::max(1e-12, std::abs(want));
}

}  // namespace testutil
