#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace crowddiff {

// Dense float32 tensor, row-major, NCHW for 4-d data.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)), data(numel_of(shape), 0.0f) {}
    Tensor(std::initializer_list<int64_t> s) : Tensor(std::vector<int64_t>(s)) {}

    static int64_t numel_of(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) {
            if (d < 0) throw std::invalid_argument("tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t dim(size_t i) const { return shape.at(i); }
    int ndim() const { return static_cast<int>(shape.size()); }

    float* ptr() { return data.data(); }
    const float* ptr() const { return data.data(); }

    float& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    float operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    // 4-d accessor (b, c, y, x)
    float& at(int64_t b, int64_t c, int64_t y, int64_t x) {
        return data[static_cast<size_t>(((b * shape[1] + c) * shape[2] + y) * shape[3] + x)];
    }
    float at(int64_t b, int64_t c, int64_t y, int64_t x) const {
        return data[static_cast<size_t>(((b * shape[1] + c) * shape[2] + y) * shape[3] + x)];
    }

    void fill(float v) { std::fill(data.begin(), data.end(), v); }
    void zero() { fill(0.0f); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ", ";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }
};

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_str() +
                                    " vs " + b.shape_str());
}

}  // namespace crowddiff
