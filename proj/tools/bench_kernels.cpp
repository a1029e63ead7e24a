// Timing comparison between the OpenMP kernels and their serial references.
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <vector>

#include <omp.h>

#include "crowddiff/kernels.hpp"

namespace {

using clock_type = std::chrono::steady_clock;

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warm up
    const auto t0 = clock_type::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = clock_type::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

std::vector<float> randn(size_t n, uint32_t seed) {
    std::mt19937 rng(seed);
    std::normal_distribution<float> d(0.0f, 1.0f);
    std::vector<float> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

void report(const char* name, double serial_ms, double omp_ms, double gflop) {
    std::printf("%-22s serial %8.2f ms (%6.2f GFLOP/s)   omp %8.2f ms (%6.2f GFLOP/s)   speedup %.2fx\n",
                name, serial_ms, gflop / serial_ms, omp_ms, gflop / omp_ms,
                serial_ms / omp_ms);
}

}  // namespace

int main() {
    using namespace crowddiff;
    std::printf("threads: %d\n", omp_get_max_threads());

    {
        const int B = 4, C = 32, H = 64, W = 64, K = 3;
        const auto in = randn(static_cast<size_t>(B) * C * H * W, 1);
        const auto w = randn(static_cast<size_t>(C) * C * K * K, 2);
        const auto bias = randn(C, 3);
        std::vector<float> out(in.size());
        const double gflop = 2.0 * B * C * C * K * K * H * W / 1e6;  // per ms scale
        const double s = time_ms(
            [&] {
                kern::serial::conv2d_forward(out.data(), in.data(), w.data(), bias.data(), B, C,
                                             H, W, C, K, 1);
            },
            3);
        const double p = time_ms(
            [&] {
                kern::conv2d_forward(out.data(), in.data(), w.data(), bias.data(), B, C, H, W, C,
                                     K, 1);
            },
            10);
        report("conv2d 3x3 32x64x64", s, p, gflop);
    }
    {
        const int B = 4, C = 32, N = 256;
        const auto q = randn(static_cast<size_t>(B) * C * N, 4);
        const auto k = randn(static_cast<size_t>(B) * C * N, 5);
        const auto v = randn(static_cast<size_t>(B) * C * N, 6);
        std::vector<float> out(q.size()), attn(static_cast<size_t>(B) * N * N);
        const double gflop = 2.0 * B * (2.0 * N * N * C) / 1e6;
        const double s = time_ms(
            [&] {
                kern::serial::attention_forward(out.data(), attn.data(), q.data(), k.data(),
                                                v.data(), B, C, N);
            },
            5);
        const double p = time_ms(
            [&] {
                kern::attention_forward(out.data(), attn.data(), q.data(), k.data(), v.data(), B,
                                        C, N);
            },
            10);
        report("attention 256 tokens", s, p, gflop);
    }
    {
        const int B = 8, In = 512, Out = 512;
        const auto x = randn(static_cast<size_t>(B) * In, 7);
        const auto w = randn(static_cast<size_t>(Out) * In, 8);
        const auto bias = randn(Out, 9);
        std::vector<float> out(static_cast<size_t>(B) * Out);
        const double gflop = 2.0 * B * In * Out / 1e6;
        const double s = time_ms(
            [&] {
                kern::serial::linear_forward(out.data(), x.data(), w.data(), bias.data(), B, In,
                                             Out);
            },
            20);
        const double p = time_ms(
            [&] { kern::linear_forward(out.data(), x.data(), w.data(), bias.data(), B, In, Out); },
            50);
        report("linear 512x512", s, p, gflop);
    }
    {
        const int B = 4, C = 32, H = 64, W = 64;
        const auto in = randn(static_cast<size_t>(B) * C * H * W, 10);
        const auto gamma = randn(C, 11);
        const auto beta = randn(C, 12);
        std::vector<float> out(in.size());
        std::vector<float> mean(static_cast<size_t>(B) * 8), rstd(static_cast<size_t>(B) * 8);
        const double gflop = 4.0 * in.size() / 1e6;
        const double s = time_ms(
            [&] {
                kern::serial::group_norm_forward(out.data(), mean.data(), rstd.data(), in.data(),
                                                 gamma.data(), beta.data(), B, C, H, W, 8, 1e-5f);
            },
            20);
        const double p = time_ms(
            [&] {
                kern::group_norm_forward(out.data(), mean.data(), rstd.data(), in.data(),
                                         gamma.data(), beta.data(), B, C, H, W, 8, 1e-5f);
            },
            50);
        report("groupnorm 32x64x64", s, p, gflop);
    }
    return 0;
}
