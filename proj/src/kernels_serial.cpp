#include "crowddiff/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

// Plain-loop reference kernels. Deliberately naive: bounds checks in the inner
// loop, no padding buffers, no unrolling. The parallel kernels are validated
// against these in tests/test_kernels.cpp.
namespace crowddiff::kern::serial {

void conv2d_forward(float* out, const float* in, const float* w, const float* bias,
                    int B, int Cin, int H, int W, int Cout, int K, int pad) {
    for (int b = 0; b < B; ++b)
        for (int oc = 0; oc < Cout; ++oc)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    float acc = bias ? bias[oc] : 0.0f;
                    for (int ic = 0; ic < Cin; ++ic)
                        for (int ky = 0; ky < K; ++ky)
                            for (int kx = 0; kx < K; ++kx) {
                                const int iy = y + ky - pad, ix = x + kx - pad;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += in[((static_cast<int64_t>(b) * Cin + ic) * H + iy) * W + ix] *
                                       w[((static_cast<int64_t>(oc) * Cin + ic) * K + ky) * K + kx];
                            }
                    out[((static_cast<int64_t>(b) * Cout + oc) * H + y) * W + x] = acc;
                }
}

void conv2d_backward_input(float* din, const float* dout, const float* w,
                           int B, int Cin, int H, int W, int Cout, int K, int pad) {
    std::memset(din, 0, sizeof(float) * static_cast<size_t>(B) * Cin * H * W);
    for (int b = 0; b < B; ++b)
        for (int oc = 0; oc < Cout; ++oc)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    const float g = dout[((static_cast<int64_t>(b) * Cout + oc) * H + y) * W + x];
                    for (int ic = 0; ic < Cin; ++ic)
                        for (int ky = 0; ky < K; ++ky)
                            for (int kx = 0; kx < K; ++kx) {
                                const int iy = y + ky - pad, ix = x + kx - pad;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                din[((static_cast<int64_t>(b) * Cin + ic) * H + iy) * W + ix] +=
                                    g * w[((static_cast<int64_t>(oc) * Cin + ic) * K + ky) * K + kx];
                            }
                }
}

void conv2d_backward_params(float* dw, float* dbias, const float* in, const float* dout,
                            int B, int Cin, int H, int W, int Cout, int K, int pad) {
    for (int b = 0; b < B; ++b)
        for (int oc = 0; oc < Cout; ++oc)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    const float g = dout[((static_cast<int64_t>(b) * Cout + oc) * H + y) * W + x];
                    if (dbias) dbias[oc] += g;
                    for (int ic = 0; ic < Cin; ++ic)
                        for (int ky = 0; ky < K; ++ky)
                            for (int kx = 0; kx < K; ++kx) {
                                const int iy = y + ky - pad, ix = x + kx - pad;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                dw[((static_cast<int64_t>(oc) * Cin + ic) * K + ky) * K + kx] +=
                                    g * in[((static_cast<int64_t>(b) * Cin + ic) * H + iy) * W + ix];
                            }
                }
}

void linear_forward(float* out, const float* in, const float* w, const float* bias,
                    int B, int In, int Out) {
    for (int b = 0; b < B; ++b)
        for (int j = 0; j < Out; ++j) {
            float acc = bias ? bias[j] : 0.0f;
            for (int i = 0; i < In; ++i)
                acc += in[static_cast<int64_t>(b) * In + i] * w[static_cast<int64_t>(j) * In + i];
            out[static_cast<int64_t>(b) * Out + j] = acc;
        }
}

void group_norm_forward(float* out, float* mean, float* rstd, const float* in,
                        const float* gamma, const float* beta,
                        int B, int C, int H, int W, int G, float eps) {
    const int cpg = C / G;
    const int64_t gsz = static_cast<int64_t>(cpg) * H * W;
    for (int b = 0; b < B; ++b)
        for (int g = 0; g < G; ++g) {
            const float* x = in + (static_cast<int64_t>(b) * C + g * cpg) * H * W;
            double s = 0.0;
            for (int64_t i = 0; i < gsz; ++i) s += x[i];
            const double mu = s / gsz;
            double s2 = 0.0;
            for (int64_t i = 0; i < gsz; ++i) s2 += (x[i] - mu) * (x[i] - mu);
            const double var = s2 / gsz;
            const float rs = static_cast<float>(1.0 / std::sqrt(var + eps));
            mean[b * G + g] = static_cast<float>(mu);
            rstd[b * G + g] = rs;
            float* o = out + (static_cast<int64_t>(b) * C + g * cpg) * H * W;
            for (int c = 0; c < cpg; ++c)
                for (int i = 0; i < H * W; ++i)
                    o[c * H * W + i] = (x[c * H * W + i] - static_cast<float>(mu)) * rs *
                                           gamma[g * cpg + c] +
                                       beta[g * cpg + c];
        }
}

void attention_forward(float* out, float* attn, const float* q, const float* k, const float* v,
                       int B, int C, int N) {
    const float scale = 1.0f / std::sqrt(static_cast<float>(C));
    for (int b = 0; b < B; ++b) {
        const float* qb = q + static_cast<int64_t>(b) * C * N;
        const float* kb = k + static_cast<int64_t>(b) * C * N;
        const float* vb = v + static_cast<int64_t>(b) * C * N;
        float* ab = attn + static_cast<int64_t>(b) * N * N;
        float* ob = out + static_cast<int64_t>(b) * C * N;
        for (int i = 0; i < N; ++i) {
            float mx = -1e30f;
            for (int j = 0; j < N; ++j) {
                float s = 0.0f;
                for (int c = 0; c < C; ++c) s += qb[c * N + i] * kb[c * N + j];
                ab[static_cast<int64_t>(i) * N + j] = s * scale;
                mx = std::max(mx, s * scale);
            }
            float denom = 0.0f;
            for (int j = 0; j < N; ++j) {
                float e = std::exp(ab[static_cast<int64_t>(i) * N + j] - mx);
                ab[static_cast<int64_t>(i) * N + j] = e;
                denom += e;
            }
            for (int j = 0; j < N; ++j) ab[static_cast<int64_t>(i) * N + j] /= denom;
        }
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < N; ++i) {
                float acc = 0.0f;
                for (int j = 0; j < N; ++j)
                    acc += ab[static_cast<int64_t>(i) * N + j] * vb[c * N + j];
                ob[c * N + i] = acc;
            }
    }
}

void avgpool2_forward(float* out, const float* in, int B, int C, int H, int W) {
    const int Ho = H / 2, Wo = W / 2;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < Ho; ++y)
                for (int x = 0; x < Wo; ++x) {
                    float acc = 0.0f;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx)
                            acc += in[((static_cast<int64_t>(b) * C + c) * H + 2 * y + dy) * W +
                                      2 * x + dx];
                    out[((static_cast<int64_t>(b) * C + c) * Ho + y) * Wo + x] = acc / 4.0f;
                }
}

void upsample2_forward(float* out, const float* in, int B, int C, int H, int W) {
    const int Ho = H * 2, Wo = W * 2;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < Ho; ++y)
                for (int x = 0; x < Wo; ++x)
                    out[((static_cast<int64_t>(b) * C + c) * Ho + y) * Wo + x] =
                        in[((static_cast<int64_t>(b) * C + c) * H + y / 2) * W + x / 2];
}

}  // namespace crowddiff::kern::serial
