#include "crowddiff/kernels.hpp"

#include <cmath>
#include <cstring>
#include <vector>

namespace crowddiff::kern {

namespace {

// Copy [B,C,H,W] into a zero-padded [B,C,H+2p,W+2p] buffer so the conv inner
// loops run branch-free.
std::vector<float> pad_input(const float* in, int B, int C, int H, int W, int pad) {
    const int Hp = H + 2 * pad, Wp = W + 2 * pad;
    std::vector<float> out(static_cast<size_t>(B) * C * Hp * Wp, 0.0f);
#pragma omp parallel for collapse(2)
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const float* src = in + (static_cast<int64_t>(b) * C + c) * H * W;
            float* dst = out.data() + (static_cast<int64_t>(b) * C + c) * Hp * Wp;
            for (int y = 0; y < H; ++y)
                std::memcpy(dst + (y + pad) * Wp + pad, src + y * W, sizeof(float) * W);
        }
    return out;
}

}  // namespace

void conv2d_forward(float* out, const float* in, const float* w, const float* bias,
                    int B, int Cin, int H, int W, int Cout, int K, int pad) {
    const int Hp = H + 2 * pad, Wp = W + 2 * pad;
    std::vector<float> scratch;
    if (pad > 0) scratch = pad_input(in, B, Cin, H, W, pad);
    const float* padded_ptr = pad > 0 ? scratch.data() : in;
#pragma omp parallel for collapse(2)
    for (int b = 0; b < B; ++b)
        for (int oc = 0; oc < Cout; ++oc) {
            float* o = out + (static_cast<int64_t>(b) * Cout + oc) * H * W;
            const float bv = bias ? bias[oc] : 0.0f;
            for (int i = 0; i < H * W; ++i) o[i] = bv;
            for (int ic = 0; ic < Cin; ++ic) {
                const float* p = padded_ptr + (static_cast<int64_t>(b) * Cin + ic) * Hp * Wp;
                const float* wk = w + ((static_cast<int64_t>(oc) * Cin + ic) * K) * K;
                for (int ky = 0; ky < K; ++ky)
                    for (int kx = 0; kx < K; ++kx) {
                        const float wv = wk[ky * K + kx];
                        if (wv == 0.0f) continue;
                        for (int y = 0; y < H; ++y) {
                            const float* src = p + (y + ky) * Wp + kx;
                            float* dst = o + y * W;
                            for (int x = 0; x < W; ++x) dst[x] += wv * src[x];
                        }
                    }
            }
        }
}

void conv2d_backward_input(float* din, const float* dout, const float* w,
                           int B, int Cin, int H, int W, int Cout, int K, int pad) {
    // Full correlation of dout with the kernel transposed in (oc, ic) and
    // flipped spatially; implemented on a padded dout buffer.
    const int fp = K - 1 - pad;
    const int Hp = H + 2 * fp, Wp = W + 2 * fp;
    std::vector<float> scratch;
    if (fp > 0) scratch = pad_input(dout, B, Cout, H, W, fp);
    const float* padded_ptr = fp > 0 ? scratch.data() : dout;
#pragma omp parallel for collapse(2)
    for (int b = 0; b < B; ++b)
        for (int ic = 0; ic < Cin; ++ic) {
            float* o = din + (static_cast<int64_t>(b) * Cin + ic) * H * W;
            std::memset(o, 0, sizeof(float) * H * W);
            for (int oc = 0; oc < Cout; ++oc) {
                const float* p = padded_ptr + (static_cast<int64_t>(b) * Cout + oc) * Hp * Wp;
                const float* wk = w + ((static_cast<int64_t>(oc) * Cin + ic) * K) * K;
                for (int ky = 0; ky < K; ++ky)
                    for (int kx = 0; kx < K; ++kx) {
                        const float wv = wk[(K - 1 - ky) * K + (K - 1 - kx)];
                        if (wv == 0.0f) continue;
                        for (int y = 0; y < H; ++y) {
                            const float* src = p + (y + ky) * Wp + kx;
                            float* dst = o + y * W;
                            for (int x = 0; x < W; ++x) dst[x] += wv * src[x];
                        }
                    }
            }
        }
}

void conv2d_backward_params(float* dw, float* dbias, const float* in, const float* dout,
                            int B, int Cin, int H, int W, int Cout, int K, int pad) {
    const int Hp = H + 2 * pad, Wp = W + 2 * pad;
    std::vector<float> scratch;
    if (pad > 0) scratch = pad_input(in, B, Cin, H, W, pad);
    const float* padded_ptr = pad > 0 ? scratch.data() : in;
#pragma omp parallel for
    for (int oc = 0; oc < Cout; ++oc) {
        if (dbias) {
            double acc = 0.0;
            for (int b = 0; b < B; ++b) {
                const float* g = dout + (static_cast<int64_t>(b) * Cout + oc) * H * W;
#pragma omp simd reduction(+ : acc)
                for (int i = 0; i < H * W; ++i) acc += g[i];
            }
            dbias[oc] += static_cast<float>(acc);
        }
        for (int ic = 0; ic < Cin; ++ic)
            for (int ky = 0; ky < K; ++ky)
                for (int kx = 0; kx < K; ++kx) {
                    double acc = 0.0;
                    for (int b = 0; b < B; ++b) {
                        const float* p =
                            padded_ptr + (static_cast<int64_t>(b) * Cin + ic) * Hp * Wp;
                        const float* g = dout + (static_cast<int64_t>(b) * Cout + oc) * H * W;
                        for (int y = 0; y < H; ++y) {
                            const float* src = p + (y + ky) * Wp + kx;
                            const float* grow = g + y * W;
                            float racc = 0.0f;
#pragma omp simd reduction(+ : racc)
                            for (int x = 0; x < W; ++x) racc += src[x] * grow[x];
                            acc += racc;
                        }
                    }
                    dw[((static_cast<int64_t>(oc) * Cin + ic) * K + ky) * K + kx] +=
                        static_cast<float>(acc);
                }
    }
}

void linear_forward(float* out, const float* in, const float* w, const float* bias,
                    int B, int In, int Out) {
#pragma omp parallel for
    for (int b = 0; b < B; ++b) {
        const float* x = in + static_cast<int64_t>(b) * In;
        float* o = out + static_cast<int64_t>(b) * Out;
        for (int j = 0; j < Out; ++j) {
            const float* wr = w + static_cast<int64_t>(j) * In;
            float acc = bias ? bias[j] : 0.0f;
#pragma omp simd reduction(+ : acc)
            for (int i = 0; i < In; ++i) acc += wr[i] * x[i];
            o[j] = acc;
        }
    }
}

void linear_backward(float* din, float* dw, float* dbias, const float* in, const float* dout,
                     const float* w, int B, int In, int Out) {
    if (din) {
#pragma omp parallel for
        for (int b = 0; b < B; ++b) {
            const float* g = dout + static_cast<int64_t>(b) * Out;
            float* dx = din + static_cast<int64_t>(b) * In;
            for (int i = 0; i < In; ++i) dx[i] = 0.0f;
            for (int j = 0; j < Out; ++j) {
                const float gv = g[j];
                const float* wr = w + static_cast<int64_t>(j) * In;
                for (int i = 0; i < In; ++i) dx[i] += gv * wr[i];
            }
        }
    }
#pragma omp parallel for
    for (int j = 0; j < Out; ++j) {
        float* dwr = dw + static_cast<int64_t>(j) * In;
        double bacc = 0.0;
        for (int b = 0; b < B; ++b) {
            const float gv = dout[static_cast<int64_t>(b) * Out + j];
            bacc += gv;
            const float* x = in + static_cast<int64_t>(b) * In;
            for (int i = 0; i < In; ++i) dwr[i] += gv * x[i];
        }
        if (dbias) dbias[j] += static_cast<float>(bacc);
    }
}

void group_norm_forward(float* out, float* mean, float* rstd, const float* in,
                        const float* gamma, const float* beta,
                        int B, int C, int H, int W, int G, float eps) {
    const int cpg = C / G;
    const int64_t gsz = static_cast<int64_t>(cpg) * H * W;
#pragma omp parallel for collapse(2)
    for (int b = 0; b < B; ++b)
        for (int g = 0; g < G; ++g) {
            const float* x = in + (static_cast<int64_t>(b) * C + g * cpg) * H * W;
            double s = 0.0, s2 = 0.0;
#pragma omp simd reduction(+ : s, s2)
            for (int64_t i = 0; i < gsz; ++i) {
                s += x[i];
                s2 += static_cast<double>(x[i]) * x[i];
            }
            const double mu = s / gsz;
            const double var = s2 / gsz - mu * mu;
            const float rs = static_cast<float>(1.0 / std::sqrt(var + eps));
            mean[b * G + g] = static_cast<float>(mu);
            rstd[b * G + g] = rs;
            float* o = out + (static_cast<int64_t>(b) * C + g * cpg) * H * W;
            for (int c = 0; c < cpg; ++c) {
                const float ga = gamma[g * cpg + c], be = beta[g * cpg + c];
                const float* xc = x + static_cast<int64_t>(c) * H * W;
                float* oc = o + static_cast<int64_t>(c) * H * W;
                const float mu_f = static_cast<float>(mu);
                for (int i = 0; i < H * W; ++i) oc[i] = (xc[i] - mu_f) * rs * ga + be;
            }
        }
}

void group_norm_backward(float* din, float* dgamma, float* dbeta, const float* dout,
                         const float* in, const float* mean, const float* rstd,
                         const float* gamma, int B, int C, int H, int W, int G) {
    const int cpg = C / G;
    const int64_t hw = static_cast<int64_t>(H) * W;
    const int64_t gsz = cpg * hw;
#pragma omp parallel for collapse(2)
    for (int b = 0; b < B; ++b)
        for (int g = 0; g < G; ++g) {
            const int64_t base = (static_cast<int64_t>(b) * C + g * cpg) * hw;
            const float mu = mean[b * G + g], rs = rstd[b * G + g];
            // Accumulate sum(dxhat) and sum(dxhat * xhat) over the group.
            double sum_dxh = 0.0, sum_dxh_xh = 0.0;
            for (int c = 0; c < cpg; ++c) {
                const float ga = gamma[g * cpg + c];
                const float* x = in + base + c * hw;
                const float* go = dout + base + c * hw;
#pragma omp simd reduction(+ : sum_dxh, sum_dxh_xh)
                for (int64_t i = 0; i < hw; ++i) {
                    const float xh = (x[i] - mu) * rs;
                    const float dxh = go[i] * ga;
                    sum_dxh += dxh;
                    sum_dxh_xh += static_cast<double>(dxh) * xh;
                }
            }
            const float a = static_cast<float>(sum_dxh / gsz);
            const float bcoef = static_cast<float>(sum_dxh_xh / gsz);
            for (int c = 0; c < cpg; ++c) {
                const float ga = gamma[g * cpg + c];
                const float* x = in + base + c * hw;
                const float* go = dout + base + c * hw;
                float* dx = din + base + c * hw;
                for (int64_t i = 0; i < hw; ++i) {
                    const float xh = (x[i] - mu) * rs;
                    const float dxh = go[i] * ga;
                    dx[i] = (dxh - a - xh * bcoef) * rs;
                }
            }
        }
    // Parameter grads (channel-wise reductions).
#pragma omp parallel for
    for (int c = 0; c < C; ++c) {
        const int g = c / cpg;
        double dg = 0.0, db = 0.0;
        for (int b = 0; b < B; ++b) {
            const float mu = mean[b * G + g], rs = rstd[b * G + g];
            const float* x = in + (static_cast<int64_t>(b) * C + c) * hw;
            const float* go = dout + (static_cast<int64_t>(b) * C + c) * hw;
#pragma omp simd reduction(+ : dg, db)
            for (int64_t i = 0; i < hw; ++i) {
                dg += static_cast<double>(go[i]) * ((x[i] - mu) * rs);
                db += go[i];
            }
        }
        dgamma[c] += static_cast<float>(dg);
        dbeta[c] += static_cast<float>(db);
    }
}

void silu_forward(float* out, const float* in, int64_t n) {
#pragma omp parallel for
    for (int64_t i = 0; i < n; ++i) {
        const float s = 1.0f / (1.0f + std::exp(-in[i]));
        out[i] = in[i] * s;
    }
}

void silu_backward(float* din, const float* dout, const float* in, int64_t n) {
#pragma omp parallel for
    for (int64_t i = 0; i < n; ++i) {
        const float s = 1.0f / (1.0f + std::exp(-in[i]));
        din[i] = dout[i] * s * (1.0f + in[i] * (1.0f - s));
    }
}

void relu_forward(float* out, const float* in, int64_t n) {
#pragma omp parallel for
    for (int64_t i = 0; i < n; ++i) out[i] = in[i] > 0.0f ? in[i] : 0.0f;
}

void relu_backward(float* din, const float* dout, const float* in, int64_t n) {
#pragma omp parallel for
    for (int64_t i = 0; i < n; ++i) din[i] = in[i] > 0.0f ? dout[i] : 0.0f;
}

void avgpool2_forward(float* out, const float* in, int B, int C, int H, int W) {
    const int Ho = H / 2, Wo = W / 2;
#pragma omp parallel for collapse(2)
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const float* x = in + (static_cast<int64_t>(b) * C + c) * H * W;
            float* o = out + (static_cast<int64_t>(b) * C + c) * Ho * Wo;
            for (int y = 0; y < Ho; ++y)
                for (int x2 = 0; x2 < Wo; ++x2)
                    o[y * Wo + x2] = 0.25f * (x[(2 * y) * W + 2 * x2] + x[(2 * y) * W + 2 * x2 + 1] +
                                              x[(2 * y + 1) * W + 2 * x2] +
                                              x[(2 * y + 1) * W + 2 * x2 + 1]);
        }
}

void avgpool2_backward(float* din, const float* dout, int B, int C, int H, int W) {
    const int Ho = H / 2, Wo = W / 2;
#pragma omp parallel for collapse(2)
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const float* g = dout + (static_cast<int64_t>(b) * C + c) * Ho * Wo;
            float* dx = din + (static_cast<int64_t>(b) * C + c) * H * W;
            for (int y = 0; y < Ho; ++y)
                for (int x2 = 0; x2 < Wo; ++x2) {
                    const float v = 0.25f * g[y * Wo + x2];
                    dx[(2 * y) * W + 2 * x2] = v;
                    dx[(2 * y) * W + 2 * x2 + 1] = v;
                    dx[(2 * y + 1) * W + 2 * x2] = v;
                    dx[(2 * y + 1) * W + 2 * x2 + 1] = v;
                }
        }
}

void upsample2_forward(float* out, const float* in, int B, int C, int H, int W) {
    const int Ho = H * 2, Wo = W * 2;
#pragma omp parallel for collapse(2)
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const float* x = in + (static_cast<int64_t>(b) * C + c) * H * W;
            float* o = out + (static_cast<int64_t>(b) * C + c) * Ho * Wo;
            for (int y = 0; y < Ho; ++y) {
                const float* row = x + (y / 2) * W;
                float* orow = o + y * Wo;
                for (int x2 = 0; x2 < Wo; ++x2) orow[x2] = row[x2 / 2];
            }
        }
}

void upsample2_backward(float* din, const float* dout, int B, int C, int H, int W) {
    const int Ho = H * 2, Wo = W * 2;
#pragma omp parallel for collapse(2)
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const float* g = dout + (static_cast<int64_t>(b) * C + c) * Ho * Wo;
            float* dx = din + (static_cast<int64_t>(b) * C + c) * H * W;
            for (int y = 0; y < H; ++y)
                for (int x2 = 0; x2 < W; ++x2)
                    dx[y * W + x2] = g[(2 * y) * Wo + 2 * x2] + g[(2 * y) * Wo + 2 * x2 + 1] +
                                     g[(2 * y + 1) * Wo + 2 * x2] +
                                     g[(2 * y + 1) * Wo + 2 * x2 + 1];
        }
}

void attention_forward(float* out, float* attn, const float* q, const float* k, const float* v,
                       int B, int C, int N) {
    const float scale = 1.0f / std::sqrt(static_cast<float>(C));
#pragma omp parallel for
    for (int b = 0; b < B; ++b) {
        const float* qb = q + static_cast<int64_t>(b) * C * N;
        const float* kb = k + static_cast<int64_t>(b) * C * N;
        const float* vb = v + static_cast<int64_t>(b) * C * N;
        float* ab = attn + static_cast<int64_t>(b) * N * N;
        float* ob = out + static_cast<int64_t>(b) * C * N;
        for (int i = 0; i < N; ++i) {
            float* row = ab + static_cast<int64_t>(i) * N;
            float mx = -1e30f;
            for (int j = 0; j < N; ++j) {
                float s = 0.0f;
#pragma omp simd reduction(+ : s)
                for (int c = 0; c < C; ++c) s += qb[c * N + i] * kb[c * N + j];
                row[j] = s * scale;
                mx = std::max(mx, row[j]);
            }
            float denom = 0.0f;
            for (int j = 0; j < N; ++j) {
                row[j] = std::exp(row[j] - mx);
                denom += row[j];
            }
            const float inv = 1.0f / denom;
            for (int j = 0; j < N; ++j) row[j] *= inv;
        }
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < N; ++i) {
                const float* row = ab + static_cast<int64_t>(i) * N;
                float acc = 0.0f;
#pragma omp simd reduction(+ : acc)
                for (int j = 0; j < N; ++j) acc += row[j] * vb[c * N + j];
                ob[c * N + i] = acc;
            }
    }
}

void attention_backward(float* dq, float* dk, float* dv, const float* dout, const float* attn,
                        const float* q, const float* k, const float* v, int B, int C, int N) {
    const float scale = 1.0f / std::sqrt(static_cast<float>(C));
#pragma omp parallel for
    for (int b = 0; b < B; ++b) {
        const float* qb = q + static_cast<int64_t>(b) * C * N;
        const float* kb = k + static_cast<int64_t>(b) * C * N;
        const float* vb = v + static_cast<int64_t>(b) * C * N;
        const float* ab = attn + static_cast<int64_t>(b) * N * N;
        const float* gb = dout + static_cast<int64_t>(b) * C * N;
        float* dqb = dq + static_cast<int64_t>(b) * C * N;
        float* dkb = dk + static_cast<int64_t>(b) * C * N;
        float* dvb = dv + static_cast<int64_t>(b) * C * N;
        std::vector<float> ds(static_cast<size_t>(N) * N);
        // dv[c,j] = sum_i attn[i,j] * dout[c,i]
        for (int c = 0; c < C; ++c)
            for (int j = 0; j < N; ++j) {
                float acc = 0.0f;
                for (int i = 0; i < N; ++i) acc += ab[static_cast<int64_t>(i) * N + j] * gb[c * N + i];
                dvb[c * N + j] = acc;
            }
        // da[i,j] = v[:,j] . dout[:,i]; softmax backward row-wise into dscore.
        for (int i = 0; i < N; ++i) {
            const float* arow = ab + static_cast<int64_t>(i) * N;
            float* drow = ds.data() + static_cast<int64_t>(i) * N;
            float dot = 0.0f;
            for (int j = 0; j < N; ++j) {
                float da = 0.0f;
                for (int c = 0; c < C; ++c) da += vb[c * N + j] * gb[c * N + i];
                drow[j] = da;
                dot += arow[j] * da;
            }
            for (int j = 0; j < N; ++j) drow[j] = arow[j] * (drow[j] - dot) * scale;
        }
        // dq[c,i] = sum_j ds[i,j]*k[c,j];  dk[c,j] = sum_i ds[i,j]*q[c,i]
        for (int c = 0; c < C; ++c) {
            for (int i = 0; i < N; ++i) {
                const float* drow = ds.data() + static_cast<int64_t>(i) * N;
                float acc = 0.0f;
                for (int j = 0; j < N; ++j) acc += drow[j] * kb[c * N + j];
                dqb[c * N + i] = acc;
            }
            for (int j = 0; j < N; ++j) {
                float acc = 0.0f;
                for (int i = 0; i < N; ++i) acc += ds[static_cast<int64_t>(i) * N + j] * qb[c * N + i];
                dkb[c * N + j] = acc;
            }
        }
    }
}

void gap_forward(float* out, const float* in, int B, int C, int64_t HW) {
#pragma omp parallel for collapse(2)
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const float* x = in + (static_cast<int64_t>(b) * C + c) * HW;
            double acc = 0.0;
#pragma omp simd reduction(+ : acc)
            for (int64_t i = 0; i < HW; ++i) acc += x[i];
            out[b * C + c] = static_cast<float>(acc / static_cast<double>(HW));
        }
}

void gap_backward(float* din, const float* dout, int B, int C, int64_t HW) {
#pragma omp parallel for collapse(2)
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const float g = dout[b * C + c] / static_cast<float>(HW);
            float* dx = din + (static_cast<int64_t>(b) * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) dx[i] += g;
        }
}

void adamw_update(float* param, const float* grad, float* m, float* v, int64_t n,
                  float lr, float beta1, float beta2, float eps, float weight_decay,
                  float bc1, float bc2) {
#pragma omp parallel for
    for (int64_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0f - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0f - beta2) * grad[i] * grad[i];
        const float mhat = m[i] / bc1;
        const float vhat = v[i] / bc2;
        param[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * param[i]);
    }
}

}  // namespace crowddiff::kern
