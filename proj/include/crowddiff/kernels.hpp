#pragma once

#include <cstdint>

// Low-level compute kernels. The `kern` namespace holds the OpenMP-parallel
// production implementations; `kern::serial` holds plain-loop reference
// implementations kept for equivalence tests and the kernel benchmark.
namespace crowddiff::kern {

// 2-d convolution, stride 1, square kernel K with zero padding `pad`.
// in: [B,Cin,H,W], w: [Cout,Cin,K,K], bias: [Cout] (may be null), out: [B,Cout,H,W]
void conv2d_forward(float* out, const float* in, const float* w, const float* bias,
                    int B, int Cin, int H, int W, int Cout, int K, int pad);
void conv2d_backward_input(float* din, const float* dout, const float* w,
                           int B, int Cin, int H, int W, int Cout, int K, int pad);
void conv2d_backward_params(float* dw, float* dbias, const float* in, const float* dout,
                            int B, int Cin, int H, int W, int Cout, int K, int pad);

// Fully connected: in [B,In], w [Out,In], bias [Out] (may be null), out [B,Out]
void linear_forward(float* out, const float* in, const float* w, const float* bias,
                    int B, int In, int Out);
void linear_backward(float* din, float* dw, float* dbias, const float* in, const float* dout,
                     const float* w, int B, int In, int Out);

// Group normalization over [B,C,H,W] with G groups. mean/rstd: [B,G] saved for backward.
void group_norm_forward(float* out, float* mean, float* rstd, const float* in,
                        const float* gamma, const float* beta,
                        int B, int C, int H, int W, int G, float eps);
void group_norm_backward(float* din, float* dgamma, float* dbeta, const float* dout,
                         const float* in, const float* mean, const float* rstd,
                         const float* gamma, int B, int C, int H, int W, int G);

void silu_forward(float* out, const float* in, int64_t n);
void silu_backward(float* din, const float* dout, const float* in, int64_t n);
void relu_forward(float* out, const float* in, int64_t n);
void relu_backward(float* din, const float* dout, const float* in, int64_t n);

// 2x2 stride-2 average pooling; H and W must be even.
void avgpool2_forward(float* out, const float* in, int B, int C, int H, int W);
void avgpool2_backward(float* din, const float* dout, int B, int C, int H, int W);

// Nearest-neighbor 2x upsampling.
void upsample2_forward(float* out, const float* in, int B, int C, int H, int W);
void upsample2_backward(float* din, const float* dout, int B, int C, int H, int W);

// Single-head dot-product attention over N spatial tokens.
// q,k,v: [B,C,N]; out: [B,C,N]; attn: [B,N,N] row-softmax weights saved for backward.
void attention_forward(float* out, float* attn, const float* q, const float* k, const float* v,
                       int B, int C, int N);
void attention_backward(float* dq, float* dk, float* dv, const float* dout, const float* attn,
                        const float* q, const float* k, const float* v, int B, int C, int N);

// Global average pool: in [B,C,HW] -> out [B,C]
void gap_forward(float* out, const float* in, int B, int C, int64_t HW);
void gap_backward(float* din, const float* dout, int B, int C, int64_t HW);

// Decoupled-weight-decay Adam step. bc1 = 1-beta1^t, bc2 = 1-beta2^t.
void adamw_update(float* param, const float* grad, float* m, float* v, int64_t n,
                  float lr, float beta1, float beta2, float eps, float weight_decay,
                  float bc1, float bc2);

namespace serial {
void conv2d_forward(float* out, const float* in, const float* w, const float* bias,
                    int B, int Cin, int H, int W, int Cout, int K, int pad);
void conv2d_backward_input(float* din, const float* dout, const float* w,
                           int B, int Cin, int H, int W, int Cout, int K, int pad);
void conv2d_backward_params(float* dw, float* dbias, const float* in, const float* dout,
                            int B, int Cin, int H, int W, int Cout, int K, int pad);
void linear_forward(float* out, const float* in, const float* w, const float* bias,
                    int B, int In, int Out);
void group_norm_forward(float* out, float* mean, float* rstd, const float* in,
                        const float* gamma, const float* beta,
                        int B, int C, int H, int W, int G, float eps);
void attention_forward(float* out, float* attn, const float* q, const float* k, const float* v,
                       int B, int C, int N);
void avgpool2_forward(float* out, const float* in, int B, int C, int H, int W);
void upsample2_forward(float* out, const float* in, int B, int C, int H, int W);
}  // namespace serial

}  // namespace crowddiff::kern
