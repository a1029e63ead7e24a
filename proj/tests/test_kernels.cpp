#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "crowddiff/kernels.hpp"
#include "test_util.hpp"

using namespace crowddiff;
using testutil::max_abs_diff;
using testutil::randn_vec;

TEST_CASE("conv2d forward matches serial reference") {
    for (const int K : {1, 3}) {
        const int B = 2, Cin = 5, H = 13, W = 11, Cout = 7, pad = K / 2;
        const auto in = randn_vec(static_cast<size_t>(B) * Cin * H * W, 11);
        const auto w = randn_vec(static_cast<size_t>(Cout) * Cin * K * K, 12);
        const auto bias = randn_vec(Cout, 13);
        std::vector<float> got(static_cast<size_t>(B) * Cout * H * W);
        std::vector<float> want(got.size());
        kern::conv2d_forward(got.data(), in.data(), w.data(), bias.data(), B, Cin, H, W, Cout, K,
                             pad);
        kern::serial::conv2d_forward(want.data(), in.data(), w.data(), bias.data(), B, Cin, H, W,
                                     Cout, K, pad);
        CHECK(max_abs_diff(got, want) < 2e-5);
    }
}

TEST_CASE("conv2d backward matches serial reference") {
    const int B = 2, Cin = 4, H = 9, W = 10, Cout = 6, K = 3, pad = 1;
    const auto in = randn_vec(static_cast<size_t>(B) * Cin * H * W, 21);
    const auto w = randn_vec(static_cast<size_t>(Cout) * Cin * K * K, 22);
    const auto dout = randn_vec(static_cast<size_t>(B) * Cout * H * W, 23);

    std::vector<float> din_got(in.size()), din_want(in.size());
    kern::conv2d_backward_input(din_got.data(), dout.data(), w.data(), B, Cin, H, W, Cout, K, pad);
    kern::serial::conv2d_backward_input(din_want.data(), dout.data(), w.data(), B, Cin, H, W,
                                        Cout, K, pad);
    CHECK(max_abs_diff(din_got, din_want) < 2e-5);

    std::vector<float> dw_got(w.size(), 0.0f), dw_want(w.size(), 0.0f);
    std::vector<float> db_got(Cout, 0.0f), db_want(Cout, 0.0f);
    kern::conv2d_backward_params(dw_got.data(), db_got.data(), in.data(), dout.data(), B, Cin, H,
                                 W, Cout, K, pad);
    kern::serial::conv2d_backward_params(dw_want.data(), db_want.data(), in.data(), dout.data(),
                                         B, Cin, H, W, Cout, K, pad);
    CHECK(max_abs_diff(dw_got, dw_want) < 5e-4);
    CHECK(max_abs_diff(db_got, db_want) < 5e-4);
}

TEST_CASE("conv2d gradients agree with finite differences") {
    const int B = 1, Cin = 2, H = 5, W = 4, Cout = 3, K = 3, pad = 1;
    auto in = randn_vec(static_cast<size_t>(B) * Cin * H * W, 31);
    auto w = randn_vec(static_cast<size_t>(Cout) * Cin * K * K, 32);
    const auto bias = randn_vec(Cout, 33);
    const auto dout = randn_vec(static_cast<size_t>(B) * Cout * H * W, 34);
    std::vector<float> out(dout.size());

    const auto loss = [&] {
        kern::conv2d_forward(out.data(), in.data(), w.data(), bias.data(), B, Cin, H, W, Cout, K,
                             pad);
        double l = 0.0;
        for (size_t i = 0; i < out.size(); ++i) l += double(out[i]) * dout[i];
        return l;
    };

    std::vector<float> din(in.size());
    kern::conv2d_backward_input(din.data(), dout.data(), w.data(), B, Cin, H, W, Cout, K, pad);
    std::vector<float> dw(w.size(), 0.0f), db(Cout, 0.0f);
    kern::conv2d_backward_params(dw.data(), db.data(), in.data(), dout.data(), B, Cin, H, W, Cout,
                                 K, pad);

    const float h = 1e-2f;
    for (size_t i : {size_t(0), size_t(7), in.size() - 1}) {
        const float save = in[i];
        in[i] = save + h;
        const double lp = loss();
        in[i] = save - h;
        const double lm = loss();
        in[i] = save;
        CHECK(din[i] == doctest::Approx((lp - lm) / (2 * h)).epsilon(2e-2));
    }
    for (size_t i : {size_t(1), size_t(10), w.size() - 1}) {
        const float save = w[i];
        w[i] = save + h;
        const double lp = loss();
        w[i] = save - h;
        const double lm = loss();
        w[i] = save;
        CHECK(dw[i] == doctest::Approx((lp - lm) / (2 * h)).epsilon(2e-2));
    }
}

TEST_CASE("linear forward matches serial") {
    const int B = 3, In = 17, Out = 9;
    const auto x = randn_vec(static_cast<size_t>(B) * In, 41);
    const auto w = randn_vec(static_cast<size_t>(Out) * In, 42);
    const auto b = randn_vec(Out, 43);
    std::vector<float> got(static_cast<size_t>(B) * Out), want(got.size());
    kern::linear_forward(got.data(), x.data(), w.data(), b.data(), B, In, Out);
    kern::serial::linear_forward(want.data(), x.data(), w.data(), b.data(), B, In, Out);
    CHECK(max_abs_diff(got, want) < 1e-5);
}

TEST_CASE("group norm matches serial and normalizes") {
    const int B = 2, C = 8, H = 6, W = 5, G = 4;
    const auto in = randn_vec(static_cast<size_t>(B) * C * H * W, 51, 2.0f);
    std::vector<float> gamma(C, 1.0f), beta(C, 0.0f);
    std::vector<float> got(in.size()), want(in.size());
    std::vector<float> mean(static_cast<size_t>(B) * G), rstd(mean.size());
    std::vector<float> mean2(mean.size()), rstd2(mean.size());
    kern::group_norm_forward(got.data(), mean.data(), rstd.data(), in.data(), gamma.data(),
                             beta.data(), B, C, H, W, G, 1e-5f);
    kern::serial::group_norm_forward(want.data(), mean2.data(), rstd2.data(), in.data(),
                                     gamma.data(), beta.data(), B, C, H, W, G, 1e-5f);
    CHECK(max_abs_diff(got, want) < 1e-4);
    // per-group output mean ~ 0, var ~ 1
    const int cpg = C / G;
    double s = 0.0, s2 = 0.0;
    for (int c = 0; c < cpg; ++c)
        for (int i = 0; i < H * W; ++i) {
            const float v = got[static_cast<size_t>(c) * H * W + i];
            s += v;
            s2 += double(v) * v;
        }
    const double n = cpg * H * W;
    CHECK(std::abs(s / n) < 1e-4);
    CHECK(s2 / n == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("group norm backward agrees with finite differences") {
    const int B = 1, C = 4, H = 3, W = 3, G = 2;
    auto in = randn_vec(static_cast<size_t>(B) * C * H * W, 61);
    auto gamma = randn_vec(C, 62);
    auto beta = randn_vec(C, 63);
    const auto dout = randn_vec(in.size(), 64);

    std::vector<float> out(in.size()), mean(G), rstd(G);
    const auto loss = [&] {
        kern::group_norm_forward(out.data(), mean.data(), rstd.data(), in.data(), gamma.data(),
                                 beta.data(), B, C, H, W, G, 1e-5f);
        double l = 0.0;
        for (size_t i = 0; i < out.size(); ++i) l += double(out[i]) * dout[i];
        return l;
    };
    loss();
    std::vector<float> din(in.size()), dgamma(C, 0.0f), dbeta(C, 0.0f);
    kern::group_norm_backward(din.data(), dgamma.data(), dbeta.data(), dout.data(), in.data(),
                              mean.data(), rstd.data(), gamma.data(), B, C, H, W, G);
    const float h = 1e-2f;
    for (size_t i : {size_t(0), size_t(5), in.size() - 1}) {
        const float save = in[i];
        in[i] = save + h;
        const double lp = loss();
        in[i] = save - h;
        const double lm = loss();
        in[i] = save;
        CHECK(din[i] == doctest::Approx((lp - lm) / (2 * h)).epsilon(5e-2).scale(1.0));
    }
    for (int c = 0; c < C; ++c) {
        const float save = gamma[c];
        gamma[c] = save + h;
        const double lp = loss();
        gamma[c] = save - h;
        const double lm = loss();
        gamma[c] = save;
        CHECK(dgamma[c] == doctest::Approx((lp - lm) / (2 * h)).epsilon(5e-2).scale(1.0));
    }
}

TEST_CASE("attention matches serial and finite differences") {
    const int B = 2, C = 6, N = 9;
    auto q = randn_vec(static_cast<size_t>(B) * C * N, 71);
    const auto k = randn_vec(q.size(), 72);
    const auto v = randn_vec(q.size(), 73);
    std::vector<float> got(q.size()), want(q.size());
    std::vector<float> attn(static_cast<size_t>(B) * N * N), attn2(attn.size());
    kern::attention_forward(got.data(), attn.data(), q.data(), k.data(), v.data(), B, C, N);
    kern::serial::attention_forward(want.data(), attn2.data(), q.data(), k.data(), v.data(), B, C,
                                    N);
    CHECK(max_abs_diff(got, want) < 1e-5);

    // rows of attn sum to 1
    for (int i = 0; i < N; ++i) {
        double s = 0.0;
        for (int j = 0; j < N; ++j) s += attn[static_cast<size_t>(i) * N + j];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
    }

    const auto dout = randn_vec(q.size(), 74);
    const auto loss = [&] {
        kern::attention_forward(got.data(), attn.data(), q.data(), k.data(), v.data(), B, C, N);
        double l = 0.0;
        for (size_t i = 0; i < got.size(); ++i) l += double(got[i]) * dout[i];
        return l;
    };
    loss();
    std::vector<float> dq(q.size()), dk(q.size()), dv(q.size());
    kern::attention_backward(dq.data(), dk.data(), dv.data(), dout.data(), attn.data(), q.data(),
                             k.data(), v.data(), B, C, N);
    const float h = 1e-2f;
    for (size_t i : {size_t(0), size_t(17), q.size() - 1}) {
        const float save = q[i];
        q[i] = save + h;
        const double lp = loss();
        q[i] = save - h;
        const double lm = loss();
        q[i] = save;
        CHECK(dq[i] == doctest::Approx((lp - lm) / (2 * h)).epsilon(5e-2).scale(0.5));
    }
}

TEST_CASE("pooling and upsampling match serial and invert shapes") {
    const int B = 2, C = 3, H = 8, W = 6;
    const auto in = randn_vec(static_cast<size_t>(B) * C * H * W, 81);
    std::vector<float> got(static_cast<size_t>(B) * C * (H / 2) * (W / 2)), want(got.size());
    kern::avgpool2_forward(got.data(), in.data(), B, C, H, W);
    kern::serial::avgpool2_forward(want.data(), in.data(), B, C, H, W);
    CHECK(max_abs_diff(got, want) == 0.0);

    std::vector<float> up_got(static_cast<size_t>(B) * C * H * W * 4), up_want(up_got.size());
    kern::upsample2_forward(up_got.data(), in.data(), B, C, H, W);
    kern::serial::upsample2_forward(up_want.data(), in.data(), B, C, H, W);
    CHECK(max_abs_diff(up_got, up_want) == 0.0);

    // avgpool of nearest-upsample is the identity
    std::vector<float> round(in.size());
    kern::avgpool2_forward(round.data(), up_got.data(), B, C, 2 * H, 2 * W);
    CHECK(max_abs_diff(round, in) < 1e-6);
}

TEST_CASE("silu and relu derivatives") {
    const auto x = randn_vec(64, 91);
    std::vector<float> y(x.size()), dy(x.size(), 1.0f), dx(x.size());
    kern::silu_forward(y.data(), x.data(), static_cast<int64_t>(x.size()));
    kern::silu_backward(dx.data(), dy.data(), x.data(), static_cast<int64_t>(x.size()));
    for (size_t i = 0; i < x.size(); ++i) {
        const double h = 1e-3;
        const auto f = [&](double v) { return v / (1.0 + std::exp(-v)); };
        const double fd = (f(x[i] + h) - f(x[i] - h)) / (2 * h);
        CHECK(dx[i] == doctest::Approx(fd).epsilon(1e-3));
    }
}

TEST_CASE("adamw decays weights decoupled from the gradient") {
    std::vector<float> p{1.0f}, g{0.0f}, m{0.0f}, v{0.0f};
    kern::adamw_update(p.data(), g.data(), m.data(), v.data(), 1, 0.1f, 0.9f, 0.999f, 1e-8f,
                       0.5f, 0.1f, 0.001f);
    // zero gradient: the only change is -lr * wd * p = -0.05
    CHECK(p[0] == doctest::Approx(0.95f));
}
