#include "crowddiff/diffusion.hpp"

#include <cmath>
#include <stdexcept>

#include "crowddiff/rng.hpp"

namespace crowddiff {

namespace {

constexpr double kLn2 = 0.6931471805599453;
constexpr double kBinHalfWidth = 1.0 / 255.0;  // discretization bin of the likelihood term

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }
double normal_pdf(double z) {
    return std::exp(-0.5 * z * z) / std::sqrt(2.0 * 3.14159265358979323846);
}

// log p(x) for x in [-1,1] under N(mu, exp(logvar)) discretized into 255 bins,
// with open bins at the two extremes.
double discretized_gaussian_logp(double x, double mu, double logvar, double* dlogp_dlogvar) {
    const double sigma = std::exp(0.5 * logvar);
    const double zhi = (x + kBinHalfWidth - mu) / sigma;
    const double zlo = (x - kBinHalfWidth - mu) / sigma;
    double p, dp_dsigma;
    if (x < -0.999) {
        p = normal_cdf(zhi);
        dp_dsigma = normal_pdf(zhi) * (-zhi / sigma);
    } else if (x > 0.999) {
        p = 1.0 - normal_cdf(zlo);
        dp_dsigma = normal_pdf(zlo) * (zlo / sigma);
    } else {
        p = normal_cdf(zhi) - normal_cdf(zlo);
        dp_dsigma = normal_pdf(zhi) * (-zhi / sigma) - normal_pdf(zlo) * (-zlo / sigma);
    }
    p = std::max(p, 1e-12);
    if (dlogp_dlogvar) *dlogp_dlogvar = (dp_dsigma / p) * (sigma / 2.0);
    return std::log(p);
}

void check_batch_timesteps(const std::vector<int>& t, const NoiseSchedule& schedule) {
    for (int ti : t)
        if (ti < 1 || ti > schedule.num_steps)
            throw std::out_of_range("diffusion: timestep " + std::to_string(ti) + " outside 1.." +
                                    std::to_string(schedule.num_steps));
}

}  // namespace

Tensor forward_corrupt(const Tensor& x0, const Tensor& eps, const std::vector<int>& t,
                       const NoiseSchedule& schedule) {
    check_same_shape(x0, eps, "forward_corrupt");
    if (x0.ndim() != 4 || x0.dim(1) != 1)
        throw std::invalid_argument("forward_corrupt: expected [B,1,H,W], got " + x0.shape_str());
    if (static_cast<int64_t>(t.size()) != x0.dim(0))
        throw std::invalid_argument("forward_corrupt: timestep batch size mismatch");
    check_batch_timesteps(t, schedule);

    Tensor xt = zeros_like(x0);
    const int64_t per = x0.numel() / x0.dim(0);
    for (int64_t b = 0; b < x0.dim(0); ++b) {
        const double ab = schedule.alpha_bar(t[static_cast<size_t>(b)]);
        const float ca = static_cast<float>(std::sqrt(ab));
        const float ce = static_cast<float>(std::sqrt(1.0 - ab));
        const float* x = x0.ptr() + b * per;
        const float* e = eps.ptr() + b * per;
        float* o = xt.ptr() + b * per;
        for (int64_t i = 0; i < per; ++i) o[i] = ca * x[i] + ce * e[i];
    }
    return xt;
}

LossBreakdown hybrid_loss(const Tensor& eps_pred, const Tensor& var_interp,
                          const DiffusionBatch& batch, const NoiseSchedule& schedule,
                          double lambda_vlb, Tensor* grad_eps_pred, Tensor* grad_var_interp) {
    check_same_shape(eps_pred, batch.eps, "hybrid_loss");
    check_same_shape(var_interp, batch.eps, "hybrid_loss(var)");
    check_batch_timesteps(batch.t, schedule);
    for (float v : eps_pred.data)
        if (!std::isfinite(v)) throw std::runtime_error("hybrid_loss: non-finite eps_pred");
    for (float v : var_interp.data)
        if (!std::isfinite(v)) throw std::runtime_error("hybrid_loss: non-finite var_interp");

    const int64_t B = eps_pred.dim(0);
    const int64_t per = eps_pred.numel() / B;
    if (grad_eps_pred) {
        *grad_eps_pred = zeros_like(eps_pred);
    }
    if (grad_var_interp) {
        *grad_var_interp = zeros_like(var_interp);
    }

    double mse_acc = 0.0, vlb_acc = 0.0;
    for (int64_t b = 0; b < B; ++b) {
        const int t = batch.t[static_cast<size_t>(b)];
        const double lambda = schedule.lambdas[t - 1];
        const float* ep = eps_pred.ptr() + b * per;
        const float* ev = batch.eps.ptr() + b * per;
        const float* vp = var_interp.ptr() + b * per;
        const float* x0 = batch.x0.ptr() + b * per;
        const float* xt = batch.xt.ptr() + b * per;

        double sq = 0.0;
        for (int64_t i = 0; i < per; ++i) {
            const double d = static_cast<double>(ep[i]) - ev[i];
            sq += d * d;
        }
        mse_acc += lambda * sq;
        if (grad_eps_pred) {
            float* g = grad_eps_pred->ptr() + b * per;
            const float c = static_cast<float>(2.0 * lambda / static_cast<double>(B));
            for (int64_t i = 0; i < per; ++i) g[i] = c * (ep[i] - ev[i]);
        }

        // Reverse-step parameters. The mean uses eps_pred as a constant
        // (stop-gradient), so only the variance path is differentiated.
        const double beta = schedule.beta(t);
        const double ab = schedule.alpha_bar(t);
        const double sqrt_alpha = std::sqrt(schedule.alpha(t));
        const double eps_coef = beta / std::sqrt(1.0 - ab);
        const double max_log = std::log(beta);
        const double min_log = schedule.posterior_log_variance[t - 1];
        const double post_var = schedule.posterior_variance[t - 1];
        const double c0 = schedule.posterior_mean_coef_x0[t - 1];
        const double ct = schedule.posterior_mean_coef_xt[t - 1];

        double vb = 0.0;
        float* gv = grad_var_interp ? grad_var_interp->ptr() + b * per : nullptr;
        for (int64_t i = 0; i < per; ++i) {
            const double mu_model = (xt[i] - eps_coef * ep[i]) / sqrt_alpha;
            const double frac = (static_cast<double>(vp[i]) + 1.0) / 2.0;
            const double logvar = frac * max_log + (1.0 - frac) * min_log;
            double term, dterm_dlogvar;
            if (t > 1) {
                // KL(q(x_{t-1}|x_t,x_0) || p(x_{t-1}|x_t)) for scalar Gaussians.
                const double mu_q = c0 * x0[i] + ct * xt[i];
                const double var_p = std::exp(logvar);
                const double dmu2 = (mu_q - mu_model) * (mu_q - mu_model);
                term = 0.5 * (logvar - min_log + (post_var + dmu2) / var_p - 1.0);
                dterm_dlogvar = 0.5 * (1.0 - (post_var + dmu2) / var_p);
            } else {
                double dlogp;
                term = -discretized_gaussian_logp(x0[i], mu_model, logvar, &dlogp);
                dterm_dlogvar = -dlogp;
            }
            vb += term;
            if (gv) {
                const double dlogvar_dv = 0.5 * (max_log - min_log);
                gv[i] = static_cast<float>(lambda_vlb * dterm_dlogvar * dlogvar_dv /
                                           (kLn2 * static_cast<double>(per) *
                                            static_cast<double>(B)));
            }
        }
        vlb_acc += vb / (kLn2 * static_cast<double>(per));
    }

    LossBreakdown out;
    out.lambda_vlb = lambda_vlb;
    out.lambda_count = 0.0;
    out.weighted_eps_mse = mse_acc / static_cast<double>(B);
    out.vlb = vlb_acc / static_cast<double>(B);
    out.count_l1 = 0.0;
    out.refresh_total();
    if (!std::isfinite(out.total)) throw std::runtime_error("hybrid_loss: non-finite loss");
    return out;
}

double count_loss(const std::vector<double>& count_pred, const std::vector<double>& count_true,
                  const std::vector<int>& t, const NoiseSchedule& schedule,
                  std::vector<double>* grad_count_pred) {
    if (count_pred.size() != count_true.size() || count_pred.size() != t.size())
        throw std::invalid_argument("count_loss: batch size mismatch");
    if (count_pred.empty()) throw std::invalid_argument("count_loss: empty batch");
    for (double c : count_true)
        if (c < 0.0) throw std::invalid_argument("count_loss: negative ground-truth count");
    check_batch_timesteps(t, schedule);
    const double n = static_cast<double>(count_pred.size());
    if (grad_count_pred) grad_count_pred->assign(count_pred.size(), 0.0);
    double acc = 0.0;
    for (size_t i = 0; i < count_pred.size(); ++i) {
        const double lambda = schedule.lambdas[t[i] - 1];
        const double d = count_pred[i] - count_true[i];
        acc += lambda * std::abs(d);
        if (grad_count_pred)
            (*grad_count_pred)[i] = lambda * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / n;
    }
    return acc / n;
}

LossBreakdown overall_loss(LossBreakdown hybrid, double count, double lambda_count) {
    hybrid.count_l1 = count;
    hybrid.lambda_count = lambda_count;
    hybrid.refresh_total();
    return hybrid;
}

Tensor initial_noise(int height, int width, uint64_t seed) {
    Tensor z({1, 1, height, width});
    Rng rng = make_rng(seed, fnv1a("ddim-initial-noise"));
    std::normal_distribution<float> dist(0.0f, 1.0f);
    for (auto& v : z.data) v = dist(rng);
    return z;
}

std::vector<int> ddim_timesteps(int num_steps, int num_sampling_steps) {
    if (num_sampling_steps < 1 || num_sampling_steps > num_steps)
        throw std::invalid_argument("ddim_timesteps: sampling steps must be in 1..T");
    std::vector<int> taus;
    if (num_sampling_steps == 1) {
        taus.push_back(num_steps);
        return taus;
    }
    for (int i = num_sampling_steps - 1; i >= 0; --i) {
        const int t = 1 + static_cast<int>(std::lround(
                              static_cast<double>(i) * (num_steps - 1) /
                              static_cast<double>(num_sampling_steps - 1)));
        if (taus.empty() || taus.back() != t) taus.push_back(t);
    }
    return taus;
}

ScaledDensityMap ddim_sample(NoisePredictor& model, const Tensor& y,
                             const NoiseSchedule& schedule, int num_sampling_steps,
                             uint64_t seed) {
    if (y.ndim() != 4 || y.dim(0) != 1)
        throw std::invalid_argument("ddim_sample: expected conditioning image [1,C,H,W]");
    const int H = static_cast<int>(y.dim(2)), W = static_cast<int>(y.dim(3));
    const std::vector<int> taus = ddim_timesteps(schedule.num_steps, num_sampling_steps);

    Tensor x = initial_noise(H, W, seed);
    Tensor x0_hat({1, 1, H, W});
    for (size_t i = 0; i < taus.size(); ++i) {
        const int t = taus[i];
        const int t_prev = i + 1 < taus.size() ? taus[i + 1] : 0;
        const Tensor eps = model.predict_eps(y, x, t);
        check_same_shape(eps, x, "ddim_sample: model output");
        const double ab = schedule.alpha_bar(t);
        const double ab_prev = schedule.alpha_bar0(t_prev);
        const float inv_sqrt_ab = static_cast<float>(1.0 / std::sqrt(ab));
        const float sqrt_1mab = static_cast<float>(std::sqrt(1.0 - ab));
        for (int64_t j = 0; j < x.numel(); ++j) {
            float v = (x[j] - sqrt_1mab * eps[j]) * inv_sqrt_ab;
            x0_hat[j] = std::clamp(v, -1.0f, 1.0f);
        }
        if (t_prev == 0) {
            x = x0_hat;
            break;
        }
        // eta = 0 step; the noise direction is re-derived from the clipped x0.
        const float sqrt_ab_prev = static_cast<float>(std::sqrt(ab_prev));
        const float sqrt_1mab_prev = static_cast<float>(std::sqrt(1.0 - ab_prev));
        const float sqrt_ab = static_cast<float>(std::sqrt(ab));
        for (int64_t j = 0; j < x.numel(); ++j) {
            const float eps_from_x0 = (x[j] - sqrt_ab * x0_hat[j]) / sqrt_1mab;
            x[j] = sqrt_ab_prev * x0_hat[j] + sqrt_1mab_prev * eps_from_x0;
        }
    }

    ScaledDensityMap out(H, W);
    for (size_t i = 0; i < out.values.size(); ++i) out.values[i] = x[static_cast<int64_t>(i)];
    return out;
}

}  // namespace crowddiff
