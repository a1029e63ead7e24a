#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace crowddiff {

// Per-timestep diffusion schedule tables. Timesteps are 1-based (t = 1..T);
// accessors take 1-based indices and internal vectors are 0-based.
// Immutable after construction.
struct NoiseSchedule {
    int num_steps = 0;
    double beta_start = 0.0;
    double beta_end = 0.0;
    double k = 1.0;
    double gamma = 0.5;

    std::vector<double> betas;       // beta_t
    std::vector<double> alphas;      // 1 - beta_t
    std::vector<double> alpha_bars;  // prod_{tau<=t} alpha_tau
    std::vector<double> snrs;        // alpha_bar / (1 - alpha_bar)
    std::vector<double> lambdas;     // SNR-based loss weights

    // Posterior quantities of q(x_{t-1} | x_t, x_0); the t=1 posterior
    // variance is clipped to the t=2 value so its log stays finite.
    std::vector<double> posterior_variance;
    std::vector<double> posterior_log_variance;
    std::vector<double> posterior_mean_coef_x0;
    std::vector<double> posterior_mean_coef_xt;

    double beta(int t) const { return betas[check(t)]; }
    double alpha(int t) const { return alphas[check(t)]; }
    double alpha_bar(int t) const { return alpha_bars[check(t)]; }
    // alpha_bar extended with the t=0 convention alpha_bar(0) = 1.
    double alpha_bar0(int t) const { return t == 0 ? 1.0 : alpha_bars[check(t)]; }
    double snr(int t) const { return snrs[check(t)]; }

    std::string config_json() const;
    static NoiseSchedule from_config_json(const std::string& json_text);

  private:
    int check(int t) const;
};

// Builds the full schedule. Betas are linear over t = 1..T inclusive:
// beta_t = beta_start + (t-1)/(T-1) * (beta_end - beta_start); T = 1
// degenerates to beta_1 = beta_start.
NoiseSchedule build_schedule(int num_steps, double beta_start, double beta_end,
                             double k = 1.0, double gamma = 0.5);

// Precomputed lambda_t lookup, t in 1..T.
double weight_at(const NoiseSchedule& schedule, int t);

}  // namespace crowddiff
