#include "crowddiff/schedule.hpp"

#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace crowddiff {

int NoiseSchedule::check(int t) const {
    if (t < 1 || t > num_steps)
        throw std::out_of_range("schedule: timestep " + std::to_string(t) + " outside 1.." +
                                std::to_string(num_steps));
    return t - 1;
}

NoiseSchedule build_schedule(int num_steps, double beta_start, double beta_end,
                             double k, double gamma) {
    if (num_steps < 1) throw std::invalid_argument("build_schedule: num_steps must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw std::invalid_argument(
            "build_schedule: beta bounds must satisfy 0 < beta_start <= beta_end < 1");

    NoiseSchedule s;
    s.num_steps = num_steps;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.k = k;
    s.gamma = gamma;

    s.betas.resize(num_steps);
    s.alphas.resize(num_steps);
    s.alpha_bars.resize(num_steps);
    s.snrs.resize(num_steps);
    s.lambdas.resize(num_steps);
    s.posterior_variance.resize(num_steps);
    s.posterior_log_variance.resize(num_steps);
    s.posterior_mean_coef_x0.resize(num_steps);
    s.posterior_mean_coef_xt.resize(num_steps);

    double running = 1.0;
    for (int i = 0; i < num_steps; ++i) {
        const double frac = num_steps == 1 ? 0.0 : static_cast<double>(i) / (num_steps - 1);
        const double beta = beta_start + frac * (beta_end - beta_start);
        s.betas[i] = beta;
        s.alphas[i] = 1.0 - beta;
        running *= s.alphas[i];
        s.alpha_bars[i] = running;
        s.snrs[i] = running / (1.0 - running);
        s.lambdas[i] =
            ((1.0 - beta) * (1.0 - running) / beta) / std::pow(k + s.snrs[i], gamma);
        if (!std::isfinite(s.lambdas[i]) || s.lambdas[i] <= 0.0)
            throw std::runtime_error("build_schedule: non-finite or non-positive lambda at t=" +
                                     std::to_string(i + 1));
    }

    for (int i = 0; i < num_steps; ++i) {
        const double ab_prev = i == 0 ? 1.0 : s.alpha_bars[i - 1];
        const double ab = s.alpha_bars[i];
        s.posterior_variance[i] = s.betas[i] * (1.0 - ab_prev) / (1.0 - ab);
        s.posterior_mean_coef_x0[i] = s.betas[i] * std::sqrt(ab_prev) / (1.0 - ab);
        s.posterior_mean_coef_xt[i] = (1.0 - ab_prev) * std::sqrt(s.alphas[i]) / (1.0 - ab);
    }
    // Variance of the t=1 posterior is zero; clip to t=2 before taking logs.
    const double var1 = num_steps > 1 ? s.posterior_variance[1] : s.betas[0];
    for (int i = 0; i < num_steps; ++i)
        s.posterior_log_variance[i] = std::log(i == 0 ? var1 : s.posterior_variance[i]);

    return s;
}

double weight_at(const NoiseSchedule& schedule, int t) {
    if (t < 1 || t > schedule.num_steps)
        throw std::out_of_range("weight_at: timestep " + std::to_string(t) + " outside 1.." +
                                std::to_string(schedule.num_steps));
    return schedule.lambdas[t - 1];
}

std::string NoiseSchedule::config_json() const {
    nlohmann::json j{{"num_steps", num_steps}, {"beta_start", beta_start},
                     {"beta_end", beta_end},   {"k", k},
                     {"gamma", gamma}};
    return j.dump();
}

NoiseSchedule NoiseSchedule::from_config_json(const std::string& json_text) {
    const auto j = nlohmann::json::parse(json_text);
    return build_schedule(j.at("num_steps").get<int>(), j.at("beta_start").get<double>(),
                          j.at("beta_end").get<double>(), j.at("k").get<double>(),
                          j.at("gamma").get<double>());
}

}  // namespace crowddiff
