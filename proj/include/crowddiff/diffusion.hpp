#pragma once

#include <cstdint>
#include <vector>

#include "crowddiff/groundtruth.hpp"
#include "crowddiff/schedule.hpp"
#include "crowddiff/tensor.hpp"

namespace crowddiff {

// One training batch in the scaled density domain. xt is deterministic given
// (x0, eps, t, schedule).
struct DiffusionBatch {
    Tensor x0;           // [B,1,H,W] clean scaled maps in [-1, 1]
    Tensor y;            // [B,3,H,W] conditioning images
    std::vector<int> t;  // B timesteps in 1..T
    Tensor eps;          // [B,1,H,W] standard-normal noise
    Tensor xt;           // [B,1,H,W] corrupted maps
};

struct LossBreakdown {
    double weighted_eps_mse = 0.0;
    double vlb = 0.0;
    double count_l1 = 0.0;
    double total = 0.0;
    double lambda_vlb = 1e-3;
    double lambda_count = 5e-3;

    // Fixed summation order so `total` is bit-reproducible.
    void refresh_total() { total = weighted_eps_mse + lambda_vlb * vlb + lambda_count * count_l1; }
};

// x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps, elementwise.
Tensor forward_corrupt(const Tensor& x0, const Tensor& eps, const std::vector<int>& t,
                       const NoiseSchedule& schedule);

// Weighted eps-MSE plus the variational bound term. The MSE term is the batch
// mean of lambda_t * ||eps_pred - eps||^2 (sum over pixels). The vlb term is
// the KL of the reverse step (discretized likelihood at t = 1) in bits per
// dim, with the gradient stopped through the predicted mean, so grad_eps_pred
// receives only the MSE path and grad_var_interp only the vlb path.
LossBreakdown hybrid_loss(const Tensor& eps_pred, const Tensor& var_interp,
                          const DiffusionBatch& batch, const NoiseSchedule& schedule,
                          double lambda_vlb = 1e-3, Tensor* grad_eps_pred = nullptr,
                          Tensor* grad_var_interp = nullptr);

// Batch mean of lambda_t * |count_pred - count_true|.
double count_loss(const std::vector<double>& count_pred, const std::vector<double>& count_true,
                  const std::vector<int>& t, const NoiseSchedule& schedule,
                  std::vector<double>* grad_count_pred = nullptr);

// total = hybrid.total + lambda_count * count
LossBreakdown overall_loss(LossBreakdown hybrid, double count, double lambda_count);

// Model handle for sampling: predicts the noise in xt given the conditioning
// image. Implementations must be safe for concurrent read-only use.
class NoisePredictor {
  public:
    virtual ~NoisePredictor() = default;
    // y: [1,3,H,W], xt: [1,1,H,W], t in 1..T -> eps_hat [1,1,H,W]
    virtual Tensor predict_eps(const Tensor& y, const Tensor& xt, int t) = 0;
};

// Initial sampler noise; the same (shape, seed) always yields the same field.
Tensor initial_noise(int height, int width, uint64_t seed);

// Uniformly spaced decreasing timestep subsequence for DDIM, T down to 1.
std::vector<int> ddim_timesteps(int num_steps, int num_sampling_steps);

// Deterministic (eta = 0) DDIM sampling from seeded standard-normal noise.
// Returns the final x0 estimate in the scaled density domain.
ScaledDensityMap ddim_sample(NoisePredictor& model, const Tensor& y,
                             const NoiseSchedule& schedule, int num_sampling_steps,
                             uint64_t seed);

}  // namespace crowddiff
