#pragma once

#include <cstdint>
#include <string>

#include "crowddiff/denoiser.hpp"
#include "crowddiff/fusion.hpp"

namespace crowddiff {

// All run hyperparameters with their defaults. Every field is range-checked
// at load; validation errors name the offending field.
struct RunConfig {
    // diffusion schedule
    int num_steps = 1000;
    double beta_start = 1e-3;
    double beta_end = 0.02;
    double k = 1.0;
    double gamma = 0.5;

    // losses
    double lambda_vlb = 1e-3;
    double lambda_count = 5e-3;
    bool count_branch = true;

    // optimization
    double lr = 1e-4;
    int warmup_steps = 5000;
    int iterations = 20000;  // desk-scale default; the full-scale budget is 2e5
    int batch_size = 8;
    int crop = 256;
    double weight_decay = 0.0;
    int checkpoint_every = 2000;
    int log_every = 100;

    // sampling / inference
    int realizations = 4;
    int ddim_steps = 100;
    int patch_size = 256;
    double count_threshold = -1.0;  // < 0: derived from the kernel geometry

    // fusion
    double fusion_beta = 0.85;
    int max_neighbors = 4;
    double search_frac = 0.05;
    std::string fusion_order = "ascend";

    // model
    DenoiserConfig denoiser;

    // run plumbing
    uint64_t seed = 1;
    std::string run_dir = "runs/default";
    std::string manifest;

    void validate() const;
    std::string to_json() const;
    static RunConfig from_json(const std::string& text);
    static RunConfig load(const std::string& path);
    void save(const std::string& path) const;

    NoiseSchedule make_schedule() const;
    FusionConfig make_fusion() const;
};

}  // namespace crowddiff
