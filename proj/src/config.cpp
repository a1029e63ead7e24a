#include "crowddiff/config.hpp"

#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace crowddiff {

using nlohmann::json;

namespace {

void require(bool ok, const std::string& field, const std::string& what) {
    if (!ok) throw std::invalid_argument("config: field '" + field + "' " + what);
}

}  // namespace

void RunConfig::validate() const {
    require(num_steps >= 1, "num-steps", "must be >= 1");
    require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0, "beta-start/beta-end",
            "must satisfy 0 < beta_start <= beta_end < 1");
    require(k > 0.0, "k", "must be > 0");
    require(lambda_vlb >= 0.0, "lambda-vlb", "must be >= 0");
    require(lambda_count >= 0.0, "lambda-count", "must be >= 0");
    require(lr > 0.0, "lr", "must be > 0");
    require(warmup_steps >= 0, "warmup-steps", "must be >= 0");
    require(iterations >= 1, "iterations", "must be >= 1");
    require(batch_size >= 1, "batch-size", "must be >= 1");
    require(crop >= 8, "crop", "must be >= 8");
    require(weight_decay >= 0.0, "weight-decay", "must be >= 0");
    require(checkpoint_every >= 1, "checkpoint-every", "must be >= 1");
    require(log_every >= 1, "log-every", "must be >= 1");
    require(realizations >= 1, "realizations", "must be >= 1");
    require(ddim_steps >= 1 && ddim_steps <= num_steps, "ddim-steps", "must be in 1..num-steps");
    require(patch_size >= 8, "patch-size", "must be >= 8");
    require(fusion_beta > 0.0, "fusion-beta", "must be > 0");
    require(max_neighbors >= 1, "max-neighbors", "must be >= 1");
    require(search_frac > 0.0 && search_frac < 1.0, "search-frac", "must be in (0, 1)");
    fusion_order_from_string(fusion_order);  // throws on bad value
    require(crop % denoiser.downsample_factor() == 0, "crop",
            "must be divisible by the model downsample factor");
    require(patch_size % denoiser.downsample_factor() == 0, "patch-size",
            "must be divisible by the model downsample factor");
    denoiser.validate();
}

std::string RunConfig::to_json() const {
    json j{{"num_steps", num_steps},
           {"beta_start", beta_start},
           {"beta_end", beta_end},
           {"k", k},
           {"gamma", gamma},
           {"lambda_vlb", lambda_vlb},
           {"lambda_count", lambda_count},
           {"count_branch", count_branch},
           {"lr", lr},
           {"warmup_steps", warmup_steps},
           {"iterations", iterations},
           {"batch_size", batch_size},
           {"crop", crop},
           {"weight_decay", weight_decay},
           {"checkpoint_every", checkpoint_every},
           {"log_every", log_every},
           {"realizations", realizations},
           {"ddim_steps", ddim_steps},
           {"patch_size", patch_size},
           {"count_threshold", count_threshold},
           {"fusion_beta", fusion_beta},
           {"max_neighbors", max_neighbors},
           {"search_frac", search_frac},
           {"fusion_order", fusion_order},
           {"denoiser", json::parse(denoiser.to_json())},
           {"seed", seed},
           {"run_dir", run_dir},
           {"manifest", manifest}};
    return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
    const json j = json::parse(text);
    RunConfig c;
    c.num_steps = j.value("num_steps", c.num_steps);
    c.beta_start = j.value("beta_start", c.beta_start);
    c.beta_end = j.value("beta_end", c.beta_end);
    c.k = j.value("k", c.k);
    c.gamma = j.value("gamma", c.gamma);
    c.lambda_vlb = j.value("lambda_vlb", c.lambda_vlb);
    c.lambda_count = j.value("lambda_count", c.lambda_count);
    c.count_branch = j.value("count_branch", c.count_branch);
    c.lr = j.value("lr", c.lr);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.iterations = j.value("iterations", c.iterations);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.crop = j.value("crop", c.crop);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.log_every = j.value("log_every", c.log_every);
    c.realizations = j.value("realizations", c.realizations);
    c.ddim_steps = j.value("ddim_steps", c.ddim_steps);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.count_threshold = j.value("count_threshold", c.count_threshold);
    c.fusion_beta = j.value("fusion_beta", c.fusion_beta);
    c.max_neighbors = j.value("max_neighbors", c.max_neighbors);
    c.search_frac = j.value("search_frac", c.search_frac);
    c.fusion_order = j.value("fusion_order", c.fusion_order);
    if (j.contains("denoiser")) c.denoiser = DenoiserConfig::from_json(j.at("denoiser").dump());
    c.seed = j.value("seed", c.seed);
    c.run_dir = j.value("run_dir", c.run_dir);
    c.manifest = j.value("manifest", c.manifest);
    c.validate();
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return from_json(text);
}

void RunConfig::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path + " for writing");
    f << to_json() << "\n";
}

NoiseSchedule RunConfig::make_schedule() const {
    return build_schedule(num_steps, beta_start, beta_end, k, gamma);
}

FusionConfig RunConfig::make_fusion() const {
    FusionConfig f;
    f.beta = fusion_beta;
    f.max_neighbors = max_neighbors;
    f.search_radius_fraction = search_frac;
    f.order = fusion_order_from_string(fusion_order);
    return f;
}

}  // namespace crowddiff
