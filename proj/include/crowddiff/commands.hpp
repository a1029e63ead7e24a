#pragma once

#include <string>
#include <vector>

#include "crowddiff/config.hpp"
#include "crowddiff/inference.hpp"
#include "crowddiff/metrics.hpp"

namespace crowddiff {

// Converts a directory of PPM/PGM images with matching two-column point
// tables (<stem>.txt: one "x y" pair per line) into a canonical manifest.
// Returns the number of imported records.
int cmd_import(const std::string& src_dir, const std::string& dst_manifest);

struct SynthParams {
    std::string out_dir;
    int num_train = 256;
    int num_val = 0;
    int num_test = 32;
    int height = 64;
    int width = 64;
    int min_points = 10;
    int max_points = 80;
    double min_separation = 4.0;
    uint64_t seed = 1;
};

// Generates a synthetic dataset (images + manifest.jsonl) under out_dir.
void cmd_synth(const SynthParams& params);

struct TrainResult {
    double initial_loss_ma = 0.0;  // mean total loss over the first 100 steps
    double final_loss_ma = 0.0;    // mean total loss over the last 100 steps
    std::string checkpoint_path;
    std::vector<double> losses;
};

TrainResult cmd_train(const RunConfig& config);

struct SampleResult {
    PredictionResult prediction;
    std::string summary_json;
};

// End-to-end sampling for one image; writes density rasters, crowd maps,
// overlay figures, and a summary record under the run directory.
SampleResult cmd_sample(const RunConfig& config, const std::string& checkpoint,
                        const std::string& image_path, uint64_t sample_seed);

EvalReport cmd_evaluate(const RunConfig& config, const std::string& checkpoint,
                        const std::string& manifest_path, const std::string& split);

// axis: fusion-order | counting-op | realizations
AblationTable cmd_ablate(const RunConfig& config, const std::string& checkpoint,
                         const std::string& manifest_path, const std::string& axis,
                         const std::string& split);

}  // namespace crowddiff
