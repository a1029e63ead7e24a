#pragma once

#include <cstdint>
#include <vector>

#include "crowddiff/data.hpp"
#include "crowddiff/diffusion.hpp"
#include "crowddiff/fusion.hpp"

namespace crowddiff {

struct TileBox {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open
    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
};

// Crop boxes covering the image plus the disjoint regions each tile writes
// into the stitched output. Trailing tiles anchor at dim - patch_size, and
// each overlapped strip belongs to the earlier tile, so owned regions
// partition the image exactly. Images smaller than patch_size in a dimension
// get one tile spanning that dimension; the sampler reflection-pads it.
struct TilePlan {
    int patch_size = 256;
    std::vector<TileBox> tiles;
    std::vector<TileBox> owned;
};

TilePlan plan_tiles(int height, int width, int patch_size);

struct PredictionResult {
    std::vector<DensityMap> densities;   // one stitched map per realization
    std::vector<CrowdMap> crowd_maps;    // contours per realization
    CrowdMap fused;
    int count = 0;
    std::vector<int> realization_counts;
};

struct InferenceParams {
    int num_realizations = 4;
    int ddim_steps = 100;
    int patch_size = 256;
    double density_scale = 0.0;    // <= 0 means the default kernel-derived scale
    double count_threshold = -1.0;  // < 0 means the default kernel-derived threshold
    FusionConfig fusion;
};

// Full-image prediction: per realization, sample each tile with DDIM, stitch
// by owned regions, unscale, run contour detection; finally fuse the
// realizations' crowd maps. Tile seeds derive from (seeds[r], tile index).
PredictionResult predict_full(NoisePredictor& model, const Image& image,
                              const NoiseSchedule& schedule, const InferenceParams& params,
                              const std::vector<uint64_t>& seeds);

}  // namespace crowddiff
