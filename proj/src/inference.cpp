#include "crowddiff/inference.hpp"

#include <cmath>
#include <stdexcept>

namespace crowddiff {

namespace {

// Anchors for one axis: non-overlapping patches, trailing tile pulled back to
// fit; returns (tile start, owned interval) pairs.
std::vector<std::pair<int, std::pair<int, int>>> axis_tiles(int dim, int patch) {
    std::vector<std::pair<int, std::pair<int, int>>> out;
    if (dim <= patch) {
        out.push_back({0, {0, dim}});
        return out;
    }
    const int n = (dim + patch - 1) / patch;
    int prev_end = 0;
    for (int i = 0; i < n; ++i) {
        const int a = i < n - 1 ? i * patch : dim - patch;
        const int end = i < n - 1 ? a + patch : dim;
        out.push_back({a, {prev_end, end}});
        prev_end = end;
    }
    return out;
}

int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i = std::abs(i) % period;
    return i < n ? i : period - i;
}

}  // namespace

TilePlan plan_tiles(int height, int width, int patch_size) {
    if (height < 1 || width < 1) throw std::invalid_argument("plan_tiles: empty image");
    if (patch_size < 1) throw std::invalid_argument("plan_tiles: bad patch size");
    TilePlan plan;
    plan.patch_size = patch_size;
    const auto ys = axis_tiles(height, patch_size);
    const auto xs = axis_tiles(width, patch_size);
    for (const auto& [y0, yown] : ys)
        for (const auto& [x0, xown] : xs) {
            TileBox tile{x0, y0, std::min(x0 + patch_size, width), std::min(y0 + patch_size, height)};
            plan.tiles.push_back(tile);
            plan.owned.push_back({xown.first, yown.first, xown.second, yown.second});
        }
    return plan;
}

PredictionResult predict_full(NoisePredictor& model, const Image& image,
                              const NoiseSchedule& schedule, const InferenceParams& params,
                              const std::vector<uint64_t>& seeds) {
    if (static_cast<int>(seeds.size()) != params.num_realizations)
        throw std::invalid_argument("predict_full: need one seed per realization");
    if (image.channels != 3) throw std::invalid_argument("predict_full: expected RGB image");
    const double scale =
        params.density_scale > 0.0 ? params.density_scale : default_density_scale();
    const double threshold =
        params.count_threshold >= 0.0 ? params.count_threshold : default_count_threshold();

    const int H = image.height, W = image.width;
    const int patch = params.patch_size;
    const TilePlan plan = plan_tiles(H, W, patch);

    // Standardized conditioning crop per tile, reflection-padded to the patch
    // size when the tile is smaller (sub-patch images).
    std::vector<Tensor> tile_inputs;
    tile_inputs.reserve(plan.tiles.size());
    for (const TileBox& tb : plan.tiles) {
        Tensor y({1, 3, patch, patch});
        for (int c = 0; c < 3; ++c)
            for (int yy = 0; yy < patch; ++yy)
                for (int xx = 0; xx < patch; ++xx) {
                    const int sy = reflect_index(tb.y0 + yy, H);
                    const int sx = reflect_index(tb.x0 + xx, W);
                    y.at(0, c, yy, xx) = (image.at(c, sy, sx) - 0.5f) * 2.0f;
                }
        tile_inputs.push_back(std::move(y));
    }

    PredictionResult result;
    for (int r = 0; r < params.num_realizations; ++r) {
        ScaledDensityMap stitched(H, W);
        for (size_t k = 0; k < plan.tiles.size(); ++k) {
            const TileBox& tb = plan.tiles[k];
            const TileBox& own = plan.owned[k];
            ScaledDensityMap tile_map;
            try {
                tile_map = ddim_sample(model, tile_inputs[k], schedule, params.ddim_steps,
                                       mix_seed(seeds[static_cast<size_t>(r)], k));
            } catch (const std::exception& e) {
                throw std::runtime_error("predict_full: tile (" + std::to_string(tb.x0) + "," +
                                         std::to_string(tb.y0) + "): " + e.what());
            }
            for (int yy = own.y0; yy < own.y1; ++yy)
                for (int xx = own.x0; xx < own.x1; ++xx)
                    stitched.at(yy, xx) = tile_map.at(yy - tb.y0, xx - tb.x0);
        }
        DensityMap density = unscale_density(stitched, scale);
        result.crowd_maps.push_back(detect_contours(density, threshold));
        result.realization_counts.push_back(
            static_cast<int>(result.crowd_maps.back().points.size()));
        result.densities.push_back(std::move(density));
    }
    result.fused = fuse(result.crowd_maps, params.fusion);
    result.count = static_cast<int>(result.fused.points.size());
    return result;
}

}  // namespace crowddiff
