#pragma once

#include <vector>

#include "crowddiff/counting.hpp"

namespace crowddiff {

enum class FusionOrder { ascend_ssim, descend_ssim, random };

struct FusionConfig {
    double beta = 0.85;                  // rejection-radius scaling factor
    int max_neighbors = 4;               // cap on nearest neighbors
    double search_radius_fraction = 0.05;  // of min(H, W)
    FusionOrder order = FusionOrder::ascend_ssim;

    void validate() const;
};

FusionOrder fusion_order_from_string(const std::string& s);
std::string to_string(FusionOrder order);

// Binary dot raster: 1 at each point's rounded pixel. Two points rounding to
// the same pixel collapse to a single 1; `collisions` (if non-null) counts
// such collapses.
DensityMap rasterize(const CrowdMap& map, int* collisions = nullptr);

// Standard SSIM with an 11x11 Gaussian window (sigma = 1.5), C1 = (0.01 L)^2,
// C2 = (0.03 L)^2 at dynamic range L = 1, averaged over positions where the
// window fits entirely. Inputs must be at least 11x11.
double ssim(const DensityMap& a, const DensityMap& b);

// Permutation of map indices in fusion order. Each map's score is the sum of
// its SSIM against all other rasters; ties and the `random` order keep
// production order.
std::vector<int> fusion_order(const std::vector<CrowdMap>& maps, const FusionConfig& config);

// Maps reordered by fusion_order.
std::vector<CrowdMap> order_realizations(const std::vector<CrowdMap>& maps,
                                         const FusionConfig& config);

// Eq.-style rejection radius for `point`: mean half-distance to its nearest
// reference points (at most max_neighbors) within 0.05*min(H,W), scaled by
// beta. Reference points within 1 px are the same head location, not
// neighbors; with no neighbors in range the radius falls back to 1 px, so
// isolated points still suppress near-coincident duplicates.
double rejection_radius(const Point2& point, const std::vector<Point2>& reference_points,
                        const FusionConfig& config, int height, int width);

// Sequential merge: the first map in fusion order seeds the compound map;
// each later map's points are kept only if they fall outside their rejection
// radius (strict inequality) around every compound point.
CrowdMap fuse(const std::vector<CrowdMap>& maps, const FusionConfig& config);

}  // namespace crowddiff
