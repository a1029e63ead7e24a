#pragma once

#include <vector>

#include "crowddiff/groundtruth.hpp"

namespace crowddiff {

// Discrete head locations extracted from a density map; the count is the
// cardinality of `points`.
struct CrowdMap {
    int height = 0;
    int width = 0;
    std::vector<Point2> points;
};

// Binarizes values > threshold, labels 8-connected components, and emits one
// intensity-weighted centroid per component. Component order follows raster
// scan order of each component's first pixel.
CrowdMap detect_contours(const DensityMap& map, double threshold);

// |detect_contours(map, threshold).points|
int count(const DensityMap& map, double threshold);

// Plain density summation, kept as the baseline counting operator.
double sum_count(const DensityMap& map);

}  // namespace crowddiff
