#pragma once

#include <array>
#include <string>
#include <vector>

namespace crowddiff {

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

// Non-negative density field; one unit-mass 3x3 Gaussian (sigma = 0.5) per
// annotated head. Row-major, height x width.
struct DensityMap {
    int height = 0;
    int width = 0;
    std::vector<double> values;

    DensityMap() = default;
    DensityMap(int h, int w) : height(h), width(w), values(static_cast<size_t>(h) * w, 0.0) {}

    double& at(int y, int x) { return values[static_cast<size_t>(y) * width + x]; }
    double at(int y, int x) const { return values[static_cast<size_t>(y) * width + x]; }
    double sum() const;
};

// Density after the affine map v' = 2*scale*v - 1 (clipped to +1); the
// domain the diffusion process operates in.
struct ScaledDensityMap {
    int height = 0;
    int width = 0;
    std::vector<double> values;

    ScaledDensityMap() = default;
    ScaledDensityMap(int h, int w)
        : height(h), width(w), values(static_cast<size_t>(h) * w, -1.0) {}

    double& at(int y, int x) { return values[static_cast<size_t>(y) * width + x]; }
    double at(int y, int x) const { return values[static_cast<size_t>(y) * width + x]; }
};

// The 3x3 sigma = 0.5 kernel, normalized to unit mass, row-major (dy, dx).
const std::array<double, 9>& unit_kernel3x3();
double kernel_center_weight();  // largest kernel weight
double kernel_min_weight();     // smallest (corner) kernel weight

// Default density scale: 1 / center weight, so an isolated head's peak maps
// to exactly +1 in the scaled domain.
double default_density_scale();

// Default contour threshold: half the smallest kernel weight (unscaled domain).
double default_count_threshold();

// Deposits a unit-mass 3x3 kernel at each point's nearest pixel; overlapping
// deposits sum; kernels truncated at borders are not renormalized.
DensityMap render_density(const std::vector<Point2>& points, int height, int width);

ScaledDensityMap scale_density(const DensityMap& map, double scale);
DensityMap unscale_density(const ScaledDensityMap& scaled, double scale);

// DMAP raster: 8-byte header (magic "DMAP", u16 height, u16 width,
// little-endian) followed by row-major float32 values.
void write_dmap(const std::string& path, const DensityMap& map);
DensityMap read_dmap(const std::string& path);

}  // namespace crowddiff
