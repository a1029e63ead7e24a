#pragma once

#include <string>
#include <vector>

#include "crowddiff/groundtruth.hpp"

namespace crowddiff {

// Planar CHW image, values in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> data;

    Image() = default;
    Image(int h, int w, int c)
        : height(h), width(w), channels(c),
          data(static_cast<size_t>(h) * w * c, 0.0f) {}

    float& at(int c, int y, int x) {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }
    float at(int c, int y, int x) const {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }
};

// Binary PPM (P6) / PGM (P5), 8-bit. Grayscale files load as one channel.
Image read_image(const std::string& path);
void write_ppm(const std::string& path, const Image& image);

// Header-only probe; returns (height, width) without decoding pixels.
std::pair<int, int> read_image_extent(const std::string& path);

// Ensures three channels by replicating a single-channel image.
Image to_rgb(const Image& image);

// Static figures: density field blended over the photo, and dot markers.
Image density_overlay(const Image& image, const DensityMap& density);
Image dots_overlay(const Image& image, const std::vector<Point2>& points);

}  // namespace crowddiff
