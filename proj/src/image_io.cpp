#include "crowddiff/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace crowddiff {

namespace {

void skip_ws_and_comments(std::istream& f) {
    while (true) {
        const int c = f.peek();
        if (c == '#') {
            std::string line;
            std::getline(f, line);
        } else if (std::isspace(c)) {
            f.get();
        } else {
            return;
        }
    }
}

struct PnmHeader {
    std::string magic;
    int width = 0, height = 0, maxval = 0;
};

PnmHeader read_pnm_header(std::istream& f, const std::string& path) {
    PnmHeader h;
    f >> h.magic;
    if (h.magic != "P5" && h.magic != "P6")
        throw std::runtime_error("image: " + path + " is not binary PGM/PPM");
    skip_ws_and_comments(f);
    f >> h.width;
    skip_ws_and_comments(f);
    f >> h.height;
    skip_ws_and_comments(f);
    f >> h.maxval;
    f.get();  // single whitespace before raster
    if (!f || h.width < 1 || h.height < 1)
        throw std::runtime_error("image: bad header in " + path);
    if (h.maxval != 255) throw std::runtime_error("image: only 8-bit PGM/PPM supported: " + path);
    return h;
}

}  // namespace

Image read_image(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("image: cannot open " + path);
    const PnmHeader h = read_pnm_header(f, path);
    const int ch = h.magic == "P6" ? 3 : 1;
    Image img(h.height, h.width, ch);
    std::vector<uint8_t> raw(static_cast<size_t>(h.width) * h.height * ch);
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!f) throw std::runtime_error("image: truncated raster in " + path);
    // interleaved -> planar
    for (int y = 0; y < h.height; ++y)
        for (int x = 0; x < h.width; ++x)
            for (int c = 0; c < ch; ++c)
                img.at(c, y, x) =
                    raw[(static_cast<size_t>(y) * h.width + x) * ch + c] / 255.0f;
    return img;
}

void write_ppm(const std::string& path, const Image& image) {
    if (image.channels != 3 && image.channels != 1)
        throw std::invalid_argument("write_ppm: expected 1 or 3 channels");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("image: cannot open " + path + " for writing");
    const int ch = image.channels;
    f << (ch == 3 ? "P6\n" : "P5\n") << image.width << " " << image.height << "\n255\n";
    std::vector<uint8_t> raw(static_cast<size_t>(image.width) * image.height * ch);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < ch; ++c) {
                const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
                raw[(static_cast<size_t>(y) * image.width + x) * ch + c] =
                    static_cast<uint8_t>(std::lround(v * 255.0f));
            }
    f.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!f) throw std::runtime_error("image: write failed for " + path);
}

std::pair<int, int> read_image_extent(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("image: cannot open " + path);
    const PnmHeader h = read_pnm_header(f, path);
    return {h.height, h.width};
}

Image to_rgb(const Image& image) {
    if (image.channels == 3) return image;
    Image out(image.height, image.width, 3);
    for (int c = 0; c < 3; ++c)
        std::copy(image.data.begin(), image.data.begin() + static_cast<long>(image.height) * image.width,
                  out.data.begin() + static_cast<long>(c) * image.height * image.width);
    return out;
}

Image density_overlay(const Image& image, const DensityMap& density) {
    Image out = to_rgb(image);
    if (density.height != out.height || density.width != out.width)
        throw std::invalid_argument("density_overlay: extent mismatch");
    double peak = 0.0;
    for (double v : density.values) peak = std::max(peak, v);
    if (peak <= 0.0) return out;
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
            const float a = static_cast<float>(density.at(y, x) / peak);
            out.at(0, y, x) = std::min(1.0f, out.at(0, y, x) * (1.0f - a) + a);
            out.at(1, y, x) *= (1.0f - 0.6f * a);
            out.at(2, y, x) *= (1.0f - 0.6f * a);
        }
    return out;
}

Image dots_overlay(const Image& image, const std::vector<Point2>& points) {
    Image out = to_rgb(image);
    for (const Point2& p : points) {
        const int cx = static_cast<int>(std::lround(p.x));
        const int cy = static_cast<int>(std::lround(p.y));
        for (int d = -1; d <= 1; ++d) {
            const int xs[2] = {cx + d, cx};
            const int ys[2] = {cy, cy + d};
            for (int i = 0; i < 2; ++i) {
                if (xs[i] < 0 || xs[i] >= out.width || ys[i] < 0 || ys[i] >= out.height) continue;
                out.at(0, ys[i], xs[i]) = 0.0f;
                out.at(1, ys[i], xs[i]) = 1.0f;
                out.at(2, ys[i], xs[i]) = 0.0f;
            }
        }
    }
    return out;
}

}  // namespace crowddiff
