#include "crowddiff/groundtruth.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace crowddiff {

double DensityMap::sum() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
}

const std::array<double, 9>& unit_kernel3x3() {
    static const std::array<double, 9> k = [] {
        std::array<double, 9> w{};
        double total = 0.0;
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                // variance 0.25 => exp(-(dx^2+dy^2) / (2*0.25))
                const double v = std::exp(-2.0 * (dx * dx + dy * dy));
                w[(dy + 1) * 3 + (dx + 1)] = v;
                total += v;
            }
        for (double& v : w) v /= total;
        return w;
    }();
    return k;
}

double kernel_center_weight() { return unit_kernel3x3()[4]; }
double kernel_min_weight() { return unit_kernel3x3()[0]; }
double default_density_scale() { return 1.0 / kernel_center_weight(); }
double default_count_threshold() { return 0.5 * kernel_min_weight(); }

DensityMap render_density(const std::vector<Point2>& points, int height, int width) {
    if (height < 1 || width < 1)
        throw std::invalid_argument("render_density: non-positive extent");
    DensityMap map(height, width);
    const auto& kernel = unit_kernel3x3();
    for (const Point2& p : points) {
        if (p.x < 0.0 || p.x >= width || p.y < 0.0 || p.y >= height)
            throw std::out_of_range("render_density: point (" + std::to_string(p.x) + ", " +
                                    std::to_string(p.y) + ") outside " + std::to_string(width) +
                                    "x" + std::to_string(height));
        const int cx = static_cast<int>(std::lround(p.x));
        const int cy = static_cast<int>(std::lround(p.y));
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const int y = cy + dy, x = cx + dx;
                if (y < 0 || y >= height || x < 0 || x >= width) continue;
                map.at(y, x) += kernel[(dy + 1) * 3 + (dx + 1)];
            }
    }
    return map;
}

ScaledDensityMap scale_density(const DensityMap& map, double scale) {
    if (!(scale > 0.0)) throw std::invalid_argument("scale_density: scale must be > 0");
    ScaledDensityMap out(map.height, map.width);
    for (size_t i = 0; i < map.values.size(); ++i) {
        const double v = 2.0 * scale * map.values[i] - 1.0;
        out.values[i] = v > 1.0 ? 1.0 : v;
    }
    return out;
}

DensityMap unscale_density(const ScaledDensityMap& scaled, double scale) {
    if (!(scale > 0.0)) throw std::invalid_argument("unscale_density: scale must be > 0");
    DensityMap out(scaled.height, scaled.width);
    for (size_t i = 0; i < scaled.values.size(); ++i) {
        const double v = (scaled.values[i] + 1.0) / (2.0 * scale);
        out.values[i] = v < 0.0 ? 0.0 : v;
    }
    return out;
}

void write_dmap(const std::string& path, const DensityMap& map) {
    if (map.height > 0xffff || map.width > 0xffff)
        throw std::invalid_argument("write_dmap: extent exceeds u16 header");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_dmap: cannot open " + path);
    f.write("DMAP", 4);
    const uint16_t h = static_cast<uint16_t>(map.height), w = static_cast<uint16_t>(map.width);
    const uint8_t hdr[4] = {static_cast<uint8_t>(h & 0xff), static_cast<uint8_t>(h >> 8),
                            static_cast<uint8_t>(w & 0xff), static_cast<uint8_t>(w >> 8)};
    f.write(reinterpret_cast<const char*>(hdr), 4);
    std::vector<float> row(map.values.size());
    for (size_t i = 0; i < map.values.size(); ++i) row[i] = static_cast<float>(map.values[i]);
    f.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(sizeof(float) * row.size()));
    if (!f) throw std::runtime_error("write_dmap: write failed for " + path);
}

DensityMap read_dmap(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_dmap: cannot open " + path);
    char magic[4];
    uint8_t hdr[4];
    f.read(magic, 4);
    f.read(reinterpret_cast<char*>(hdr), 4);
    if (!f || std::memcmp(magic, "DMAP", 4) != 0)
        throw std::runtime_error("read_dmap: bad header in " + path);
    const int h = hdr[0] | (hdr[1] << 8), w = hdr[2] | (hdr[3] << 8);
    DensityMap map(h, w);
    std::vector<float> row(static_cast<size_t>(h) * w);
    f.read(reinterpret_cast<char*>(row.data()),
           static_cast<std::streamsize>(sizeof(float) * row.size()));
    if (!f) throw std::runtime_error("read_dmap: truncated raster in " + path);
    for (size_t i = 0; i < row.size(); ++i) map.values[i] = row[i];
    return map;
}

}  // namespace crowddiff
