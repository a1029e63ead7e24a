#include "crowddiff/counting.hpp"

#include <stdexcept>

namespace crowddiff {

CrowdMap detect_contours(const DensityMap& map, double threshold) {
    if (threshold < 0.0) throw std::invalid_argument("detect_contours: threshold must be >= 0");
    const int H = map.height, W = map.width;
    CrowdMap out;
    out.height = H;
    out.width = W;
    if (H == 0 || W == 0) return out;

    std::vector<uint8_t> visited(static_cast<size_t>(H) * W, 0);
    std::vector<int> stack;
    for (int sy = 0; sy < H; ++sy)
        for (int sx = 0; sx < W; ++sx) {
            const size_t sidx = static_cast<size_t>(sy) * W + sx;
            if (visited[sidx] || map.values[sidx] <= threshold) continue;
            // Flood-fill one 8-connected component.
            double mass = 0.0, mx = 0.0, my = 0.0;
            stack.clear();
            stack.push_back(static_cast<int>(sidx));
            visited[sidx] = 1;
            while (!stack.empty()) {
                const int idx = stack.back();
                stack.pop_back();
                const int y = idx / W, x = idx % W;
                const double v = map.values[idx];
                mass += v;
                mx += v * x;
                my += v * y;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (dy == 0 && dx == 0) continue;
                        const int ny = y + dy, nx = x + dx;
                        if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
                        const size_t nidx = static_cast<size_t>(ny) * W + nx;
                        if (visited[nidx] || map.values[nidx] <= threshold) continue;
                        visited[nidx] = 1;
                        stack.push_back(static_cast<int>(nidx));
                    }
            }
            out.points.push_back({mx / mass, my / mass});
        }
    return out;
}

int count(const DensityMap& map, double threshold) {
    return static_cast<int>(detect_contours(map, threshold).points.size());
}

double sum_count(const DensityMap& map) { return map.sum(); }

}  // namespace crowddiff
