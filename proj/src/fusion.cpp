#include "crowddiff/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace crowddiff {

void FusionConfig::validate() const {
    if (!(beta > 0.0)) throw std::invalid_argument("fusion: beta must be > 0");
    if (max_neighbors < 1) throw std::invalid_argument("fusion: max_neighbors must be >= 1");
    if (!(search_radius_fraction > 0.0 && search_radius_fraction < 1.0))
        throw std::invalid_argument("fusion: search_radius_fraction must be in (0, 1)");
}

FusionOrder fusion_order_from_string(const std::string& s) {
    if (s == "ascend") return FusionOrder::ascend_ssim;
    if (s == "descend") return FusionOrder::descend_ssim;
    if (s == "random") return FusionOrder::random;
    throw std::invalid_argument("fusion: unknown order '" + s + "' (ascend|descend|random)");
}

std::string to_string(FusionOrder order) {
    switch (order) {
        case FusionOrder::ascend_ssim: return "ascend";
        case FusionOrder::descend_ssim: return "descend";
        case FusionOrder::random: return "random";
    }
    return "?";
}

DensityMap rasterize(const CrowdMap& map, int* collisions) {
    DensityMap raster(map.height, map.width);
    int hits = 0;
    for (const Point2& p : map.points) {
        int x = static_cast<int>(std::lround(p.x));
        int y = static_cast<int>(std::lround(p.y));
        x = std::clamp(x, 0, map.width - 1);
        y = std::clamp(y, 0, map.height - 1);
        if (raster.at(y, x) != 0.0) ++hits;
        raster.at(y, x) = 1.0;
    }
    if (collisions) *collisions = hits;
    return raster;
}

namespace {

constexpr int kWindow = 11;
constexpr double kWindowSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;  // (0.01 * L)^2, L = 1
constexpr double kC2 = 0.03 * 0.03;

const std::array<double, kWindow>& ssim_window_1d() {
    static const std::array<double, kWindow> w = [] {
        std::array<double, kWindow> g{};
        double total = 0.0;
        for (int i = 0; i < kWindow; ++i) {
            const double d = i - (kWindow - 1) / 2;
            g[i] = std::exp(-d * d / (2.0 * kWindowSigma * kWindowSigma));
            total += g[i];
        }
        for (double& v : g) v /= total;
        return g;
    }();
    return w;
}

// Separable valid-mode Gaussian filter: in H x W -> out (H-10) x (W-10).
std::vector<double> blur_valid(const std::vector<double>& in, int H, int W) {
    const auto& g = ssim_window_1d();
    const int Wv = W - kWindow + 1, Hv = H - kWindow + 1;
    std::vector<double> tmp(static_cast<size_t>(H) * Wv);
#pragma omp parallel for
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < Wv; ++x) {
            double acc = 0.0;
            for (int i = 0; i < kWindow; ++i) acc += g[i] * in[static_cast<size_t>(y) * W + x + i];
            tmp[static_cast<size_t>(y) * Wv + x] = acc;
        }
    std::vector<double> out(static_cast<size_t>(Hv) * Wv);
#pragma omp parallel for
    for (int y = 0; y < Hv; ++y)
        for (int x = 0; x < Wv; ++x) {
            double acc = 0.0;
            for (int i = 0; i < kWindow; ++i) acc += g[i] * tmp[static_cast<size_t>(y + i) * Wv + x];
            out[static_cast<size_t>(y) * Wv + x] = acc;
        }
    return out;
}

}  // namespace

double ssim(const DensityMap& a, const DensityMap& b) {
    if (a.height != b.height || a.width != b.width)
        throw std::invalid_argument("ssim: shape mismatch");
    if (a.height < kWindow || a.width < kWindow)
        throw std::invalid_argument("ssim: input smaller than the 11x11 window");
    const int H = a.height, W = a.width;
    const size_t n = a.values.size();
    std::vector<double> aa(n), bb(n), ab(n);
    for (size_t i = 0; i < n; ++i) {
        aa[i] = a.values[i] * a.values[i];
        bb[i] = b.values[i] * b.values[i];
        ab[i] = a.values[i] * b.values[i];
    }
    const auto mu1 = blur_valid(a.values, H, W);
    const auto mu2 = blur_valid(b.values, H, W);
    const auto s11 = blur_valid(aa, H, W);
    const auto s22 = blur_valid(bb, H, W);
    const auto s12 = blur_valid(ab, H, W);
    double total = 0.0;
    for (size_t i = 0; i < mu1.size(); ++i) {
        const double m1 = mu1[i], m2 = mu2[i];
        const double var1 = s11[i] - m1 * m1;
        const double var2 = s22[i] - m2 * m2;
        const double cov = s12[i] - m1 * m2;
        total += ((2.0 * m1 * m2 + kC1) * (2.0 * cov + kC2)) /
                 ((m1 * m1 + m2 * m2 + kC1) * (var1 + var2 + kC2));
    }
    return total / static_cast<double>(mu1.size());
}

std::vector<int> fusion_order(const std::vector<CrowdMap>& maps, const FusionConfig& config) {
    if (maps.empty()) throw std::invalid_argument("fusion_order: no maps");
    for (const CrowdMap& m : maps)
        if (m.height != maps[0].height || m.width != maps[0].width)
            throw std::invalid_argument("fusion_order: extent mismatch between realizations");
    std::vector<int> order(maps.size());
    std::iota(order.begin(), order.end(), 0);
    if (config.order == FusionOrder::random || maps.size() == 1) return order;

    std::vector<DensityMap> rasters;
    rasters.reserve(maps.size());
    for (const CrowdMap& m : maps) rasters.push_back(rasterize(m));
    const int n = static_cast<int>(maps.size());
    std::vector<double> pair(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double s = ssim(rasters[i], rasters[j]);
            pair[static_cast<size_t>(i) * n + j] = s;
            pair[static_cast<size_t>(j) * n + i] = s;
        }
    std::vector<double> score(n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (j != i) score[i] += pair[static_cast<size_t>(i) * n + j];

    const bool ascend = config.order == FusionOrder::ascend_ssim;
    std::stable_sort(order.begin(), order.end(), [&](int i, int j) {
        return ascend ? score[i] < score[j] : score[i] > score[j];
    });
    return order;
}

std::vector<CrowdMap> order_realizations(const std::vector<CrowdMap>& maps,
                                         const FusionConfig& config) {
    std::vector<CrowdMap> out;
    out.reserve(maps.size());
    for (int i : fusion_order(maps, config)) out.push_back(maps[i]);
    return out;
}

// Reference points closer than this are treated as the same head location,
// not as neighbors; it doubles as the no-neighbor fallback radius.
constexpr double kSameLocationRadius = 1.0;

double rejection_radius(const Point2& point, const std::vector<Point2>& reference_points,
                        const FusionConfig& config, int height, int width) {
    const double range = config.search_radius_fraction * std::min(height, width);
    std::vector<double> dists;
    dists.reserve(reference_points.size());
    for (const Point2& q : reference_points) {
        const double d = std::hypot(q.x - point.x, q.y - point.y);
        if (d >= kSameLocationRadius && d <= range) dists.push_back(d);
    }
    if (dists.empty()) return kSameLocationRadius;
    const size_t k = std::min<size_t>(config.max_neighbors, dists.size());
    std::partial_sort(dists.begin(), dists.begin() + static_cast<long>(k), dists.end());
    double sum = 0.0;
    for (size_t i = 0; i < k; ++i) sum += dists[i];
    return config.beta * sum / (2.0 * static_cast<double>(k));
}

CrowdMap fuse(const std::vector<CrowdMap>& maps, const FusionConfig& config) {
    config.validate();
    const std::vector<int> order = fusion_order(maps, config);
    CrowdMap compound = maps[order[0]];
    for (size_t m = 1; m < order.size(); ++m) {
        const CrowdMap& next = maps[order[m]];
        const int n = static_cast<int>(next.points.size());
        std::vector<uint8_t> keep(n, 0);
#pragma omp parallel for
        for (int i = 0; i < n; ++i) {
            const Point2& p = next.points[i];
            const double radius =
                rejection_radius(p, compound.points, config, compound.height, compound.width);
            double nearest = std::numeric_limits<double>::infinity();
            for (const Point2& q : compound.points)
                nearest = std::min(nearest, std::hypot(q.x - p.x, q.y - p.y));
            keep[i] = nearest < radius ? 0 : 1;
        }
        for (int i = 0; i < n; ++i)
            if (keep[i]) compound.points.push_back(next.points[i]);
    }
    return compound;
}

}  // namespace crowddiff
