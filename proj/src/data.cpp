#include "crowddiff/data.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace crowddiff {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<size_t> DatasetManifest::indices_of(const std::string& split) const {
    std::vector<size_t> out;
    for (size_t i = 0; i < samples.size(); ++i)
        if (samples[i].split == split) out.push_back(i);
    return out;
}

const Image& DatasetManifest::image(size_t sample_index) const {
    auto it = cache_.find(sample_index);
    if (it == cache_.end()) {
        const fs::path p = fs::path(base_dir) / samples.at(sample_index).image_path;
        it = cache_.emplace(sample_index, to_rgb(read_image(p.string()))).first;
    }
    return it->second;
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("manifest: cannot open " + path);
    DatasetManifest m;
    m.base_dir = fs::path(path).parent_path().string();
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw std::runtime_error("manifest: parse error at line " + std::to_string(line_no) +
                                     ": " + e.what());
        }
        ManifestEntry e;
        e.image_path = j.at("image").get<std::string>();
        e.split = j.value("split", "train");
        if (e.split != "train" && e.split != "val" && e.split != "test")
            throw std::runtime_error("manifest: bad split '" + e.split + "' at line " +
                                     std::to_string(line_no));
        for (const auto& pt : j.at("points")) {
            if (!pt.is_array() || pt.size() != 2)
                throw std::runtime_error("manifest: bad point at line " + std::to_string(line_no));
            e.points.push_back({pt[0].get<double>(), pt[1].get<double>()});
        }
        for (const ManifestEntry& prev : m.samples)
            if (prev.image_path == e.image_path)
                throw std::runtime_error("manifest: sample " + e.image_path +
                                         " appears twice (line " + std::to_string(line_no) + ")");
        const fs::path img = fs::path(m.base_dir) / e.image_path;
        if (!fs::exists(img))
            throw std::runtime_error("manifest: missing image file " + img.string() + " at line " +
                                     std::to_string(line_no));
        const auto [h, w] = read_image_extent(img.string());
        for (const Point2& p : e.points)
            if (p.x < 0 || p.x >= w || p.y < 0 || p.y >= h)
                throw std::runtime_error("manifest: out-of-bounds point (" + std::to_string(p.x) +
                                         ", " + std::to_string(p.y) + ") for " + e.image_path +
                                         " at line " + std::to_string(line_no));
        m.samples.push_back(std::move(e));
    }
    return m;
}

std::string annotation_line(const std::string& image, const std::vector<Point2>& points,
                            const std::string& split) {
    json pts = json::array();
    for (const Point2& p : points) pts.push_back({p.x, p.y});
    json j{{"image", image}, {"points", pts}};
    if (!split.empty()) j["split"] = split;
    return j.dump();
}

void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("manifest: cannot open " + path + " for writing");
    for (const ManifestEntry& e : entries)
        f << annotation_line(e.image_path, e.points, e.split) << "\n";
}

void append_crowdmap_annotation(const std::string& path, const std::string& image_id,
                                const CrowdMap& map) {
    std::ofstream f(path, std::ios::app);
    if (!f) throw std::runtime_error("annotation: cannot open " + path + " for writing");
    f << annotation_line(image_id, map.points) << "\n";
}

Tensor standardize_image(const Image& image) {
    if (image.channels != 3)
        throw std::invalid_argument("standardize_image: expected 3 channels");
    Tensor t({1, 3, image.height, image.width});
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = (image.data[static_cast<size_t>(i)] - 0.5f) * 2.0f;
    return t;
}

namespace {

// reflect-101 index (no edge duplication): ... 2 1 | 0 1 2 ... n-1 | n-2 n-3 ...
int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i = std::abs(i) % period;
    return i < n ? i : period - i;
}

}  // namespace

TrainingBatch training_batch(const DatasetManifest& manifest, int batch_size, int crop, Rng& rng,
                             double density_scale) {
    const std::vector<size_t> train = manifest.indices_of("train");
    if (train.empty()) throw std::runtime_error("training_batch: train split is empty");
    if (batch_size < 1 || crop < 1) throw std::invalid_argument("training_batch: bad sizes");

    TrainingBatch out;
    out.images = Tensor({batch_size, 3, crop, crop});
    out.density = Tensor({batch_size, 1, crop, crop});
    std::uniform_int_distribution<size_t> pick(0, train.size() - 1);
    std::uniform_real_distribution<double> coin(0.0, 1.0);

    for (int b = 0; b < batch_size; ++b) {
        const size_t idx = train[pick(rng)];
        const Image& img = manifest.image(idx);
        const std::vector<Point2>& pts = manifest.samples[idx].points;

        // Work in a reflection-padded frame when the image is smaller than
        // the crop; reflected blobs get reflected labels so map and count
        // stay consistent.
        const int ph = std::max(img.height, crop), pw = std::max(img.width, crop);
        if (crop > 2 * img.height - 1 || crop > 2 * img.width - 1)
            throw std::runtime_error("training_batch: image too small to pad to crop size");
        std::vector<Point2> frame_pts = pts;
        if (ph > img.height)
            for (const Point2& p : pts) {
                const double ry = 2.0 * (img.height - 1) - p.y;
                if (ry < ph && ry >= img.height) frame_pts.push_back({p.x, ry});
            }
        if (pw > img.width) {
            const size_t base = frame_pts.size();
            for (size_t i = 0; i < base; ++i) {
                const Point2 p = frame_pts[i];
                const double rx = 2.0 * (img.width - 1) - p.x;
                if (rx < pw && rx >= img.width) frame_pts.push_back({rx, p.y});
            }
        }

        std::uniform_int_distribution<int> ox_dist(0, pw - crop), oy_dist(0, ph - crop);
        const int ox = ox_dist(rng), oy = oy_dist(rng);
        const bool flip = coin(rng) < 0.5;

        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < crop; ++y)
                for (int x = 0; x < crop; ++x) {
                    const int sx = reflect_index(ox + (flip ? crop - 1 - x : x), img.width);
                    const int sy = reflect_index(oy + y, img.height);
                    out.images.at(b, c, y, x) = (img.at(c, sy, sx) - 0.5f) * 2.0f;
                }

        std::vector<Point2> crop_pts;
        for (const Point2& p : frame_pts) {
            double x = p.x - ox, y = p.y - oy;
            if (x < 0 || x >= crop || y < 0 || y >= crop) continue;
            // mirror; fractional coordinates past crop-1 clamp to the edge
            if (flip) x = std::max(0.0, (crop - 1) - x);
            crop_pts.push_back({x, y});
        }
        const DensityMap dm = render_density(crop_pts, crop, crop);
        const ScaledDensityMap sm = scale_density(dm, density_scale);
        for (int y = 0; y < crop; ++y)
            for (int x = 0; x < crop; ++x)
                out.density.at(b, 0, y, x) = static_cast<float>(sm.at(y, x));
        out.counts.push_back(static_cast<double>(crop_pts.size()));
    }
    return out;
}

CrowdSample synth_scene(int num_points, int height, int width, double min_separation, Rng& rng) {
    if (num_points < 0) throw std::invalid_argument("synth_scene: negative point count");
    CrowdSample s;
    s.image = Image(height, width, 3);

    std::uniform_real_distribution<double> ux(1.0, width - 2.0), uy(1.0, height - 2.0);
    const int max_attempts = 2000 * std::max(1, num_points);
    int attempts = 0;
    while (static_cast<int>(s.points.size()) < num_points) {
        if (++attempts > max_attempts)
            throw std::runtime_error("synth_scene: packing infeasible for " +
                                     std::to_string(num_points) + " points at separation " +
                                     std::to_string(min_separation));
        const Point2 cand{ux(rng), uy(rng)};
        bool ok = true;
        for (const Point2& p : s.points)
            if (std::hypot(p.x - cand.x, p.y - cand.y) < min_separation) {
                ok = false;
                break;
            }
        if (ok) s.points.push_back(cand);
    }

    // Dark background, Gaussian blobs at heads, mild bounded noise.
    const float bg = 0.10f;
    const float gains[3] = {0.95f, 1.0f, 0.90f};
    std::uniform_real_distribution<float> noise(0.0f, 0.06f);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) s.image.at(c, y, x) = bg * gains[c];
    constexpr double kBlobSigma = 0.9;
    constexpr float kBlobAmp = 0.8f;
    for (const Point2& p : s.points)
        for (int dy = -3; dy <= 3; ++dy)
            for (int dx = -3; dx <= 3; ++dx) {
                const int y = static_cast<int>(std::lround(p.y)) + dy;
                const int x = static_cast<int>(std::lround(p.x)) + dx;
                if (y < 0 || y >= height || x < 0 || x >= width) continue;
                const double ddx = x - p.x, ddy = y - p.y;
                const float v = kBlobAmp * static_cast<float>(std::exp(
                                               -(ddx * ddx + ddy * ddy) /
                                               (2.0 * kBlobSigma * kBlobSigma)));
                for (int c = 0; c < 3; ++c)
                    s.image.at(c, y, x) = std::min(1.0f, s.image.at(c, y, x) + gains[c] * v);
            }
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x)
                s.image.at(c, y, x) = std::min(1.0f, s.image.at(c, y, x) + noise(rng));
    return s;
}

}  // namespace crowddiff
