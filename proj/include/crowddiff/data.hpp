#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crowddiff/counting.hpp"
#include "crowddiff/image_io.hpp"
#include "crowddiff/rng.hpp"
#include "crowddiff/tensor.hpp"

namespace crowddiff {

// One annotated crowd scene.
struct CrowdSample {
    Image image;
    std::vector<Point2> points;
    int count() const { return static_cast<int>(points.size()); }
};

struct ManifestEntry {
    std::string image_path;  // relative to the manifest's directory
    std::vector<Point2> points;
    std::string split;  // train | val | test
};

// Loaded from a JSON-lines file; one {"image", "points", "split"} record per
// line ("split" defaults to train). Validates that every referenced image
// exists and all points are in bounds.
struct DatasetManifest {
    std::string base_dir;
    std::vector<ManifestEntry> samples;

    std::vector<size_t> indices_of(const std::string& split) const;
    const Image& image(size_t sample_index) const;  // decoded lazily, cached

  private:
    mutable std::map<size_t, Image> cache_;
};

DatasetManifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

// Canonical annotation record; used for both dataset rows and CrowdMap dumps.
std::string annotation_line(const std::string& image, const std::vector<Point2>& points,
                            const std::string& split = "");
void append_crowdmap_annotation(const std::string& path, const std::string& image_id,
                                const CrowdMap& map);

// Pixel [0,1] -> standardized [-1,1] network input, [1,3,H,W] or [B,...] stack.
Tensor standardize_image(const Image& image);

struct TrainingBatch {
    Tensor images;               // [B,3,crop,crop] standardized
    Tensor density;              // [B,1,crop,crop] scaled to [-1,1]
    std::vector<double> counts;  // points inside each crop
};

// Random crops with probability-0.5 horizontal flips. The density crop is
// rendered from the points falling inside the crop (after augmentation), so
// the count label always matches the rendered map.
TrainingBatch training_batch(const DatasetManifest& manifest, int batch_size, int crop, Rng& rng,
                             double density_scale);

// Synthetic scene: bright blobs on a dark noisy background, one blob per
// planted point, pairwise separation >= min_separation.
CrowdSample synth_scene(int num_points, int height, int width, double min_separation, Rng& rng);

}  // namespace crowddiff
