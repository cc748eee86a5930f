#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nodule/data_model.hpp"

namespace nodule {

struct PhantomSpec {
    int n_sure = 40;
    int n_unsure = 60;
    int side = 32;
    /// 1 = image severity equals the latent severity that decides the label;
    /// 0 = image severity is independent of the label.
    double class_separation = 1.0;
    std::uint64_t seed = 0;
    double spacing_mm = 0.5;
    int raters = 4;
    double rater_noise = 0.3;
    /// Soft-tissue distractor blobs placed in the background of every patch.
    int distractors = 3;

    void validate() const;
};

/// Lobed ellipsoid: a point is inside when its normalised ellipsoid radius
/// is below 1 + amplitude * sin(lobes * theta + phase0) * sin(lobes * phi + phase1).
struct NoduleShape {
    Vec3 center{0.0, 0.0, 0.0};  // voxel coordinates
    Vec3 radii{1.0, 1.0, 1.0};   // voxels
    double amplitude = 0.0;
    int lobes = 5;
    double phase0 = 0.0;
    double phase1 = 0.0;

    /// Normalised radius and boundary radius for the direction of (z, y, x).
    double normalized_radius(double z, double y, double x) const;
    double boundary(double z, double y, double x) const;
    bool contains(double z, double y, double x) const;
    Mask3 rasterize(const Shape3& shape) const;
};

/// Everything rendered for one phantom nodule.
struct PhantomNodule {
    std::string id;
    Cohort cohort = Cohort::sure;
    Volume volume;  // HU
    NoduleShape shape;
    Mask3 mask;
    Vec3 center_mm{0.0, 0.0, 0.0};
    double diameter_mm = 0.0;
    double latent_severity = 0.0;
    double visible_severity = 0.0;
    double core_hu = 0.0;
    int label = 0;
    std::vector<int> rater_scores;
    std::vector<Mask3> rater_masks;
};

/// Renders nodule `index` of the given cohort. Depends only on (spec, cohort, index).
PhantomNodule render_nodule(const PhantomSpec& spec, Cohort cohort, std::size_t index);

struct PhantomDataset {
    std::vector<SureSample> sure;
    std::vector<UnsureSample> unsure;
};

/// cube64 patches of every phantom; unsure samples carry the mean rater
/// score and the exact shape mask.
PhantomDataset generate(const PhantomSpec& spec);

/// Writes `manifest.jsonl`, `volumes/*.bin` and per-rater `masks/*.bin`
/// under `out_dir`. Returns the manifest.
DatasetManifest write_phantom_dataset(const PhantomSpec& spec, const std::filesystem::path& out_dir);

/// Mean HU of voxels with normalised radius < 0.35.
double mean_core_intensity(const PhantomNodule& nodule);

}  // namespace nodule
