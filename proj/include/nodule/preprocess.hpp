#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "nodule/data_model.hpp"

namespace nodule {

/// HU interval mapped linearly onto [0,1].
struct WindowSpec {
    double lo = -1000.0;
    double hi = 400.0;

    static WindowSpec make(double lo, double hi);
};

inline constexpr WindowSpec kLungWindow{-1000.0, 400.0};
inline constexpr WindowSpec kMediastinalWindow{-160.0, 240.0};
inline constexpr double kDefaultSpacingMm = 0.5;

// ---------------------------------------------------------------- lung mask

struct LungMaskOptions {
    int histogram_bins = 256;
    double histogram_lo = -1024.0;
    double histogram_hi = 1024.0;
    /// Step 5: coarse-lung components smaller than this are dropped.
    std::int64_t min_component_voxels = 64;
    /// Step 6: ball radius (voxels) and apex height of the non-flat element.
    int closing_radius = 5;
    /// Heights above ~0.7 let the closing fill concavities shallower than
    /// the ball; lower values act like a flat element.
    double closing_height = 0.75;
    /// Step 7.
    double binarize_at = 0.5;
};

/// Otsu threshold (HU) of the clamped histogram. Throws DataError when the
/// histogram has a single populated bin.
double otsu_threshold(const Grid3<float>& hu, const LungMaskOptions& opts = {});

/// 6-connected component labels (0 = background, 1..n) and per-label sizes
/// (index 0 unused).
struct Components {
    Grid3<std::int32_t> labels;
    std::vector<std::int64_t> sizes;
};
Components connected_components(const Mask3& mask);

Mask3 largest_component(const Mask3& mask);
/// Background regions not 6-connected to the volume border become foreground.
Mask3 fill_holes(const Mask3& mask);
Mask3 remove_small_components(const Mask3& mask, std::int64_t min_voxels);

/// Non-flat ball: height * (1 - |y|^2 / (r+1)^2) on offsets with |y| <= r.
struct StructuringElement {
    std::vector<std::array<int, 3>> offsets;
    std::vector<float> heights;
    static StructuringElement ball(int radius, double height);
};

Grid3<float> grey_dilate(const Grid3<float>& f, const StructuringElement& se);
Grid3<float> grey_erode(const Grid3<float>& f, const StructuringElement& se);
Grid3<float> grey_close(const Grid3<float>& f, const StructuringElement& se);

/// Eight-step robust lung segmentation. Returns the binary mask F; callers
/// apply it with `apply_mask`.
Mask3 lung_mask(const Volume& volume, const LungMaskOptions& opts = {});

/// Step 8: voxels outside the mask are set to `fill`.
Volume apply_mask(const Volume& volume, const Mask3& mask, float fill = -1000.0f);

// ---------------------------------------------------------------- intensity

/// Clip to [lo, hi] then map affinely onto [0,1].
Grid3<float> window_normalize(const Grid3<float>& hu, const WindowSpec& w);
float window_value(double hu, const WindowSpec& w);

// ---------------------------------------------------------------- geometry

/// Cubic B-spline resampling to isotropic `target_mm` spacing (mirror
/// boundaries). Output sample count per axis is round(n * spacing / target).
Volume resample_isotropic(const Volume& volume, double target_mm = kDefaultSpacingMm);

/// Cubic B-spline resize of a grid to `shape` (voxel centres aligned).
Grid3<float> resize_cubic(const Grid3<float>& grid, const Shape3& shape);
/// Nearest-neighbour resize, voxel centres aligned.
Mask3 resize_nearest(const Mask3& mask, const Shape3& shape);

/// Crop geometry shared by the image and its mask.
struct CropPlan {
    Modality modality = Modality::cube64;
    int side = kDefaultSide;
    Shape3 crop_start{0, 0, 0};  // voxel index in the source volume (may be negative)
    Shape3 crop_shape{0, 0, 0};
    bool exceeds_bounds = false;
};

CropPlan plan_crop(const Shape3& volume_shape, const Vec3& spacing, const Vec3& origin, const Vec3& center_mm,
                   double diameter_mm, Modality modality, int side);

/// Two-channel patch in the requested modality. Out-of-volume voxels are
/// zero in both channels and `padded_exterior` is set.
NodulePatch extract_patch(const Volume& volume, const Vec3& center_mm, double diameter_mm, Modality modality,
                          int side = kDefaultSide);

/// Same crop applied to a binary mask sharing the volume's geometry
/// (nearest-neighbour for resizing).
Mask3 extract_mask(const Mask3& mask, const Vec3& spacing, const Vec3& origin, const Vec3& center_mm,
                   double diameter_mm, Modality modality, int side = kDefaultSide);

// ---------------------------------------------------------------- augmentation

/// Signed axis permutation: out[a] reads input axis `perm[a]`, reversed when
/// `flip[a]` is set. Every flip, 90-degree rotation and transpose of a cube is
/// one of these.
struct AxisTransform {
    std::array<int, 3> perm{0, 1, 2};
    std::array<bool, 3> flip{false, false, false};

    AxisTransform then(const AxisTransform& next) const;
    static AxisTransform flip_axis(int axis);
    /// Quarter turns in the plane of axes (a, b).
    static AxisTransform rotate90(int a, int b, int quarter_turns);
    static AxisTransform transpose(int a, int b);
    /// Random flips over the three axes, a random 90/180/270 rotation around
    /// a random axis, and a random axis transposition.
    static AxisTransform random(std::uint64_t seed);
};

template <typename T>
Grid3<T> apply_transform(const Grid3<T>& in, const AxisTransform& t);

std::pair<NodulePatch, std::optional<Mask3>> augment(const NodulePatch& patch, const std::optional<Mask3>& mask,
                                                     std::uint64_t seed);

}  // namespace nodule
