#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "nodule/grid.hpp"

namespace nodule {

/// Physical triple in array-axis order (z, y, x), millimetres.
using Vec3 = std::array<double, 3>;

inline constexpr std::int64_t kMinVolumeDim = 8;
inline constexpr int kDefaultSide = 64;
inline constexpr double kMinDiameterMm = 3.0;
inline constexpr double kMaxDiameterMm = 30.0;

/// CT volume in Hounsfield units with its voxel geometry.
struct Volume {
    Grid3<float> voxels;
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{0.0, 0.0, 0.0};

    /// Checked constructor: spacing strictly positive, every axis >= 8 voxels.
    static Volume make(Grid3<float> voxels, const Vec3& spacing, const Vec3& origin = {0.0, 0.0, 0.0});

    const Shape3& shape() const { return voxels.shape(); }
    /// Physical extent per axis (voxel count times spacing).
    Vec3 extent_mm() const;
};

enum class Modality { cube64, x, x_resize_64, x_padding_64 };

std::string_view to_string(Modality m);
Modality parse_modality(std::string_view name);

/// Two-channel normalized patch: channel 0 lung window, channel 1 mediastinal window.
struct NodulePatch {
    static constexpr int kChannels = 2;

    Shape3 shape{0, 0, 0};
    std::vector<float> data;  // [channel][z][y][x]
    Modality modality = Modality::cube64;
    int side = kDefaultSide;
    /// Set when the crop reached outside the source volume and was zero-padded.
    bool padded_exterior = false;

    NodulePatch() = default;
    NodulePatch(const Shape3& shape, Modality modality, int side);

    std::int64_t channel_size() const { return voxel_count(shape); }
    std::span<float> channel(int c);
    std::span<const float> channel(int c) const;
    Grid3<float> channel_grid(int c) const;
    void set_channel(int c, const Grid3<float>& grid);

    bool operator==(const NodulePatch&) const = default;
};

/// Pathology-confirmed nodule.
struct SureSample {
    NodulePatch patch;
    int label = 0;  // 0 benign, 1 malignant
    std::string nodule_id;
};

/// Radiologist-scored nodule with a consensus segmentation.
struct UnsureSample {
    NodulePatch patch;
    Mask3 seg_mask;
    double malignancy_score = 1.0;  // [1,5]
    double normalized_score = 0.0;  // (score - 1) / 4
    std::string nodule_id;

    static UnsureSample make(NodulePatch patch, Mask3 mask, double score, std::string id);
};

/// Affine map of a malignancy score in [1,5] onto [0,1].
double normalized_score(double score);
/// Inverse of normalized_score.
double score_from_normalized(double g);

enum class Cohort { sure, unsure };

struct ManifestEntry {
    std::string id;
    Cohort cohort = Cohort::unsure;
    std::string volume_path;
    Vec3 nodule_center_mm{0.0, 0.0, 0.0};
    double nodule_diameter_mm = 0.0;
    std::vector<int> rater_scores;
    std::vector<std::string> rater_mask_paths;
    std::string split_tag;
    std::optional<int> label;
    std::vector<double> texture_scores;
    // Filled by later pipeline stages.
    std::optional<double> mean_score;
    std::optional<std::string> consensus_mask_path;
    std::optional<std::string> patch_path;
    std::optional<std::string> mask_path;

    bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    bool operator==(const DatasetManifest&) const = default;
};

void to_json(nlohmann::json& j, const ManifestEntry& e);
void from_json(const nlohmann::json& j, ManifestEntry& e);

/// Manifest files are JSON-lines, one entry per nodule.
DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

struct Violation {
    std::string entry_id;
    std::string rule;
    bool operator==(const Violation&) const = default;
};

/// Checks every entry against the type invariants. Volume sidecars are read
/// (relative to `root`) to check geometry; a missing sidecar is an IoError.
std::vector<Violation> validate_manifest(const DatasetManifest& manifest, const std::filesystem::path& root);

// Raw array files: little-endian float32 `.bin` with a `.json` sidecar
// {shape, spacing, origin}.

struct RawHeader {
    std::vector<std::int64_t> shape;
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{0.0, 0.0, 0.0};
    nlohmann::json extra = nlohmann::json::object();
};

std::filesystem::path sidecar_path(const std::filesystem::path& bin_path);
RawHeader read_header(const std::filesystem::path& bin_path);
void write_raw(const std::filesystem::path& bin_path, const RawHeader& header, std::span<const float> values);
std::vector<float> read_raw(const std::filesystem::path& bin_path, RawHeader* header = nullptr);

void write_volume(const std::filesystem::path& bin_path, const Volume& volume);
Volume read_volume(const std::filesystem::path& bin_path);
void write_mask(const std::filesystem::path& bin_path, const Mask3& mask, const Vec3& spacing = {1.0, 1.0, 1.0},
                const Vec3& origin = {0.0, 0.0, 0.0});
Mask3 read_mask(const std::filesystem::path& bin_path);
void write_patch(const std::filesystem::path& bin_path, const NodulePatch& patch);
NodulePatch read_patch(const std::filesystem::path& bin_path);

/// Mask values as floats (0/1).
Grid3<float> mask_to_float(const Mask3& mask);
std::int64_t foreground_count(const Mask3& mask);

}  // namespace nodule
