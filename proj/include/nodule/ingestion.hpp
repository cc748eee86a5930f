#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "nodule/data_model.hpp"

namespace nodule {

inline constexpr double kDefaultMadThreshold = 0.6;

/// Per-rater malignancy scores and masks for one nodule.
struct RaterAnnotation {
    std::vector<int> scores;
    std::vector<Mask3> masks;
    std::vector<double> texture_scores;  // optional; empty when not rated

    /// Throws ArgumentError unless scores in [1,5], len(scores) == len(masks) >= 3.
    void validate() const;
};

/// Mean of |s_i - s_j| over all unordered pairs i < j.
double mean_absolute_difference(std::span<const int> scores);

struct FilterResult {
    std::vector<std::size_t> kept;       // indices into the input list
    std::vector<double> average_scores;  // parallel to `kept`
};

/// Keeps nodules with MAD <= threshold. When texture scores are present the
/// nodule must also be solid (average texture score == 5).
FilterResult filter_unsure(std::span<const RaterAnnotation> annotations, double mad_threshold = kDefaultMadThreshold);

/// Voxel is foreground iff marked by two or more of the input masks.
Mask3 consensus_mask(std::span<const Mask3> masks);

struct IngestSummary {
    std::size_t sure = 0;
    std::size_t unsure_in = 0;
    std::size_t unsure_kept = 0;
};

/// Filters the unsure entries of a manifest under `root`, writes consensus
/// masks to `out_dir/masks/` and the filtered manifest to
/// `out_dir/manifest.jsonl`. Paths in the output manifest are relative to
/// `out_dir`.
IngestSummary ingest_manifest(const std::filesystem::path& manifest_path, const std::filesystem::path& out_dir,
                              double mad_threshold = kDefaultMadThreshold);

}  // namespace nodule
