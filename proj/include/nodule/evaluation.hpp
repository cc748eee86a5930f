#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "nodule/data_model.hpp"
#include "nodule/grid.hpp"

namespace nodule {

struct Confusion {
    std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
};

struct MetricReport {
    double sensitivity = 0.0;
    double specificity = 0.0;
    double precision = 0.0;
    double precision_b = 0.0;
    double accuracy = 0.0;
    std::optional<double> auc;  // absent when only one class is present
    double f1 = 0.0;
    double threshold = 0.5;
    std::int64_t n = 0;
    Confusion confusion;
    /// Names of metrics whose denominator was zero (reported as 0).
    std::vector<std::string> zero_denominator;
};

void to_json(nlohmann::json& j, const MetricReport& r);

/// Scores >= threshold are predicted malignant.
MetricReport compute_metrics(std::span<const double> probs, std::span<const int> labels, double threshold = 0.5);

/// Mann-Whitney rank statistic with mid-ranks for ties. nullopt for a single class.
std::optional<double> auc_rank(std::span<const double> scores, std::span<const int> labels);

/// Mean and population standard deviation of each metric over folds.
struct MetricSummary {
    struct Stat {
        double mean = 0.0;
        double stddev = 0.0;
        int count = 0;
    };
    Stat sensitivity, specificity, precision, precision_b, accuracy, auc, f1;
};

MetricSummary summarize(std::span<const MetricReport> folds);
void to_json(nlohmann::json& j, const MetricSummary& s);

struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // RGB, row-major

    std::array<std::uint8_t, 3> at(int x, int y) const;
};

void write_png(const std::filesystem::path& path, const RgbImage& image);

struct OverlayOptions {
    double cam_opacity = 0.5;
    double contour_level = 0.5;
};

/// Central axial slice of the lung-window channel with the CAM (upsampled by
/// nearest neighbour to the patch grid) blended as a heat map and the SEM
/// iso-contour drawn in green.
RgbImage render_cam_overlay(const NodulePatch& patch, const Grid3<double>& cam_c, const Grid3<double>& seg_prob,
                            const OverlayOptions& opts = {});

/// Renders and writes `<id>_pred<c>[_correct|_wrong].png` into `dir`.
std::filesystem::path export_cam_overlay(const std::filesystem::path& dir, const std::string& id, const NodulePatch& patch,
                                         const Grid3<double>& cam_c, const Grid3<double>& seg_prob, int prediction,
                                         std::optional<int> label = std::nullopt);

/// Plain grayscale central slice of the lung-window channel.
RgbImage render_slice(const NodulePatch& patch);

}  // namespace nodule
