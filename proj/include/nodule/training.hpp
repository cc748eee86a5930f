#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "nodule/data_model.hpp"
#include "nodule/losses.hpp"
#include "nodule/network.hpp"

namespace nodule {

struct RunConfig {
    double lr = 1e-3;
    int max_epochs = 100;
    int batch_size = 1;
    int folds = 5;
    double val_fraction = 0.2;
    LossWeights weights;
    std::uint64_t seed = 0;
    int side = kDefaultSide;
    /// Model widths; `model.side` is kept equal to `side`.
    BackboneConfig model;
    bool augment = true;
    // Adam moments; the remaining Adam settings are the library defaults.
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const;
    BackboneConfig model_config() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

/// Indices into the sure list.
struct FoldSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};

/// Class-stratified k-fold split; within each fold the non-test data is split
/// (1 - val_fraction) / val_fraction into train / validation, also stratified.
/// Throws DataError("stratification impossible") when a class has fewer than
/// k members.
std::vector<FoldSplit> make_folds(std::span<const int> labels, int k, double val_fraction, std::uint64_t seed);
std::vector<FoldSplit> make_folds(std::span<const SureSample> sure, int k, double val_fraction, std::uint64_t seed);

/// Zero-order (nearest) reduction by `factor`: out(i,j,k) = in(f*i, f*j, f*k).
Mask3 downsample_mask(const Mask3& mask, int factor = 4);

struct EpochLog {
    int fold = 0;
    int epoch = 0;
    std::int64_t iteration = 0;
    double total = 0.0, cls = 0.0, cam = 0.0, seg = 0.0, reg = 0.0;
    double val_bce = 0.0;
    std::optional<double> val_auc;
    double val_accuracy = 0.0;
};

struct TrainResult {
    SynergicNet model{nullptr};  // parameters of the best validation epoch
    int best_epoch = 0;
    double best_val_bce = 0.0;
    double final_val_bce = 0.0;
    std::vector<EpochLog> log;
};

/// Raised when a loss turns NaN/inf. A snapshot of the model is written to
/// `snapshot` when a diagnostics directory was given.
struct TrainingDiverged : std::runtime_error {
    TrainingDiverged(const std::string& what, std::filesystem::path snapshot)
        : std::runtime_error(what), snapshot(std::move(snapshot)) {}
    std::filesystem::path snapshot;
};

struct TrainOptions {
    int fold = 0;
    std::optional<std::filesystem::path> diagnostics_dir;
    std::function<void(const EpochLog&)> on_epoch;
};

/// Paired sure/unsure optimisation: each iteration draws the next sure sample
/// of a shuffled epoch order and one unsure sample uniformly with
/// replacement, augments both, and takes one Adam step on the weighted sum of
/// the four losses. An epoch has |train| iterations. The returned model holds
/// the parameters with the lowest validation BCE.
TrainResult train_fold(std::span<const SureSample> train, std::span<const SureSample> val,
                       std::span<const UnsureSample> unsure, const RunConfig& config, const TrainOptions& options = {});

/// Eval-mode malignancy probabilities.
std::vector<double> predict_probs(SynergicNet& model, std::span<const SureSample> samples);
/// Mean clamped BCE of the classifier over `samples`.
double mean_bce(SynergicNet& model, std::span<const SureSample> samples);

void write_log_csv(const std::filesystem::path& path, std::span<const EpochLog> log);

/// Preprocessed patches referenced by a manifest (`patch_path`, `mask_path`).
struct PatchDataset {
    std::vector<SureSample> sure;
    std::vector<UnsureSample> unsure;
};
PatchDataset load_patch_dataset(const std::filesystem::path& dir);

template <typename T>
std::vector<T> gather(std::span<const T> items, std::span<const std::size_t> indices) {
    std::vector<T> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(items[i]);
    return out;
}

}  // namespace nodule
