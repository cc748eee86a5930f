#include "nodule/ingestion.hpp"

#include <algorithm>
#include <numeric>

#include "nodule/errors.hpp"

namespace nodule {

namespace fs = std::filesystem;

void RaterAnnotation::validate() const {
    if (scores.size() < 3) throw ArgumentError("annotation needs at least 3 raters");
    if (scores.size() != masks.size()) throw ArgumentError("rater scores and masks differ in count");
    for (int s : scores) {
        if (s < 1 || s > 5) throw ArgumentError("rater score out of [1,5]");
    }
}

double mean_absolute_difference(std::span<const int> scores) {
    const auto n = static_cast<std::int64_t>(scores.size());
    if (n < 2) throw ArgumentError("mean absolute difference needs at least 2 scores");
    std::vector<std::int64_t> sorted(scores.begin(), scores.end());
    std::ranges::sort(sorted);
    // For sorted values, sum_{i<j} (s_j - s_i) = sum_k s_k (2k - n + 1).
    std::int64_t total = 0;
    for (std::int64_t k = 0; k < n; ++k) total += sorted[static_cast<std::size_t>(k)] * (2 * k - n + 1);
    const std::int64_t pairs = n * (n - 1) / 2;
    return static_cast<double>(total) / static_cast<double>(pairs);
}

FilterResult filter_unsure(std::span<const RaterAnnotation> annotations, double mad_threshold) {
    FilterResult out;
    for (std::size_t i = 0; i < annotations.size(); ++i) {
        const auto& a = annotations[i];
        if (mean_absolute_difference(a.scores) > mad_threshold) continue;
        if (!a.texture_scores.empty()) {
            const double tex = std::accumulate(a.texture_scores.begin(), a.texture_scores.end(), 0.0) /
                               static_cast<double>(a.texture_scores.size());
            if (tex != 5.0) continue;
        }
        const double avg = static_cast<double>(std::accumulate(a.scores.begin(), a.scores.end(), 0)) /
                           static_cast<double>(a.scores.size());
        out.kept.push_back(i);
        out.average_scores.push_back(avg);
    }
    return out;
}

Mask3 consensus_mask(std::span<const Mask3> masks) {
    if (masks.size() < 2) throw ArgumentError("consensus needs at least 2 masks");
    const Shape3 shape = masks.front().shape();
    for (const auto& m : masks) {
        if (m.shape() != shape) throw ArgumentError("mask shape mismatch: " + shape_string(m.shape()) + " vs " + shape_string(shape));
    }
    Mask3 out(shape);
    for (std::size_t i = 0; i < out.size(); ++i) {
        int votes = 0;
        for (const auto& m : masks) votes += m[i] ? 1 : 0;
        out[i] = votes >= 2 ? 1 : 0;
    }
    return out;
}

namespace {

std::string relocate(const fs::path& root, const std::string& rel, const fs::path& out_dir) {
    if (rel.empty()) return rel;
    const fs::path p = fs::path(rel).is_absolute() ? fs::path(rel) : root / rel;
    return fs::proximate(fs::absolute(p), fs::absolute(out_dir)).generic_string();
}

}  // namespace

IngestSummary ingest_manifest(const fs::path& manifest_path, const fs::path& out_dir, double mad_threshold) {
    const fs::path root = manifest_path.parent_path();
    const DatasetManifest in = read_manifest(manifest_path);
    fs::create_directories(out_dir / "masks");

    IngestSummary summary;
    DatasetManifest out;
    for (const auto& entry : in.entries) {
        ManifestEntry e = entry;
        e.volume_path = relocate(root, e.volume_path, out_dir);
        if (e.cohort == Cohort::sure) {
            ++summary.sure;
            for (auto& p : e.rater_mask_paths) p = relocate(root, p, out_dir);
            out.entries.push_back(std::move(e));
            continue;
        }
        ++summary.unsure_in;
        RaterAnnotation ann;
        ann.scores = entry.rater_scores;
        ann.texture_scores = entry.texture_scores;
        for (const auto& p : entry.rater_mask_paths) ann.masks.push_back(read_mask(root / p));
        ann.validate();
        const auto kept = filter_unsure(std::span<const RaterAnnotation>(&ann, 1), mad_threshold);
        if (kept.kept.empty()) continue;

        const RawHeader geom = read_header(root / entry.rater_mask_paths.front());
        const std::string mask_rel = "masks/" + entry.id + "_consensus.bin";
        write_mask(out_dir / mask_rel, consensus_mask(ann.masks), geom.spacing, geom.origin);
        for (auto& p : e.rater_mask_paths) p = relocate(root, p, out_dir);
        e.mean_score = kept.average_scores.front();
        e.consensus_mask_path = mask_rel;
        out.entries.push_back(std::move(e));
        ++summary.unsure_kept;
    }
    write_manifest(out_dir / "manifest.jsonl", out);
    return summary;
}

}  // namespace nodule
