#include "nodule/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "nodule/errors.hpp"
#include "nodule/preprocess.hpp"
#include "nodule/random.hpp"

namespace nodule {

namespace fs = std::filesystem;

namespace {

constexpr double kParenchymaHu = -850.0;
constexpr double kTextureSigmaHu = 35.0;
constexpr double kFlatCoreFraction = 0.6;
constexpr double kEdgeDropHu = 250.0;
constexpr double kCoreRadius = 0.35;

char id_prefix(Cohort c) { return c == Cohort::sure ? 's' : 'u'; }

std::string make_id(Cohort c, std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%04zu", c == Cohort::sure ? "sure" : "unsure", index);
    return buf;
}

Grid3<float> box_blur(const Grid3<float>& in) {
    Grid3<float> out(in.shape());
    const Shape3& s = in.shape();
    for (std::int64_t z = 0; z < s[0]; ++z)
        for (std::int64_t y = 0; y < s[1]; ++y)
            for (std::int64_t x = 0; x < s[2]; ++x) {
                double acc = 0.0;
                int n = 0;
                for (int dz = -1; dz <= 1; ++dz)
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            if (!in.contains(z + dz, y + dy, x + dx)) continue;
                            acc += in(z + dz, y + dy, x + dx);
                            ++n;
                        }
                out(z, y, x) = static_cast<float>(acc / n);
            }
    return out;
}

Grid3<float> parenchyma_texture(const Shape3& shape, Rng& rng) {
    Grid3<float> noise(shape);
    for (auto& v : noise.values()) v = static_cast<float>(rng.normal());
    noise = box_blur(box_blur(noise));
    double mean = 0.0, sq = 0.0;
    for (float v : noise.values()) mean += v;
    mean /= static_cast<double>(noise.size());
    for (float v : noise.values()) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / static_cast<double>(noise.size()));
    for (auto& v : noise.values()) v = static_cast<float>(kParenchymaHu + kTextureSigmaHu * (v - mean) / sd);
    return noise;
}

int rater_score(double severity, double noise_sd, Rng& rng) {
    const double raw = 1.0 + 4.0 * severity + noise_sd * rng.normal();
    return static_cast<int>(std::clamp(std::lround(raw), 1L, 5L));
}

}  // namespace

void PhantomSpec::validate() const {
    if (n_sure <= 0 || n_unsure <= 0) throw ArgumentError("phantom counts must be positive");
    if (side < 16) throw ArgumentError("phantom side must be >= 16");
    if (class_separation < 0.0 || class_separation > 1.0) throw ArgumentError("class_separation must lie in [0,1]");
    if (!(spacing_mm > 0.0)) throw ArgumentError("phantom spacing must be positive");
    if (raters < 3) throw ArgumentError("phantom needs at least 3 raters");
}

double NoduleShape::normalized_radius(double z, double y, double x) const {
    const double dz = (z - center[0]) / radii[0], dy = (y - center[1]) / radii[1], dx = (x - center[2]) / radii[2];
    return std::sqrt(dz * dz + dy * dy + dx * dx);
}

double NoduleShape::boundary(double z, double y, double x) const {
    const double dz = z - center[0], dy = y - center[1], dx = x - center[2];
    const double r = std::sqrt(dz * dz + dy * dy + dx * dx);
    if (r == 0.0) return 1.0 + amplitude * std::sin(phase0) * std::sin(phase1);
    const double theta = std::acos(std::clamp(dz / r, -1.0, 1.0));
    const double phi = std::atan2(dy, dx);
    return 1.0 + amplitude * std::sin(lobes * theta + phase0) * std::sin(lobes * phi + phase1);
}

bool NoduleShape::contains(double z, double y, double x) const {
    return normalized_radius(z, y, x) <= boundary(z, y, x);
}

Mask3 NoduleShape::rasterize(const Shape3& shape) const {
    Mask3 m(shape);
    for (std::int64_t z = 0; z < shape[0]; ++z)
        for (std::int64_t y = 0; y < shape[1]; ++y)
            for (std::int64_t x = 0; x < shape[2]; ++x)
                m(z, y, x) = contains(static_cast<double>(z), static_cast<double>(y), static_cast<double>(x)) ? 1 : 0;
    return m;
}

PhantomNodule render_nodule(const PhantomSpec& spec, Cohort cohort, std::size_t index) {
    spec.validate();
    Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(id_prefix(cohort)), index));
    PhantomNodule n;
    n.id = make_id(cohort, index);
    n.cohort = cohort;

    // Latent severity decides the label; the image shows `visible_severity`.
    if (cohort == Cohort::sure) {
        n.label = static_cast<int>(index % 2);
        n.latent_severity = n.label ? rng.uniform(0.5, 1.0) : rng.uniform(0.0, 0.5);
        const double unrelated = rng.uniform();
        n.visible_severity = spec.class_separation * n.latent_severity + (1.0 - spec.class_separation) * unrelated;
    } else {
        n.latent_severity = rng.uniform();
        n.label = n.latent_severity >= 0.5 ? 1 : 0;
        n.visible_severity = n.latent_severity;
    }
    const double v = n.visible_severity;

    const auto s = static_cast<std::int64_t>(spec.side);
    const Shape3 shape{s, s, s};
    const double c = static_cast<double>(s / 2);

    NoduleShape& sh = n.shape;
    sh.center = {c, c, c};
    const double min_radius = 0.5 * kMinDiameterMm / spec.spacing_mm;
    const double base = std::max(min_radius, static_cast<double>(s) * (0.11 + 0.09 * v) * rng.uniform(0.9, 1.1));
    for (auto& r : sh.radii) r = base * rng.uniform(0.85, 1.15);
    sh.amplitude = 0.35 * v;
    sh.lobes = 4 + static_cast<int>(rng.below(3));
    sh.phase0 = rng.uniform(0.0, 2.0 * std::numbers::pi);
    sh.phase1 = rng.uniform(0.0, 2.0 * std::numbers::pi);
    n.diameter_mm = std::max(kMinDiameterMm, 2.0 * base * spec.spacing_mm);
    n.core_hu = -120.0 + 200.0 * v;

    Grid3<float> hu = parenchyma_texture(shape, rng);

    // Background distractors (vessel cross-sections), kept clear of the nodule.
    const double reach = *std::ranges::max_element(sh.radii) * (1.0 + sh.amplitude);
    for (int k = 0; k < spec.distractors; ++k) {
        const double rad = rng.uniform(1.0, 2.5);
        const double dhu = rng.uniform(-150.0, 50.0);
        for (int attempt = 0; attempt < 50; ++attempt) {
            const Vec3 p{rng.uniform(rad, s - 1 - rad), rng.uniform(rad, s - 1 - rad), rng.uniform(rad, s - 1 - rad)};
            const double d = std::hypot(p[0] - c, p[1] - c, p[2] - c);
            if (d < reach + rad + 2.0) continue;
            for (std::int64_t z = 0; z < s; ++z)
                for (std::int64_t y = 0; y < s; ++y)
                    for (std::int64_t x = 0; x < s; ++x)
                        if (std::hypot(z - p[0], y - p[1], x - p[2]) <= rad) hu(z, y, x) = static_cast<float>(dhu);
            break;
        }
    }

    n.mask = sh.rasterize(shape);
    for (std::int64_t z = 0; z < s; ++z)
        for (std::int64_t y = 0; y < s; ++y)
            for (std::int64_t x = 0; x < s; ++x) {
                if (!n.mask(z, y, x)) continue;
                const double zz = static_cast<double>(z), yy = static_cast<double>(y), xx = static_cast<double>(x);
                const double frac = sh.normalized_radius(zz, yy, xx) / sh.boundary(zz, yy, xx);
                double value = n.core_hu;
                if (frac > kFlatCoreFraction) value -= kEdgeDropHu * (frac - kFlatCoreFraction) / (1.0 - kFlatCoreFraction);
                hu(z, y, x) = static_cast<float>(value);
            }

    const Vec3 spacing{spec.spacing_mm, spec.spacing_mm, spec.spacing_mm};
    n.volume = Volume::make(std::move(hu), spacing);
    n.center_mm = {c * spec.spacing_mm, c * spec.spacing_mm, c * spec.spacing_mm};

    for (int r = 0; r < spec.raters; ++r) {
        n.rater_scores.push_back(rater_score(n.latent_severity, spec.rater_noise, rng));
        NoduleShape traced = sh;
        for (auto& radius : traced.radii) radius *= 1.0 + 0.06 * rng.normal();
        n.rater_masks.push_back(traced.rasterize(shape));
    }
    return n;
}

double mean_core_intensity(const PhantomNodule& nodule) {
    const auto& hu = nodule.volume.voxels;
    double sum = 0.0;
    std::int64_t count = 0;
    for (std::int64_t z = 0; z < hu.dim(0); ++z)
        for (std::int64_t y = 0; y < hu.dim(1); ++y)
            for (std::int64_t x = 0; x < hu.dim(2); ++x) {
                if (nodule.shape.normalized_radius(static_cast<double>(z), static_cast<double>(y), static_cast<double>(x)) <
                    kCoreRadius) {
                    sum += hu(z, y, x);
                    ++count;
                }
            }
    return count ? sum / static_cast<double>(count) : nodule.core_hu;
}

PhantomDataset generate(const PhantomSpec& spec) {
    spec.validate();
    PhantomDataset ds;
    for (int i = 0; i < spec.n_sure; ++i) {
        const auto n = render_nodule(spec, Cohort::sure, static_cast<std::size_t>(i));
        ds.sure.push_back({extract_patch(n.volume, n.center_mm, n.diameter_mm, Modality::cube64, spec.side), n.label, n.id});
    }
    for (int i = 0; i < spec.n_unsure; ++i) {
        const auto n = render_nodule(spec, Cohort::unsure, static_cast<std::size_t>(i));
        const double score = std::accumulate(n.rater_scores.begin(), n.rater_scores.end(), 0.0) /
                             static_cast<double>(n.rater_scores.size());
        auto patch = extract_patch(n.volume, n.center_mm, n.diameter_mm, Modality::cube64, spec.side);
        auto mask = extract_mask(n.mask, n.volume.spacing, n.volume.origin, n.center_mm, n.diameter_mm, Modality::cube64,
                                 spec.side);
        ds.unsure.push_back(UnsureSample::make(std::move(patch), std::move(mask), score, n.id));
    }
    return ds;
}

DatasetManifest write_phantom_dataset(const PhantomSpec& spec, const fs::path& out_dir) {
    spec.validate();
    fs::create_directories(out_dir / "volumes");
    fs::create_directories(out_dir / "masks");
    DatasetManifest manifest;
    auto emit = [&](Cohort cohort, int count) {
        for (int i = 0; i < count; ++i) {
            const auto n = render_nodule(spec, cohort, static_cast<std::size_t>(i));
            ManifestEntry e;
            e.id = n.id;
            e.cohort = cohort;
            e.volume_path = "volumes/" + n.id + ".bin";
            e.nodule_center_mm = n.center_mm;
            e.nodule_diameter_mm = n.diameter_mm;
            e.split_tag = "phantom";
            write_volume(out_dir / e.volume_path, n.volume);
            if (cohort == Cohort::sure) {
                e.label = n.label;
            } else {
                e.rater_scores = n.rater_scores;
                for (std::size_t r = 0; r < n.rater_masks.size(); ++r) {
                    const std::string rel = "masks/" + n.id + "_r" + std::to_string(r) + ".bin";
                    write_mask(out_dir / rel, n.rater_masks[r], n.volume.spacing, n.volume.origin);
                    e.rater_mask_paths.push_back(rel);
                }
            }
            manifest.entries.push_back(std::move(e));
        }
    };
    emit(Cohort::sure, spec.n_sure);
    emit(Cohort::unsure, spec.n_unsure);
    write_manifest(out_dir / "manifest.jsonl", manifest);
    return manifest;
}

}  // namespace nodule
