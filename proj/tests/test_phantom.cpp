#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "nodule/errors.hpp"
#include "nodule/phantom.hpp"
#include "test_util.hpp"

using namespace nodule;

namespace {

// Lobed-ellipsoid membership written out from the shape parameters.
bool analytic_inside(const NoduleShape& s, double z, double y, double x) {
    const double dz = z - s.center[0], dy = y - s.center[1], dx = x - s.center[2];
    const double rho = std::sqrt(std::pow(dz / s.radii[0], 2) + std::pow(dy / s.radii[1], 2) + std::pow(dx / s.radii[2], 2));
    const double r = std::sqrt(dz * dz + dy * dy + dx * dx);
    double theta = 0.0, phi = 0.0;
    if (r > 0.0) {
        theta = std::acos(dz / r);
        phi = std::atan2(dy, dx);
    }
    const double limit = 1.0 + s.amplitude * std::sin(s.lobes * theta + s.phase0) * std::sin(s.lobes * phi + s.phase1);
    return rho <= limit;
}

}  // namespace

TEST(Phantom, FullSeparationIsThresholdSeparable) {
    PhantomSpec spec;
    spec.n_sure = 60;
    spec.n_unsure = 1;
    spec.side = 24;
    spec.seed = 4;
    spec.class_separation = 1.0;
    std::vector<std::pair<double, int>> pts;
    for (int i = 0; i < spec.n_sure; ++i) {
        const auto n = render_nodule(spec, Cohort::sure, static_cast<std::size_t>(i));
        pts.emplace_back(mean_core_intensity(n), n.label);
    }
    // Sweep every threshold between sorted intensities.
    std::ranges::sort(pts);
    int best = 0;
    for (std::size_t cut = 0; cut <= pts.size(); ++cut) {
        int correct = 0;
        for (std::size_t i = 0; i < pts.size(); ++i) correct += (i >= cut) == (pts[i].second == 1);
        best = std::max(best, correct);
    }
    EXPECT_EQ(best, spec.n_sure);
}

TEST(Phantom, ZeroSeparationHidesTheLabel) {
    PhantomSpec spec;
    spec.n_sure = 200;
    spec.n_unsure = 1;
    spec.side = 16;
    spec.class_separation = 0.0;
    double mean[2] = {0.0, 0.0};
    int count[2] = {0, 0};
    for (int i = 0; i < spec.n_sure; ++i) {
        const auto n = render_nodule(spec, Cohort::sure, static_cast<std::size_t>(i));
        mean[n.label] += n.visible_severity;
        ++count[n.label];
    }
    EXPECT_NEAR(mean[1] / count[1] - mean[0] / count[0], 0.0, 0.1);
}

TEST(Phantom, SameSeedSameData) {
    PhantomSpec spec;
    spec.n_sure = 6;
    spec.n_unsure = 6;
    spec.side = 16;
    spec.seed = 99;
    const auto a = generate(spec);
    const auto b = generate(spec);
    ASSERT_EQ(a.sure.size(), b.sure.size());
    for (std::size_t i = 0; i < a.sure.size(); ++i) {
        EXPECT_EQ(a.sure[i].patch, b.sure[i].patch);
        EXPECT_EQ(a.sure[i].label, b.sure[i].label);
    }
    for (std::size_t i = 0; i < a.unsure.size(); ++i) {
        EXPECT_EQ(a.unsure[i].patch, b.unsure[i].patch);
        EXPECT_EQ(a.unsure[i].seg_mask, b.unsure[i].seg_mask);
        EXPECT_EQ(a.unsure[i].malignancy_score, b.unsure[i].malignancy_score);
    }
    spec.seed = 100;
    EXPECT_NE(generate(spec).sure[0].patch, a.sure[0].patch);
}

TEST(Phantom, MaskIsTheGeneratingShape) {
    PhantomSpec spec;
    spec.side = 32;
    spec.seed = 2;
    for (std::size_t i = 0; i < 5; ++i) {
        const auto n = render_nodule(spec, Cohort::unsure, i);
        std::int64_t inter = 0, uni = 0;
        for (std::int64_t z = 0; z < 32; ++z)
            for (std::int64_t y = 0; y < 32; ++y)
                for (std::int64_t x = 0; x < 32; ++x) {
                    const bool a = n.mask(z, y, x) != 0;
                    const bool b = analytic_inside(n.shape, static_cast<double>(z), static_cast<double>(y),
                                                   static_cast<double>(x));
                    inter += a && b;
                    uni += a || b;
                }
        ASSERT_GT(uni, 0);
        EXPECT_EQ(inter, uni) << "IoU below 1 for nodule " << i;
    }
}

TEST(Phantom, RaterScoresTrackSeverity) {
    PhantomSpec spec;
    spec.n_unsure = 200;
    spec.side = 16;
    double low = 0.0, high = 0.0;
    int nl = 0, nh = 0;
    for (int i = 0; i < spec.n_unsure; ++i) {
        const auto n = render_nodule(spec, Cohort::unsure, static_cast<std::size_t>(i));
        ASSERT_EQ(n.rater_scores.size(), 4u);
        for (int s : n.rater_scores) ASSERT_TRUE(s >= 1 && s <= 5);
        double m = 0.0;
        for (int s : n.rater_scores) m += s;
        m /= 4.0;
        if (n.latent_severity < 0.3) {
            low += m;
            ++nl;
        } else if (n.latent_severity > 0.7) {
            high += m;
            ++nh;
        }
    }
    EXPECT_GT(high / nh, low / nl + 1.5);
}

TEST(Phantom, DatasetOnDiskValidates) {
    TempDir dir("phantom");
    PhantomSpec spec;
    spec.n_sure = 3;
    spec.n_unsure = 3;
    spec.side = 16;
    const auto m = write_phantom_dataset(spec, dir.path());
    EXPECT_EQ(m.entries.size(), 6u);
    EXPECT_TRUE(validate_manifest(read_manifest(dir / "manifest.jsonl"), dir.path()).empty());
}

TEST(Phantom, RejectsBadSpecs) {
    PhantomSpec spec;
    spec.class_separation = 1.5;
    EXPECT_THROW(spec.validate(), ArgumentError);
    spec = PhantomSpec{};
    spec.side = 8;
    EXPECT_THROW(spec.validate(), ArgumentError);
}
