#include <gtest/gtest.h>

#include "nodule/data_model.hpp"
#include "nodule/errors.hpp"
#include "test_util.hpp"

using namespace nodule;

namespace {

Volume small_volume(float fill = -800.0f) { return Volume::make(Grid3<float>({8, 8, 8}, fill), {0.5, 0.5, 0.5}); }

ManifestEntry unsure_entry(const std::string& id, double diameter, int raters) {
    ManifestEntry e;
    e.id = id;
    e.cohort = Cohort::unsure;
    e.volume_path = "vol.bin";
    e.nodule_center_mm = {2.0, 2.0, 2.0};
    e.nodule_diameter_mm = diameter;
    for (int r = 0; r < raters; ++r) {
        e.rater_scores.push_back(3);
        e.rater_mask_paths.push_back("m" + std::to_string(r) + ".bin");
    }
    return e;
}

bool has_rule(const std::vector<Violation>& v, const std::string& rule) {
    for (const auto& x : v)
        if (x.rule == rule) return true;
    return false;
}

}  // namespace

TEST(Manifest, DiameterAtUpperBoundIsRejected) {
    TempDir dir("manifest");
    write_volume(dir / "vol.bin", small_volume());
    DatasetManifest m{{unsure_entry("a", 30.0, 4)}};
    const auto v = validate_manifest(m, dir.path());
    EXPECT_TRUE(has_rule(v, "diameter out of [3,30)"));
}

TEST(Manifest, ValidEntryHasNoViolations) {
    TempDir dir("manifest");
    write_volume(dir / "vol.bin", small_volume());
    DatasetManifest m{{unsure_entry("a", 15.0, 4)}};
    EXPECT_TRUE(validate_manifest(m, dir.path()).empty());
}

TEST(Manifest, ZeroSpacingIsReported) {
    TempDir dir("manifest");
    RawHeader h;
    h.shape = {8, 8, 8};
    h.spacing = {0.5, 0.0, 0.5};
    write_raw(dir / "vol.bin", h, std::vector<float>(512, 0.0f));
    DatasetManifest m{{unsure_entry("a", 15.0, 4)}};
    EXPECT_TRUE(has_rule(validate_manifest(m, dir.path()), "nonpositive spacing"));
}

TEST(Manifest, TooFewRatersAndBadLabel) {
    TempDir dir("manifest");
    write_volume(dir / "vol.bin", small_volume());
    ManifestEntry sure = unsure_entry("s", 10.0, 0);
    sure.cohort = Cohort::sure;
    sure.label = 2;
    DatasetManifest m{{unsure_entry("u", 10.0, 2), sure}};
    const auto v = validate_manifest(m, dir.path());
    EXPECT_TRUE(has_rule(v, "fewer than 3 raters"));
    EXPECT_TRUE(has_rule(v, "sure label not in {0,1}"));
}

TEST(Manifest, MissingVolumeIsAnIoError) {
    TempDir dir("manifest");
    DatasetManifest m{{unsure_entry("a", 15.0, 4)}};
    EXPECT_THROW(validate_manifest(m, dir.path()), IoError);
}

TEST(Manifest, JsonLinesRoundTrip) {
    TempDir dir("manifest");
    auto e = unsure_entry("a", 12.5, 3);
    e.mean_score = 3.25;
    e.texture_scores = {5.0, 5.0, 4.0};
    ManifestEntry s = unsure_entry("b", 4.0, 0);
    s.cohort = Cohort::sure;
    s.label = 1;
    s.patch_path = "patches/b.bin";
    const DatasetManifest m{{e, s}};
    write_manifest(dir / "manifest.jsonl", m);
    EXPECT_EQ(read_manifest(dir / "manifest.jsonl"), m);
}

TEST(Volume, RejectsBadGeometry) {
    EXPECT_THROW(Volume::make(Grid3<float>({8, 8, 8}), {1.0, -1.0, 1.0}), ArgumentError);
    EXPECT_THROW(Volume::make(Grid3<float>({8, 7, 8}), {1.0, 1.0, 1.0}), ArgumentError);
    const auto v = Volume::make(Grid3<float>({8, 10, 12}), {1.0, 0.5, 2.0});
    EXPECT_EQ(v.extent_mm(), (Vec3{8.0, 5.0, 24.0}));
}

TEST(RawFiles, VolumeMaskPatchRoundTrip) {
    TempDir dir("raw");
    Grid3<float> g({8, 9, 10});
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<float>(i) * 0.25f - 100.0f;
    const auto vol = Volume::make(g, {0.7, 0.8, 0.9}, {1.0, 2.0, 3.0});
    write_volume(dir / "v.bin", vol);
    const auto back = read_volume(dir / "v.bin");
    EXPECT_EQ(back.voxels, vol.voxels);
    EXPECT_EQ(back.spacing, vol.spacing);
    EXPECT_EQ(back.origin, vol.origin);

    Mask3 m({8, 8, 8});
    m(1, 2, 3) = 1;
    m(7, 7, 7) = 1;
    write_mask(dir / "m.bin", m);
    EXPECT_EQ(read_mask(dir / "m.bin"), m);
    EXPECT_EQ(foreground_count(m), 2);

    NodulePatch p({16, 16, 16}, Modality::x_padding_64, 16);
    p.padded_exterior = true;
    for (std::size_t i = 0; i < p.data.size(); ++i) p.data[i] = static_cast<float>(i % 17) / 17.0f;
    write_patch(dir / "p.bin", p);
    EXPECT_EQ(read_patch(dir / "p.bin"), p);
}

TEST(UnsureSample, ScoreNormalisation) {
    EXPECT_DOUBLE_EQ(normalized_score(1.0), 0.0);
    EXPECT_DOUBLE_EQ(normalized_score(5.0), 1.0);
    EXPECT_DOUBLE_EQ(normalized_score(3.0), 0.5);
    EXPECT_DOUBLE_EQ(score_from_normalized(normalized_score(4.25)), 4.25);

    Mask3 m({8, 8, 8});
    NodulePatch p({8, 8, 8}, Modality::cube64, 8);
    EXPECT_THROW(UnsureSample::make(p, m, 3.0, "x"), ArgumentError);  // empty mask
    m(4, 4, 4) = 1;
    EXPECT_THROW(UnsureSample::make(p, m, 5.5, "x"), ArgumentError);
    const auto s = UnsureSample::make(p, m, 2.0, "x");
    EXPECT_DOUBLE_EQ(s.normalized_score, 0.25);
}

TEST(Modality, NamesRoundTrip) {
    for (auto m : {Modality::cube64, Modality::x, Modality::x_resize_64, Modality::x_padding_64}) {
        EXPECT_EQ(parse_modality(to_string(m)), m);
    }
    EXPECT_EQ(parse_modality("x-padding-64"), Modality::x_padding_64);
    EXPECT_THROW(parse_modality("cube32"), ArgumentError);
}
