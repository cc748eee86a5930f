#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <iterator>
#include <set>

#include "nodule/errors.hpp"
#include "nodule/phantom.hpp"
#include "nodule/training.hpp"
#include "test_util.hpp"

using namespace nodule;

namespace {

std::vector<int> alternating(int n) {
    std::vector<int> l(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) l[static_cast<std::size_t>(i)] = i % 2;
    return l;
}

RunConfig small_config(int epochs) {
    RunConfig c;
    c.side = 16;
    c.model = BackboneConfig{}.scaled(4);
    c.max_epochs = epochs;
    c.seed = 5;
    return c;
}

PhantomDataset small_phantoms(int n_sure, int n_unsure, double separation) {
    PhantomSpec spec;
    spec.n_sure = n_sure;
    spec.n_unsure = n_unsure;
    spec.side = 16;
    spec.seed = 8;
    spec.class_separation = separation;
    return generate(spec);
}

}  // namespace

TEST(Folds, SizesCoverageAndDisjointness) {
    const auto labels = alternating(330);
    const auto folds = make_folds(labels, 5, 0.2, 1);
    ASSERT_EQ(folds.size(), 5u);
    std::multiset<std::size_t> tests;
    for (const auto& f : folds) {
        EXPECT_EQ(f.test.size(), 66u);
        int pos = 0;
        for (auto i : f.test) pos += labels[i];
        EXPECT_EQ(pos, 33);  // stratified
        tests.insert(f.test.begin(), f.test.end());

        std::set<std::size_t> all(f.train.begin(), f.train.end());
        all.insert(f.val.begin(), f.val.end());
        all.insert(f.test.begin(), f.test.end());
        EXPECT_EQ(all.size(), 330u);
        EXPECT_EQ(f.train.size() + f.val.size() + f.test.size(), 330u);
        EXPECT_NEAR(static_cast<double>(f.val.size()), 0.2 * 264, 1.0);
    }
    EXPECT_EQ(tests.size(), 330u);
    EXPECT_EQ(std::set<std::size_t>(tests.begin(), tests.end()).size(), 330u);
}

TEST(Folds, SeedDeterminism) {
    const auto labels = alternating(50);
    const auto a = make_folds(labels, 5, 0.2, 7);
    const auto b = make_folds(labels, 5, 0.2, 7);
    const auto c = make_folds(labels, 5, 0.2, 8);
    for (std::size_t f = 0; f < a.size(); ++f) {
        EXPECT_EQ(a[f].test, b[f].test);
        EXPECT_EQ(a[f].train, b[f].train);
        EXPECT_EQ(a[f].val, b[f].val);
    }
    bool differs = false;
    for (std::size_t f = 0; f < a.size(); ++f) differs |= a[f].test != c[f].test;
    EXPECT_TRUE(differs);
}

TEST(Folds, StratificationImpossible) {
    std::vector<int> labels(20, 0);
    labels[0] = labels[1] = 1;
    EXPECT_THROW(make_folds(labels, 5, 0.2, 0), DataError);
}

TEST(DownsampleMask, IndexArithmetic) {
    const Mask3 ones({16, 16, 16}, 1);
    EXPECT_EQ(downsample_mask(ones), Mask3({4, 4, 4}, 1));
    EXPECT_EQ(downsample_mask(Mask3({16, 16, 16})), Mask3({4, 4, 4}));

    // Checkerboard of 4-voxel blocks: consecutive samples alternate.
    Mask3 board({16, 16, 16});
    for (std::int64_t z = 0; z < 16; ++z)
        for (std::int64_t y = 0; y < 16; ++y)
            for (std::int64_t x = 0; x < 16; ++x) board(z, y, x) = ((z / 4 + y / 4 + x / 4) % 2 == 0) ? 1 : 0;
    const auto d = downsample_mask(board);
    for (std::int64_t z = 0; z < 4; ++z)
        for (std::int64_t y = 0; y < 4; ++y)
            for (std::int64_t x = 0; x < 4; ++x) EXPECT_EQ(d(z, y, x), board(4 * z, 4 * y, 4 * x));
    for (std::int64_t i = 0; i < 4; ++i) EXPECT_EQ(d(i, 0, 0), i % 2 == 0 ? 1 : 0);
    EXPECT_THROW(downsample_mask(Mask3({10, 16, 16})), ArgumentError);
}

TEST(RunConfig, JsonRoundTripAndDivisor) {
    RunConfig c = small_config(3);
    c.weights.alpha = 0.0;
    c.weights.mode = MarginMode::bkg_over_ndl;
    const nlohmann::json j = c;
    const auto back = j.get<RunConfig>();
    EXPECT_EQ(nlohmann::json(back), j);

    const auto scaled = nlohmann::json{{"side", 32}, {"channel_divisor", 4}}.get<RunConfig>();
    EXPECT_EQ(scaled.model_config().channels, (std::array<int, 4>{16, 16, 32, 64}));
    EXPECT_EQ(scaled.model_config().side, 32);

    RunConfig bad = small_config(0);
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(TrainFold, SureOnlyWhenAuxiliaryWeightsAreZero) {
    const auto data = small_phantoms(12, 1, 1.0);
    RunConfig c = small_config(2);
    c.weights.alpha = c.weights.beta = c.weights.gamma = 0.0;
    std::span<const SureSample> sure(data.sure);
    const auto r = train_fold(sure.subspan(0, 8), sure.subspan(8), {}, c);
    ASSERT_EQ(r.log.size(), 2u);
    for (const auto& row : r.log) {
        EXPECT_EQ(row.cam, 0.0);
        EXPECT_EQ(row.seg, 0.0);
        EXPECT_EQ(row.reg, 0.0);
        EXPECT_NEAR(row.total, row.cls, 1e-12);
    }
    EXPECT_EQ(r.log.back().iteration, 16);

    c.weights.beta = 1.0;
    EXPECT_THROW(train_fold(sure.subspan(0, 8), sure.subspan(8), {}, c), DataError);
}

TEST(TrainFold, ValidationLossFallsOnSeparableData) {
    const auto data = small_phantoms(40, 20, 1.0);
    RunConfig c = small_config(10);
    std::span<const SureSample> sure(data.sure);
    const auto r = train_fold(sure.subspan(0, 30), sure.subspan(30), data.unsure, c);
    ASSERT_EQ(r.log.size(), 10u);
    EXPECT_LT(r.best_val_bce, r.log.front().val_bce);
    EXPECT_LT(r.log.back().val_bce, r.log.front().val_bce);
}

TEST(TrainFold, DeterministicAndReloadable) {
    TempDir dir("train");
    const auto data = small_phantoms(12, 8, 1.0);
    RunConfig c = small_config(2);
    std::span<const SureSample> sure(data.sure);
    auto a = train_fold(sure.subspan(0, 8), sure.subspan(8), data.unsure, c);
    auto b = train_fold(sure.subspan(0, 8), sure.subspan(8), data.unsure, c);
    write_log_csv(dir / "a.csv", a.log);
    write_log_csv(dir / "b.csv", b.log);
    std::ifstream fa(dir / "a.csv"), fb(dir / "b.csv");
    const std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
    EXPECT_EQ(sa, sb);
    EXPECT_NE(sa.find("fold,epoch,iteration"), std::string::npos);

    const auto val = sure.subspan(8);
    const auto before = predict_probs(a.model, val);
    save_checkpoint(dir / "m.ckpt", a.model);
    auto loaded = load_checkpoint(dir / "m.ckpt");
    EXPECT_EQ(predict_probs(loaded.model, val), before);
    EXPECT_EQ(mean_bce(loaded.model, val), a.best_val_bce);
}
