#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "nodule/errors.hpp"
#include "nodule/losses.hpp"
#include "oracles.hpp"

using namespace nodule;

namespace {

torch::Tensor vec(const std::vector<double>& v) { return torch::tensor(v, torch::kFloat64); }

SynergicNet tiny_model(std::uint64_t seed, bool fnet = true) {
    BackboneConfig cfg = BackboneConfig{}.scaled(4);
    cfg.side = 16;
    cfg.use_fnet = fnet;
    return make_model(cfg, seed, torch::kFloat64);
}

torch::Tensor input(std::uint64_t seed) {
    torch::manual_seed(seed);
    return torch::rand({1, 2, 16, 16, 16}, torch::kFloat64);
}

}  // namespace

TEST(Dice, WorkedExamples) {
    const std::vector<double> g{1, 0, 1, 1, 0, 0, 1, 0};
    EXPECT_LT(dice_loss(g, g, 1e-5), 1e-5);

    const std::vector<double> zero(8, 0.0);
    EXPECT_NEAR(dice_loss(zero, g, 1e-5), 1.0 - 1e-5 / (4.0 + 1e-5), 1e-12);

    const std::vector<double> half(8, 0.5);
    const double expected = 1.0 - (2.0 * 2.0 + 1e-5) / (4.0 + 4.0 + 1e-5);
    EXPECT_NEAR(dice_loss(half, g, 1e-5), expected, 1e-12);
    EXPECT_NEAR(expected, 0.5, 1e-5);
}

TEST(Dice, MatchesOracleOnRandomInputs) {
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 100; ++t) {
        std::vector<double> y(64), g(64);
        for (std::size_t i = 0; i < 64; ++i) {
            y[i] = u(rng);
            g[i] = u(rng) < 0.3 ? 1.0 : 0.0;
        }
        const double want = oracle::dice(y, g, 1e-5);
        EXPECT_NEAR(dice_loss(y, g, 1e-5), want, 1e-9);
        EXPECT_NEAR(dice_loss(vec(y), vec(g), 1e-5).item<double>(), want, 1e-9);
    }
}

TEST(Mse, WorkedExamples) {
    EXPECT_EQ(mse_loss(0.5, 0.5), 0.0);
    EXPECT_EQ(mse_loss(1.0, 0.0), 1.0);
    EXPECT_NEAR(mse_loss(0.3, 0.7), 0.16, 1e-15);
    EXPECT_NEAR(mse_loss(vec({0.3}).squeeze(), 0.7).item<double>(), 0.16, 1e-15);
}

TEST(Bce, WorkedExamples) {
    EXPECT_NEAR(bce_loss(0.5, 1), std::log(2.0), 1e-12);
    EXPECT_NEAR(bce_loss(0.9, 0), -std::log(0.1), 1e-12);
    EXPECT_LT(bce_loss(1.0 - 1e-12, 1), 1e-6);
    EXPECT_TRUE(std::isfinite(bce_loss(0.0, 1)));  // clamped
    EXPECT_NEAR(bce_loss(vec({0.9}).squeeze(), 0).item<double>(), -std::log(0.1), 1e-12);
}

TEST(Csl, WorkedExamples) {
    EXPECT_EQ(csl(0.8, 0.1, 0.5, MarginMode::ndl_over_bkg), 0.0);
    EXPECT_NEAR(csl(0.2, 0.6, 0.5, MarginMode::ndl_over_bkg), 0.9, 1e-12);
    EXPECT_NEAR(csl(0.2, 0.6, 0.5, MarginMode::bkg_over_ndl), 0.1, 1e-12);
}

TEST(AdCsl, WorkedExamples) {
    EXPECT_EQ(ad_csl(0.5, 0.5, 123.0), 0.0);
    EXPECT_NEAR(ad_csl(1.0, 0.5, 0.9), 0.9, 1e-12);
    EXPECT_NEAR(ad_csl(0.75, 0.5, 0.4), 0.2, 1e-12);
}

TEST(CslFamily, MatchesOraclesOnRandomInputs) {
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 500; ++t) {
        const double ndl = u(rng), bkg = u(rng), d = u(rng), p = u(rng), thr = u(rng);
        const double fwd = oracle::hinge(bkg - ndl + d);
        const double inv = oracle::hinge(ndl - bkg + d);
        EXPECT_NEAR(csl(ndl, bkg, d, MarginMode::ndl_over_bkg), fwd, 1e-9);
        EXPECT_NEAR(csl(ndl, bkg, d, MarginMode::bkg_over_ndl), inv, 1e-9);
        EXPECT_NEAR(ad_csl(p, thr, fwd), 2.0 * std::abs(p - thr) * fwd, 1e-9);
        const auto tn = vec({ndl}).squeeze(), tb = vec({bkg}).squeeze();
        EXPECT_NEAR(csl(tn, tb, d, MarginMode::ndl_over_bkg).item<double>(), fwd, 1e-9);
        EXPECT_NEAR(ad_csl(vec({p}).squeeze(), thr, vec({fwd}).squeeze()).item<double>(), 2.0 * std::abs(p - thr) * fwd,
                    1e-9);
    }
}

TEST(TotalLoss, WeightedSum) {
    LossWeights w;
    EXPECT_EQ(total_loss(0, 0, 0, 0, w), 0.0);
    EXPECT_NEAR(total_loss(0.7, 0.2, 0.3, 0.1, w), 1.3, 1e-12);
    w.alpha = 0.0;
    EXPECT_NEAR(total_loss(0.7, 0.2, 0.3, 0.1, w), 1.1, 1e-12);
}

TEST(AvgCam, WorkedExamples) {
    const std::vector<double> flat(6, 0.7);
    const std::vector<double> sem{0.1, 0.9, 0.3, 0.5, 0.0, 1.0};
    auto [n1, b1] = avg_cam(flat, sem);
    EXPECT_NEAR(n1, 0.7, 1e-12);
    EXPECT_NEAR(b1, 0.7, 1e-12);

    const std::vector<double> cam{0.2, 0.4, 0.9, 0.1};
    const std::vector<double> half(4, 0.5);
    auto [n2, b2] = avg_cam(cam, half);
    EXPECT_NEAR(n2, 0.4, 1e-12);
    EXPECT_NEAR(b2, 0.4, 1e-12);

    auto [n3, b3] = avg_cam(std::vector<double>{1.0, 0.0}, std::vector<double>{0.9, 0.1});
    EXPECT_NEAR(n3, 0.9, 1e-12);
    EXPECT_NEAR(b3, 0.1, 1e-12);
}

TEST(MinMax, ConstantMapBecomesZero) {
    const auto c = torch::full({2, 2, 2}, 3.0, torch::kFloat64);
    EXPECT_EQ(min_max_normalize(c).abs().sum().item<double>(), 0.0);
    const auto r = min_max_normalize(vec({1.0, 3.0, 2.0}));
    EXPECT_TRUE(torch::allclose(r, vec({0.0, 1.0, 0.5})));
}

TEST(Cam, MeanOfRawCamIsScoreMinusBias) {
    for (std::uint64_t s = 0; s < 10; ++s) {
        auto model = tiny_model(s);
        torch::NoGradGuard guard;
        const auto o = model->forward(input(100 + s));
        const auto cam = compute_cam(o, 0.5);
        double mean = 0.0;
        for (double v : cam.raw_cam.values()) mean += v;
        mean /= static_cast<double>(cam.raw_cam.size());
        EXPECT_NEAR(mean, o.cls_logit.item<double>() - o.cnet_bias.item<double>(), 1e-10);
    }
}

TEST(Cam, PredictionAndThreshold) {
    auto model = tiny_model(21);
    torch::NoGradGuard guard;
    const auto o = model->forward(input(22));
    const double p = o.cls_prob.item<double>();
    // At threshold == P the scaled map is identically zero.
    const auto at = compute_cam(o, p);
    for (double v : at.cam_c.values()) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(at.cls, 1);
    EXPECT_EQ(compute_cam(o, p - 0.01).cls, 1);
    EXPECT_EQ(compute_cam(o, p + 0.01).cls, 0);

    const auto c = compute_cam(o, 0.5);
    double lo = 1.0, hi = 0.0;
    for (double v : c.cam_c.values()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    EXPECT_NEAR(lo, 0.0, 1e-12);
    EXPECT_NEAR(hi, 1.0, 1e-12);
}

TEST(ComputeLosses, AlphaZeroAndSureOnly) {
    auto model = tiny_model(31);
    const auto so = model->forward(input(32));
    const auto uo = model->forward(input(33));
    UnsureTargets tg{torch::zeros({4, 4, 4}, torch::kFloat64), 0.75};
    tg.mask[1][2][3] = 1.0;

    LossWeights w;
    const auto full = compute_losses(so, 1, &uo, &tg, w);
    const double manual = full.cls.item<double>() + full.cam.item<double>() + full.seg.item<double>() +
                          full.reg.item<double>();
    EXPECT_NEAR(full.total.item<double>(), manual, 1e-12);
    EXPECT_NEAR(full.reg.item<double>(), std::pow(uo.reg_score.item<double>() - 0.75, 2), 1e-12);

    w.alpha = 0.0;
    const auto f = compute_losses(so, 1, &uo, &tg, w);
    EXPECT_EQ(f.cam.item<double>(), 0.0);
    EXPECT_NEAR(f.total.item<double>(), full.total.item<double>() - full.cam.item<double>(), 1e-12);

    w.beta = w.gamma = 0.0;
    const auto a = compute_losses(so, 1, nullptr, nullptr, w);
    EXPECT_NEAR(a.total.item<double>(), bce_loss(so.cls_prob.item<double>(), 1), 1e-12);
}

TEST(ComputeLosses, CamTermFollowsDefinition) {
    auto model = tiny_model(41);
    const auto so = model->forward(input(42));
    LossWeights w;
    w.beta = w.gamma = 0.0;
    w.delta = 0.8;
    for (auto mode : {MarginMode::ndl_over_bkg, MarginMode::bkg_over_ndl}) {
        w.mode = mode;
        w.delta_prime = 0.3;
        const auto t = compute_losses(so, 0, nullptr, nullptr, w);
        const auto cam = compute_cam(so, 0.5);
        const double margin = mode == MarginMode::ndl_over_bkg ? 0.8 : 0.3;
        const double gap = mode == MarginMode::ndl_over_bkg ? cam.avg_bkg - cam.avg_ndl : cam.avg_ndl - cam.avg_bkg;
        const double want = 2.0 * std::abs(so.cls_prob.item<double>() - 0.5) * oracle::hinge(gap + margin);
        EXPECT_NEAR(t.cam.item<double>(), want, 1e-9);
    }
}

TEST(ComputeLosses, GradientsReachEveryBranch) {
    auto model = tiny_model(51);
    const auto so = model->forward(input(52));
    const auto uo = model->forward(input(53));
    UnsureTargets tg{torch::zeros({4, 4, 4}, torch::kFloat64), 0.25};
    tg.mask[2][2][2] = 1.0;
    LossWeights w;
    w.delta = 2.0;  // keeps the hinge active
    compute_losses(so, 1, &uo, &tg, w).total.backward();
    for (auto* m : {static_cast<torch::nn::Module*>(model->backbone.get()), static_cast<torch::nn::Module*>(model->segnet.get()),
                    static_cast<torch::nn::Module*>(model->fnet.get()), static_cast<torch::nn::Module*>(model->rnet.get()),
                    static_cast<torch::nn::Module*>(model->cnet.get())}) {
        double norm = 0.0;
        for (const auto& p : m->parameters()) norm += p.grad().abs().sum().item<double>();
        EXPECT_GT(norm, 0.0);
    }
}

TEST(LossWeights, ValidationAndJson) {
    LossWeights w;
    w.alpha = -1.0;
    EXPECT_THROW(w.validate(), ConfigError);
    w = LossWeights{};
    w.mode = MarginMode::bkg_over_ndl;
    w.delta_prime = 0.3;
    const nlohmann::json j = w;
    EXPECT_EQ(j.get<LossWeights>(), w);
    EXPECT_EQ(parse_margin_mode("bkg_over_ndl"), MarginMode::bkg_over_ndl);
    EXPECT_THROW(parse_margin_mode("sideways"), ArgumentError);
}
