#include <gtest/gtest.h>

#include "nodule/errors.hpp"
#include "nodule/network.hpp"
#include "test_util.hpp"

using namespace nodule;

namespace {

torch::Tensor random_input(int side, std::uint64_t seed, torch::Dtype dtype = torch::kFloat32) {
    torch::manual_seed(seed);
    return torch::rand({1, 2, side, side, side}, torch::TensorOptions().dtype(dtype));
}

void zero_parameters(torch::nn::Module& m) {
    torch::NoGradGuard guard;
    for (auto& p : m.parameters()) p.zero_();
}

// Parameter count from the layer widths: bias-free convolutions, two affine
// vectors per group norm, biased linear and 1x1 output layers.
std::int64_t counted_parameters(const BackboneConfig& c) {
    auto conv = [](std::int64_t in, std::int64_t out, std::int64_t k) { return in * out * k * k * k; };
    auto gn = [](std::int64_t ch) { return 2 * ch; };
    auto block = [&](std::int64_t in, std::int64_t out) {
        return conv(in, out, 3) + gn(out) + conv(out, out, 3) + gn(out) + conv(in, out, 1) + gn(out);
    };
    const auto& w = c.channels;
    std::int64_t n = conv(c.in_channels, w[0], 7) + gn(w[0]);
    n += block(w[0], w[1]) + block(w[1], w[2]) + block(w[2], w[3]);
    n += conv(w[3], c.seg_channels[0], 3) + gn(c.seg_channels[0]);
    n += conv(c.seg_channels[0], c.seg_channels[1], 3) + gn(c.seg_channels[1]);
    n += c.seg_channels[1] + 1;  // 1x1 logits with bias
    n += conv(1, w[3], 3);       // fusion
    n += 2 * (w[3] + 1);         // regression and classification heads
    return n;
}

}  // namespace

TEST(Network, ParameterBudget) {
    const BackboneConfig cfg;
    auto model = make_model(cfg, 0);
    const auto n = parameter_count(model);
    EXPECT_EQ(n, counted_parameters(cfg));
    EXPECT_NEAR(static_cast<double>(n), 3.8842e6, 0.05 * 3.8842e6);

    BackboneConfig no_fusion = cfg;
    no_fusion.use_fnet = false;
    auto plain = make_model(no_fusion, 0);
    EXPECT_EQ(active_parameter_count(plain), n - 256 * 27);
}

TEST(Network, FeatureShapes) {
    for (int side : {64, 32}) {
        BackboneConfig cfg;
        cfg.side = side;
        auto model = make_model(cfg, 1);
        model->eval();
        torch::NoGradGuard guard;
        const auto o = model->forward(random_input(side, 2));
        const int l = side / 4;
        EXPECT_EQ(o.backbone.sizes(), (std::vector<std::int64_t>{1, 256, l, l, l}));
        EXPECT_EQ(o.features.sizes(), (std::vector<std::int64_t>{1, 256, l, l, l}));
        EXPECT_EQ(o.seg_logits.sizes(), (std::vector<std::int64_t>{1, l, l, l}));
        EXPECT_EQ(o.pooled.sizes(), (std::vector<std::int64_t>{1, 256}));
        EXPECT_EQ(o.cls_prob.sizes(), (std::vector<std::int64_t>{1}));
        EXPECT_TRUE((o.seg_prob > 0).all().item<bool>());
        EXPECT_TRUE((o.seg_prob < 1).all().item<bool>());
        EXPECT_TRUE((o.features >= 0).all().item<bool>());
    }
}

TEST(Network, ZeroWeightsGiveZeroFeatures) {
    BackboneConfig cfg = BackboneConfig{}.scaled(4);
    cfg.side = 16;
    auto model = make_model(cfg, 3);
    zero_parameters(*model);
    torch::NoGradGuard guard;
    const auto o = model->forward(random_input(16, 4));
    EXPECT_EQ(o.backbone.abs().max().item<float>(), 0.0f);
    EXPECT_TRUE(o.seg_prob.eq(0.5).all().item<bool>());
    EXPECT_EQ(o.cls_prob.item<float>(), 0.5f);
}

TEST(Network, ZeroSegBranchLeavesRectifiedBackbone) {
    BackboneConfig cfg = BackboneConfig{}.scaled(4);
    cfg.side = 16;
    auto model = make_model(cfg, 5);
    zero_parameters(*model->segnet);
    torch::NoGradGuard guard;
    const auto o = model->forward(random_input(16, 6));
    EXPECT_TRUE(torch::equal(o.features, torch::relu(o.backbone)));
}

TEST(Network, HeadsArePoolThenLinear) {
    BackboneConfig cfg = BackboneConfig{}.scaled(4);
    cfg.side = 16;
    auto model = make_model(cfg, 7, torch::kFloat64);
    torch::NoGradGuard guard;
    const auto o = model->forward(random_input(16, 8, torch::kFloat64));
    const auto f = o.features[0];
    for (std::int64_t k = 0; k < f.size(0); ++k) {
        double sum = 0.0;
        const auto fk = f[k].contiguous();
        const double* p = fk.data_ptr<double>();
        for (std::int64_t i = 0; i < fk.numel(); ++i) sum += p[i];
        EXPECT_NEAR(o.pooled[0][k].item<double>(), sum / static_cast<double>(fk.numel()), 1e-12);
    }
    // A constant map pools to its value.
    const auto constant = torch::full({1, f.size(0), 4, 4, 4}, 0.37, torch::kFloat64);
    EXPECT_TRUE(torch::allclose(constant.mean({2, 3, 4}), torch::full({1, f.size(0)}, 0.37, torch::kFloat64)));
    // S - bias is linear in the pooled features.
    const auto b = model->cnet->bias;
    const auto s1 = model->cnet(o.pooled) - b;
    const auto s2 = model->cnet(2.0 * o.pooled) - b;
    EXPECT_NEAR(s2.item<double>(), 2.0 * s1.item<double>(), 1e-12);
    // Zero classifier gives S = 0, P = 0.5.
    model->cnet->weight.zero_();
    model->cnet->bias.zero_();
    const auto z = model->forward(random_input(16, 8, torch::kFloat64));
    EXPECT_EQ(z.cls_logit.item<double>(), 0.0);
    EXPECT_EQ(z.cls_prob.item<double>(), 0.5);
}

TEST(Network, SameSeedSameWeights) {
    BackboneConfig cfg = BackboneConfig{}.scaled(4);
    cfg.side = 16;
    auto a = make_model(cfg, 11);
    auto b = make_model(cfg, 11);
    const auto pa = a->parameters();
    const auto pb = b->parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(torch::equal(pa[i], pb[i]));
}

TEST(Network, CheckpointRoundTrip) {
    TempDir dir("ckpt");
    BackboneConfig cfg = BackboneConfig{}.scaled(4);
    cfg.side = 16;
    cfg.use_fnet = false;
    auto model = make_model(cfg, 12);
    model->eval();
    save_checkpoint(dir / "m.ckpt", model, {{"note", "x"}});
    auto loaded = load_checkpoint(dir / "m.ckpt");
    EXPECT_EQ(loaded.model->config, cfg);
    EXPECT_EQ(loaded.meta.at("note"), "x");
    loaded.model->eval();
    torch::NoGradGuard guard;
    const auto x = random_input(16, 13);
    const auto o1 = model->forward(x);
    const auto o2 = loaded.model->forward(x);
    EXPECT_TRUE(torch::equal(o1.cls_prob, o2.cls_prob));
    EXPECT_TRUE(torch::equal(o1.seg_logits, o2.seg_logits));
    EXPECT_TRUE(torch::equal(o1.reg_score, o2.reg_score));
}

TEST(Network, ConfigValidation) {
    BackboneConfig cfg;
    cfg.side = 30;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = BackboneConfig{};
    cfg.groups = 7;
    EXPECT_THROW(cfg.validate(), ConfigError);
    const auto s = BackboneConfig{}.scaled(4);
    EXPECT_EQ(s.channels, (std::array<int, 4>{16, 16, 32, 64}));
    EXPECT_EQ(s.seg_channels, (std::array<int, 2>{8, 8}));
    EXPECT_NO_THROW(s.validate());
    const nlohmann::json j = s;
    EXPECT_EQ(j.get<BackboneConfig>(), s);
}
