#include "nodule/losses.hpp"

#include <algorithm>
#include <cmath>

#include "nodule/errors.hpp"

namespace nodule {

using nlohmann::json;

std::string_view to_string(MarginMode m) {
    return m == MarginMode::ndl_over_bkg ? "ndl_over_bkg" : "bkg_over_ndl";
}

MarginMode parse_margin_mode(std::string_view name) {
    if (name == "ndl_over_bkg") return MarginMode::ndl_over_bkg;
    if (name == "bkg_over_ndl") return MarginMode::bkg_over_ndl;
    throw ArgumentError("unknown margin mode: " + std::string(name));
}

void LossWeights::validate() const {
    if (alpha < 0.0 || beta < 0.0 || gamma < 0.0) throw ConfigError("loss weights must be >= 0");
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0,1)");
    if (!(epsilon > 0.0)) throw ConfigError("dice epsilon must be positive");
}

void to_json(json& j, const LossWeights& w) {
    j = json{{"alpha", w.alpha},
             {"beta", w.beta},
             {"gamma", w.gamma},
             {"delta", w.delta},
             {"delta_prime", w.delta_prime},
             {"threshold", w.threshold},
             {"mode", to_string(w.mode)},
             {"adaptive", w.adaptive},
             {"epsilon", w.epsilon}};
}

void from_json(const json& j, LossWeights& w) {
    LossWeights d;
    w.alpha = j.value("alpha", d.alpha);
    w.beta = j.value("beta", d.beta);
    w.gamma = j.value("gamma", d.gamma);
    w.delta = j.value("delta", d.delta);
    w.delta_prime = j.value("delta_prime", d.delta_prime);
    w.threshold = j.value("threshold", d.threshold);
    w.mode = parse_margin_mode(j.value("mode", std::string(to_string(d.mode))));
    w.adaptive = j.value("adaptive", d.adaptive);
    w.epsilon = j.value("epsilon", d.epsilon);
}

// ------------------------------------------------------------ scalar forms

double dice_loss(std::span<const double> seg_prob, std::span<const double> truth, double epsilon) {
    if (seg_prob.size() != truth.size()) throw ArgumentError("dice_loss: shape mismatch");
    double inter = 0.0, sum_y = 0.0, sum_g = 0.0;
    for (std::size_t i = 0; i < seg_prob.size(); ++i) {
        inter += seg_prob[i] * truth[i];
        sum_y += seg_prob[i];
        sum_g += truth[i];
    }
    return 1.0 - (2.0 * inter + epsilon) / (sum_y + sum_g + epsilon);
}

double mse_loss(double prediction, double target) {
    const double d = prediction - target;
    return d * d;
}

double bce_loss(double prob, int label) {
    const double p = std::clamp(prob, kProbClamp, 1.0 - kProbClamp);
    return label ? -std::log(p) : -std::log(1.0 - p);
}

double csl(double avg_ndl, double avg_bkg, double margin, MarginMode mode) {
    const double gap = mode == MarginMode::ndl_over_bkg ? avg_bkg - avg_ndl : avg_ndl - avg_bkg;
    return std::max(0.0, gap + margin);
}

double ad_csl(double prob, double threshold, double csl_value) { return 2.0 * std::abs(prob - threshold) * csl_value; }

double total_loss(double cls, double ad_csl_value, double seg, double reg, const LossWeights& w) {
    return cls + w.alpha * ad_csl_value + w.beta * seg + w.gamma * reg;
}

std::pair<double, double> avg_cam(std::span<const double> cam_c, std::span<const double> sem) {
    if (cam_c.size() != sem.size()) throw ArgumentError("avg_cam: shape mismatch");
    double ndl = 0.0, bkg = 0.0, w_ndl = 0.0, w_bkg = 0.0;
    for (std::size_t i = 0; i < cam_c.size(); ++i) {
        ndl += cam_c[i] * sem[i];
        bkg += cam_c[i] * (1.0 - sem[i]);
        w_ndl += sem[i];
        w_bkg += 1.0 - sem[i];
    }
    return {ndl / std::max(w_ndl, kWeightFloor), bkg / std::max(w_bkg, kWeightFloor)};
}

int predicted_class(double prob, double threshold) { return prob >= threshold ? 1 : 0; }

// ------------------------------------------------------------ tensor forms

torch::Tensor dice_loss(const torch::Tensor& seg_prob, const torch::Tensor& truth, double epsilon) {
    if (seg_prob.sizes() != truth.sizes()) throw ArgumentError("dice_loss: shape mismatch");
    auto inter = (seg_prob * truth).sum();
    return 1.0 - (2.0 * inter + epsilon) / (seg_prob.sum() + truth.sum() + epsilon);
}

torch::Tensor mse_loss(const torch::Tensor& prediction, double target) { return (prediction - target).pow(2).sum(); }

torch::Tensor bce_loss(const torch::Tensor& prob, int label) {
    auto p = prob.clamp(kProbClamp, 1.0 - kProbClamp).sum();
    return label ? -torch::log(p) : -torch::log(1.0 - p);
}

torch::Tensor csl(const torch::Tensor& avg_ndl, const torch::Tensor& avg_bkg, double margin, MarginMode mode) {
    auto gap = mode == MarginMode::ndl_over_bkg ? avg_bkg - avg_ndl : avg_ndl - avg_bkg;
    return torch::relu(gap + margin);
}

torch::Tensor ad_csl(const torch::Tensor& prob, double threshold, const torch::Tensor& csl_value) {
    return 2.0 * (prob - threshold).abs() * csl_value;
}

std::pair<torch::Tensor, torch::Tensor> avg_cam(const torch::Tensor& cam_c, const torch::Tensor& sem) {
    if (cam_c.sizes() != sem.sizes()) throw ArgumentError("avg_cam: shape mismatch");
    auto ndl = (cam_c * sem).sum() / sem.sum().clamp_min(kWeightFloor);
    auto bkg = (cam_c * (1.0 - sem)).sum() / (1.0 - sem).sum().clamp_min(kWeightFloor);
    return {ndl, bkg};
}

torch::Tensor min_max_normalize(const torch::Tensor& x) {
    auto lo = x.min();
    auto hi = x.max();
    if ((hi - lo).item<double>() <= kWeightFloor) return torch::zeros_like(x).detach();
    return (x - lo) / (hi - lo);
}

CamTensors compute_cam_tensors(const ModelOutputs& o, double threshold, std::int64_t index) {
    CamTensors c;
    const auto f = o.features[index];  // [K,L,W,H]
    const auto k = f.size(0);
    c.raw_cam = (o.cnet_weight.view({k, 1, 1, 1}) * f).sum(0);
    const auto p = o.cls_prob[index];
    c.cam_c = min_max_normalize((p - threshold) * c.raw_cam);
    std::tie(c.avg_ndl, c.avg_bkg) = avg_cam(c.cam_c, o.seg_prob[index]);
    c.cls = predicted_class(p.item<double>(), threshold);
    return c;
}

namespace {

Grid3<double> to_grid(const torch::Tensor& t) {
    auto d = t.detach().to(torch::kFloat64).contiguous().cpu();
    Shape3 s{d.size(0), d.size(1), d.size(2)};
    const double* ptr = d.data_ptr<double>();
    return Grid3<double>(s, std::vector<double>(ptr, ptr + d.numel()));
}

}  // namespace

CamResult compute_cam(const ModelOutputs& outputs, double threshold, std::int64_t index) {
    torch::NoGradGuard guard;
    const auto c = compute_cam_tensors(outputs, threshold, index);
    return {to_grid(c.raw_cam), to_grid(c.cam_c), c.avg_ndl.item<double>(), c.avg_bkg.item<double>(), c.cls};
}

LossTerms compute_losses(const ModelOutputs& sure, int sure_label, const ModelOutputs* unsure, const UnsureTargets* targets,
                         const LossWeights& w) {
    LossTerms t;
    const auto zero = torch::zeros({}, sure.cls_prob.options());
    const auto p = sure.cls_prob[0];
    t.cls = bce_loss(p, sure_label);

    if (w.alpha > 0.0) {
        const auto cam = compute_cam_tensors(sure, w.threshold, 0);
        const auto plain = csl(cam.avg_ndl, cam.avg_bkg, w.margin(), w.mode);
        t.cam = w.adaptive ? ad_csl(p, w.threshold, plain) : plain;
        t.avg_ndl = cam.avg_ndl.item<double>();
        t.avg_bkg = cam.avg_bkg.item<double>();
    } else {
        t.cam = zero;
    }

    if (unsure && targets && (w.beta > 0.0 || w.gamma > 0.0)) {
        t.seg = dice_loss(unsure->seg_prob[0], targets->mask, w.epsilon);
        t.reg = mse_loss(unsure->reg_score[0], targets->normalized_score);
    } else {
        t.seg = zero;
        t.reg = zero;
    }
    t.total = t.cls + w.alpha * t.cam + w.beta * t.seg + w.gamma * t.reg;
    return t;
}

}  // namespace nodule
