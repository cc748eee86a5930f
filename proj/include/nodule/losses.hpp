#pragma once

#include <span>
#include <string_view>
#include <utility>

#include <json.hpp>
#include <torch/torch.h>

#include "nodule/grid.hpp"
#include "nodule/network.hpp"

namespace nodule {

inline constexpr double kDiceEpsilon = 1e-5;
inline constexpr double kProbClamp = 1e-7;
inline constexpr double kWeightFloor = 1e-12;

/// Which side of the CAM the margin pushes up.
enum class MarginMode {
    ndl_over_bkg,  // AvgCAM_ndl >= AvgCAM_bkg + delta
    bkg_over_ndl,  // AvgCAM_bkg >= AvgCAM_ndl + delta'
};

std::string_view to_string(MarginMode m);
MarginMode parse_margin_mode(std::string_view name);

struct LossWeights {
    double alpha = 1.0;  // CAM-SEM term
    double beta = 1.0;   // segmentation
    double gamma = 1.0;  // regression
    double delta = 0.5;        // margin for ndl_over_bkg
    double delta_prime = 0.5;  // margin for bkg_over_ndl
    double threshold = 0.5;
    MarginMode mode = MarginMode::ndl_over_bkg;
    bool adaptive = true;
    double epsilon = kDiceEpsilon;

    void validate() const;
    double margin() const { return mode == MarginMode::ndl_over_bkg ? delta : delta_prime; }
    bool operator==(const LossWeights&) const = default;
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

// ------------------------------------------------------------ scalar forms

double dice_loss(std::span<const double> seg_prob, std::span<const double> truth, double epsilon = kDiceEpsilon);
double mse_loss(double prediction, double target);
/// Positive cross-entropy; P is clamped to [1e-7, 1 - 1e-7].
double bce_loss(double prob, int label);
double csl(double avg_ndl, double avg_bkg, double margin, MarginMode mode);
double ad_csl(double prob, double threshold, double csl_value);
double total_loss(double cls, double ad_csl_value, double seg, double reg, const LossWeights& w);
/// SEM-weighted means of the CAM inside and outside the nodule.
std::pair<double, double> avg_cam(std::span<const double> cam_c, std::span<const double> sem);
/// Predicted class under the P >= threshold rule.
int predicted_class(double prob, double threshold);

// ------------------------------------------------------------ tensor forms

torch::Tensor dice_loss(const torch::Tensor& seg_prob, const torch::Tensor& truth, double epsilon = kDiceEpsilon);
torch::Tensor mse_loss(const torch::Tensor& prediction, double target);
torch::Tensor bce_loss(const torch::Tensor& prob, int label);
torch::Tensor csl(const torch::Tensor& avg_ndl, const torch::Tensor& avg_bkg, double margin, MarginMode mode);
torch::Tensor ad_csl(const torch::Tensor& prob, double threshold, const torch::Tensor& csl_value);
std::pair<torch::Tensor, torch::Tensor> avg_cam(const torch::Tensor& cam_c, const torch::Tensor& sem);
/// Min-max rescale onto [0,1]; a constant map becomes all zeros.
torch::Tensor min_max_normalize(const torch::Tensor& x);

/// Differentiable CAM quantities for one sample of a batch.
struct CamTensors {
    torch::Tensor raw_cam;  // sum_k w_k f_k, [L,W,H]
    torch::Tensor cam_c;    // (P - threshold) * raw_cam, min-max normalised
    torch::Tensor avg_ndl;
    torch::Tensor avg_bkg;
    int cls = 0;
};

CamTensors compute_cam_tensors(const ModelOutputs& outputs, double threshold, std::int64_t index = 0);

/// Detached CAM result.
struct CamResult {
    Grid3<double> raw_cam;
    Grid3<double> cam_c;
    double avg_ndl = 0.0;
    double avg_bkg = 0.0;
    int cls = 0;
};

CamResult compute_cam(const ModelOutputs& outputs, double threshold, std::int64_t index = 0);

/// Loss terms of one paired step. Entries are 0-d tensors.
struct LossTerms {
    torch::Tensor cls;
    torch::Tensor cam;  // ad-CSL (or plain CSL when weights.adaptive is false)
    torch::Tensor seg;
    torch::Tensor reg;
    torch::Tensor total;
    double avg_ndl = 0.0;
    double avg_bkg = 0.0;
};

struct UnsureTargets {
    torch::Tensor mask;  // [L,W,H], already at feature resolution
    double normalized_score = 0.0;
};

/// Classification and CAM-SEM terms on the sure sample (its SEM comes from
/// the model's own segmentation); Dice and MSE on the unsure sample, when
/// given. Total = cls + alpha cam + beta seg + gamma reg.
LossTerms compute_losses(const ModelOutputs& sure, int sure_label, const ModelOutputs* unsure,
                         const UnsureTargets* targets, const LossWeights& w);

}  // namespace nodule
