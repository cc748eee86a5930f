#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "nodule/data_model.hpp"

namespace nodule {

struct BackboneConfig {
    int side = kDefaultSide;
    int in_channels = NodulePatch::kChannels;
    /// Convolutional head, then residual blocks 1..3.
    std::array<int, 4> channels{64, 64, 128, 256};
    /// Widths of the two 3x3x3 SegNet convolutions.
    std::array<int, 2> seg_channels{32, 32};
    int groups = 8;
    std::array<int, 3> dilations{1, 2, 4};
    /// FNet fusion of the segmentation map into the features.
    bool use_fnet = true;

    /// Throws ConfigError on inconsistent settings.
    void validate() const;
    int feature_channels() const { return channels[3]; }
    int feature_side() const { return side / 4; }
    /// Every width divided by `divisor` (group count capped to fit).
    BackboneConfig scaled(int divisor) const;

    bool operator==(const BackboneConfig&) const = default;
};

void to_json(nlohmann::json& j, const BackboneConfig& c);
void from_json(const nlohmann::json& j, BackboneConfig& c);

/// Convolution without bias followed by group norm and optional ReLU.
struct ConvNormImpl : torch::nn::Module {
    ConvNormImpl(int in, int out, int kernel, int stride, int padding, int dilation, int groups, bool relu);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv3d conv{nullptr};
    torch::nn::GroupNorm norm{nullptr};
    bool relu;
};
TORCH_MODULE(ConvNorm);

/// Two 3x3x3 convolutions with a 1x1x1 projection shortcut.
struct ResidualBlockImpl : torch::nn::Module {
    ResidualBlockImpl(int in, int out, int stride, int dilation, int groups, bool final_relu);
    torch::Tensor forward(const torch::Tensor& x);

    ConvNorm conv1{nullptr}, conv2{nullptr}, shortcut{nullptr};
    bool final_relu;
};
TORCH_MODULE(ResidualBlock);

struct BackboneImpl : torch::nn::Module {
    explicit BackboneImpl(const BackboneConfig& cfg);
    /// [B,2,S,S,S] -> [B,K,S/4,S/4,S/4], not rectified.
    torch::Tensor forward(const torch::Tensor& x);

    ConvNorm head{nullptr};
    ResidualBlock block1{nullptr}, block2{nullptr}, block3{nullptr};
};
TORCH_MODULE(Backbone);

struct SegHeadImpl : torch::nn::Module {
    SegHeadImpl(int in, std::array<int, 2> widths, int groups);
    /// Rectifies its input, then 3x3x3, 3x3x3, 1x1x1 -> one-channel logits.
    torch::Tensor forward(const torch::Tensor& features);

    ConvNorm reduce1{nullptr}, reduce2{nullptr};
    torch::nn::Conv3d logits{nullptr};
};
TORCH_MODULE(SegHead);

/// Every intermediate the CAM/SEM losses consume. Tensors keep the batch
/// dimension: features [B,K,L,W,H], pooled [B,K], seg_logits/seg_prob
/// [B,L,W,H], reg_score/cls_logit/cls_prob [B]; cnet_weight [K] and
/// cnet_bias [] are the live classifier parameters (not detached).
struct ModelOutputs {
    torch::Tensor features;
    torch::Tensor pooled;
    torch::Tensor seg_logits;
    torch::Tensor seg_prob;
    torch::Tensor reg_score;
    torch::Tensor cls_logit;
    torch::Tensor cls_prob;
    torch::Tensor cnet_weight;
    torch::Tensor cnet_bias;
    torch::Tensor backbone;  // pre-fusion backbone output
};

struct SynergicNetImpl : torch::nn::Module {
    explicit SynergicNetImpl(const BackboneConfig& cfg);
    ModelOutputs forward(const torch::Tensor& x);

    BackboneConfig config;
    Backbone backbone{nullptr};
    SegHead segnet{nullptr};
    torch::nn::Conv3d fnet{nullptr};
    torch::nn::Linear rnet{nullptr}, cnet{nullptr};
};
TORCH_MODULE(SynergicNet);

/// Builds the model and initialises weights from `seed`.
SynergicNet make_model(const BackboneConfig& cfg, std::uint64_t seed, torch::Dtype dtype = torch::kFloat32);

std::int64_t parameter_count(const SynergicNet& model);
/// Parameter count of the modules a configuration actually uses
/// (FNet excluded when `use_fnet` is false).
std::int64_t active_parameter_count(const SynergicNet& model);

/// Patch -> [1,2,D,H,W] tensor.
torch::Tensor patch_tensor(const NodulePatch& patch, torch::Dtype dtype = torch::kFloat32);
/// Mask -> [D,H,W] tensor of 0/1.
torch::Tensor mask_tensor(const Mask3& mask, torch::Dtype dtype = torch::kFloat32);

// Checkpoint: "NDCKPT01", u64 header length, JSON header {config, tensors:
// [{name, shape, dtype, offset, bytes}], meta}, then the raw tensor bytes.

void save_checkpoint(const std::filesystem::path& path, SynergicNet& model,
                     const nlohmann::json& meta = nlohmann::json::object());
struct LoadedCheckpoint {
    SynergicNet model{nullptr};
    nlohmann::json meta;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Deep copy of the parameters (for in-memory best-model tracking).
std::vector<torch::Tensor> snapshot_parameters(SynergicNet& model);
void restore_parameters(SynergicNet& model, const std::vector<torch::Tensor>& values);

}  // namespace nodule
