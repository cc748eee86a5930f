#include "nodule/network.hpp"

#include <cstring>
#include <fstream>
#include <numeric>

#include "nodule/errors.hpp"

namespace nodule {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
constexpr char kMagic[8] = {'N', 'D', 'C', 'K', 'P', 'T', '0', '1'};
}

void BackboneConfig::validate() const {
    if (side < 8 || side % 4 != 0) throw ConfigError("side must be a multiple of 4 and >= 8, got " + std::to_string(side));
    if (in_channels <= 0) throw ConfigError("in_channels must be positive");
    if (groups <= 0) throw ConfigError("groups must be positive");
    auto check = [&](int w, const char* what) {
        if (w <= 0) throw ConfigError(std::string(what) + " width must be positive");
        if (w % groups != 0) throw ConfigError(std::string(what) + " width " + std::to_string(w) + " not divisible by groups");
    };
    for (int w : channels) check(w, "backbone");
    for (int w : seg_channels) check(w, "segnet");
    for (int d : dilations) {
        if (d <= 0) throw ConfigError("dilation must be positive");
    }
}

BackboneConfig BackboneConfig::scaled(int divisor) const {
    if (divisor <= 0) throw ConfigError("scale divisor must be positive");
    BackboneConfig c = *this;
    for (auto& w : c.channels) w = std::max(1, w / divisor);
    for (auto& w : c.seg_channels) w = std::max(1, w / divisor);
    int g = c.groups;
    for (int w : c.channels) g = std::gcd(g, w);
    for (int w : c.seg_channels) g = std::gcd(g, w);
    c.groups = g;
    return c;
}

void to_json(json& j, const BackboneConfig& c) {
    j = json{{"side", c.side},         {"in_channels", c.in_channels}, {"channels", c.channels},
             {"seg_channels", c.seg_channels}, {"groups", c.groups}, {"dilations", c.dilations},
             {"use_fnet", c.use_fnet}};
}

void from_json(const json& j, BackboneConfig& c) {
    BackboneConfig d;
    c.side = j.value("side", d.side);
    c.in_channels = j.value("in_channels", d.in_channels);
    c.channels = j.value("channels", d.channels);
    c.seg_channels = j.value("seg_channels", d.seg_channels);
    c.groups = j.value("groups", d.groups);
    c.dilations = j.value("dilations", d.dilations);
    c.use_fnet = j.value("use_fnet", d.use_fnet);
}

// ---------------------------------------------------------------- layers

ConvNormImpl::ConvNormImpl(int in, int out, int kernel, int stride, int padding, int dilation, int groups, bool relu_)
    : relu(relu_) {
    conv = register_module("conv", torch::nn::Conv3d(torch::nn::Conv3dOptions(in, out, kernel)
                                                         .stride(stride)
                                                         .padding(padding)
                                                         .dilation(dilation)
                                                         .bias(false)));
    norm = register_module("norm", torch::nn::GroupNorm(torch::nn::GroupNormOptions(groups, out)));
}

torch::Tensor ConvNormImpl::forward(const torch::Tensor& x) {
    auto y = norm(conv(x));
    return relu ? torch::relu(y) : y;
}

ResidualBlockImpl::ResidualBlockImpl(int in, int out, int stride, int dilation, int groups, bool final_relu_)
    : final_relu(final_relu_) {
    conv1 = register_module("conv1", ConvNorm(in, out, 3, stride, dilation, dilation, groups, true));
    conv2 = register_module("conv2", ConvNorm(out, out, 3, 1, dilation, dilation, groups, false));
    shortcut = register_module("shortcut", ConvNorm(in, out, 1, stride, 0, 1, groups, false));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
    auto y = conv2(conv1(x)) + shortcut(x);
    return final_relu ? torch::relu(y) : y;
}

BackboneImpl::BackboneImpl(const BackboneConfig& c) {
    const auto& w = c.channels;
    head = register_module("head", ConvNorm(c.in_channels, w[0], 7, 2, 3, 1, c.groups, true));
    block1 = register_module("block1", ResidualBlock(w[0], w[1], 2, c.dilations[0], c.groups, true));
    block2 = register_module("block2", ResidualBlock(w[1], w[2], 1, c.dilations[1], c.groups, true));
    // Last ResNet convolution: group norm only.
    block3 = register_module("block3", ResidualBlock(w[2], w[3], 1, c.dilations[2], c.groups, false));
}

torch::Tensor BackboneImpl::forward(const torch::Tensor& x) { return block3(block2(block1(head(x)))); }

SegHeadImpl::SegHeadImpl(int in, std::array<int, 2> widths, int groups) {
    reduce1 = register_module("reduce1", ConvNorm(in, widths[0], 3, 1, 1, 1, groups, true));
    reduce2 = register_module("reduce2", ConvNorm(widths[0], widths[1], 3, 1, 1, 1, groups, true));
    logits = register_module("logits", torch::nn::Conv3d(torch::nn::Conv3dOptions(widths[1], 1, 1)));
}

torch::Tensor SegHeadImpl::forward(const torch::Tensor& features) {
    return logits(reduce2(reduce1(torch::relu(features))));
}

SynergicNetImpl::SynergicNetImpl(const BackboneConfig& cfg) : config(cfg) {
    config.validate();
    const int k = cfg.feature_channels();
    backbone = register_module("backbone", Backbone(cfg));
    segnet = register_module("segnet", SegHead(k, cfg.seg_channels, cfg.groups));
    fnet = register_module("fnet", torch::nn::Conv3d(torch::nn::Conv3dOptions(1, k, 3).stride(1).padding(1).bias(false)));
    rnet = register_module("rnet", torch::nn::Linear(k, 1));
    cnet = register_module("cnet", torch::nn::Linear(k, 1));
}

ModelOutputs SynergicNetImpl::forward(const torch::Tensor& x) {
    if (x.dim() != 5 || x.size(2) % 4 != 0 || x.size(3) % 4 != 0 || x.size(4) % 4 != 0) {
        throw ConfigError("input must be [B,C,D,H,W] with spatial sizes divisible by 4");
    }
    ModelOutputs o;
    o.backbone = backbone(x);
    auto seg = segnet(o.backbone);  // [B,1,L,W,H]
    o.features = config.use_fnet ? torch::relu(o.backbone + fnet(seg)) : torch::relu(o.backbone);
    o.seg_logits = seg.squeeze(1);
    o.seg_prob = torch::sigmoid(o.seg_logits);
    o.pooled = o.features.mean({2, 3, 4});
    o.reg_score = rnet(o.pooled).squeeze(1);
    o.cls_logit = cnet(o.pooled).squeeze(1);
    o.cls_prob = torch::sigmoid(o.cls_logit);
    o.cnet_weight = cnet->weight.squeeze(0);
    o.cnet_bias = cnet->bias.squeeze(0);
    return o;
}

SynergicNet make_model(const BackboneConfig& cfg, std::uint64_t seed, torch::Dtype dtype) {
    torch::manual_seed(seed);
    SynergicNet model(cfg);
    model->to(dtype);
    return model;
}

std::int64_t parameter_count(const SynergicNet& model) {
    std::int64_t n = 0;
    for (const auto& p : model->parameters()) n += p.numel();
    return n;
}

std::int64_t active_parameter_count(const SynergicNet& model) {
    std::int64_t n = parameter_count(model);
    if (!model->config.use_fnet) {
        for (const auto& p : model->fnet->parameters()) n -= p.numel();
    }
    return n;
}

torch::Tensor patch_tensor(const NodulePatch& patch, torch::Dtype dtype) {
    auto t = torch::from_blob(const_cast<float*>(patch.data.data()),
                              {1, NodulePatch::kChannels, patch.shape[0], patch.shape[1], patch.shape[2]}, torch::kFloat32);
    return t.to(dtype).clone();
}

torch::Tensor mask_tensor(const Mask3& mask, torch::Dtype dtype) {
    auto t = torch::from_blob(const_cast<std::uint8_t*>(mask.values().data()), {mask.dim(0), mask.dim(1), mask.dim(2)},
                              torch::kUInt8);
    return t.to(dtype).clone();
}

// ---------------------------------------------------------------- checkpoints

void save_checkpoint(const fs::path& path, SynergicNet& model, const json& meta) {
    json tensors = json::array();
    std::vector<torch::Tensor> blobs;
    std::uint64_t offset = 0;
    for (const auto& item : model->named_parameters()) {
        auto t = item.value().detach().contiguous().cpu();
        const std::uint64_t bytes = static_cast<std::uint64_t>(t.numel()) * t.element_size();
        tensors.push_back({{"name", item.key()},
                           {"shape", t.sizes().vec()},
                           {"dtype", t.scalar_type() == torch::kFloat64 ? "float64" : "float32"},
                           {"offset", offset},
                           {"bytes", bytes}});
        offset += bytes;
        blobs.push_back(t);
    }
    const std::string header = json{{"config", model->config}, {"tensors", tensors}, {"meta", meta}}.dump();
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path, "cannot write checkpoint");
    out.write(kMagic, sizeof kMagic);
    const std::uint64_t len = header.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& t : blobs) {
        out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.numel() * t.element_size()));
    }
    if (!out) throw IoError(path, "checkpoint write failed");
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path, "cannot open checkpoint");
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw IoError(path, "not a checkpoint file");
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    std::string header(len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(len));
    if (!in) throw IoError(path, "truncated checkpoint header");
    const json h = json::parse(header);

    const auto cfg = h.at("config").get<BackboneConfig>();
    const auto& tensors = h.at("tensors");
    const bool f64 = !tensors.empty() && tensors.front().at("dtype") == "float64";
    LoadedCheckpoint ck{make_model(cfg, 0, f64 ? torch::kFloat64 : torch::kFloat32), h.value("meta", json::object())};

    auto params = ck.model->named_parameters();
    const auto data_start = static_cast<std::streamoff>(sizeof kMagic + sizeof len + len);
    torch::NoGradGuard guard;
    for (const auto& t : tensors) {
        const auto name = t.at("name").get<std::string>();
        auto* p = params.find(name);
        if (!p) throw IoError(path, "unknown parameter " + name);
        if (p->sizes().vec() != t.at("shape").get<std::vector<std::int64_t>>()) throw IoError(path, "shape mismatch for " + name);
        auto buf = torch::empty(p->sizes(), p->options());
        const auto bytes = t.at("bytes").get<std::uint64_t>();
        if (bytes != static_cast<std::uint64_t>(buf.numel() * buf.element_size())) throw IoError(path, "size mismatch for " + name);
        in.seekg(data_start + static_cast<std::streamoff>(t.at("offset").get<std::uint64_t>()));
        in.read(static_cast<char*>(buf.data_ptr()), static_cast<std::streamsize>(bytes));
        if (!in) throw IoError(path, "truncated tensor " + name);
        p->copy_(buf);
    }
    if (tensors.size() != params.size()) throw IoError(path, "checkpoint parameter count mismatch");
    return ck;
}

std::vector<torch::Tensor> snapshot_parameters(SynergicNet& model) {
    std::vector<torch::Tensor> out;
    for (const auto& p : model->parameters()) out.push_back(p.detach().clone());
    return out;
}

void restore_parameters(SynergicNet& model, const std::vector<torch::Tensor>& values) {
    auto params = model->parameters();
    if (params.size() != values.size()) throw ArgumentError("parameter snapshot size mismatch");
    torch::NoGradGuard guard;
    for (std::size_t i = 0; i < params.size(); ++i) params[i].copy_(values[i]);
}

}  // namespace nodule
