#include "nodule/data_model.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "nodule/errors.hpp"

namespace nodule {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "raw array files assume a little-endian host");

Volume Volume::make(Grid3<float> voxels, const Vec3& spacing, const Vec3& origin) {
    for (double s : spacing) {
        if (!(s > 0.0)) throw ArgumentError("nonpositive spacing");
    }
    for (auto n : voxels.shape()) {
        if (n < kMinVolumeDim) throw ArgumentError("volume dimension below 8: " + shape_string(voxels.shape()));
    }
    return Volume{std::move(voxels), spacing, origin};
}

Vec3 Volume::extent_mm() const {
    return {static_cast<double>(voxels.dim(0)) * spacing[0], static_cast<double>(voxels.dim(1)) * spacing[1],
            static_cast<double>(voxels.dim(2)) * spacing[2]};
}

std::string_view to_string(Modality m) {
    switch (m) {
        case Modality::cube64: return "cube64";
        case Modality::x: return "x";
        case Modality::x_resize_64: return "x_resize_64";
        case Modality::x_padding_64: return "x_padding_64";
    }
    return "cube64";
}

Modality parse_modality(std::string_view name) {
    if (name == "cube64" || name == "64") return Modality::cube64;
    if (name == "x") return Modality::x;
    if (name == "x_resize_64" || name == "x-resize-64") return Modality::x_resize_64;
    if (name == "x_padding_64" || name == "x-padding-64") return Modality::x_padding_64;
    throw ArgumentError("unknown modality: " + std::string(name));
}

NodulePatch::NodulePatch(const Shape3& s, Modality m, int side_)
    : shape(s), data(static_cast<std::size_t>(kChannels * voxel_count(s)), 0.0f), modality(m), side(side_) {}

std::span<float> NodulePatch::channel(int c) {
    const auto n = static_cast<std::size_t>(channel_size());
    return std::span<float>(data).subspan(static_cast<std::size_t>(c) * n, n);
}

std::span<const float> NodulePatch::channel(int c) const {
    const auto n = static_cast<std::size_t>(channel_size());
    return std::span<const float>(data).subspan(static_cast<std::size_t>(c) * n, n);
}

Grid3<float> NodulePatch::channel_grid(int c) const {
    auto ch = channel(c);
    return Grid3<float>(shape, std::vector<float>(ch.begin(), ch.end()));
}

void NodulePatch::set_channel(int c, const Grid3<float>& grid) {
    if (grid.shape() != shape) throw ArgumentError("channel shape mismatch");
    std::ranges::copy(grid.values(), channel(c).begin());
}

double normalized_score(double score) { return (score - 1.0) / 4.0; }
double score_from_normalized(double g) { return 1.0 + 4.0 * g; }

UnsureSample UnsureSample::make(NodulePatch patch, Mask3 mask, double score, std::string id) {
    if (mask.shape() != patch.shape) throw ArgumentError("unsure mask shape differs from patch");
    if (score < 1.0 || score > 5.0) throw ArgumentError("malignancy score outside [1,5]");
    if (foreground_count(mask) == 0) throw ArgumentError("unsure mask has no foreground voxel");
    UnsureSample s;
    s.patch = std::move(patch);
    s.seg_mask = std::move(mask);
    s.malignancy_score = score;
    s.normalized_score = nodule::normalized_score(score);
    s.nodule_id = std::move(id);
    return s;
}

// ---------------------------------------------------------------- manifest

void to_json(json& j, const ManifestEntry& e) {
    j = json{{"id", e.id},
             {"cohort", e.cohort == Cohort::sure ? "sure" : "unsure"},
             {"volume_path", e.volume_path},
             {"nodule_center_mm", e.nodule_center_mm},
             {"nodule_diameter_mm", e.nodule_diameter_mm},
             {"rater_scores", e.rater_scores},
             {"rater_mask_paths", e.rater_mask_paths},
             {"split_tag", e.split_tag}};
    if (e.label) j["label"] = *e.label;
    if (!e.texture_scores.empty()) j["texture_scores"] = e.texture_scores;
    if (e.mean_score) j["mean_score"] = *e.mean_score;
    if (e.consensus_mask_path) j["consensus_mask_path"] = *e.consensus_mask_path;
    if (e.patch_path) j["patch_path"] = *e.patch_path;
    if (e.mask_path) j["mask_path"] = *e.mask_path;
}

void from_json(const json& j, ManifestEntry& e) {
    e.id = j.at("id").get<std::string>();
    const auto cohort = j.value("cohort", std::string("unsure"));
    if (cohort != "sure" && cohort != "unsure") throw std::invalid_argument("cohort must be sure or unsure");
    e.cohort = cohort == "sure" ? Cohort::sure : Cohort::unsure;
    e.volume_path = j.value("volume_path", std::string());
    e.nodule_center_mm = j.at("nodule_center_mm").get<Vec3>();
    e.nodule_diameter_mm = j.at("nodule_diameter_mm").get<double>();
    e.rater_scores = j.value("rater_scores", std::vector<int>{});
    e.rater_mask_paths = j.value("rater_mask_paths", std::vector<std::string>{});
    e.split_tag = j.value("split_tag", std::string());
    e.label = j.contains("label") ? std::optional<int>(j["label"].get<int>()) : std::nullopt;
    e.texture_scores = j.value("texture_scores", std::vector<double>{});
    e.mean_score = j.contains("mean_score") ? std::optional<double>(j["mean_score"].get<double>()) : std::nullopt;
    auto opt_str = [&](const char* key) {
        return j.contains(key) ? std::optional<std::string>(j[key].get<std::string>()) : std::nullopt;
    };
    e.consensus_mask_path = opt_str("consensus_mask_path");
    e.patch_path = opt_str("patch_path");
    e.mask_path = opt_str("mask_path");
}

DatasetManifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path, "cannot open manifest");
    DatasetManifest m;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (std::ranges::all_of(line, [](unsigned char c) { return std::isspace(c); })) continue;
        try {
            m.entries.push_back(json::parse(line).get<ManifestEntry>());
        } catch (const std::exception& ex) {
            throw IoError(path, "line " + std::to_string(line_no) + ": " + ex.what());
        }
    }
    return m;
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError(path, "cannot write manifest");
    for (const auto& e : manifest.entries) out << json(e).dump() << '\n';
    if (!out) throw IoError(path, "write failed");
}

std::vector<Violation> validate_manifest(const DatasetManifest& manifest, const fs::path& root) {
    std::vector<Violation> out;
    auto flag = [&](const ManifestEntry& e, std::string rule) { out.push_back({e.id, std::move(rule)}); };
    for (const auto& e : manifest.entries) {
        if (e.id.empty()) flag(e, "missing id");
        if (!(e.nodule_diameter_mm >= kMinDiameterMm && e.nodule_diameter_mm < kMaxDiameterMm)) {
            flag(e, "diameter out of [3,30)");
        }
        if (e.cohort == Cohort::sure) {
            if (!e.label || (*e.label != 0 && *e.label != 1)) flag(e, "sure label not in {0,1}");
        } else {
            if (e.rater_scores.size() < 3) flag(e, "fewer than 3 raters");
            if (e.rater_scores.size() != e.rater_mask_paths.size()) flag(e, "rater scores and masks differ in count");
            if (std::ranges::any_of(e.rater_scores, [](int s) { return s < 1 || s > 5; })) {
                flag(e, "rater score out of [1,5]");
            }
        }
        if (e.volume_path.empty()) {
            flag(e, "missing volume_path");
            continue;
        }
        const RawHeader h = read_header(root / e.volume_path);
        if (std::ranges::any_of(h.spacing, [](double s) { return !(s > 0.0); })) flag(e, "nonpositive spacing");
        if (h.shape.size() != 3 || std::ranges::any_of(h.shape, [](std::int64_t n) { return n < kMinVolumeDim; })) {
            flag(e, "volume shape below 8 voxels per axis");
        }
    }
    return out;
}

// ---------------------------------------------------------------- raw files

fs::path sidecar_path(const fs::path& bin_path) {
    fs::path p = bin_path;
    p.replace_extension(".json");
    return p;
}

RawHeader read_header(const fs::path& bin_path) {
    const auto side = sidecar_path(bin_path);
    std::ifstream in(side);
    if (!in) throw IoError(side, "cannot open sidecar");
    json j;
    try {
        in >> j;
    } catch (const std::exception& ex) {
        throw IoError(side, ex.what());
    }
    RawHeader h;
    h.shape = j.at("shape").get<std::vector<std::int64_t>>();
    if (j.contains("spacing")) h.spacing = j["spacing"].get<Vec3>();
    if (j.contains("origin")) h.origin = j["origin"].get<Vec3>();
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.key() != "shape" && it.key() != "spacing" && it.key() != "origin" && it.key() != "dtype") {
            h.extra[it.key()] = it.value();
        }
    }
    return h;
}

void write_raw(const fs::path& bin_path, const RawHeader& header, std::span<const float> values) {
    std::int64_t n = 1;
    for (auto d : header.shape) n *= d;
    if (n != static_cast<std::int64_t>(values.size())) throw ArgumentError("raw data size does not match header shape");
    if (bin_path.has_parent_path()) fs::create_directories(bin_path.parent_path());

    json j = header.extra.is_object() ? header.extra : json::object();
    j["shape"] = header.shape;
    j["spacing"] = header.spacing;
    j["origin"] = header.origin;
    j["dtype"] = "float32";
    {
        std::ofstream side(sidecar_path(bin_path));
        if (!side) throw IoError(sidecar_path(bin_path), "cannot write sidecar");
        side << j.dump(2) << '\n';
    }
    std::ofstream out(bin_path, std::ios::binary);
    if (!out) throw IoError(bin_path, "cannot write");
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
    if (!out) throw IoError(bin_path, "write failed");
}

std::vector<float> read_raw(const fs::path& bin_path, RawHeader* header_out) {
    RawHeader h = read_header(bin_path);
    std::int64_t n = 1;
    for (auto d : h.shape) n *= d;
    std::ifstream in(bin_path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError(bin_path, "cannot open");
    const auto bytes = static_cast<std::int64_t>(in.tellg());
    if (bytes != n * static_cast<std::int64_t>(sizeof(float))) {
        throw IoError(bin_path, "size " + std::to_string(bytes) + " bytes does not match sidecar shape");
    }
    in.seekg(0);
    std::vector<float> values(static_cast<std::size_t>(n));
    in.read(reinterpret_cast<char*>(values.data()), bytes);
    if (!in) throw IoError(bin_path, "read failed");
    if (header_out) *header_out = std::move(h);
    return values;
}

namespace {

Shape3 shape3_of(const RawHeader& h, const fs::path& path) {
    if (h.shape.size() != 3) throw IoError(path, "expected a 3D array");
    return {h.shape[0], h.shape[1], h.shape[2]};
}

}  // namespace

void write_volume(const fs::path& bin_path, const Volume& volume) {
    RawHeader h;
    h.shape = {volume.voxels.dim(0), volume.voxels.dim(1), volume.voxels.dim(2)};
    h.spacing = volume.spacing;
    h.origin = volume.origin;
    write_raw(bin_path, h, volume.voxels.values());
}

Volume read_volume(const fs::path& bin_path) {
    RawHeader h;
    auto values = read_raw(bin_path, &h);
    return Volume::make(Grid3<float>(shape3_of(h, bin_path), std::move(values)), h.spacing, h.origin);
}

void write_mask(const fs::path& bin_path, const Mask3& mask, const Vec3& spacing, const Vec3& origin) {
    RawHeader h;
    h.shape = {mask.dim(0), mask.dim(1), mask.dim(2)};
    h.spacing = spacing;
    h.origin = origin;
    write_raw(bin_path, h, mask_to_float(mask).values());
}

Mask3 read_mask(const fs::path& bin_path) {
    RawHeader h;
    auto values = read_raw(bin_path, &h);
    Mask3 mask(shape3_of(h, bin_path));
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i] != 0.0f && values[i] != 1.0f) throw IoError(bin_path, "mask value not in {0,1}");
        mask[i] = values[i] != 0.0f ? 1 : 0;
    }
    return mask;
}

void write_patch(const fs::path& bin_path, const NodulePatch& patch) {
    RawHeader h;
    h.shape = {NodulePatch::kChannels, patch.shape[0], patch.shape[1], patch.shape[2]};
    h.extra = json{{"modality", to_string(patch.modality)}, {"side", patch.side}, {"padded_exterior", patch.padded_exterior}};
    write_raw(bin_path, h, patch.data);
}

NodulePatch read_patch(const fs::path& bin_path) {
    RawHeader h;
    auto values = read_raw(bin_path, &h);
    if (h.shape.size() != 4 || h.shape[0] != NodulePatch::kChannels) throw IoError(bin_path, "expected [2,D,H,W] patch");
    NodulePatch p;
    p.shape = {h.shape[1], h.shape[2], h.shape[3]};
    p.data = std::move(values);
    p.modality = parse_modality(h.extra.value("modality", std::string("cube64")));
    p.side = h.extra.value("side", kDefaultSide);
    p.padded_exterior = h.extra.value("padded_exterior", false);
    return p;
}

Grid3<float> mask_to_float(const Mask3& mask) {
    Grid3<float> out(mask.shape());
    for (std::size_t i = 0; i < mask.size(); ++i) out[i] = mask[i] ? 1.0f : 0.0f;
    return out;
}

std::int64_t foreground_count(const Mask3& mask) {
    return std::ranges::count_if(mask.values(), [](std::uint8_t v) { return v != 0; });
}

}  // namespace nodule
