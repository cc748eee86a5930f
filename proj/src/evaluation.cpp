#include "nodule/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>

#include <png.h>

#include "nodule/errors.hpp"

namespace nodule {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double ratio(std::int64_t num, std::int64_t den, const char* name, std::vector<std::string>& flags) {
    if (den == 0) {
        flags.emplace_back(name);
        return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

std::optional<double> auc_rank(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw ArgumentError("auc: scores and labels differ in length");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::ranges::sort(order, [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    std::int64_t n_pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double mid = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based mid-rank
        for (std::size_t k = i; k <= j; ++k) {
            if (labels[order[k]]) {
                rank_sum_pos += mid;
                ++n_pos;
            }
        }
        i = j + 1;
    }
    const auto n_neg = static_cast<std::int64_t>(n) - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::nullopt;
    const double u = rank_sum_pos - static_cast<double>(n_pos) * static_cast<double>(n_pos + 1) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

MetricReport compute_metrics(std::span<const double> probs, std::span<const int> labels, double threshold) {
    if (probs.size() != labels.size()) throw ArgumentError("metrics: probs and labels differ in length");
    MetricReport r;
    r.threshold = threshold;
    r.n = static_cast<std::int64_t>(probs.size());
    auto& c = r.confusion;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw ArgumentError("metrics: labels must be 0 or 1");
        const bool pred = probs[i] >= threshold;
        if (labels[i]) {
            pred ? ++c.tp : ++c.fn;
        } else {
            pred ? ++c.fp : ++c.tn;
        }
    }
    auto& flags = r.zero_denominator;
    r.sensitivity = ratio(c.tp, c.tp + c.fn, "sensitivity", flags);
    r.specificity = ratio(c.tn, c.tn + c.fp, "specificity", flags);
    r.precision = ratio(c.tp, c.tp + c.fp, "precision", flags);
    r.precision_b = ratio(c.tn, c.tn + c.fn, "precision_b", flags);
    r.accuracy = ratio(c.tp + c.tn, r.n, "accuracy", flags);
    if (r.precision + r.sensitivity > 0.0) {
        r.f1 = 2.0 * r.precision * r.sensitivity / (r.precision + r.sensitivity);
    } else {
        flags.emplace_back("f1");
    }
    r.auc = auc_rank(probs, labels);
    return r;
}

void to_json(json& j, const MetricReport& r) {
    j = json{{"sensitivity", r.sensitivity},
             {"specificity", r.specificity},
             {"precision", r.precision},
             {"precision_b", r.precision_b},
             {"accuracy", r.accuracy},
             {"auc", r.auc ? json(*r.auc) : json(nullptr)},
             {"f1", r.f1},
             {"threshold", r.threshold},
             {"n", r.n},
             {"confusion", {{"tp", r.confusion.tp}, {"fp", r.confusion.fp}, {"tn", r.confusion.tn}, {"fn", r.confusion.fn}}},
             {"zero_denominator", r.zero_denominator}};
}

MetricSummary summarize(std::span<const MetricReport> folds) {
    MetricSummary s;
    auto stat = [&](auto get) {
        MetricSummary::Stat st;
        std::vector<double> v;
        for (const auto& f : folds) {
            if (auto x = get(f)) v.push_back(*x);
        }
        st.count = static_cast<int>(v.size());
        if (v.empty()) return st;
        st.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        double sq = 0.0;
        for (double x : v) sq += (x - st.mean) * (x - st.mean);
        st.stddev = std::sqrt(sq / static_cast<double>(v.size()));
        return st;
    };
    s.sensitivity = stat([](const MetricReport& r) { return std::optional(r.sensitivity); });
    s.specificity = stat([](const MetricReport& r) { return std::optional(r.specificity); });
    s.precision = stat([](const MetricReport& r) { return std::optional(r.precision); });
    s.precision_b = stat([](const MetricReport& r) { return std::optional(r.precision_b); });
    s.accuracy = stat([](const MetricReport& r) { return std::optional(r.accuracy); });
    s.auc = stat([](const MetricReport& r) { return r.auc; });
    s.f1 = stat([](const MetricReport& r) { return std::optional(r.f1); });
    return s;
}

void to_json(json& j, const MetricSummary& s) {
    auto one = [](const MetricSummary::Stat& st) { return json{{"mean", st.mean}, {"std", st.stddev}, {"folds", st.count}}; };
    j = json{{"sensitivity", one(s.sensitivity)}, {"specificity", one(s.specificity)}, {"precision", one(s.precision)},
             {"precision_b", one(s.precision_b)}, {"accuracy", one(s.accuracy)},       {"auc", one(s.auc)},
             {"f1", one(s.f1)},                   {"std_kind", "population"}};
}

// ---------------------------------------------------------------- images

std::array<std::uint8_t, 3> RgbImage::at(int x, int y) const {
    const auto i = static_cast<std::size_t>((y * width + x) * 3);
    return {pixels[i], pixels[i + 1], pixels[i + 2]};
}

void write_png(const fs::path& path, const RgbImage& image) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!fp) throw IoError(path, "cannot write png");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError(path, "libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError(path, "libpng write failed");
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < image.height; ++y) {
        png_write_row(png, image.pixels.data() + static_cast<std::size_t>(y * image.width * 3));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

namespace {

std::array<double, 3> jet(double t) {
    t = std::clamp(t, 0.0, 1.0);
    auto ch = [&](double centre) { return std::clamp(1.5 - std::abs(4.0 * t - centre), 0.0, 1.0); };
    return {ch(3.0), ch(2.0), ch(1.0)};
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

// Value of a low-resolution grid's central slice at patch pixel (x, y).
double upsampled(const Grid3<double>& g, const NodulePatch& patch, int x, int y) {
    const auto z = g.dim(0) / 2;
    const auto gy = std::min<std::int64_t>(g.dim(1) - 1, y * g.dim(1) / patch.shape[1]);
    const auto gx = std::min<std::int64_t>(g.dim(2) - 1, x * g.dim(2) / patch.shape[2]);
    return g(z, gy, gx);
}

}  // namespace

RgbImage render_slice(const NodulePatch& patch) {
    RgbImage img;
    img.height = static_cast<int>(patch.shape[1]);
    img.width = static_cast<int>(patch.shape[2]);
    img.pixels.resize(static_cast<std::size_t>(img.width * img.height * 3));
    const auto lung = patch.channel_grid(0);
    const auto z = patch.shape[0] / 2;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const auto v = to_byte(lung(z, y, x));
            const auto i = static_cast<std::size_t>((y * img.width + x) * 3);
            img.pixels[i] = img.pixels[i + 1] = img.pixels[i + 2] = v;
        }
    return img;
}

RgbImage render_cam_overlay(const NodulePatch& patch, const Grid3<double>& cam_c, const Grid3<double>& seg_prob,
                            const OverlayOptions& opts) {
    RgbImage img = render_slice(patch);
    const auto lung = patch.channel_grid(0);
    const auto z = patch.shape[0] / 2;
    auto inside = [&](int x, int y) { return upsampled(seg_prob, patch, x, y) > opts.contour_level; };
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const auto i = static_cast<std::size_t>((y * img.width + x) * 3);
            const double cam = upsampled(cam_c, patch, x, y);
            const double a = opts.cam_opacity * std::clamp(cam, 0.0, 1.0);
            const double gray = lung(z, y, x);
            const auto heat = jet(cam);
            for (int k = 0; k < 3; ++k) {
                img.pixels[i + static_cast<std::size_t>(k)] = to_byte((1.0 - a) * gray + a * heat[static_cast<std::size_t>(k)]);
            }
            if (!inside(x, y)) continue;
            const bool edge = x == 0 || y == 0 || x == img.width - 1 || y == img.height - 1 || !inside(x - 1, y) ||
                              !inside(x + 1, y) || !inside(x, y - 1) || !inside(x, y + 1);
            if (edge) {
                img.pixels[i] = 0;
                img.pixels[i + 1] = 255;
                img.pixels[i + 2] = 0;
            }
        }
    return img;
}

fs::path export_cam_overlay(const fs::path& dir, const std::string& id, const NodulePatch& patch, const Grid3<double>& cam_c,
                            const Grid3<double>& seg_prob, int prediction, std::optional<int> label) {
    std::string name = id + "_pred" + std::to_string(prediction);
    if (label) name += *label == prediction ? "_correct" : "_wrong";
    const fs::path path = dir / (name + ".png");
    write_png(path, render_cam_overlay(patch, cam_c, seg_prob));
    return path;
}

}  // namespace nodule
