#include "nodule/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <random>

#include "nodule/errors.hpp"

namespace nodule {

WindowSpec WindowSpec::make(double lo, double hi) {
    if (!(lo < hi)) throw ArgumentError("window requires lo < hi");
    return {lo, hi};
}

// ---------------------------------------------------------------- lung mask

double otsu_threshold(const Grid3<float>& hu, const LungMaskOptions& opts) {
    const int bins = opts.histogram_bins;
    const double lo = opts.histogram_lo;
    const double width = (opts.histogram_hi - lo) / bins;
    std::vector<double> hist(static_cast<std::size_t>(bins), 0.0);
    for (float v : hu.values()) {
        auto b = static_cast<int>(std::floor((static_cast<double>(v) - lo) / width));
        hist[static_cast<std::size_t>(std::clamp(b, 0, bins - 1))] += 1.0;
    }
    const auto populated = std::ranges::count_if(hist, [](double c) { return c > 0.0; });
    if (populated < 2) throw DataError("degenerate histogram");

    const double total = static_cast<double>(hu.size());
    double sum_all = 0.0;
    for (int b = 0; b < bins; ++b) sum_all += b * hist[static_cast<std::size_t>(b)];

    double w0 = 0.0, sum0 = 0.0, best = -1.0;
    int best_bin = 0;
    for (int b = 0; b < bins - 1; ++b) {
        w0 += hist[static_cast<std::size_t>(b)];
        sum0 += b * hist[static_cast<std::size_t>(b)];
        const double w1 = total - w0;
        if (w0 == 0.0 || w1 == 0.0) continue;
        const double m0 = sum0 / w0;
        const double m1 = (sum_all - sum0) / w1;
        const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if (between > best) {
            best = between;
            best_bin = b;
        }
    }
    // Threshold sits on the upper edge of the last background bin.
    return lo + (best_bin + 1) * width;
}

namespace {

constexpr std::array<std::array<int, 3>, 6> kFaceNeighbours{{{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}}};

template <typename Visit>
void flood(const Shape3& shape, std::size_t seed, Visit&& accept) {
    std::queue<std::size_t> q;
    q.push(seed);
    const std::int64_t hw = shape[1] * shape[2];
    while (!q.empty()) {
        const auto i = static_cast<std::int64_t>(q.front());
        q.pop();
        const std::int64_t z = i / hw, y = (i / shape[2]) % shape[1], x = i % shape[2];
        for (const auto& d : kFaceNeighbours) {
            const std::int64_t nz = z + d[0], ny = y + d[1], nx = x + d[2];
            if (nz < 0 || ny < 0 || nx < 0 || nz >= shape[0] || ny >= shape[1] || nx >= shape[2]) continue;
            const auto j = static_cast<std::size_t>((nz * shape[1] + ny) * shape[2] + nx);
            if (accept(j)) q.push(j);
        }
    }
}

}  // namespace

Components connected_components(const Mask3& mask) {
    Components c{Grid3<std::int32_t>(mask.shape(), 0), {0}};
    std::int32_t next = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i] || c.labels[i] != 0) continue;
        ++next;
        std::int64_t count = 1;
        c.labels[i] = next;
        flood(mask.shape(), i, [&](std::size_t j) {
            if (!mask[j] || c.labels[j] != 0) return false;
            c.labels[j] = next;
            ++count;
            return true;
        });
        c.sizes.push_back(count);
    }
    return c;
}

Mask3 largest_component(const Mask3& mask) {
    const auto c = connected_components(mask);
    Mask3 out(mask.shape());
    if (c.sizes.size() <= 1) return out;
    const auto best = static_cast<std::int32_t>(std::ranges::max_element(c.sizes) - c.sizes.begin());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c.labels[i] == best ? 1 : 0;
    return out;
}

Mask3 fill_holes(const Mask3& mask) {
    const Shape3& s = mask.shape();
    Mask3 outside(s);
    auto seed = [&](std::int64_t z, std::int64_t y, std::int64_t x) {
        const auto i = mask.index(z, y, x);
        if (mask[i] || outside[i]) return;
        outside[i] = 1;
        flood(s, i, [&](std::size_t j) {
            if (mask[j] || outside[j]) return false;
            outside[j] = 1;
            return true;
        });
    };
    for (std::int64_t z = 0; z < s[0]; ++z) {
        for (std::int64_t y = 0; y < s[1]; ++y) {
            for (std::int64_t x = 0; x < s[2]; ++x) {
                const bool border = z == 0 || y == 0 || x == 0 || z == s[0] - 1 || y == s[1] - 1 || x == s[2] - 1;
                if (border) seed(z, y, x);
            }
        }
    }
    Mask3 out(s);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = outside[i] ? 0 : 1;
    return out;
}

Mask3 remove_small_components(const Mask3& mask, std::int64_t min_voxels) {
    const auto c = connected_components(mask);
    Mask3 out(mask.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto l = c.labels[i];
        out[i] = (l > 0 && c.sizes[static_cast<std::size_t>(l)] >= min_voxels) ? 1 : 0;
    }
    return out;
}

StructuringElement StructuringElement::ball(int radius, double height) {
    if (radius < 0) throw ArgumentError("structuring element radius must be >= 0");
    StructuringElement se;
    const double denom = static_cast<double>(radius + 1) * (radius + 1);
    for (int z = -radius; z <= radius; ++z) {
        for (int y = -radius; y <= radius; ++y) {
            for (int x = -radius; x <= radius; ++x) {
                const int r2 = z * z + y * y + x * x;
                if (r2 > radius * radius) continue;
                se.offsets.push_back({z, y, x});
                se.heights.push_back(static_cast<float>(height * (1.0 - r2 / denom)));
            }
        }
    }
    return se;
}

namespace {

// dilate: max_y f(x - y) + b(y); erode: min_y f(x + y) - b(y). Offsets
// falling outside the grid are ignored.
template <bool Dilate>
Grid3<float> grey_morph(const Grid3<float>& f, const StructuringElement& se) {
    const Shape3& s = f.shape();
    Grid3<float> out(s);
    const float init = Dilate ? -std::numeric_limits<float>::infinity() : std::numeric_limits<float>::infinity();
    for (std::int64_t z = 0; z < s[0]; ++z) {
        for (std::int64_t y = 0; y < s[1]; ++y) {
            for (std::int64_t x = 0; x < s[2]; ++x) {
                float acc = init;
                for (std::size_t k = 0; k < se.offsets.size(); ++k) {
                    const auto& o = se.offsets[k];
                    const std::int64_t sz = Dilate ? z - o[0] : z + o[0];
                    const std::int64_t sy = Dilate ? y - o[1] : y + o[1];
                    const std::int64_t sx = Dilate ? x - o[2] : x + o[2];
                    if (!f.contains(sz, sy, sx)) continue;
                    if constexpr (Dilate) {
                        acc = std::max(acc, f(sz, sy, sx) + se.heights[k]);
                    } else {
                        acc = std::min(acc, f(sz, sy, sx) - se.heights[k]);
                    }
                }
                out(z, y, x) = acc;
            }
        }
    }
    return out;
}

}  // namespace

Grid3<float> grey_dilate(const Grid3<float>& f, const StructuringElement& se) { return grey_morph<true>(f, se); }
Grid3<float> grey_erode(const Grid3<float>& f, const StructuringElement& se) { return grey_morph<false>(f, se); }
Grid3<float> grey_close(const Grid3<float>& f, const StructuringElement& se) { return grey_erode(grey_dilate(f, se), se); }

Mask3 lung_mask(const Volume& volume, const LungMaskOptions& opts) {
    const auto& hu = volume.voxels;
    // (1) Otsu binarization: tissue above the threshold.
    const double t = otsu_threshold(hu, opts);
    Mask3 body(hu.shape());
    for (std::size_t i = 0; i < hu.size(); ++i) body[i] = hu[i] > t ? 1 : 0;
    // (2) largest component, (3) hole filling, (4) coarse lungs C = B - A.
    const Mask3 a = largest_component(body);
    const Mask3 b = fill_holes(a);
    Mask3 c(hu.shape());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = (b[i] && !a[i]) ? 1 : 0;
    // (5) denoise.
    const Mask3 d = remove_small_components(c, opts.min_component_voxels);
    // (6) closing with the non-flat ball, restricted to the foreground
    // bounding box grown by twice the radius (E is 0 beyond it).
    Mask3 f(hu.shape());
    Shape3 lo{hu.dim(0), hu.dim(1), hu.dim(2)}, hi{-1, -1, -1};
    for (std::int64_t z = 0; z < hu.dim(0); ++z)
        for (std::int64_t y = 0; y < hu.dim(1); ++y)
            for (std::int64_t x = 0; x < hu.dim(2); ++x)
                if (d(z, y, x)) {
                    lo = {std::min(lo[0], z), std::min(lo[1], y), std::min(lo[2], x)};
                    hi = {std::max(hi[0], z), std::max(hi[1], y), std::max(hi[2], x)};
                }
    if (hi[0] < 0) return f;
    const std::int64_t pad = 2 * opts.closing_radius;
    Shape3 start, shape;
    for (int a_ = 0; a_ < 3; ++a_) {
        const auto ax = static_cast<std::size_t>(a_);
        start[ax] = std::max<std::int64_t>(0, lo[ax] - pad);
        shape[ax] = std::min<std::int64_t>(hu.dim(a_), hi[ax] + pad + 1) - start[ax];
    }
    Grid3<float> sub(shape);
    for (std::int64_t z = 0; z < shape[0]; ++z)
        for (std::int64_t y = 0; y < shape[1]; ++y)
            for (std::int64_t x = 0; x < shape[2]; ++x) sub(z, y, x) = d(z + start[0], y + start[1], x + start[2]);
    const auto se = StructuringElement::ball(opts.closing_radius, opts.closing_height);
    const Grid3<float> e = grey_close(sub, se);
    // (7) binarize.
    for (std::int64_t z = 0; z < shape[0]; ++z)
        for (std::int64_t y = 0; y < shape[1]; ++y)
            for (std::int64_t x = 0; x < shape[2]; ++x)
                f(z + start[0], y + start[1], x + start[2]) = e(z, y, x) > opts.binarize_at ? 1 : 0;
    return f;
}

Volume apply_mask(const Volume& volume, const Mask3& mask, float fill) {
    if (mask.shape() != volume.shape()) throw ArgumentError("mask shape differs from volume");
    Volume out = volume;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) out.voxels[i] = fill;
    }
    return out;
}

// ---------------------------------------------------------------- intensity

float window_value(double hu, const WindowSpec& w) {
    const double c = std::clamp(hu, w.lo, w.hi);
    return static_cast<float>((c - w.lo) / (w.hi - w.lo));
}

Grid3<float> window_normalize(const Grid3<float>& hu, const WindowSpec& w) {
    Grid3<float> out(hu.shape());
    for (std::size_t i = 0; i < hu.size(); ++i) out[i] = window_value(hu[i], w);
    return out;
}

// ---------------------------------------------------------------- B-spline

namespace {

const double kPole = std::sqrt(3.0) - 2.0;

// In-place conversion of samples to cubic B-spline coefficients, mirror
// boundary conditions.
void bspline_prefilter(std::vector<double>& c) {
    const auto n = static_cast<std::int64_t>(c.size());
    if (n < 2) return;
    const double z = kPole;
    const double gain = (1.0 - z) * (1.0 - 1.0 / z);
    for (auto& v : c) v *= gain;

    // Causal initialisation.
    const double tol = 1e-12;
    const auto horizon = static_cast<std::int64_t>(std::ceil(std::log(tol) / std::log(std::abs(z))));
    double c0;
    if (horizon < n) {
        double zn = z;
        c0 = c[0];
        for (std::int64_t k = 1; k < horizon; ++k) {
            c0 += zn * c[static_cast<std::size_t>(k)];
            zn *= z;
        }
    } else {
        double zn = z;
        const double iz = 1.0 / z;
        double z2n = std::pow(z, static_cast<double>(n - 1));
        c0 = c[0] + z2n * c[static_cast<std::size_t>(n - 1)];
        z2n *= z2n * iz;
        for (std::int64_t k = 1; k <= n - 2; ++k) {
            c0 += (zn + z2n) * c[static_cast<std::size_t>(k)];
            zn *= z;
            z2n *= iz;
        }
        c0 /= (1.0 - zn * zn);
    }
    c[0] = c0;
    for (std::int64_t k = 1; k < n; ++k) c[static_cast<std::size_t>(k)] += z * c[static_cast<std::size_t>(k - 1)];
    // Anti-causal initialisation.
    const auto last = static_cast<std::size_t>(n - 1);
    c[last] = (z / (z * z - 1.0)) * (z * c[last - 1] + c[last]);
    for (std::int64_t k = n - 2; k >= 0; --k) {
        const auto i = static_cast<std::size_t>(k);
        c[i] = z * (c[i + 1] - c[i]);
    }
}

double bspline3(double t) {
    t = std::abs(t);
    if (t < 1.0) return 2.0 / 3.0 - t * t + 0.5 * t * t * t;
    if (t < 2.0) {
        const double u = 2.0 - t;
        return u * u * u / 6.0;
    }
    return 0.0;
}

std::int64_t mirror_index(std::int64_t k, std::int64_t n) {
    if (n == 1) return 0;
    const std::int64_t period = 2 * n - 2;
    k %= period;
    if (k < 0) k += period;
    return k < n ? k : period - k;
}

double bspline_eval(const std::vector<double>& c, double pos) {
    const auto n = static_cast<std::int64_t>(c.size());
    const auto base = static_cast<std::int64_t>(std::floor(pos));
    double v = 0.0;
    for (std::int64_t k = base - 1; k <= base + 2; ++k) {
        v += c[static_cast<std::size_t>(mirror_index(k, n))] * bspline3(pos - static_cast<double>(k));
    }
    return v;
}

// Resamples one axis: output index j reads source position offset + j * step.
Grid3<float> resample_axis(const Grid3<float>& in, int axis, std::int64_t out_n, double offset, double step) {
    Shape3 os = in.shape();
    os[static_cast<std::size_t>(axis)] = out_n;
    Grid3<float> out(os);
    const std::int64_t n = in.dim(axis);
    Shape3 iter = in.shape();
    iter[static_cast<std::size_t>(axis)] = 1;
    std::vector<double> line(static_cast<std::size_t>(n));
    for (std::int64_t a = 0; a < iter[0]; ++a) {
        for (std::int64_t b = 0; b < iter[1]; ++b) {
            for (std::int64_t c = 0; c < iter[2]; ++c) {
                auto at = [&](std::int64_t k) -> std::array<std::int64_t, 3> {
                    std::array<std::int64_t, 3> idx{a, b, c};
                    idx[static_cast<std::size_t>(axis)] = k;
                    return idx;
                };
                for (std::int64_t k = 0; k < n; ++k) {
                    const auto i = at(k);
                    line[static_cast<std::size_t>(k)] = in(i[0], i[1], i[2]);
                }
                bspline_prefilter(line);
                for (std::int64_t j = 0; j < out_n; ++j) {
                    const auto o = at(j);
                    out(o[0], o[1], o[2]) = static_cast<float>(bspline_eval(line, offset + static_cast<double>(j) * step));
                }
            }
        }
    }
    return out;
}

}  // namespace

Volume resample_isotropic(const Volume& volume, double target_mm) {
    if (!(target_mm > 0.0)) throw ArgumentError("target spacing must be positive");
    Grid3<float> g = volume.voxels;
    for (int axis = 0; axis < 3; ++axis) {
        const double s = volume.spacing[static_cast<std::size_t>(axis)];
        if (s == target_mm) continue;
        const auto n = g.dim(axis);
        const auto out_n = std::max<std::int64_t>(1, std::llround(static_cast<double>(n) * s / target_mm));
        g = resample_axis(g, axis, out_n, 0.0, target_mm / s);
    }
    Volume out;
    out.voxels = std::move(g);
    out.spacing = {target_mm, target_mm, target_mm};
    out.origin = volume.origin;
    return out;
}

Grid3<float> resize_cubic(const Grid3<float>& grid, const Shape3& shape) {
    Grid3<float> g = grid;
    for (int axis = 0; axis < 3; ++axis) {
        const auto n = g.dim(axis);
        const auto m = shape[static_cast<std::size_t>(axis)];
        if (n == m) continue;
        const double step = static_cast<double>(n) / static_cast<double>(m);
        g = resample_axis(g, axis, m, 0.5 * step - 0.5, step);
    }
    return g;
}

Mask3 resize_nearest(const Mask3& mask, const Shape3& shape) {
    Mask3 out(shape);
    auto src = [&](std::int64_t j, int axis) {
        const double step = static_cast<double>(mask.dim(axis)) / static_cast<double>(shape[static_cast<std::size_t>(axis)]);
        const auto k = static_cast<std::int64_t>(std::floor((static_cast<double>(j) + 0.5) * step));
        return std::min(k, mask.dim(axis) - 1);
    };
    for (std::int64_t z = 0; z < shape[0]; ++z)
        for (std::int64_t y = 0; y < shape[1]; ++y)
            for (std::int64_t x = 0; x < shape[2]; ++x) out(z, y, x) = mask(src(z, 0), src(y, 1), src(x, 2));
    return out;
}

// ---------------------------------------------------------------- patches

CropPlan plan_crop(const Shape3& volume_shape, const Vec3& spacing, const Vec3& origin, const Vec3& center_mm,
                   double diameter_mm, Modality modality, int side) {
    if (side <= 0) throw ArgumentError("patch side must be positive");
    CropPlan plan;
    plan.modality = modality;
    plan.side = side;
    for (std::size_t a = 0; a < 3; ++a) {
        const auto c = static_cast<std::int64_t>(std::llround((center_mm[a] - origin[a]) / spacing[a]));
        if (c < 0 || c >= volume_shape[a]) throw ArgumentError("nodule centre lies outside the volume");
        std::int64_t n = side;
        if (modality != Modality::cube64) {
            n = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(diameter_mm / spacing[a] - 1e-9)));
        }
        plan.crop_shape[a] = n;
        plan.crop_start[a] = c - n / 2;
        if (plan.crop_start[a] < 0 || plan.crop_start[a] + n > volume_shape[a]) plan.exceeds_bounds = true;
    }
    return plan;
}

namespace {

template <typename T>
Grid3<T> crop(const Grid3<T>& src, const CropPlan& plan, T fill, Mask3* inside = nullptr) {
    Grid3<T> out(plan.crop_shape, fill);
    if (inside) *inside = Mask3(plan.crop_shape, 0);
    for (std::int64_t z = 0; z < plan.crop_shape[0]; ++z)
        for (std::int64_t y = 0; y < plan.crop_shape[1]; ++y)
            for (std::int64_t x = 0; x < plan.crop_shape[2]; ++x) {
                const std::int64_t sz = z + plan.crop_start[0], sy = y + plan.crop_start[1], sx = x + plan.crop_start[2];
                if (!src.contains(sz, sy, sx)) continue;
                out(z, y, x) = src(sz, sy, sx);
                if (inside) (*inside)(z, y, x) = 1;
            }
    return out;
}

// Centres `g` in a side^3 cube of `fill`; larger crops are centre-cropped.
template <typename T>
Grid3<T> pad_to_cube(const Grid3<T>& g, int side, T fill) {
    Grid3<T> out(Shape3{side, side, side}, fill);
    Shape3 offset;
    for (std::size_t a = 0; a < 3; ++a) offset[a] = (side - g.shape()[a]) / 2;
    for (std::int64_t z = 0; z < g.dim(0); ++z)
        for (std::int64_t y = 0; y < g.dim(1); ++y)
            for (std::int64_t x = 0; x < g.dim(2); ++x) {
                const std::int64_t oz = z + offset[0], oy = y + offset[1], ox = x + offset[2];
                if (out.contains(oz, oy, ox)) out(oz, oy, ox) = g(z, y, x);
            }
    return out;
}

Shape3 cube(int side) { return {side, side, side}; }

}  // namespace

NodulePatch extract_patch(const Volume& volume, const Vec3& center_mm, double diameter_mm, Modality modality, int side) {
    const CropPlan plan = plan_crop(volume.shape(), volume.spacing, volume.origin, center_mm, diameter_mm, modality, side);
    Mask3 inside;
    const Grid3<float> hu = crop(volume.voxels, plan, 0.0f, &inside);

    std::array<Grid3<float>, 2> ch{window_normalize(hu, kLungWindow), window_normalize(hu, kMediastinalWindow)};
    for (auto& g : ch) {
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!inside[i]) g[i] = 0.0f;
        }
        switch (modality) {
            case Modality::cube64:
            case Modality::x: break;
            case Modality::x_resize_64: {
                g = resize_cubic(g, cube(side));
                for (auto& v : g.values()) v = std::clamp(v, 0.0f, 1.0f);
                break;
            }
            case Modality::x_padding_64: g = pad_to_cube(g, side, 0.0f); break;
        }
    }
    NodulePatch patch(ch[0].shape(), modality, side);
    patch.set_channel(0, ch[0]);
    patch.set_channel(1, ch[1]);
    patch.padded_exterior = plan.exceeds_bounds;
    return patch;
}

Mask3 extract_mask(const Mask3& mask, const Vec3& spacing, const Vec3& origin, const Vec3& center_mm, double diameter_mm,
                   Modality modality, int side) {
    const CropPlan plan = plan_crop(mask.shape(), spacing, origin, center_mm, diameter_mm, modality, side);
    Mask3 m = crop<std::uint8_t>(mask, plan, 0);
    switch (modality) {
        case Modality::cube64:
        case Modality::x: return m;
        case Modality::x_resize_64: return resize_nearest(m, cube(side));
        case Modality::x_padding_64: return pad_to_cube<std::uint8_t>(m, side, 0);
    }
    return m;
}

// ---------------------------------------------------------------- augmentation

AxisTransform AxisTransform::then(const AxisTransform& next) const {
    AxisTransform r;
    for (std::size_t a = 0; a < 3; ++a) {
        const auto mid = static_cast<std::size_t>(next.perm[a]);
        r.perm[a] = perm[mid];
        r.flip[a] = next.flip[a] != flip[mid];
    }
    return r;
}

AxisTransform AxisTransform::flip_axis(int axis) {
    AxisTransform t;
    t.flip[static_cast<std::size_t>(axis)] = true;
    return t;
}

AxisTransform AxisTransform::transpose(int a, int b) {
    AxisTransform t;
    std::swap(t.perm[static_cast<std::size_t>(a)], t.perm[static_cast<std::size_t>(b)]);
    return t;
}

AxisTransform AxisTransform::rotate90(int a, int b, int quarter_turns) {
    AxisTransform t;
    AxisTransform once = transpose(a, b);
    once.flip[static_cast<std::size_t>(a)] = true;
    for (int k = 0; k < ((quarter_turns % 4) + 4) % 4; ++k) t = t.then(once);
    return t;
}

AxisTransform AxisTransform::random(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto pick = [&](std::uint64_t n) { return static_cast<int>(rng() % n); };
    AxisTransform t;
    for (int axis = 0; axis < 3; ++axis) {
        if (pick(2)) t = t.then(flip_axis(axis));
    }
    // Rotation: k in {0: none, 1..3: 90/180/270 degrees} around a random axis.
    const int rot_axis = pick(3);
    const int k = pick(4);
    const int a = (rot_axis + 1) % 3, b = (rot_axis + 2) % 3;
    t = t.then(rotate90(a, b, k));
    // Transpose: identity or a swap of two axes.
    const int swap = pick(4);
    if (swap > 0) t = t.then(transpose(swap - 1, swap % 3));
    return t;
}

template <typename T>
Grid3<T> apply_transform(const Grid3<T>& in, const AxisTransform& t) {
    Shape3 os;
    for (std::size_t a = 0; a < 3; ++a) os[a] = in.shape()[static_cast<std::size_t>(t.perm[a])];
    Grid3<T> out(os);
    std::array<std::int64_t, 3> src{};
    for (std::int64_t z = 0; z < os[0]; ++z)
        for (std::int64_t y = 0; y < os[1]; ++y)
            for (std::int64_t x = 0; x < os[2]; ++x) {
                const std::array<std::int64_t, 3> o{z, y, x};
                for (std::size_t a = 0; a < 3; ++a) {
                    src[static_cast<std::size_t>(t.perm[a])] = t.flip[a] ? os[a] - 1 - o[a] : o[a];
                }
                out(z, y, x) = in(src[0], src[1], src[2]);
            }
    return out;
}

template Grid3<float> apply_transform(const Grid3<float>&, const AxisTransform&);
template Grid3<std::uint8_t> apply_transform(const Grid3<std::uint8_t>&, const AxisTransform&);

std::pair<NodulePatch, std::optional<Mask3>> augment(const NodulePatch& patch, const std::optional<Mask3>& mask,
                                                     std::uint64_t seed) {
    if (mask && mask->shape() != patch.shape) throw ArgumentError("augment: mask shape differs from patch");
    const AxisTransform t = AxisTransform::random(seed);
    NodulePatch out = patch;
    for (int c = 0; c < NodulePatch::kChannels; ++c) {
        const auto g = apply_transform(patch.channel_grid(c), t);
        out.shape = g.shape();
        out.set_channel(c, g);
    }
    std::optional<Mask3> m;
    if (mask) m = apply_transform(*mask, t);
    return {std::move(out), std::move(m)};
}

}  // namespace nodule
