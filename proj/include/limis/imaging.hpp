#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <vector>

#include "limis/core.hpp"
#include "limis/detail/random.hpp"

namespace limis {

/// Percentile with linear interpolation between closest ranks:
/// rank = p/100 * (n-1).
inline double percentile(std::vector<float> values, double pct) {
    if (values.empty()) throw Error(ErrorCode::InvalidArgument, "percentile of an empty set");
    std::sort(values.begin(), values.end());
    const double rank = std::clamp(pct, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = rank - static_cast<double>(lo);
    return static_cast<double>(values[lo]) + frac * (static_cast<double>(values[hi]) - values[lo]);
}

inline HuImage percentile_clip(const HuImage& img, double lo_pct = 0.5, double hi_pct = 99.5) {
    const auto lo = static_cast<float>(percentile(img.pixels.data(), lo_pct));
    const auto hi = static_cast<float>(percentile(img.pixels.data(), hi_pct));
    HuImage out = img;
    for (float& v : out.pixels.data()) v = std::clamp(v, lo, hi);
    return out;
}

inline constexpr double kZScoreEpsilon = 1e-6;

/// (x - mean_fg) / max(std_fg, eps) over every pixel, with population
/// statistics taken over the foreground only.
inline FloatGrid zscore_foreground(const HuImage& img, const BinMask& fg) {
    if (!fg.same_shape(img.pixels)) throw Error(ErrorCode::DimensionMismatch, "foreground mask size differs from image");
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < fg.size(); ++i) {
        if (fg.data()[i]) {
            sum += img.pixels.data()[i];
            ++n;
        }
    }
    if (n == 0) throw Error(ErrorCode::EmptyForeground, "z-scoring needs a non-empty foreground");
    const double mean = sum / static_cast<double>(n);
    double sq = 0.0;
    for (std::size_t i = 0; i < fg.size(); ++i) {
        if (fg.data()[i]) {
            const double d = img.pixels.data()[i] - mean;
            sq += d * d;
        }
    }
    const double sd = std::max(std::sqrt(sq / static_cast<double>(n)), kZScoreEpsilon);
    FloatGrid out(img.width(), img.height());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data()[i] = static_cast<float>((img.pixels.data()[i] - mean) / sd);
    }
    return out;
}

inline float window_value(double hu, const WindowSpec& w) {
    return static_cast<float>(std::clamp((hu - w.lower()) / w.width, 0.0, 1.0));
}

/// Maps [center - width/2, center + width/2] linearly onto [0,1], clamping outside.
inline NormImage window_normalize(const FloatGrid& hu, const WindowSpec& w) {
    if (!(w.width > 0.0)) throw Error(ErrorCode::InvalidArgument, "window width must be positive");
    NormImage out(hu.width(), hu.height());
    for (std::size_t i = 0; i < hu.size(); ++i) out.data()[i] = window_value(hu.data()[i], w);
    return out;
}

inline NormImage window_normalize(const HuImage& img, const WindowSpec& w) {
    return window_normalize(img.pixels, w);
}

/// Inverse of window_value for values strictly inside the window.
inline double window_to_hu(double value, const WindowSpec& w) { return w.lower() + value * w.width; }

template <typename T>
struct Crop {
    Grid<T> grid;
    BBox region; ///< crop extent in source coordinates; (x0, y0) is the paste offset
};

template <typename T>
Grid<T> crop_region(const Grid<T>& src, const BBox& region) {
    Grid<T> out(region.width(), region.height());
    for (int y = 0; y < region.height(); ++y) {
        for (int x = 0; x < region.width(); ++x) out(x, y) = src(region.x0 + x, region.y0 + y);
    }
    return out;
}

/// Crops to clamp_box(box expanded by margin_px on each side).
template <typename T>
Crop<T> crop_with_margin(const Grid<T>& src, const BBox& box, int margin_px) {
    if (margin_px < 0) throw Error(ErrorCode::InvalidArgument, "margin must be >= 0");
    const BBox region = clamp_box(box.expanded(margin_px), src.width(), src.height());
    return {crop_region(src, region), region};
}

/// Writes `patch` into a copy of `canvas` at `offset`; pixels falling outside the canvas are dropped.
template <typename T>
Grid<T> paste(Grid<T> canvas, const Grid<T>& patch, int offset_x, int offset_y) {
    for (int y = 0; y < patch.height(); ++y) {
        for (int x = 0; x < patch.width(); ++x) {
            if (canvas.contains(offset_x + x, offset_y + y)) canvas(offset_x + x, offset_y + y) = patch(x, y);
        }
    }
    return canvas;
}

template <typename T>
Grid<T> paste_into_blank(const Grid<T>& patch, const BBox& region, int width, int height) {
    return paste(Grid<T>(width, height), patch, region.x0, region.y0);
}

/// Bilinear sample with edge clamping; coordinates are pixel centers.
inline double sample_bilinear(const FloatGrid& g, double x, double y) {
    x = std::clamp(x, 0.0, static_cast<double>(g.width() - 1));
    y = std::clamp(y, 0.0, static_cast<double>(g.height() - 1));
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const int x1 = std::min(x0 + 1, g.width() - 1);
    const int y1 = std::min(y0 + 1, g.height() - 1);
    const double fx = x - x0;
    const double fy = y - y0;
    const double top = g(x0, y0) + fx * (static_cast<double>(g(x1, y0)) - g(x0, y0));
    const double bottom = g(x0, y1) + fx * (static_cast<double>(g(x1, y1)) - g(x0, y1));
    return top + fy * (bottom - top);
}

/// Resizes `src` to (width, height) by bilinear sampling at mapped pixel centers.
inline FloatGrid resize_bilinear(const FloatGrid& src, int width, int height) {
    FloatGrid out(width, height);
    const double sx = static_cast<double>(src.width()) / width;
    const double sy = static_cast<double>(src.height()) / height;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            out(x, y) = static_cast<float>(sample_bilinear(src, (x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5));
        }
    }
    return out;
}

/// Center-pads with `fill` or center-crops each axis to the target size.
template <typename T>
Grid<T> center_fit(const Grid<T>& src, int width, int height, T fill) {
    Grid<T> out(width, height, fill);
    const int ox = (width - src.width()) / 2; // negative when cropping
    const int oy = (height - src.height()) / 2;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const int sx = x - ox;
            const int sy = y - oy;
            if (src.contains(sx, sy)) out(x, y) = src(sx, sy);
        }
    }
    return out;
}

/// Common in-plane geometry every ingested slice is brought to.
struct CommonGeometry {
    Spacing spacing{1.5, 1.5};
    int width = 512;
    int height = 512;
};

/// Bilinear resampling to `target_spacing`, then center pad (with the image
/// minimum) or center crop to `target_width` x `target_height`.
inline HuImage resample(const HuImage& img, Spacing target_spacing, int target_width, int target_height) {
    if (!(target_spacing.row > 0.0) || !(target_spacing.col > 0.0) || target_width <= 0 || target_height <= 0) {
        throw Error(ErrorCode::InvalidArgument, "resample target must be positive");
    }
    const int w = std::max(1, static_cast<int>(std::lround(img.width() * img.spacing.col / target_spacing.col)));
    const int h = std::max(1, static_cast<int>(std::lround(img.height() * img.spacing.row / target_spacing.row)));
    const FloatGrid scaled = (w == img.width() && h == img.height()) ? img.pixels : resize_bilinear(img.pixels, w, h);
    const float min_hu = *std::min_element(img.pixels.data().begin(), img.pixels.data().end());
    return HuImage(center_fit(scaled, target_width, target_height, min_hu), target_spacing);
}

inline HuImage resample(const HuImage& img, const CommonGeometry& geom = {}) {
    return resample(img, geom.spacing, geom.width, geom.height);
}

/// Same geometry as resample() for a mask living on `img`'s grid, with
/// nearest-neighbour sampling so labels stay binary.
inline BinMask resample_mask(const BinMask& mask, Spacing spacing, const CommonGeometry& geom = {}) {
    const int w = std::max(1, static_cast<int>(std::lround(mask.width() * spacing.col / geom.spacing.col)));
    const int h = std::max(1, static_cast<int>(std::lround(mask.height() * spacing.row / geom.spacing.row)));
    BinMask scaled(w, h);
    const double sx = static_cast<double>(mask.width()) / w;
    const double sy = static_cast<double>(mask.height()) / h;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int ix = std::clamp(static_cast<int>(std::floor((x + 0.5) * sx)), 0, mask.width() - 1);
            const int iy = std::clamp(static_cast<int>(std::floor((y + 0.5) * sy)), 0, mask.height() - 1);
            scaled(x, y) = mask(ix, iy);
        }
    }
    return center_fit(scaled, geom.width, geom.height, std::uint8_t{0});
}

// --- augmentation ----------------------------------------------------------

struct AugmentSpec {
    double p_translate = 0.10;
    double p_rotate = 0.10;
    double p_scale = 0.10;
    double rotate_deg_min = -10.3;
    double rotate_deg_max = 10.3;
    int translate_px_max = 10;
    double scale_min = 0.9;
    double scale_max = 1.1;
    std::uint64_t seed = 0;
};

/// Concrete transform drawn from an AugmentSpec. Absent members are identity.
struct AugmentParams {
    std::optional<std::pair<int, int>> translate;
    std::optional<double> rotate_deg;
    std::optional<double> scale;

    bool identity() const noexcept { return !translate && !rotate_deg && !scale; }
};

/// Draws the three independent on/off decisions first, then the parameters of
/// the transforms that fired.
inline AugmentParams draw_augment(const AugmentSpec& spec) {
    detail::Rng rng(spec.seed);
    const double u_translate = rng.uniform();
    const double u_rotate = rng.uniform();
    const double u_scale = rng.uniform();
    AugmentParams p;
    if (u_translate < spec.p_translate) {
        const int dx = static_cast<int>(rng.uniform_int(-spec.translate_px_max, spec.translate_px_max));
        const int dy = static_cast<int>(rng.uniform_int(-spec.translate_px_max, spec.translate_px_max));
        p.translate = std::make_pair(dx, dy);
    }
    if (u_rotate < spec.p_rotate) p.rotate_deg = rng.uniform(spec.rotate_deg_min, spec.rotate_deg_max);
    if (u_scale < spec.p_scale) p.scale = rng.uniform(spec.scale_min, spec.scale_max);
    return p;
}

/// Forward affine map: scale and rotate about the image center, then translate.
struct Affine {
    double a = 1, b = 0, c = 0; // x' = a x + b y + c
    double d = 0, e = 1, f = 0; // y' = d x + e y + f

    std::pair<double, double> apply(double x, double y) const noexcept {
        return {a * x + b * y + c, d * x + e * y + f};
    }
    Affine inverse() const {
        const double det = a * e - b * d;
        Affine inv;
        inv.a = e / det;
        inv.b = -b / det;
        inv.d = -d / det;
        inv.e = a / det;
        inv.c = -(inv.a * c + inv.b * f);
        inv.f = -(inv.d * c + inv.e * f);
        return inv;
    }
};

/// Center is taken at the geometric middle of the pixel grid ((w-1)/2, (h-1)/2).
inline Affine augment_affine(const AugmentParams& p, int width, int height) {
    const double cx = (width - 1) / 2.0;
    const double cy = (height - 1) / 2.0;
    const double s = p.scale.value_or(1.0);
    const double theta = p.rotate_deg.value_or(0.0) * std::numbers::pi / 180.0;
    const double cs = std::cos(theta) * s;
    const double sn = std::sin(theta) * s;
    const double tx = p.translate ? p.translate->first : 0.0;
    const double ty = p.translate ? p.translate->second : 0.0;
    Affine m;
    m.a = cs;
    m.b = -sn;
    m.d = sn;
    m.e = cs;
    m.c = cx - cs * cx + sn * cy + tx;
    m.f = cy - sn * cx - cs * cy + ty;
    return m;
}

/// Axis-aligned hull of the four transformed corners, clamped to the image.
/// Returns an invalid box when the transformed box leaves the image entirely.
inline BBox transform_box(const BBox& box, const Affine& m, int width, int height) {
    const double xs[2] = {static_cast<double>(box.x0), static_cast<double>(box.x1)};
    const double ys[2] = {static_cast<double>(box.y0), static_cast<double>(box.y1)};
    double lx = 1e300, ly = 1e300, hx = -1e300, hy = -1e300;
    for (double x : xs) {
        for (double y : ys) {
            auto [tx, ty] = m.apply(x, y);
            lx = std::min(lx, tx);
            ly = std::min(ly, ty);
            hx = std::max(hx, tx);
            hy = std::max(hy, ty);
        }
    }
    // Snap values within 1e-9 of an integer so exact shifts stay exact.
    auto snap_floor = [](double v) { return static_cast<int>(std::floor(v + 1e-9)); };
    auto snap_ceil = [](double v) { return static_cast<int>(std::ceil(v - 1e-9)); };
    BBox out{std::max(snap_floor(lx), 0), std::max(snap_floor(ly), 0), std::min(snap_ceil(hx), width),
             std::min(snap_ceil(hy), height)};
    return out.valid() ? out : BBox{};
}

template <typename T>
Grid<T> warp_nearest(const Grid<T>& src, const Affine& forward, T fill) {
    const Affine inv = forward.inverse();
    Grid<T> out(src.width(), src.height(), fill);
    for (int y = 0; y < src.height(); ++y) {
        for (int x = 0; x < src.width(); ++x) {
            auto [sx, sy] = inv.apply(x, y);
            const int ix = static_cast<int>(std::lround(sx));
            const int iy = static_cast<int>(std::lround(sy));
            if (src.contains(ix, iy)) out(x, y) = src(ix, iy);
        }
    }
    return out;
}

inline FloatGrid warp_bilinear(const FloatGrid& src, const Affine& forward, float fill) {
    const Affine inv = forward.inverse();
    FloatGrid out(src.width(), src.height(), fill);
    for (int y = 0; y < src.height(); ++y) {
        for (int x = 0; x < src.width(); ++x) {
            auto [sx, sy] = inv.apply(x, y);
            if (sx < -0.5 || sy < -0.5 || sx > src.width() - 0.5 || sy > src.height() - 0.5) continue;
            out(x, y) = static_cast<float>(sample_bilinear(src, sx, sy));
        }
    }
    return out;
}

struct Augmented {
    FloatGrid image;
    std::vector<BBox> boxes; ///< invalid boxes mark objects moved out of view
    AugmentParams params;
};

inline Augmented apply_augment(const FloatGrid& img, const std::vector<BBox>& boxes, const AugmentParams& params) {
    Augmented out{img, boxes, params};
    if (params.identity()) return out;
    const Affine m = augment_affine(params, img.width(), img.height());
    const float fill = *std::min_element(img.data().begin(), img.data().end());
    out.image = warp_bilinear(img, m, fill);
    for (auto& b : out.boxes) b = transform_box(b, m, img.width(), img.height());
    return out;
}

inline Augmented augment(const FloatGrid& img, const std::vector<BBox>& boxes, const AugmentSpec& spec) {
    return apply_augment(img, boxes, draw_augment(spec));
}

} // namespace limis
