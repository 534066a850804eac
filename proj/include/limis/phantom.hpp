#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "limis/core.hpp"
#include "limis/detail/random.hpp"
#include "limis/organs.hpp"
#include "limis/volume_io.hpp"

namespace limis {

enum class ShapeKind { Ellipse, Rectangle };

/// One analytic structure. For an ellipse `size` holds the radii, for a
/// rectangle the full extents. A pixel belongs to the shape iff its center
/// (integer coordinates) satisfies the analytic inequality:
///   ellipse:   ((x-cx)/rx)^2 + ((y-cy)/ry)^2 <= 1
///   rectangle: cx - ex/2 <= x < cx + ex/2, same for y
struct PhantomShape {
    ShapeKind kind = ShapeKind::Ellipse;
    std::string label;
    double cx = 0.0;
    double cy = 0.0;
    double sx = 1.0;
    double sy = 1.0;
    double mean_hu = 0.0;
    double noise_sigma = 0.0;
    int z0 = 0;
    int z1 = -1; ///< exclusive; -1 means "through the last slice"

    bool inside(int x, int y) const noexcept {
        if (kind == ShapeKind::Ellipse) {
            const double u = (x - cx) / sx;
            const double v = (y - cy) / sy;
            return u * u + v * v <= 1.0;
        }
        return x >= cx - sx / 2.0 && x < cx + sx / 2.0 && y >= cy - sy / 2.0 && y < cy + sy / 2.0;
    }

    bool on_slice(int z, int nz) const noexcept { return z >= z0 && z < (z1 < 0 ? nz : z1); }

    /// Analytic bounding box of the pixel set, before clamping to the image.
    BBox analytic_box() const noexcept {
        if (kind == ShapeKind::Ellipse) {
            return {static_cast<int>(std::ceil(cx - sx)), static_cast<int>(std::ceil(cy - sy)),
                    static_cast<int>(std::floor(cx + sx)) + 1, static_cast<int>(std::floor(cy + sy)) + 1};
        }
        return {static_cast<int>(std::ceil(cx - sx / 2.0)), static_cast<int>(std::ceil(cy - sy / 2.0)),
                static_cast<int>(std::ceil(cx + sx / 2.0)), static_cast<int>(std::ceil(cy + sy / 2.0))};
    }
};

struct PhantomScene {
    int width = 64;
    int height = 64;
    int slices = 1;
    std::array<double, 3> spacing{1.5, 1.5, 3.0};
    double background_hu = -1000.0;
    std::uint64_t seed = 0;
    std::vector<PhantomShape> shapes;

    void validate(const LabelVocabulary& vocab = default_vocabulary()) const {
        if (width <= 0 || height <= 0 || slices <= 0) {
            throw Error(ErrorCode::InvalidArgument, "scene dims must be positive");
        }
        for (double s : spacing) {
            if (!(s > 0.0)) throw Error(ErrorCode::InvalidArgument, "scene spacing must be positive");
        }
        for (const auto& s : shapes) {
            vocab.require(s.label);
            if (!(s.sx > 0.0) || !(s.sy > 0.0)) throw Error(ErrorCode::InvalidArgument, "shape size must be positive");
            if (!(s.noise_sigma >= 0.0)) throw Error(ErrorCode::InvalidArgument, "noise sigma must be >= 0");
            const int z1 = s.z1 < 0 ? slices : s.z1;
            if (s.z0 < 0 || z1 > slices || s.z0 >= z1) {
                throw Error(ErrorCode::InvalidArgument, "slice range outside the volume");
            }
        }
    }
};

/// Per-slice, per-label analytic masks.
class GroundTruth {
  public:
    GroundTruth() = default;
    GroundTruth(int width, int height, int slices)
        : width_(width), height_(height), per_slice_(static_cast<std::size_t>(slices)) {}

    int slices() const noexcept { return static_cast<int>(per_slice_.size()); }

    const std::map<std::string, BinMask>& slice(int z) const {
        if (z < 0 || z >= slices()) throw Error(ErrorCode::IndexOutOfRange, "ground-truth slice out of range");
        return per_slice_[static_cast<std::size_t>(z)];
    }

    /// Mask of `label` on slice z; all-zero when the label is absent.
    BinMask mask(int z, const std::string& label) const {
        const auto& s = slice(z);
        auto it = s.find(label);
        return it == s.end() ? BinMask(width_, height_) : it->second;
    }

    std::vector<std::string> labels_on(int z) const {
        std::vector<std::string> out;
        for (const auto& [label, m] : slice(z)) out.push_back(label);
        return out;
    }

    BinMask& mutable_mask(int z, const std::string& label) {
        auto& s = per_slice_[static_cast<std::size_t>(z)];
        auto it = s.find(label);
        if (it == s.end()) it = s.emplace(label, BinMask(width_, height_)).first;
        return it->second;
    }

  private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::map<std::string, BinMask>> per_slice_;
};

struct RenderedPhantom {
    Volume volume;
    GroundTruth truth;
};

/// Pure function of the scene (seed included). Later shapes overwrite earlier
/// ones where they overlap; noise is drawn per voxel from a counter-based
/// generator keyed by (seed, shape index, voxel index).
inline RenderedPhantom render_phantom(const PhantomScene& scene) {
    scene.validate();
    const int nx = scene.width, ny = scene.height, nz = scene.slices;
    std::vector<float> data(static_cast<std::size_t>(nx) * ny * nz, static_cast<float>(scene.background_hu));
    GroundTruth truth(nx, ny, nz);
    for (int z = 0; z < nz; ++z) {
        for (std::size_t si = 0; si < scene.shapes.size(); ++si) {
            const auto& shape = scene.shapes[si];
            if (!shape.on_slice(z, nz)) continue;
            const std::uint64_t shape_seed = detail::splitmix64(scene.seed + 0x51ed270b27u * (si + 1));
            BinMask& gt = truth.mutable_mask(z, shape.label);
            const BBox box = shape.analytic_box();
            for (int y = std::max(box.y0, 0); y < std::min(box.y1, ny); ++y) {
                for (int x = std::max(box.x0, 0); x < std::min(box.x1, nx); ++x) {
                    if (!shape.inside(x, y)) continue;
                    if (gt(x, y)) {
                        throw Error(ErrorCode::OverlapError,
                                    "two '" + shape.label + "' shapes overlap on slice " + std::to_string(z));
                    }
                    gt(x, y) = 1;
                    const std::size_t idx = (static_cast<std::size_t>(z) * ny + y) * nx + x;
                    double value = shape.mean_hu;
                    if (shape.noise_sigma > 0.0) value += shape.noise_sigma * detail::counter_normal(shape_seed, idx);
                    data[idx] = static_cast<float>(value);
                }
            }
        }
    }
    return {Volume({nx, ny, nz}, scene.spacing, std::move(data)), std::move(truth)};
}

// --- JSON ------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const PhantomShape& s) {
    j = {{"kind", s.kind == ShapeKind::Ellipse ? "ellipse" : "rectangle"},
         {"label", s.label},
         {"center", {s.cx, s.cy}},
         {"size", {s.sx, s.sy}},
         {"mean_hu", s.mean_hu},
         {"noise_sigma", s.noise_sigma},
         {"slice_range", {s.z0, s.z1}}};
}

inline void from_json(const nlohmann::json& j, PhantomShape& s) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "ellipse") s.kind = ShapeKind::Ellipse;
    else if (kind == "rectangle") s.kind = ShapeKind::Rectangle;
    else throw Error(ErrorCode::InvalidArgument, "unknown shape kind '" + kind + "'");
    s.label = j.at("label").get<std::string>();
    s.cx = j.at("center").at(0).get<double>();
    s.cy = j.at("center").at(1).get<double>();
    s.sx = j.at("size").at(0).get<double>();
    s.sy = j.at("size").at(1).get<double>();
    s.mean_hu = j.contains("mean_hu") ? j.at("mean_hu").get<double>() : reference_hu(s.label);
    s.noise_sigma = j.value("noise_sigma", 0.0);
    if (j.contains("slice_range")) {
        s.z0 = j.at("slice_range").at(0).get<int>();
        s.z1 = j.at("slice_range").at(1).get<int>();
    }
}

inline void to_json(nlohmann::json& j, const PhantomScene& s) {
    j = {{"width", s.width},
         {"height", s.height},
         {"slices", s.slices},
         {"spacing", s.spacing},
         {"background_hu", s.background_hu},
         {"seed", s.seed},
         {"shapes", s.shapes}};
}

inline void from_json(const nlohmann::json& j, PhantomScene& s) {
    s.width = j.at("width").get<int>();
    s.height = j.at("height").get<int>();
    s.slices = j.value("slices", 1);
    if (j.contains("spacing")) s.spacing = j.at("spacing").get<std::array<double, 3>>();
    s.background_hu = j.value("background_hu", -1000.0);
    s.seed = j.value("seed", std::uint64_t{0});
    s.shapes = j.at("shapes").get<std::vector<PhantomShape>>();
    s.validate();
}

// --- generated corpora -----------------------------------------------------

struct CorpusOptions {
    int width = 96;
    int height = 96;
    int min_organs = 1;
    int max_organs = 3;
    double min_radius = 8.0;
    double max_radius = 18.0;
    double noise_sigma = 0.0;
    /// Each scene becomes a pair of rectangles that share an edge, the second
    /// one holding the label whose reference HU is adjacent to the first.
    bool touching_pairs = false;
};

namespace detail {

inline bool boxes_clear(const BBox& a, const BBox& b, int gap) {
    return a.x1 + gap <= b.x0 || b.x1 + gap <= a.x0 || a.y1 + gap <= b.y0 || b.y1 + gap <= a.y0;
}

inline std::string hu_neighbor(const std::string& label, Rng& rng) {
    std::vector<std::pair<double, std::string>> sorted;
    for (const auto& [name, hu] : organ_reference_hu()) sorted.emplace_back(hu, name);
    std::sort(sorted.begin(), sorted.end());
    std::size_t i = 0;
    while (sorted[i].second != label) ++i;
    if (i == 0) return sorted[1].second;
    if (i + 1 == sorted.size()) return sorted[i - 1].second;
    return rng.uniform() < 0.5 ? sorted[i - 1].second : sorted[i + 1].second;
}

} // namespace detail

/// Deterministic single-slice scene. Structures never share a label, and unless
/// `touching_pairs` is set their boxes keep at least a 3-pixel gap.
inline PhantomScene random_scene(std::uint64_t seed, const CorpusOptions& opts = {}) {
    detail::Rng rng(seed);
    const auto& vocab = default_vocabulary().names();
    PhantomScene scene;
    scene.width = opts.width;
    scene.height = opts.height;
    scene.slices = 1;
    scene.seed = seed;
    std::vector<std::string> labels = vocab;
    rng.shuffle(labels);

    if (opts.touching_pairs) {
        const std::string first = labels.front();
        const std::string second = detail::hu_neighbor(first, rng);
        const double w1 = std::round(rng.uniform(2 * opts.min_radius, 2 * opts.max_radius));
        const double w2 = std::round(rng.uniform(2 * opts.min_radius, 2 * opts.max_radius));
        const double h1 = std::round(rng.uniform(2 * opts.min_radius, 2 * opts.max_radius));
        const double h2 = std::round(rng.uniform(2 * opts.min_radius, 2 * opts.max_radius));
        const double total = w1 + w2;
        const double left = std::round((opts.width - total) / 2.0 + rng.uniform(-4.0, 4.0));
        const double cy = std::round(opts.height / 2.0 + rng.uniform(-4.0, 4.0));
        // Centers sit on integer + extent/2 so the shared edge is exact.
        PhantomShape a{ShapeKind::Rectangle, first, left + w1 / 2.0, cy, w1, h1,
                       reference_hu(first), opts.noise_sigma, 0, -1};
        PhantomShape b{ShapeKind::Rectangle, second, left + w1 + w2 / 2.0, cy + std::round(rng.uniform(-4.0, 4.0)),
                       w2, h2, reference_hu(second), opts.noise_sigma, 0, -1};
        scene.shapes = {a, b};
        scene.validate();
        return scene;
    }

    const int count = static_cast<int>(rng.uniform_int(opts.min_organs, opts.max_organs));
    std::vector<BBox> placed;
    for (int i = 0; i < count && i < static_cast<int>(labels.size()); ++i) {
        for (int attempt = 0; attempt < 200; ++attempt) {
            PhantomShape s;
            s.kind = rng.uniform() < 0.7 ? ShapeKind::Ellipse : ShapeKind::Rectangle;
            s.label = labels[static_cast<std::size_t>(i)];
            s.sx = std::round(rng.uniform(opts.min_radius, opts.max_radius));
            s.sy = std::round(rng.uniform(opts.min_radius, opts.max_radius));
            if (s.kind == ShapeKind::Rectangle) {
                s.sx *= 2.0;
                s.sy *= 2.0;
            }
            const double half_x = s.kind == ShapeKind::Ellipse ? s.sx : s.sx / 2.0;
            const double half_y = s.kind == ShapeKind::Ellipse ? s.sy : s.sy / 2.0;
            s.cx = std::round(rng.uniform(half_x + 2.0, opts.width - half_x - 3.0));
            s.cy = std::round(rng.uniform(half_y + 2.0, opts.height - half_y - 3.0));
            s.mean_hu = reference_hu(s.label);
            s.noise_sigma = opts.noise_sigma;
            const BBox box = s.analytic_box();
            if (box.x0 < 1 || box.y0 < 1 || box.x1 > opts.width - 1 || box.y1 > opts.height - 1) continue;
            bool clear = true;
            for (const auto& other : placed) clear = clear && detail::boxes_clear(box, other, 3);
            if (!clear) continue;
            placed.push_back(box);
            scene.shapes.push_back(s);
            break;
        }
    }
    scene.validate();
    return scene;
}

inline std::vector<PhantomScene> random_corpus(std::size_t count, std::uint64_t seed, const CorpusOptions& opts = {}) {
    std::vector<PhantomScene> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(random_scene(detail::splitmix64(seed + i), opts));
    return out;
}

} // namespace limis
