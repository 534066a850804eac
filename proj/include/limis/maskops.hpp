#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "limis/core.hpp"

namespace limis {

inline BinMask threshold(const ProbMask& prob, double tau) {
    if (!(tau >= 0.0 && tau <= 1.0)) throw Error(ErrorCode::InvalidArgument, "threshold must lie in [0,1]");
    BinMask out(prob.width(), prob.height());
    for (std::size_t i = 0; i < prob.size(); ++i) {
        out.data()[i] = static_cast<double>(prob.data()[i]) >= tau ? 1 : 0;
    }
    return out;
}

struct Component {
    int id = 0; ///< 1-based, largest first
    std::size_t area = 0;
    BBox bbox;
    int first_x = 0; ///< first pixel in row-major scan order
    int first_y = 0;
};

struct Components {
    Grid<int> labels; ///< 0 = background, otherwise component id
    std::vector<Component> items;

    std::size_t count() const noexcept { return items.size(); }
};

/// 4-connected labeling. Components are numbered 1..n by decreasing area;
/// equal areas are ordered by their first pixel in row-major order.
inline Components connected_components(const BinMask& mask) {
    const int w = mask.width();
    const int h = mask.height();
    Grid<int> raw(w, h, 0);
    std::vector<Component> found;
    std::deque<std::pair<int, int>> queue;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!mask(x, y) || raw(x, y) != 0) continue;
            const int label = static_cast<int>(found.size()) + 1;
            Component comp;
            comp.first_x = x;
            comp.first_y = y;
            comp.bbox = {x, y, x + 1, y + 1};
            raw(x, y) = label;
            queue.emplace_back(x, y);
            while (!queue.empty()) {
                auto [cx, cy] = queue.front();
                queue.pop_front();
                ++comp.area;
                comp.bbox.x0 = std::min(comp.bbox.x0, cx);
                comp.bbox.y0 = std::min(comp.bbox.y0, cy);
                comp.bbox.x1 = std::max(comp.bbox.x1, cx + 1);
                comp.bbox.y1 = std::max(comp.bbox.y1, cy + 1);
                constexpr int dx[4] = {1, -1, 0, 0};
                constexpr int dy[4] = {0, 0, 1, -1};
                for (int k = 0; k < 4; ++k) {
                    const int nx = cx + dx[k];
                    const int ny = cy + dy[k];
                    if (mask.contains(nx, ny) && mask(nx, ny) && raw(nx, ny) == 0) {
                        raw(nx, ny) = label;
                        queue.emplace_back(nx, ny);
                    }
                }
            }
            found.push_back(comp);
        }
    }

    // Discovery order is already row-major by first pixel, so a stable sort by
    // area gives the documented tie-break.
    std::vector<int> order(found.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return found[a].area > found[b].area; });
    std::vector<int> remap(found.size() + 1, 0);
    Components result;
    result.items.reserve(found.size());
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        Component c = found[order[rank]];
        remap[order[rank] + 1] = static_cast<int>(rank) + 1;
        c.id = static_cast<int>(rank) + 1;
        result.items.push_back(c);
    }
    result.labels = Grid<int>(w, h, 0);
    for (std::size_t i = 0; i < raw.size(); ++i) result.labels.data()[i] = remap[raw.data()[i]];
    return result;
}

inline BinMask remove_component(const BinMask& mask, int id) {
    const Components comps = connected_components(mask);
    if (id < 1 || id > static_cast<int>(comps.count())) {
        throw Error(ErrorCode::UnknownComponent,
                    "component " + std::to_string(id) + " does not exist (" +
                        std::to_string(comps.count()) + " components)");
    }
    BinMask out = mask;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (comps.labels.data()[i] == id) out.data()[i] = 0;
    }
    return out;
}

enum class EnsembleRule { Majority, Union, Intersection };

/// Pixelwise vote. Majority means strictly more than half of the inputs.
inline BinMask ensemble(std::span<const BinMask> masks, EnsembleRule rule = EnsembleRule::Majority) {
    if (masks.size() < 2) throw Error(ErrorCode::InvalidArgument, "ensemble needs at least two masks");
    for (const auto& m : masks) {
        if (!m.same_shape(masks.front())) throw Error(ErrorCode::DimensionMismatch, "ensemble inputs differ in size");
    }
    BinMask out(masks.front().width(), masks.front().height());
    const std::size_t n = masks.size();
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::size_t votes = 0;
        for (const auto& m : masks) votes += m.data()[i] ? 1 : 0;
        bool set = false;
        switch (rule) {
        case EnsembleRule::Majority: set = 2 * votes > n; break;
        case EnsembleRule::Union: set = votes > 0; break;
        case EnsembleRule::Intersection: set = votes == n; break;
        }
        out.data()[i] = set ? 1 : 0;
    }
    return out;
}

inline BinMask majority_ensemble(std::span<const BinMask> masks) {
    return ensemble(masks, EnsembleRule::Majority);
}

/// 2|A∩B| / (|A|+|B|), with two empty masks counting as perfect agreement.
inline double dice(const BinMask& a, const BinMask& b) {
    if (!a.same_shape(b)) throw Error(ErrorCode::DimensionMismatch, "dice inputs differ in size");
    std::size_t inter = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool pa = a.data()[i] != 0;
        const bool pb = b.data()[i] != 0;
        na += pa;
        nb += pb;
        inter += pa && pb;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

} // namespace limis
