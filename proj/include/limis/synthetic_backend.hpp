#pragma once

#include <algorithm>
#include <cmath>
#include <queue>
#include <string>
#include <vector>

#include "limis/backend.hpp"
#include "limis/imaging.hpp"
#include "limis/maskops.hpp"
#include "limis/organs.hpp"

namespace limis {

/// Scene-independent parameters of the synthetic backend.
struct SyntheticConfig {
    /// Window the engine applies to produce detector input.
    WindowSpec detector_window{50.0, 400.0};
    /// Detection band is reference_hu +- band_k * band_sigma_hu.
    double band_sigma_hu = 6.0;
    double band_k = 2.0;
    std::size_t min_component_area = 4;
    /// Region-growing tolerance in normalized intensity units; 0.1 equals
    /// 40 HU under the default 400 HU wide soft-tissue window.
    double tolerance = 0.1;
    /// Crops whose longer side exceeds this are processed at reduced
    /// resolution, like a fixed-input-size model.
    int max_side = 128;
};

/// Deterministic stand-in for the detector and the promptable segmenter.
///
/// detect: maps the detector input back to HU, keeps pixels inside each
/// requested label's reference band, and reports every 4-connected component
/// as a box scored by its mean band membership.
///
/// segment: fuzzy-connectedness region growing inside the prompt box. Seeds
/// are the box center (unless a negative click sits on it) and every positive
/// click. For a seed s with local mean m_s, membership is
/// exp(-(v - m_s)^2 / (2 tol^2)); the probability of a pixel is the best
/// bottleneck membership over paths from any seed. Negative clicks block paths
/// and are forced to 0, positive clicks are forced to 1.
class SyntheticBackend : public Backend {
  public:
    explicit SyntheticBackend(SyntheticConfig config = {}) : config_(config) {}

    const SyntheticConfig& config() const noexcept { return config_; }

    std::vector<Detection> detect(const NormImage& image, const std::vector<std::string>& labels) const override {
        std::vector<Detection> out;
        const double sigma = config_.band_sigma_hu;
        for (const auto& label : labels) {
            default_vocabulary().require(label);
            const double ref = reference_hu(label);
            const double half = config_.band_k * sigma;
            BinMask band(image.width(), image.height());
            FloatGrid membership(image.width(), image.height());
            for (std::size_t i = 0; i < image.size(); ++i) {
                const double hu = window_to_hu(image.data()[i], config_.detector_window);
                const double d = hu - ref;
                band.data()[i] = std::abs(d) <= half ? 1 : 0;
                membership.data()[i] = static_cast<float>(std::exp(-d * d / (2.0 * sigma * sigma)));
            }
            const Components comps = connected_components(band);
            std::vector<double> score_sum(comps.count() + 1, 0.0);
            for (std::size_t i = 0; i < band.size(); ++i) {
                const int id = comps.labels.data()[i];
                if (id > 0) score_sum[static_cast<std::size_t>(id)] += membership.data()[i];
            }
            for (const auto& c : comps.items) {
                if (c.area < config_.min_component_area) continue;
                const double score = std::clamp(score_sum[static_cast<std::size_t>(c.id)] / c.area, 0.0, 1.0);
                out.push_back({c.bbox, label, score});
            }
        }
        sort_detections(out);
        return out;
    }

    ProbMask segment(const SegmentPrompt& prompt) const override {
        prompt.validate();
        const int w = prompt.image.width();
        const int h = prompt.image.height();
        const int longest = std::max(w, h);
        const bool reduce = config_.max_side > 0 && longest > config_.max_side;
        const double scale = reduce ? static_cast<double>(config_.max_side) / longest : 1.0;
        const int ww = reduce ? std::max(1, static_cast<int>(std::lround(w * scale))) : w;
        const int wh = reduce ? std::max(1, static_cast<int>(std::lround(h * scale))) : h;
        const double fx = static_cast<double>(ww) / w;
        const double fy = static_cast<double>(wh) / h;

        const FloatGrid work = reduce ? resize_bilinear(prompt.image, ww, wh) : prompt.image;
        auto map_x = [&](int x) { return std::clamp(static_cast<int>(std::floor((x + 0.5) * fx)), 0, ww - 1); };
        auto map_y = [&](int y) { return std::clamp(static_cast<int>(std::floor((y + 0.5) * fy)), 0, wh - 1); };
        BBox wbox{static_cast<int>(std::floor(prompt.box.x0 * fx)), static_cast<int>(std::floor(prompt.box.y0 * fy)),
                  static_cast<int>(std::ceil(prompt.box.x1 * fx)), static_cast<int>(std::ceil(prompt.box.y1 * fy))};
        wbox = clamp_box(wbox, ww, wh);

        Grid<std::uint8_t> blocked(ww, wh, 0);
        for (const auto& c : prompt.clicks) {
            if (!c.positive) blocked(map_x(c.x), map_y(c.y)) = 1;
        }
        struct Seed {
            int x, y;
            bool forced;
        };
        std::vector<Seed> seeds;
        const auto [bcx, bcy] = prompt.box.center();
        if (!blocked(map_x(bcx), map_y(bcy))) seeds.push_back({map_x(bcx), map_y(bcy), false});
        for (const auto& c : prompt.clicks) {
            if (c.positive) seeds.push_back({map_x(c.x), map_y(c.y), true});
        }

        FloatGrid best(ww, wh, 0.0f);
        for (const auto& s : seeds) {
            if (!wbox.contains(s.x, s.y)) continue;
            grow_from(work, wbox, blocked, s.x, s.y, s.forced, best);
        }

        ProbMask prob = reduce ? resize_bilinear(best, w, h) : best;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                if (!prompt.box.contains(x, y)) prob(x, y) = 0.0f;
            }
        }
        clamp_unit(prob);
        for (const auto& c : prompt.clicks) prob(c.x, c.y) = c.positive ? 1.0f : 0.0f;
        enforce_click_contract(prob, prompt.clicks);
        return prob;
    }

    std::string name() const override { return "synthetic"; }

  private:
    void grow_from(const FloatGrid& img, const BBox& box, const Grid<std::uint8_t>& blocked, int sx, int sy,
                   bool forced, FloatGrid& best) const {
        double sum = 0.0;
        int n = 0;
        for (int y = sy - 1; y <= sy + 1; ++y) {
            for (int x = sx - 1; x <= sx + 1; ++x) {
                if (box.contains(x, y) && !blocked(x, y)) {
                    sum += img(x, y);
                    ++n;
                }
            }
        }
        const double mean = n > 0 ? sum / n : img(sx, sy);
        const double two_tol_sq = 2.0 * config_.tolerance * config_.tolerance;
        auto membership = [&](int x, int y) {
            if (blocked(x, y)) return 0.0f;
            const double d = img(x, y) - mean;
            return static_cast<float>(std::exp(-d * d / two_tol_sq));
        };

        FloatGrid reach(img.width(), img.height(), 0.0f);
        using Entry = std::pair<float, int>;
        std::priority_queue<Entry> heap;
        const float start = forced ? 1.0f : membership(sx, sy);
        reach(sx, sy) = start;
        heap.emplace(start, sy * img.width() + sx);
        constexpr int dx[4] = {1, -1, 0, 0};
        constexpr int dy[4] = {0, 0, 1, -1};
        while (!heap.empty()) {
            auto [value, idx] = heap.top();
            heap.pop();
            const int x = idx % img.width();
            const int y = idx / img.width();
            if (value < reach(x, y)) continue;
            for (int k = 0; k < 4; ++k) {
                const int nx = x + dx[k];
                const int ny = y + dy[k];
                if (!box.contains(nx, ny)) continue;
                const float cand = std::min(value, membership(nx, ny));
                if (cand > reach(nx, ny)) {
                    reach(nx, ny) = cand;
                    heap.emplace(cand, ny * img.width() + nx);
                }
            }
        }
        for (std::size_t i = 0; i < best.size(); ++i) best.data()[i] = std::max(best.data()[i], reach.data()[i]);
    }

    SyntheticConfig config_;
};

} // namespace limis
