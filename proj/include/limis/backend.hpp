#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "limis/core.hpp"

namespace limis {

struct Detection {
    BBox box;
    std::string label;
    double score = 0.0;
    friend bool operator==(const Detection&, const Detection&) = default;
};

/// Input to the promptable segmenter. Everything is in crop coordinates.
struct SegmentPrompt {
    NormImage image; ///< window-normalized crop, values in [0,1]
    BBox box;
    std::vector<Click> clicks;

    void validate() const {
        if (image.empty()) throw Error(ErrorCode::InvalidArgument, "segment prompt has an empty image");
        if (!box.valid() || box.x0 < 0 || box.y0 < 0 || box.x1 > image.width() || box.y1 > image.height()) {
            throw Error(ErrorCode::InvalidArgument, "prompt box must lie inside the crop");
        }
        for (const auto& c : clicks) {
            if (!image.contains(c.x, c.y)) throw Error(ErrorCode::InvalidArgument, "prompt click outside the crop");
        }
    }
};

inline constexpr double kClickContractMargin = 0.01;

/// Positive clicks end up at >= 0.5 + margin and negative clicks strictly
/// below 0.5, whatever the model returned. Later clicks on the same pixel win.
inline void enforce_click_contract(ProbMask& prob, const std::vector<Click>& clicks,
                                   double margin = kClickContractMargin) {
    for (const auto& c : clicks) {
        if (!prob.contains(c.x, c.y)) continue;
        float& p = prob(c.x, c.y);
        if (c.positive) p = std::max(p, static_cast<float>(0.5 + margin));
        else p = std::min(p, static_cast<float>(0.5 - margin));
    }
}

inline void clamp_unit(ProbMask& prob) {
    for (float& p : prob.data()) p = std::isfinite(p) ? std::clamp(p, 0.0f, 1.0f) : 0.0f;
}

/// Lang2BBox + BBox2Mask. Implementations must be safe to call concurrently.
class Backend {
  public:
    virtual ~Backend() = default;

    /// Detections sorted by descending score.
    virtual std::vector<Detection> detect(const NormImage& image, const std::vector<std::string>& labels) const = 0;

    /// Probability map of the same shape as prompt.image, click contract applied.
    virtual ProbMask segment(const SegmentPrompt& prompt) const = 0;

    virtual std::string name() const = 0;
};

inline void sort_detections(std::vector<Detection>& dets) {
    std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.box.area() > b.box.area();
    });
}

} // namespace limis
