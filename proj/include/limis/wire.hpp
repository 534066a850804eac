#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "limis/backend.hpp"
#include "limis/detail/base64.hpp"

// JSON bodies of the inference wire protocol:
//   POST /detect  {"width","height","pixels_b64","labels":[..]}
//                 -> {"detections":[{"box":[x0,y0,x1,y1],"label","score"}]}
//   POST /segment {"width","height","pixels_b64","box":[..],"clicks":[{"x","y","positive"}]}
//                 -> {"prob_b64"}
//   GET  /health  -> {"status":"ok","model":string}
// Pixel payloads are base64 of little-endian float32, row-major.
// Decoders throw Error(InvalidArgument) on malformed bodies; servers answer 422.

namespace limis::wire {

namespace detail {

inline const nlohmann::json& field(const nlohmann::json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) {
        throw Error(ErrorCode::InvalidArgument, std::string("missing field '") + key + "'");
    }
    return j.at(key);
}

template <typename T>
T get(const nlohmann::json& j, const char* key) {
    try {
        return field(j, key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("bad field '") + key + "': " + e.what());
    }
}

inline BBox box_from(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 4) throw Error(ErrorCode::InvalidArgument, "box must be [x0,y0,x1,y1]");
    try {
        return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
    } catch (const nlohmann::json::exception&) {
        throw Error(ErrorCode::InvalidArgument, "box entries must be integers");
    }
}

inline nlohmann::json box_to(const BBox& b) { return nlohmann::json::array({b.x0, b.y0, b.x1, b.y1}); }

inline FloatGrid image_from(const nlohmann::json& j) {
    const int width = get<int>(j, "width");
    const int height = get<int>(j, "height");
    if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidArgument, "width/height must be positive");
    auto pixels = limis::detail::decode_floats_b64(get<std::string>(j, "pixels_b64"));
    if (pixels.size() != static_cast<std::size_t>(width) * height) {
        throw Error(ErrorCode::InvalidArgument, "pixel count does not match width*height");
    }
    return FloatGrid(width, height, std::move(pixels));
}

} // namespace detail

using detail::box_from;
using detail::box_to;

inline nlohmann::json detect_request(const NormImage& image, const std::vector<std::string>& labels) {
    return {{"width", image.width()},
            {"height", image.height()},
            {"pixels_b64", limis::detail::encode_floats_b64(image.data())},
            {"labels", labels}};
}

struct DetectRequest {
    NormImage image;
    std::vector<std::string> labels;
};

inline DetectRequest parse_detect_request(const nlohmann::json& j) {
    return {detail::image_from(j), detail::get<std::vector<std::string>>(j, "labels")};
}

inline nlohmann::json detect_response(const std::vector<Detection>& dets) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& d : dets) arr.push_back({{"box", box_to(d.box)}, {"label", d.label}, {"score", d.score}});
    return {{"detections", arr}};
}

inline std::vector<Detection> parse_detect_response(const nlohmann::json& j) {
    std::vector<Detection> out;
    for (const auto& d : detail::field(j, "detections")) {
        out.push_back({box_from(detail::field(d, "box")), detail::get<std::string>(d, "label"),
                       detail::get<double>(d, "score")});
    }
    return out;
}

inline nlohmann::json segment_request(const SegmentPrompt& p) {
    nlohmann::json clicks = nlohmann::json::array();
    for (const auto& c : p.clicks) clicks.push_back({{"x", c.x}, {"y", c.y}, {"positive", c.positive}});
    return {{"width", p.image.width()},
            {"height", p.image.height()},
            {"pixels_b64", limis::detail::encode_floats_b64(p.image.data())},
            {"box", box_to(p.box)},
            {"clicks", clicks}};
}

inline SegmentPrompt parse_segment_request(const nlohmann::json& j) {
    SegmentPrompt p;
    p.image = detail::image_from(j);
    p.box = box_from(detail::field(j, "box"));
    if (j.contains("clicks")) {
        for (const auto& c : j.at("clicks")) {
            p.clicks.push_back({detail::get<int>(c, "x"), detail::get<int>(c, "y"), detail::get<bool>(c, "positive")});
        }
    }
    p.validate();
    return p;
}

inline nlohmann::json segment_response(const ProbMask& prob) {
    return {{"prob_b64", limis::detail::encode_floats_b64(prob.data())}};
}

inline ProbMask parse_segment_response(const nlohmann::json& j, int width, int height) {
    auto values = limis::detail::decode_floats_b64(detail::get<std::string>(j, "prob_b64"));
    if (values.size() != static_cast<std::size_t>(width) * height) {
        throw Error(ErrorCode::InvalidArgument, "segment response has the wrong number of values");
    }
    return ProbMask(width, height, std::move(values));
}

} // namespace limis::wire
