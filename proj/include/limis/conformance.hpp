#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "limis/detail/base64.hpp"
#include "limis/wire.hpp"

namespace limis {

struct ConformanceCheck {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Wire-protocol conformance checks against a running inference server.
/// Model-specific behaviour is only checked for servers whose /health model
/// name contains "stub".
inline std::vector<ConformanceCheck> run_conformance(const std::string& url,
                                                     std::chrono::seconds timeout = std::chrono::seconds(30)) {
    std::vector<ConformanceCheck> out;
    httplib::Client client(url);
    client.set_connection_timeout(static_cast<time_t>(timeout.count()), 0);
    client.set_read_timeout(static_cast<time_t>(timeout.count()), 0);

    auto record = [&](const std::string& name, const std::function<std::string()>& body) {
        try {
            const std::string failure = body();
            out.push_back({name, failure.empty(), failure});
        } catch (const std::exception& e) {
            out.push_back({name, false, e.what()});
        }
    };

    const int w = 16, h = 12;
    NormImage image(w, h, 0.0f);
    for (int y = 3; y < 9; ++y) {
        for (int x = 4; x < 12; ++x) image(x, y) = 0.525f;
    }
    std::string model;

    record("health reports status ok and a model name", [&]() -> std::string {
        auto res = client.Get("/health");
        if (!res) return "no response: " + httplib::to_string(res.error());
        if (res->status != 200) return "HTTP " + std::to_string(res->status);
        const auto doc = nlohmann::json::parse(res->body);
        if (doc.value("status", "") != "ok") return "status is not \"ok\"";
        if (!doc.contains("model") || !doc.at("model").is_string()) return "model is not a string";
        model = doc.at("model").get<std::string>();
        return "";
    });

    record("detect returns scored boxes for requested labels", [&]() -> std::string {
        const std::vector<std::string> labels{"liver"};
        auto res = client.Post("/detect", wire::detect_request(image, labels).dump(), "application/json");
        if (!res) return "no response";
        if (res->status != 200) return "HTTP " + std::to_string(res->status);
        const auto dets = wire::parse_detect_response(nlohmann::json::parse(res->body));
        for (std::size_t i = 0; i < dets.size(); ++i) {
            const auto& d = dets[i];
            if (d.label != "liver") return "unrequested label " + d.label;
            if (!(d.score >= 0.0 && d.score <= 1.0)) return "score outside [0,1]";
            if (!d.box.valid() || d.box.x0 < 0 || d.box.y0 < 0 || d.box.x1 > w || d.box.y1 > h) {
                return "box outside the image";
            }
            if (i > 0 && dets[i - 1].score < d.score) return "detections not sorted by score";
        }
        return "";
    });

    SegmentPrompt prompt{image, BBox{4, 3, 12, 9}, {Click{1, 1, true}, Click{6, 5, false}}};
    record("segment returns a same-shape probability map honoring clicks", [&]() -> std::string {
        auto res = client.Post("/segment", wire::segment_request(prompt).dump(), "application/json");
        if (!res) return "no response";
        if (res->status != 200) return "HTTP " + std::to_string(res->status);
        const auto prob = wire::parse_segment_response(nlohmann::json::parse(res->body), w, h);
        for (float p : prob.data()) {
            if (!(p >= 0.0f && p <= 1.0f)) return "probability outside [0,1]";
        }
        if (prob(1, 1) < 0.5f + kClickContractMargin - 1e-6f) return "positive click below 0.5 + margin";
        if (!(prob(6, 5) < 0.5f)) return "negative click not below 0.5";
        return "";
    });

    if (model.find("stub") != std::string::npos) {
        record("stub segment is the box interior", [&]() -> std::string {
            SegmentPrompt plain{image, BBox{4, 3, 12, 9}, {}};
            auto res = client.Post("/segment", wire::segment_request(plain).dump(), "application/json");
            if (!res || res->status != 200) return "segment failed";
            const auto prob = wire::parse_segment_response(nlohmann::json::parse(res->body), w, h);
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const float expect = plain.box.contains(x, y) ? 1.0f : 0.0f;
                    if (prob(x, y) != expect) return "pixel (" + std::to_string(x) + "," + std::to_string(y) + ") wrong";
                }
            }
            return "";
        });
    }

    auto expect_422 = [&](const std::string& path, const std::string& body) -> std::string {
        auto res = client.Post(path, body, "application/json");
        if (!res) return "no response";
        if (res->status != 422) return "expected 422, got " + std::to_string(res->status);
        return "";
    };
    record("malformed base64 is rejected with 422", [&]() {
        auto body = wire::segment_request(prompt);
        body["pixels_b64"] = "%%%not-base64%%%";
        return expect_422("/segment", body.dump());
    });
    record("pixel count mismatch is rejected with 422", [&]() {
        auto body = wire::detect_request(image, {"liver"});
        body["width"] = w + 1;
        return expect_422("/detect", body.dump());
    });
    record("missing fields are rejected with 422", [&]() { return expect_422("/segment", R"({"width": 4})"); });
    record("non-JSON body is rejected with 422", [&]() { return expect_422("/detect", "not json"); });
    return out;
}

} // namespace limis
