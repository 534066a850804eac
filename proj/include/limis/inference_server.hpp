#pragma once

#include <atomic>
#include <memory>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "limis/backend.hpp"
#include "limis/wire.hpp"

namespace limis {

/// Stub model: no detections, and probability 1 inside the prompt box, 0
/// elsewhere (click contract applied on top).
class StubBackend : public Backend {
  public:
    std::vector<Detection> detect(const NormImage&, const std::vector<std::string>&) const override { return {}; }

    ProbMask segment(const SegmentPrompt& prompt) const override {
        prompt.validate();
        ProbMask prob(prompt.image.width(), prompt.image.height(), 0.0f);
        for (int y = prompt.box.y0; y < prompt.box.y1; ++y) {
            for (int x = prompt.box.x0; x < prompt.box.x1; ++x) prob(x, y) = 1.0f;
        }
        enforce_click_contract(prob, prompt.clicks);
        return prob;
    }

    std::string name() const override { return "stub"; }
};

/// Registers /health, /detect and /segment on `server`, answering with `backend`.
/// `ready` lets callers simulate a model that is still loading (503).
inline void mount_inference_routes(httplib::Server& server, std::shared_ptr<const Backend> backend,
                                   std::shared_ptr<std::atomic<bool>> ready = nullptr) {
    if (!ready) ready = std::make_shared<std::atomic<bool>>(true);
    auto reply_json = [](httplib::Response& res, int status, const nlohmann::json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    };
    server.Get("/health", [backend, ready, reply_json](const httplib::Request&, httplib::Response& res) {
        if (!ready->load()) return reply_json(res, 503, {{"status", "loading"}, {"model", backend->name()}});
        reply_json(res, 200, {{"status", "ok"}, {"model", backend->name()}});
    });
    auto handle = [backend, ready, reply_json](const httplib::Request& req, httplib::Response& res, bool detect) {
        if (!ready->load()) return reply_json(res, 503, {{"error", "model loading"}});
        nlohmann::json body;
        try {
            body = nlohmann::json::parse(req.body);
        } catch (const nlohmann::json::exception& e) {
            return reply_json(res, 422, {{"error", std::string("invalid JSON: ") + e.what()}});
        }
        try {
            if (detect) {
                const auto request = wire::parse_detect_request(body);
                for (const auto& label : request.labels) default_vocabulary().require(label);
                reply_json(res, 200, wire::detect_response(backend->detect(request.image, request.labels)));
            } else {
                reply_json(res, 200, wire::segment_response(backend->segment(wire::parse_segment_request(body))));
            }
        } catch (const Error& e) {
            const int status = e.code() == ErrorCode::BackendUnavailable ? 503 : 422;
            reply_json(res, status, {{"error", e.what()}});
        }
    };
    server.Post("/detect", [handle](const httplib::Request& req, httplib::Response& res) { handle(req, res, true); });
    server.Post("/segment", [handle](const httplib::Request& req, httplib::Response& res) { handle(req, res, false); });
}

} // namespace limis
