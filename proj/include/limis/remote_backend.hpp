#pragma once

#include <chrono>
#include <condition_variable>
#include <mutex>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "limis/backend.hpp"
#include "limis/wire.hpp"

namespace limis {

struct RemoteConfig {
    std::string url = "http://127.0.0.1:8765";
    std::chrono::seconds timeout{30};
    int max_in_flight = 4;
};

/// Backend that forwards to an inference server speaking the wire protocol.
/// Connection failures, timeouts, non-200 answers and malformed bodies all
/// surface as BackendUnavailable.
class RemoteBackend : public Backend {
  public:
    explicit RemoteBackend(RemoteConfig config) : config_(std::move(config)), free_slots_(config_.max_in_flight) {
        if (config_.max_in_flight < 1) throw Error(ErrorCode::InvalidArgument, "pool size must be >= 1");
    }

    std::vector<Detection> detect(const NormImage& image, const std::vector<std::string>& labels) const override {
        const auto body = post("/detect", wire::detect_request(image, labels));
        try {
            auto dets = wire::parse_detect_response(body);
            for (auto& d : dets) d.score = std::clamp(d.score, 0.0, 1.0);
            sort_detections(dets);
            return dets;
        } catch (const Error& e) {
            throw Error(ErrorCode::BackendUnavailable, std::string("malformed /detect reply: ") + e.what());
        }
    }

    ProbMask segment(const SegmentPrompt& prompt) const override {
        prompt.validate();
        const auto body = post("/segment", wire::segment_request(prompt));
        ProbMask prob;
        try {
            prob = wire::parse_segment_response(body, prompt.image.width(), prompt.image.height());
        } catch (const Error& e) {
            throw Error(ErrorCode::BackendUnavailable, std::string("malformed /segment reply: ") + e.what());
        }
        clamp_unit(prob);
        enforce_click_contract(prob, prompt.clicks);
        return prob;
    }

    /// Model identity reported by /health.
    std::string health() const {
        Slot slot(*this);
        auto client = make_client();
        auto res = client.Get("/health");
        if (!res || res->status != 200) throw unavailable("/health", res);
        try {
            return nlohmann::json::parse(res->body).at("model").get<std::string>();
        } catch (const std::exception& e) {
            throw Error(ErrorCode::BackendUnavailable, std::string("malformed /health reply: ") + e.what());
        }
    }

    std::string name() const override { return "remote:" + config_.url; }

  private:
    class Slot {
      public:
        explicit Slot(const RemoteBackend& owner) : owner_(owner) {
            std::unique_lock lock(owner_.mutex_);
            owner_.cv_.wait(lock, [&] { return owner_.free_slots_ > 0; });
            --owner_.free_slots_;
        }
        ~Slot() {
            {
                std::lock_guard lock(owner_.mutex_);
                ++owner_.free_slots_;
            }
            owner_.cv_.notify_one();
        }
        Slot(const Slot&) = delete;
        Slot& operator=(const Slot&) = delete;

      private:
        const RemoteBackend& owner_;
    };

    httplib::Client make_client() const {
        httplib::Client client(config_.url);
        const auto secs = static_cast<time_t>(config_.timeout.count());
        client.set_connection_timeout(secs, 0);
        client.set_read_timeout(secs, 0);
        client.set_write_timeout(secs, 0);
        return client;
    }

    static Error unavailable(const std::string& path, const httplib::Result& res) {
        if (!res) return Error(ErrorCode::BackendUnavailable, path + ": " + httplib::to_string(res.error()));
        return Error(ErrorCode::BackendUnavailable, path + " answered HTTP " + std::to_string(res->status));
    }

    nlohmann::json post(const std::string& path, const nlohmann::json& body) const {
        Slot slot(*this);
        auto client = make_client();
        auto res = client.Post(path, body.dump(), "application/json");
        if (!res || res->status != 200) throw unavailable(path, res);
        try {
            return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::BackendUnavailable, path + " returned invalid JSON: " + e.what());
        }
    }

    RemoteConfig config_;
    mutable std::mutex mutex_;
    mutable std::condition_variable cv_;
    mutable int free_slots_;
};

} // namespace limis
