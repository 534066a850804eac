#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "limis/command_parser.hpp"
#include "limis/engine.hpp"
#include "limis/mask_codec.hpp"
#include "limis/metrics.hpp"
#include "limis/phantom.hpp"
#include "limis/png.hpp"
#include "limis/remote_backend.hpp"
#include "limis/synthetic_backend.hpp"
#include "limis/volume_io.hpp"

namespace limis {

struct ServiceConfig {
    std::string default_backend = "synthetic";
    RemoteConfig remote;
    EngineConfig engine;
    SyntheticConfig synthetic;
    std::string data_dir;   ///< session exports are written here when non-empty
    std::string static_dir; ///< web UI bundle served at / when non-empty
};

/// HTTP status plus either a JSON body or raw bytes.
struct ApiResponse {
    int status = 200;
    nlohmann::json body;
    std::string bytes;
    std::string content_type = "application/json";

    ApiResponse() = default;
    ApiResponse(int s, nlohmann::json b) : status(s), body(std::move(b)) {}
    ApiResponse(int s, std::string raw, std::string type)
        : status(s), bytes(std::move(raw)), content_type(std::move(type)) {}
};

inline int http_status(ErrorCode code) {
    switch (code) {
    case ErrorCode::ParseError:
    case ErrorCode::AmbiguousLabel:
    case ErrorCode::BadMagic:
    case ErrorCode::UnsupportedDatatype:
    case ErrorCode::UnsupportedDims:
    case ErrorCode::TruncatedFile: return 400;
    case ErrorCode::UnknownStep:
    case ErrorCode::MissingGroundTruth: return 404;
    case ErrorCode::StaleProposal: return 409;
    case ErrorCode::BackendUnavailable: return 503;
    default: return 422;
    }
}

/// REST façade over the engine. Each handler is a plain method so it can be
/// exercised without a socket; mount() wires them to routes. Sessions are
/// guarded individually, so a slow backend call only blocks its own session.
class Service {
  public:
    explicit Service(ServiceConfig config = {})
        : config_(std::move(config)), synthetic_(std::make_shared<SyntheticBackend>(config_.synthetic)) {}

    const ServiceConfig& config() const noexcept { return config_; }

    // POST /v1/images
    ApiResponse post_image(const std::string& body, const std::string& content_type) {
        return guarded([&] {
            auto img = std::make_shared<StoredImage>();
            const auto first = body.find_first_not_of(" \t\r\n");
            if (content_type.find("json") != std::string::npos || (first != std::string::npos && body[first] == '{')) {
                PhantomScene scene;
                try {
                    scene = nlohmann::json::parse(body).get<PhantomScene>();
                } catch (const nlohmann::json::exception& e) {
                    throw Error(ErrorCode::ParseError, std::string("invalid scene JSON: ") + e.what());
                }
                auto rendered = render_phantom(scene);
                img->volume = std::move(rendered.volume);
                img->truth = std::move(rendered.truth);
                img->source = "phantom";
            } else {
                const auto* p = reinterpret_cast<const std::uint8_t*>(body.data());
                img->volume = nifti::read(std::span<const std::uint8_t>(p, body.size()));
                img->source = "nifti";
            }
            std::unique_lock lock(mutex_);
            img->id = "img" + std::to_string(++image_counter_);
            images_[img->id] = img;
            return ApiResponse(200, image_summary(*img));
        });
    }

    // GET /v1/images/{id}/slices/{z}.png
    ApiResponse get_slice_png(const std::string& image_id, int z, const std::optional<WindowSpec>& window) {
        return guarded([&] {
            const auto img = find_image(image_id);
            const HuImage slice = slice_transversal(img->volume, z);
            const NormImage norm = window_normalize(slice, window.value_or(config_.engine.presets.default_window()));
            png::GrayImage g{norm.width(), norm.height(), 8, {}};
            for (float v : norm.data()) g.samples.push_back(static_cast<std::uint16_t>(std::lround(v * 255.0f)));
            const auto bytes = png::encode(g);
            return ApiResponse(200, std::string(bytes.begin(), bytes.end()), "image/png");
        });
    }

    // POST /v1/sessions
    ApiResponse post_session(const nlohmann::json& req) {
        return guarded([&] {
            const auto image_id = field<std::string>(req, "image_id");
            const int z = req.value("slice", 0);
            const auto label = field<std::string>(req, "target_label");
            default_vocabulary().require(label);
            const auto backend = backend_for(req.value("backend", config_.default_backend));
            const auto img = find_image(image_id);
            auto slice = std::make_shared<const HuImage>(slice_transversal(img->volume, z));
            std::optional<BBox> box;
            if (req.contains("box")) box = engine_detail::box_from(req.at("box"));

            std::string id;
            {
                std::unique_lock lock(mutex_);
                id = "s" + std::to_string(++session_counter_);
            }
            auto entry = std::make_shared<SessionEntry>(Session(id, slice, label, backend, config_.engine));
            entry->session.metadata() = {{"image_id", image_id}, {"slice", z}};
            if (img->truth) entry->session.attach_ground_truth(img->truth->mask(z, label));
            entry->session.initialize(box);
            {
                std::unique_lock lock(mutex_);
                sessions_[id] = entry;
            }
            persist(entry->session);
            const auto& s0 = entry->session.step(0);
            nlohmann::json dets = nlohmann::json::array();
            for (const auto& d : entry->session.detections()) {
                dets.push_back({{"box", engine_detail::box_json(d.box)}, {"label", d.label}, {"score", d.score}});
            }
            return ApiResponse{200,
                               {{"session_id", id},
                                {"step", 0},
                                {"mask_rle", mask_to_rle(s0.state.mask)},
                                {"box", engine_detail::box_json(s0.state.box)},
                                {"detections", dets},
                                {"detected", entry->session.detected()}}};
        });
    }

    // POST /v1/sessions/{id}/command
    ApiResponse post_command(const std::string& session_id, const nlohmann::json& req) {
        const auto text = req.is_object() && req.contains("text") && req.at("text").is_string()
                              ? req.at("text").get<std::string>()
                              : std::string();
        {
            std::shared_lock lock(mutex_);
            if (!sessions_.count(session_id)) {
                return ApiResponse(404, nlohmann::json{{"error", "unknown session '" + session_id + "'"}});
            }
        }
        InteractionCommand command;
        try {
            command = parse_command(text);
        } catch (const CommandError& e) {
            return ApiResponse(400, nlohmann::json{{"error", e.what()},
                          {"parse_error", {{"message", e.what()}, {"suggestions", e.suggestions()}}}});
        } catch (const Error& e) {
            return ApiResponse(http_status(e.code()), nlohmann::json{{"error", e.what()}, {"parse_error", {{"message", e.what()}}}});
        }
        return with_session(session_id, [&](Session& s) {
            const CommandOutcome out = s.apply_command(command);
            nlohmann::json body = step_summary(s, out.step_id);
            body["command"] = out.command;
            body["rendered"] = render(command);
            if (!out.critical_points.empty() || std::holds_alternative<cmd::ProposeCriticalPoints>(command)) {
                nlohmann::json pts = nlohmann::json::array();
                for (std::size_t i = 0; i < out.critical_points.size(); ++i) {
                    const auto& p = out.critical_points[i];
                    pts.push_back({{"index", i + 1}, {"x", p.x}, {"y", p.y}, {"ambiguity", p.ambiguity}});
                }
                body["critical_points"] = pts;
            }
            if (!out.previews.empty()) {
                nlohmann::json previews = nlohmann::json::array();
                for (const auto& p : out.previews) {
                    previews.push_back({{"command", p.command}, {"op", p.op.kind}, {"mask_rle", mask_to_rle(p.mask)}});
                }
                body["previews"] = previews;
            }
            if (!out.message.empty()) body["message"] = out.message;
            return body;
        });
    }

    // GET /v1/sessions/{id}
    ApiResponse get_session(const std::string& session_id) {
        return with_session_read(session_id, [](const Session& s) { return s.export_json(); });
    }

    // GET /v1/sessions/{id}/steps/{n}/mask.png
    ApiResponse get_mask_png(const std::string& session_id, int step) {
        return guarded([&] {
            auto entry = find_session(session_id);
            std::lock_guard lock(entry->mutex);
            const auto bytes = mask_to_png(entry->session.step(step).state.mask);
            return ApiResponse(200, std::string(bytes.begin(), bytes.end()), "image/png");
        });
    }

    // POST /v1/sessions/{id}/accept
    ApiResponse post_accept(const std::string& session_id) {
        return with_session(session_id, [&](Session& s) {
            s.accept();
            return step_summary(s, std::nullopt);
        });
    }

    // POST /v1/sessions/{id}/revert {to}
    ApiResponse post_revert(const std::string& session_id, const nlohmann::json& req) {
        return with_session(session_id, [&](Session& s) {
            s.revert_to(field<int>(req, "to"));
            return step_summary(s, std::nullopt);
        });
    }

    // POST /v1/sessions/{id}/final {step}
    ApiResponse post_final(const std::string& session_id, const nlohmann::json& req) {
        return with_session(session_id, [&](Session& s) {
            s.select_final(field<int>(req, "step"));
            return step_summary(s, std::nullopt);
        });
    }

    // GET /v1/sessions/{id}/trajectory
    ApiResponse get_trajectory(const std::string& session_id) {
        return with_session_read(session_id,
                                 [](const Session& s) { return trajectory_json(dice_trajectory(s.export_json())); });
    }

    void mount(httplib::Server& server) {
        auto send = [](httplib::Response& res, const ApiResponse& r) {
            res.status = r.status;
            if (r.content_type == "application/json") {
                res.set_content(r.body.dump(), "application/json");
            } else {
                res.set_content(r.bytes, r.content_type);
            }
        };
        auto parse = [](const httplib::Request& req) -> std::optional<nlohmann::json> {
            if (req.body.empty()) return nlohmann::json::object();
            try {
                return nlohmann::json::parse(req.body);
            } catch (const nlohmann::json::exception&) {
                return std::nullopt;
            }
        };
        auto bad_json = ApiResponse(400, nlohmann::json{{"error", "request body is not valid JSON"}});

        server.Post("/v1/images", [this, send](const httplib::Request& req, httplib::Response& res) {
            send(res, post_image(req.body, req.get_header_value("Content-Type")));
        });
        server.Get(R"(/v1/images/([^/]+)/slices/(\d+)\.png)", [this, send](const httplib::Request& req,
                                                                          httplib::Response& res) {
            std::optional<WindowSpec> w;
            if (req.has_param("center") && req.has_param("width")) {
                try {
                    w = WindowSpec{std::stod(req.get_param_value("center")), std::stod(req.get_param_value("width"))};
                } catch (const std::exception&) {
                    return send(res, ApiResponse(400, nlohmann::json{{"error", "center/width must be numbers"}}));
                }
            }
            send(res, get_slice_png(req.matches[1], std::stoi(req.matches[2]), w));
        });
        server.Post("/v1/sessions", [this, send, parse, bad_json](const httplib::Request& req, httplib::Response& res) {
            auto j = parse(req);
            send(res, j ? post_session(*j) : bad_json);
        });
        server.Post(R"(/v1/sessions/([^/]+)/command)",
                    [this, send, parse, bad_json](const httplib::Request& req, httplib::Response& res) {
                        auto j = parse(req);
                        send(res, j ? post_command(req.matches[1], *j) : bad_json);
                    });
        server.Get(R"(/v1/sessions/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
            send(res, get_session(req.matches[1]));
        });
        server.Get(R"(/v1/sessions/([^/]+)/steps/(\d+)/mask\.png)",
                   [this, send](const httplib::Request& req, httplib::Response& res) {
                       send(res, get_mask_png(req.matches[1], std::stoi(req.matches[2])));
                   });
        server.Post(R"(/v1/sessions/([^/]+)/accept)", [this, send](const httplib::Request& req, httplib::Response& res) {
            send(res, post_accept(req.matches[1]));
        });
        server.Post(R"(/v1/sessions/([^/]+)/revert)",
                    [this, send, parse, bad_json](const httplib::Request& req, httplib::Response& res) {
                        auto j = parse(req);
                        send(res, j ? post_revert(req.matches[1], *j) : bad_json);
                    });
        server.Post(R"(/v1/sessions/([^/]+)/final)",
                    [this, send, parse, bad_json](const httplib::Request& req, httplib::Response& res) {
                        auto j = parse(req);
                        send(res, j ? post_final(req.matches[1], *j) : bad_json);
                    });
        server.Get(R"(/v1/sessions/([^/]+)/trajectory)",
                   [this, send](const httplib::Request& req, httplib::Response& res) {
                       send(res, get_trajectory(req.matches[1]));
                   });
        if (!config_.static_dir.empty()) server.set_mount_point("/", config_.static_dir);
    }

  private:
    struct StoredImage {
        std::string id;
        Volume volume;
        std::optional<GroundTruth> truth;
        std::string source;
    };

    struct SessionEntry {
        explicit SessionEntry(Session s) : session(std::move(s)) {}
        std::mutex mutex;
        Session session;
    };

    struct NotFound {
        std::string what;
    };

    template <typename T>
    static T field(const nlohmann::json& j, const char* key) {
        if (!j.is_object() || !j.contains(key)) throw Error(ErrorCode::InvalidArgument, std::string("missing '") + key + "'");
        try {
            return j.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw Error(ErrorCode::InvalidArgument, std::string("bad '") + key + "'");
        }
    }

    static nlohmann::json image_summary(const StoredImage& img) {
        nlohmann::json j{{"image_id", img.id},
                         {"width", img.volume.dims[0]},
                         {"height", img.volume.dims[1]},
                         {"slices", img.volume.dims[2]},
                         {"source", img.source}};
        if (img.truth) {
            nlohmann::json labels = nlohmann::json::array();
            for (int z = 0; z < img.truth->slices(); ++z) labels.push_back(img.truth->labels_on(z));
            j["labels_per_slice"] = labels;
        }
        return j;
    }

    static nlohmann::json step_summary(const Session& s, std::optional<int> step_id) {
        nlohmann::json body{{"cursor", s.cursor()},
                            {"final", s.final_step() ? nlohmann::json(*s.final_step()) : nlohmann::json(nullptr)},
                            {"step_id", step_id ? nlohmann::json(*step_id) : nlohmann::json(nullptr)}};
        const auto& step = s.step(step_id.value_or(s.cursor()));
        body["parent_id"] = step.parent ? nlohmann::json(*step.parent) : nlohmann::json(nullptr);
        body["op"] = step.state.op.kind;
        body["mask_rle"] = mask_to_rle(step.state.mask);
        body["box"] = engine_detail::box_json(step.state.box);
        body["tau"] = step.state.tau;
        body["window"] = engine_detail::window_json(step.state.window);
        if (s.has_ground_truth()) body["dice"] = s.dice_log()[static_cast<std::size_t>(step.id)];
        if (s.script()) {
            body["strategy"] = {{"name", strategy_name(s.script()->strategy)}, {"remaining", s.script()->remaining()}};
        }
        return body;
    }

    template <typename F>
    ApiResponse guarded(F&& f) {
        try {
            return f();
        } catch (const NotFound& e) {
            return ApiResponse(404, nlohmann::json{{"error", e.what}});
        } catch (const Error& e) {
            return ApiResponse(http_status(e.code()),
                               nlohmann::json{{"error", e.what()}, {"code", std::string(to_string(e.code()))}});
        } catch (const std::exception& e) {
            return ApiResponse(500, nlohmann::json{{"error", e.what()}});
        }
    }

    std::shared_ptr<StoredImage> find_image(const std::string& id) const {
        std::shared_lock lock(mutex_);
        auto it = images_.find(id);
        if (it == images_.end()) throw NotFound{"unknown image '" + id + "'"};
        return it->second;
    }

    std::shared_ptr<SessionEntry> find_session(const std::string& id) const {
        std::shared_lock lock(mutex_);
        auto it = sessions_.find(id);
        if (it == sessions_.end()) throw NotFound{"unknown session '" + id + "'"};
        return it->second;
    }

    std::shared_ptr<const Backend> backend_for(const std::string& name) {
        if (name == "synthetic") return synthetic_;
        if (name == "remote") {
            std::unique_lock lock(mutex_);
            if (!remote_) remote_ = std::make_shared<RemoteBackend>(config_.remote);
            return remote_;
        }
        throw Error(ErrorCode::InvalidArgument, "backend must be \"synthetic\" or \"remote\"");
    }

    template <typename F>
    ApiResponse with_session(const std::string& id, F&& f) {
        return guarded([&] {
            auto entry = find_session(id);
            std::lock_guard lock(entry->mutex);
            ApiResponse r(200, nlohmann::json(f(entry->session)));
            persist(entry->session);
            return r;
        });
    }

    template <typename F>
    ApiResponse with_session_read(const std::string& id, F&& f) {
        return guarded([&] {
            auto entry = find_session(id);
            std::lock_guard lock(entry->mutex);
            return ApiResponse(200, nlohmann::json(f(entry->session)));
        });
    }

    void persist(const Session& s) const {
        if (config_.data_dir.empty()) return;
        const std::filesystem::path dir = std::filesystem::path(config_.data_dir) / "sessions";
        std::filesystem::create_directories(dir);
        const auto path = dir / (s.id() + ".json");
        const auto tmp = path.string() + ".tmp";
        {
            std::ofstream f(tmp, std::ios::trunc);
            if (!f) throw Error(ErrorCode::IoError, "cannot write " + tmp);
            f << s.export_json().dump(1) << "\n";
        }
        std::filesystem::rename(tmp, path);
    }

    ServiceConfig config_;
    std::shared_ptr<SyntheticBackend> synthetic_;
    std::shared_ptr<RemoteBackend> remote_;
    mutable std::shared_mutex mutex_;
    std::map<std::string, std::shared_ptr<StoredImage>> images_;
    std::map<std::string, std::shared_ptr<SessionEntry>> sessions_;
    std::uint64_t image_counter_ = 0;
    std::uint64_t session_counter_ = 0;
};

} // namespace limis
