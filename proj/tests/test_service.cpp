#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "limis/conformance.hpp"
#include "limis/inference_server.hpp"
#include "limis/remote_backend.hpp"
#include "limis/service.hpp"
#include "scenarios.hpp"

using namespace limis;

namespace {

template <typename F>
std::optional<ErrorCode> code_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return std::nullopt;
}

/// An httplib server on an ephemeral loopback port, stopped on destruction.
class TestServer {
  public:
    template <typename F>
    explicit TestServer(F&& mount) {
        mount(server_);
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~TestServer() {
        server_.stop();
        thread_.join();
    }
    TestServer(const TestServer&) = delete;
    TestServer& operator=(const TestServer&) = delete;

    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
    int port() const { return port_; }

  private:
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
};

/// A port nothing listens on: bind, remember, close.
int closed_port() {
    httplib::Server probe;
    const int port = probe.bind_to_any_port("127.0.0.1");
    probe.stop();
    return port;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string scene_json() { return read_file(std::string(LIMIS_SOURCE_DIR) + "/data/scenes/liver_bladder.json"); }

nlohmann::json without_identity(nlohmann::json doc) {
    doc.erase("session_id");
    doc.erase("metadata");
    doc.erase("backend");
    return doc;
}

RemoteConfig remote_at(const std::string& url, int seconds = 5, int pool = 4) {
    RemoteConfig cfg;
    cfg.url = url;
    cfg.timeout = std::chrono::seconds(seconds);
    cfg.max_in_flight = pool;
    return cfg;
}

} // namespace

// --- wire format ---------------------------------------------------------------------

TEST(Wire, FloatsAreLittleEndianFloat32Base64) {
    NormImage img(2, 1);
    img(0, 0) = 1.0f;
    img(1, 0) = -2.5f;
    const auto j = wire::detect_request(img, {"liver"});
    // 1.0f = 00 00 80 3f, -2.5f = 00 00 20 c0
    EXPECT_EQ(j["pixels_b64"], "AACAPwAAIMA=");
    EXPECT_EQ(j["width"], 2);
    EXPECT_EQ(j["height"], 1);
    EXPECT_EQ(j["labels"], nlohmann::json::array({"liver"}));
}

TEST(Wire, RequestsAndResponsesRoundTrip) {
    detail::Rng rng(4);
    for (int i = 0; i < 20; ++i) {
        const int w = static_cast<int>(rng.uniform_int(1, 20)), h = static_cast<int>(rng.uniform_int(1, 20));
        NormImage img(w, h);
        for (auto& v : img.data()) v = static_cast<float>(rng.uniform());
        SegmentPrompt p{img, BBox{0, 0, w, h}, {Click{w - 1, h - 1, true}, Click{0, 0, false}}};
        const auto back = wire::parse_segment_request(nlohmann::json::parse(wire::segment_request(p).dump()));
        EXPECT_EQ(back.image, p.image);
        EXPECT_EQ(back.box, p.box);
        EXPECT_EQ(back.clicks, p.clicks);
        const auto dr = wire::parse_detect_request(wire::detect_request(img, {"spleen", "colon"}));
        EXPECT_EQ(dr.image, img);
        EXPECT_EQ(dr.labels.size(), 2u);
        std::vector<Detection> dets{{{0, 0, 1, 1}, "spleen", 0.25}, {{1, 2, 3, 4}, "colon", 1.0 / 3.0}};
        EXPECT_EQ(wire::parse_detect_response(nlohmann::json::parse(wire::detect_response(dets).dump())), dets);
        EXPECT_EQ(wire::parse_segment_response(wire::segment_response(img), w, h), img);
    }
}

TEST(Wire, MalformedMessagesAreRejected) {
    const NormImage img(3, 2, 0.5f);
    auto j = wire::segment_request({img, {0, 0, 3, 2}, {}});
    auto mutate = [&](auto f) {
        auto copy = j;
        f(copy);
        return code_of([&] { wire::parse_segment_request(copy); });
    };
    EXPECT_EQ(mutate([](auto& m) { m["pixels_b64"] = "%%%"; }), ErrorCode::InvalidArgument);
    EXPECT_EQ(mutate([](auto& m) { m["width"] = 4; }), ErrorCode::InvalidArgument);
    EXPECT_EQ(mutate([](auto& m) { m.erase("box"); }), ErrorCode::InvalidArgument);
    EXPECT_EQ(mutate([](auto& m) { m["box"] = {0, 0, 4, 2}; }), ErrorCode::InvalidArgument);
    EXPECT_EQ(mutate([](auto& m) { m["clicks"] = {{{"x", 9}, {"y", 0}, {"positive", true}}}; }), ErrorCode::InvalidArgument);
    EXPECT_EQ(mutate([](auto& m) { m["height"] = "two"; }), ErrorCode::InvalidArgument);
    EXPECT_EQ(code_of([&] { wire::parse_segment_response({{"prob_b64", "AACAPw=="}}, 3, 2); }), ErrorCode::InvalidArgument);
    EXPECT_EQ(code_of([&] { wire::parse_detect_response({{"detections", {{{"box", {1, 2}}}}}}); }),
              ErrorCode::InvalidArgument);
}

// --- inference server and remote backend ------------------------------------------

TEST(Remote, MatchesTheInProcessBackendBitForBit) {
    auto synthetic = std::make_shared<SyntheticBackend>();
    TestServer server([&](httplib::Server& s) { mount_inference_routes(s, synthetic); });
    RemoteBackend remote(remote_at(server.url()));
    EXPECT_EQ(remote.health(), "synthetic");

    const auto c = scenario::make_case(scenario::e2e_corpus(1, 5).front());
    const NormImage det_in = window_normalize(*c.image, synthetic->config().detector_window);
    EXPECT_EQ(remote.detect(det_in, {c.label}), synthetic->detect(det_in, {c.label}));

    Session local = scenario::open(c, synthetic);
    Session over = scenario::open(c, std::make_shared<RemoteBackend>(remote_at(server.url())));
    for (const char* text : {"apply default", "accept", "foreground click in cell 5", "accept", "ensemble",
                             "threshold 0.3", "target oversegmented"}) {
        local.apply_text(text);
        over.apply_text(text);
    }
    EXPECT_EQ(without_identity(local.export_json()), without_identity(over.export_json()));
}

TEST(Remote, FailuresBecomeBackendUnavailable) {
    RemoteBackend down(remote_at("http://127.0.0.1:" + std::to_string(closed_port()), 2));
    const NormImage img(4, 4, 0.5f);
    EXPECT_EQ(code_of([&] { down.detect(img, {"liver"}); }), ErrorCode::BackendUnavailable);
    EXPECT_EQ(code_of([&] { down.segment({img, {0, 0, 4, 4}, {}}); }), ErrorCode::BackendUnavailable);
    EXPECT_EQ(code_of([&] { down.health(); }), ErrorCode::BackendUnavailable);

    auto ready = std::make_shared<std::atomic<bool>>(false);
    TestServer loading([&](httplib::Server& s) { mount_inference_routes(s, std::make_shared<StubBackend>(), ready); });
    RemoteBackend early(remote_at(loading.url()));
    EXPECT_EQ(code_of([&] { early.health(); }), ErrorCode::BackendUnavailable);
    EXPECT_EQ(code_of([&] { early.segment({img, {0, 0, 4, 4}, {}}); }), ErrorCode::BackendUnavailable);
    ready->store(true);
    EXPECT_EQ(early.health(), "stub");

    TestServer garbage([](httplib::Server& s) {
        s.Post("/segment", [](const httplib::Request&, httplib::Response& res) {
            res.set_content(R"({"prob_b64": "AACAPw=="})", "application/json");
        });
        s.Post("/detect", [](const httplib::Request&, httplib::Response& res) { res.set_content("[]", "application/json"); });
    });
    RemoteBackend bad(remote_at(garbage.url()));
    EXPECT_EQ(code_of([&] { bad.segment({img, {0, 0, 4, 4}, {}}); }), ErrorCode::BackendUnavailable);
    EXPECT_EQ(code_of([&] { bad.detect(img, {"liver"}); }), ErrorCode::BackendUnavailable);
    EXPECT_EQ(code_of([] { RemoteBackend(remote_at("http://x", 1, 0)); }), ErrorCode::InvalidArgument);
}

TEST(Remote, TimesOutAndLimitsRequestsInFlight) {
    std::atomic<int> active{0}, peak{0};
    TestServer slow([&](httplib::Server& s) {
        s.new_task_queue = [] { return new httplib::ThreadPool(8); };
        s.Post("/segment", [&](const httplib::Request& req, httplib::Response& res) {
            const int now = ++active;
            int seen = peak.load();
            while (now > seen && !peak.compare_exchange_weak(seen, now)) {
            }
            const auto p = wire::parse_segment_request(nlohmann::json::parse(req.body));
            std::this_thread::sleep_for(std::chrono::milliseconds(p.image.width() > 8 ? 2500 : 150));
            --active;
            res.set_content(wire::segment_response(StubBackend{}.segment(p)).dump(), "application/json");
        });
    });
    RemoteBackend pooled(remote_at(slow.url(), 5, 2));
    std::vector<std::thread> threads;
    std::atomic<int> ok{0};
    for (int i = 0; i < 6; ++i) {
        threads.emplace_back([&] {
            const NormImage img(4, 4, 0.5f);
            if (pooled.segment({img, {1, 1, 3, 3}, {}})(1, 1) == 1.0f) ++ok;
        });
    }
    for (auto& t : threads) t.join();
    EXPECT_EQ(ok.load(), 6);
    EXPECT_LE(peak.load(), 2);
    EXPECT_GE(peak.load(), 1);

    RemoteBackend impatient(remote_at(slow.url(), 1, 1));
    const NormImage big(16, 16, 0.5f);
    EXPECT_EQ(code_of([&] { impatient.segment({big, {0, 0, 16, 16}, {}}); }), ErrorCode::BackendUnavailable);
}

TEST(Conformance, StubAndSyntheticServersPass) {
    for (std::shared_ptr<const Backend> backend :
         {std::shared_ptr<const Backend>(std::make_shared<StubBackend>()),
          std::shared_ptr<const Backend>(std::make_shared<SyntheticBackend>())}) {
        TestServer server([&](httplib::Server& s) { mount_inference_routes(s, backend); });
        const auto checks = run_conformance(server.url(), std::chrono::seconds(5));
        EXPECT_EQ(checks.size(), backend->name() == "stub" ? 8u : 7u);
        for (const auto& c : checks) EXPECT_TRUE(c.passed) << backend->name() << ": " << c.name << ": " << c.detail;
    }
}

TEST(Conformance, FlagsABrokenServer) {
    TestServer broken([](httplib::Server& s) {
        s.Get("/health", [](const httplib::Request&, httplib::Response& res) {
            res.set_content(R"({"status": "ok", "model": "stub-broken"})", "application/json");
        });
        s.Post("/segment", [](const httplib::Request&, httplib::Response& res) {
            res.set_content(R"({"prob_b64": ""})", "application/json");
        });
    });
    const auto checks = run_conformance(broken.url(), std::chrono::seconds(5));
    int failed = 0;
    for (const auto& c : checks) failed += !c.passed;
    EXPECT_GE(failed, 5);
}

TEST(Stub, SessionMaskIsTheBoxRectangle) {
    const auto c = scenario::make_case(scenario::e2e_corpus(1, 9).front());
    const BBox box{10, 12, 40, 33};
    Session s = create_session("stub", c.image, c.label, std::make_shared<StubBackend>(), {}, box);
    BinMask expect(c.image->width(), c.image->height());
    for (int y = box.y0; y < box.y1; ++y) {
        for (int x = box.x0; x < box.x1; ++x) expect(x, y) = 1;
    }
    EXPECT_EQ(s.current().state.mask, expect);
    EXPECT_FALSE(create_session("stub", c.image, c.label, std::make_shared<StubBackend>()).detected());
}

// --- REST service ------------------------------------------------------------------

class ServiceTest : public ::testing::Test {
  protected:
    Service service;
    std::string image_id;
    std::string session_id;

    void SetUp() override {
        const auto img = service.post_image(scene_json(), "application/json");
        ASSERT_EQ(img.status, 200) << img.body.dump();
        image_id = img.body["image_id"];
        const auto sess = service.post_session({{"image_id", image_id}, {"slice", 0}, {"target_label", "liver"}});
        ASSERT_EQ(sess.status, 200) << sess.body.dump();
        session_id = sess.body["session_id"];
    }

    ApiResponse command(const std::string& text) { return service.post_command(session_id, {{"text", text}}); }
};

TEST_F(ServiceTest, ImageAndSessionCreation) {
    const auto img = service.post_image(scene_json(), "application/json");
    EXPECT_EQ(img.body["width"], 128);
    EXPECT_EQ(img.body["slices"], 3);
    EXPECT_EQ(img.body["source"], "phantom");
    EXPECT_EQ(img.body["labels_per_slice"][2], nlohmann::json::array({"liver"}));

    const auto sess = service.post_session({{"image_id", image_id}, {"slice", 0}, {"target_label", "bladder"}});
    ASSERT_EQ(sess.status, 200);
    for (const char* k : {"session_id", "step", "mask_rle", "box", "detections"}) EXPECT_TRUE(sess.body.contains(k)) << k;
    EXPECT_EQ(sess.body["step"], 0);
    EXPECT_TRUE(sess.body["detected"].get<bool>());

    EXPECT_EQ(service.post_session({{"image_id", "nope"}, {"target_label", "liver"}}).status, 404);
    EXPECT_EQ(service.post_session({{"image_id", image_id}, {"target_label", "brain"}}).status, 422);
    EXPECT_EQ(service.post_session({{"image_id", image_id}, {"slice", 7}, {"target_label", "liver"}}).status, 422);
    EXPECT_EQ(service.post_session({{"image_id", image_id}}).status, 422);
    EXPECT_EQ(service.post_session({{"image_id", image_id}, {"target_label", "liver"}, {"backend", "magic"}}).status, 422);
    EXPECT_EQ(service.post_image("{\"width\": ", "application/json").status, 400);
}

TEST_F(ServiceTest, NiftiUploadAndErrors) {
    const Volume v({5, 4, 2}, {1.0, 1.0, 2.0}, std::vector<float>(40, 40.0f));
    const auto bytes = nifti::write(v);
    const auto res = service.post_image(std::string(bytes.begin(), bytes.end()), "application/octet-stream");
    ASSERT_EQ(res.status, 200);
    EXPECT_EQ(res.body["source"], "nifti");
    EXPECT_EQ(res.body["slices"], 2);
    EXPECT_FALSE(res.body.contains("labels_per_slice"));
    auto bad = bytes;
    bad[344] = 'x';
    const auto rej = service.post_image(std::string(bad.begin(), bad.end()), "application/octet-stream");
    EXPECT_EQ(rej.status, 400);
    EXPECT_EQ(rej.body["code"], "BadMagic");
    const auto sess = service.post_session({{"image_id", res.body["image_id"]}, {"slice", 1}, {"target_label", "liver"}});
    ASSERT_EQ(sess.status, 200);
    EXPECT_EQ(service.get_trajectory(sess.body["session_id"]).status, 404);
    const auto png_res = service.get_slice_png(res.body["image_id"], 1, std::nullopt);
    EXPECT_EQ(png_res.content_type, "image/png");
    EXPECT_EQ(png::decode(std::vector<std::uint8_t>(png_res.bytes.begin(), png_res.bytes.end())).width, 5);
}

TEST_F(ServiceTest, CommandsProduceSteps) {
    const auto r = command("threshold 0.6");
    ASSERT_EQ(r.status, 200) << r.body.dump();
    EXPECT_EQ(r.body["step_id"], 1);
    EXPECT_EQ(r.body["parent_id"], 0);
    EXPECT_EQ(r.body["op"], "set_threshold");
    EXPECT_EQ(r.body["tau"], 0.6);
    EXPECT_EQ(r.body["command"], "set_threshold");
    EXPECT_EQ(r.body["rendered"], "threshold 0.6");
    for (const char* k : {"mask_rle", "box", "window", "dice"}) EXPECT_TRUE(r.body.contains(k)) << k;

    EXPECT_EQ(service.post_accept(session_id).body["cursor"], 1);
    EXPECT_EQ(service.post_revert(session_id, {{"to", 0}}).body["cursor"], 0);
    EXPECT_EQ(service.post_final(session_id, {{"step", 1}}).body["final"], 1);
    EXPECT_EQ(service.post_revert(session_id, {{"to", 9}}).status, 404);
    EXPECT_EQ(service.post_revert(session_id, nlohmann::json::object()).status, 422);
    EXPECT_EQ(service.post_accept("nope").status, 404);

    const auto pts = command("propose critical points");
    ASSERT_EQ(pts.status, 200);
    EXPECT_TRUE(pts.body["critical_points"].is_array());
    const auto previews = command("generate examples");
    EXPECT_GE(previews.body["previews"].size(), 6u);
    EXPECT_EQ(command("help").body["message"].get<std::string>().find("threshold") != std::string::npos, true);

    const auto strat = command("target undersegmented");
    EXPECT_EQ(strat.body["strategy"]["name"], "undersegmented");
    EXPECT_EQ(strat.body["strategy"]["remaining"], 2);
}

TEST_F(ServiceTest, ErrorStatusCodes) {
    const auto bad = command("frobnicate");
    EXPECT_EQ(bad.status, 400);
    EXPECT_EQ(bad.body["parse_error"]["suggestions"], nlohmann::json::array({"help"}));
    const auto ambiguous = command("segment kidney");
    EXPECT_EQ(ambiguous.status, 400);
    EXPECT_EQ(ambiguous.body["parse_error"]["suggestions"].size(), 2u);
    EXPECT_EQ(service.post_command("nope", {{"text", "accept"}}).status, 404);
    EXPECT_EQ(command("revert to step 5").status, 404);
    EXPECT_EQ(command("remove component 9").status, 422);
    EXPECT_EQ(command("accept").status, 404);
    EXPECT_EQ(command("next strategy step").status, 422);
    EXPECT_EQ(command("critical point 1 is foreground").status, 409);
    ASSERT_EQ(command("propose critical points").status, 200);
    ASSERT_EQ(command("threshold 0.7").status, 200);
    ASSERT_EQ(command("accept").status, 200);
    EXPECT_EQ(command("critical point 1 is foreground").status, 409);
    EXPECT_EQ(service.get_mask_png(session_id, 99).status, 404);
    EXPECT_EQ(http_status(ErrorCode::BackendUnavailable), 503);
}

TEST_F(ServiceTest, CriticalPointsRoundTripThroughTheApi) {
    const auto img = service.post_image(nlohmann::json(scenario::large_liver_scene()).dump(), "application/json");
    const auto sess = service.post_session({{"image_id", img.body["image_id"]}, {"target_label", "liver"}});
    const std::string id = sess.body["session_id"];
    const auto pts = service.post_command(id, {{"text", "propose critical points"}});
    ASSERT_EQ(pts.status, 200);
    ASSERT_FALSE(pts.body["critical_points"].empty());
    const auto first = pts.body["critical_points"][0];
    const auto resolved = service.post_command(id, {{"text", "critical point 1 is background"}});
    ASSERT_EQ(resolved.status, 200) << resolved.body.dump();
    const auto mask = mask_from_rle(resolved.body["mask_rle"]);
    EXPECT_FALSE(mask(first["x"].get<int>(), first["y"].get<int>()));
}

TEST_F(ServiceTest, RemoteBackendDownIs503) {
    ServiceConfig cfg;
    cfg.remote = remote_at("http://127.0.0.1:" + std::to_string(closed_port()), 2);
    Service svc(cfg);
    const auto img = svc.post_image(scene_json(), "application/json");
    const auto res = svc.post_session({{"image_id", img.body["image_id"]}, {"target_label", "liver"}, {"backend", "remote"}});
    EXPECT_EQ(res.status, 503);
    EXPECT_EQ(res.body["code"], "BackendUnavailable");
}

TEST_F(ServiceTest, GetsAreSideEffectFreeAndMatchTheEngine) {
    command("apply default");
    command("accept");
    command("foreground click in cell 6");
    const auto a = service.get_session(session_id);
    const auto b = service.get_session(session_id);
    ASSERT_EQ(a.status, 200);
    EXPECT_EQ(a.body, b.body);
    EXPECT_EQ(a.body["metadata"]["image_id"], image_id);
    EXPECT_TRUE(a.body["has_ground_truth"].get<bool>());
    for (int step = 0; step < 3; ++step) {
        const auto png_res = service.get_mask_png(session_id, step);
        ASSERT_EQ(png_res.status, 200);
        const auto mask = mask_from_png(std::vector<std::uint8_t>(png_res.bytes.begin(), png_res.bytes.end()));
        EXPECT_EQ(mask, mask_from_rle(a.body["steps"][static_cast<std::size_t>(step)]["mask_rle"]));
        EXPECT_EQ(png_res.bytes, service.get_mask_png(session_id, step).bytes);
    }
    const auto t1 = service.get_trajectory(session_id);
    ASSERT_EQ(t1.status, 200);
    EXPECT_EQ(t1.body, service.get_trajectory(session_id).body);
    EXPECT_EQ(service.get_session(session_id).body, a.body);
}

TEST_F(ServiceTest, ParityWithTheEngineOverTheCommandEnum) {
    const auto ph = render_phantom(nlohmann::json::parse(scene_json()).get<PhantomScene>());
    auto image = std::make_shared<const HuImage>(slice_transversal(ph.volume, 0));
    Session engine = create_session("e", image, "liver", scenario::synthetic());
    engine.attach_ground_truth(ph.truth.mask(0, "liver"));
    for (const auto& c : scenario::enumerate_commands()) {
        std::optional<ErrorCode> engine_error;
        try {
            engine.apply_command(c);
        } catch (const Error& e) {
            engine_error = e.code();
        }
        const auto r = command(render(c));
        EXPECT_EQ(r.status, engine_error ? http_status(*engine_error) : 200) << render(c) << " " << r.body.dump();
        // Accept after every new step so later commands build on it.
        if (!engine_error && c.index() != 2) {
            const bool engine_accepts = code_of([&] { engine.accept(); }) == std::nullopt;
            EXPECT_EQ(service.post_accept(session_id).status, engine_accepts ? 200 : 404);
        }
    }
    EXPECT_EQ(without_identity(service.get_session(session_id).body), without_identity(engine.export_json()));
}

TEST(ServicePersistence, SessionExportsAreWrittenToTheDataDir) {
    const auto dir = std::filesystem::temp_directory_path() / "limis_service_test";
    std::filesystem::remove_all(dir);
    ServiceConfig cfg;
    cfg.data_dir = dir.string();
    Service svc(cfg);
    const auto img = svc.post_image(scene_json(), "application/json");
    const auto sess = svc.post_session({{"image_id", img.body["image_id"]}, {"target_label", "liver"}});
    const std::string id = sess.body["session_id"];
    svc.post_command(id, {{"text", "threshold 0.4"}});
    const auto path = dir / "sessions" / (id + ".json");
    ASSERT_TRUE(std::filesystem::exists(path));
    EXPECT_EQ(nlohmann::json::parse(read_file(path.string())), svc.get_session(id).body);
    std::filesystem::remove_all(dir);
}

TEST(ServiceConcurrency, SessionsProgressIndependently) {
    Service svc;
    const auto img = svc.post_image(scene_json(), "application/json");
    std::vector<std::string> ids;
    for (const char* label : {"liver", "bladder", "liver", "bladder"}) {
        ids.push_back(svc.post_session({{"image_id", img.body["image_id"]}, {"target_label", label}}).body["session_id"]);
    }
    std::vector<std::thread> threads;
    std::atomic<int> failures{0};
    for (const auto& id : ids) {
        threads.emplace_back([&, id] {
            for (int i = 0; i < 5; ++i) {
                if (svc.post_command(id, {{"text", "threshold 0." + std::to_string(3 + i)}}).status != 200) ++failures;
                if (svc.post_accept(id).status != 200) ++failures;
            }
        });
    }
    for (auto& t : threads) t.join();
    EXPECT_EQ(failures.load(), 0);
    for (const auto& id : ids) {
        const auto doc = svc.get_session(id).body;
        EXPECT_EQ(doc["steps"].size(), 6u);
        EXPECT_EQ(doc["cursor"], 5);
        EXPECT_EQ(doc["steps"][5]["tau"], 0.7);
    }
}

TEST(ServiceHttp, RoutesOverASocket) {
    ServiceConfig cfg;
    const auto static_dir = std::filesystem::temp_directory_path() / "limis_static_test";
    std::filesystem::create_directories(static_dir);
    std::ofstream(static_dir / "index.html") << "<html>ui</html>";
    cfg.static_dir = static_dir.string();
    Service svc(cfg);
    TestServer server([&](httplib::Server& s) { svc.mount(s); });
    httplib::Client client(server.url());

    auto img = client.Post("/v1/images", scene_json(), "application/json");
    ASSERT_TRUE(img);
    ASSERT_EQ(img->status, 200);
    const auto image_id = nlohmann::json::parse(img->body)["image_id"].get<std::string>();
    auto sess = client.Post("/v1/sessions", nlohmann::json{{"image_id", image_id}, {"target_label", "liver"}}.dump(),
                            "application/json");
    ASSERT_EQ(sess->status, 200);
    const auto id = nlohmann::json::parse(sess->body)["session_id"].get<std::string>();

    auto cmd = client.Post("/v1/sessions/" + id + "/command", R"({"text": "threshold 0.6"})", "application/json");
    ASSERT_EQ(cmd->status, 200);
    EXPECT_EQ(nlohmann::json::parse(cmd->body)["step_id"], 1);
    EXPECT_EQ(client.Post("/v1/sessions/" + id + "/command", R"({"text": "frobnicate"})", "application/json")->status, 400);
    EXPECT_EQ(client.Post("/v1/sessions/" + id + "/command", "{oops", "application/json")->status, 400);
    EXPECT_EQ(client.Post("/v1/sessions/" + id + "/accept", "", "application/json")->status, 200);
    EXPECT_EQ(client.Post("/v1/sessions/" + id + "/revert", R"({"to": 0})", "application/json")->status, 200);
    EXPECT_EQ(client.Post("/v1/sessions/" + id + "/final", R"({"step": 1})", "application/json")->status, 200);

    auto mask = client.Get("/v1/sessions/" + id + "/steps/1/mask.png");
    ASSERT_EQ(mask->status, 200);
    EXPECT_EQ(mask->get_header_value("Content-Type"), "image/png");
    EXPECT_EQ(mask->body, svc.get_mask_png(id, 1).bytes);
    auto doc = client.Get("/v1/sessions/" + id);
    ASSERT_EQ(doc->status, 200);
    EXPECT_EQ(nlohmann::json::parse(doc->body)["final"], 1);
    EXPECT_EQ(client.Get("/v1/sessions/" + id + "/trajectory")->status, 200);
    EXPECT_EQ(client.Get("/v1/sessions/nope")->status, 404);
    EXPECT_EQ(client.Get("/v1/images/" + image_id + "/slices/0.png?center=40&width=400")->status, 200);
    EXPECT_EQ(client.Get("/v1/images/" + image_id + "/slices/0.png?center=x&width=400")->status, 400);
    auto ui = client.Get("/index.html");
    ASSERT_TRUE(ui);
    EXPECT_EQ(ui->body, "<html>ui</html>");
    std::filesystem::remove_all(static_dir);
}
