#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "limis/conformance.hpp"
#include "limis/dataprep.hpp"
#include "limis/inference_server.hpp"
#include "limis/metrics.hpp"
#include "limis/service.hpp"

using namespace limis;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool is_scene(const std::string& path) { return fs::path(path).extension() == ".json"; }

PhantomScene load_scene(const std::string& path) { return nlohmann::json::parse(slurp(path)).get<PhantomScene>(); }

httplib::Server* g_server = nullptr;

void serve_until_signal(httplib::Server& server, const std::string& host, int port) {
    g_server = &server;
    std::signal(SIGINT, [](int) { g_server->stop(); });
    std::signal(SIGTERM, [](int) { g_server->stop(); });
    std::cerr << "listening on http://" << host << ":" << port << "\n";
    if (!server.listen(host, port)) throw Error(ErrorCode::IoError, "cannot listen on " + host + ":" + std::to_string(port));
}

std::shared_ptr<const Backend> make_backend(const std::string& kind, const std::string& remote_url) {
    if (kind == "synthetic") return std::make_shared<SyntheticBackend>();
    if (kind == "stub") return std::make_shared<StubBackend>();
    if (kind == "remote") {
        RemoteConfig rc;
        rc.url = remote_url;
        return std::make_shared<RemoteBackend>(rc);
    }
    throw Error(ErrorCode::InvalidArgument, "unknown backend '" + kind + "'");
}

// --- subcommands ------------------------------------------------------------------

struct ServeOpts {
    std::string host = "0.0.0.0";
    int port = 8080;
    std::string backend = "synthetic";
    std::string remote_url = RemoteConfig{}.url;
    std::string presets;
    std::string data_dir;
    std::string static_dir;
};

int run_serve(const ServeOpts& o) {
    ServiceConfig cfg;
    cfg.default_backend = o.backend;
    cfg.remote.url = o.remote_url;
    if (!o.presets.empty()) cfg.engine.presets = WindowPresets::load(o.presets);
    cfg.data_dir = o.data_dir;
    if (const char* env = std::getenv("LIMIS_DATA_DIR"); env && *env) cfg.data_dir = env;
    cfg.static_dir = o.static_dir;
    Service service(cfg);
    httplib::Server server;
    service.mount(server);
    serve_until_signal(server, o.host, o.port);
    return 0;
}

struct SessionOpts {
    std::string image;
    int slice = 0;
    std::string label;
    std::string backend = "synthetic";
    std::string remote_url = RemoteConfig{}.url;
    std::string presets;
    std::string export_path;
    std::vector<int> box;
};

void print_step(const Session& s, int id) {
    const auto& st = s.step(id);
    std::cout << "step " << st.id << " [" << st.state.op.kind << "] box " << engine_detail::box_json(st.state.box).dump() << " tau "
              << st.state.tau << " window " << st.state.window.center << "/" << st.state.window.width << " area "
              << count_set(st.state.mask);
    if (s.has_ground_truth()) std::cout << " dice " << s.dice_log().at(static_cast<std::size_t>(st.id));
    std::cout << (st.id == s.cursor() ? "  (cursor)\n" : "  (accept to keep)\n");
}

int run_session(const SessionOpts& o) {
    EngineConfig cfg;
    if (!o.presets.empty()) cfg.presets = WindowPresets::load(o.presets);
    std::optional<BinMask> truth;
    std::shared_ptr<const HuImage> image;
    if (is_scene(o.image)) {
        const auto ph = render_phantom(load_scene(o.image));
        image = std::make_shared<const HuImage>(slice_transversal(ph.volume, o.slice));
        truth = ph.truth.mask(o.slice, o.label);
    } else {
        image = std::make_shared<const HuImage>(slice_transversal(nifti::read_file(o.image), o.slice));
    }
    std::optional<BBox> user_box;
    if (!o.box.empty()) user_box = BBox{o.box[0], o.box[1], o.box[2], o.box[3]};
    Session s = create_session("cli", image, o.label, make_backend(o.backend, o.remote_url), cfg, user_box);
    if (truth) s.attach_ground_truth(*truth);
    std::cout << (user_box ? "box given for " : s.detected() ? "detected " : "no detection for ") << o.label << "; type 'help' for commands, 'quit' to end\n";
    print_step(s, s.cursor());
    std::string line;
    while (std::cout << "> " << std::flush, std::getline(std::cin, line)) {
        if (line == "quit" || line == "exit") break;
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        try {
            const auto out = s.apply_text(line);
            if (!out.message.empty()) std::cout << out.message << "\n";
            if (out.command == "propose_critical_points" && out.critical_points.empty()) std::cout << "  no ambiguous pixels\n";
            for (std::size_t i = 0; i < out.critical_points.size(); ++i) {
                const auto& p = out.critical_points[i];
                std::cout << "  critical point " << i + 1 << " at (" << p.x << ", " << p.y << ") ambiguity " << p.ambiguity << "\n";
            }
            for (const auto& p : out.previews) std::cout << "  preview " << p.command << ": area " << count_set(p.mask) << "\n";
            if (out.step_id) {
                print_step(s, *out.step_id);
            } else if (out.command == "revert_to" || out.command == "accept") {
                print_step(s, s.cursor());
            }
        } catch (const CommandError& e) {
            std::cout << "error: " << e.what() << "\n";
            for (const auto& sug : e.suggestions()) std::cout << "  try: " << sug << "\n";
        } catch (const Error& e) {
            std::cout << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
        }
    }
    if (!o.export_path.empty()) {
        std::ofstream(o.export_path) << s.export_json().dump(2) << "\n";
        std::cout << "session written to " << o.export_path << "\n";
    }
    return 0;
}

struct PrepOpts {
    std::vector<std::string> scenes;
    int corpus = 0;
    std::uint64_t seed = 0;
    std::string out;
    int num_add_lab = kDefaultNumAddLab;
    bool no_augment = false;
};

int run_prep(const PrepOpts& o) {
    std::vector<LabeledVolume> volumes;
    std::vector<VolumeRef> refs;
    auto add = [&](const std::string& dataset, const std::string& id, const PhantomScene& scene) {
        auto ph = render_phantom(scene);
        volumes.push_back({id, std::move(ph.volume), std::move(ph.truth)});
        refs.push_back({dataset, id});
    };
    for (const auto& path : o.scenes) add("scenes", fs::path(path).stem().string(), load_scene(path));
    const auto corpus = random_corpus(static_cast<std::size_t>(o.corpus), o.seed);
    for (std::size_t i = 0; i < corpus.size(); ++i) add("phantom", "phantom" + std::to_string(i), corpus[i]);
    if (volumes.empty()) throw Error(ErrorCode::EmptyCorpus, "no input volumes (use --scene or --corpus)");

    PrepConfig cfg;
    cfg.seed = o.seed;
    cfg.num_add_lab = o.num_add_lab;
    if (o.no_augment) cfg.augment.p_rotate = cfg.augment.p_translate = cfg.augment.p_scale = 0.0;
    const Split sp = split(refs, o.seed);
    fs::create_directories(o.out);
    std::size_t total = 0;
    for (const auto& [name, ids] : {std::pair{"train", sp.train}, {"val", sp.val}, {"test", sp.test}}) {
        std::vector<LabeledVolume> part;
        for (const auto& v : volumes) {
            if (std::find(ids.begin(), ids.end(), v.id) != ids.end()) part.push_back(v);
        }
        const auto recs = emit_records(part, cfg, o.out, name);
        std::cout << name << ": " << part.size() << " volumes, " << recs.size() << " slices\n";
        total += recs.size();
    }
    std::ofstream(fs::path(o.out) / "split.json") << nlohmann::json{{"train", sp.train}, {"val", sp.val}, {"test", sp.test}}.dump(2)
                                                  << "\n";
    std::cout << total << " records in " << o.out << "\n";
    return 0;
}

int run_eval_detect(const std::string& pred_path, const std::string& truth_path) {
    std::ifstream pred(pred_path), truth(truth_path);
    if (!pred) throw Error(ErrorCode::IoError, "cannot open " + pred_path);
    if (!truth) throw Error(ErrorCode::IoError, "cannot open " + truth_path);
    const auto res = evaluate_detections(read_predictions_jsonl(pred), read_truth_jsonl(truth));
    std::cout << eval_json(res).dump(2) << "\n";
    return 0;
}

int run_eval_seg(const std::vector<std::string>& scenes, const std::string& sessions_dir) {
    if (!sessions_dir.empty()) {
        nlohmann::json rows = nlohmann::json::array();
        int improved = 0, n = 0;
        double delta = 0.0;
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(sessions_dir)) {
            if (e.path().extension() == ".json") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            const auto doc = nlohmann::json::parse(slurp(f.string()));
            if (!doc.value("has_ground_truth", false)) continue;
            const auto t = dice_trajectory(doc);
            auto j = trajectory_json(t);
            j["session"] = f.stem().string();
            rows.push_back(j);
            improved += t.outcome == TrajectoryOutcome::Improved;
            delta += t.delta;
            ++n;
        }
        if (n == 0) throw Error(ErrorCode::EmptyCorpus, "no session exports with ground truth in " + sessions_dir);
        std::cout << nlohmann::json{{"sessions", n},
                                    {"improved_fraction", static_cast<double>(improved) / n},
                                    {"mean_delta", delta / n},
                                    {"trajectories", rows}}
                         .dump(2)
                  << "\n";
        return 0;
    }
    // Step-0 Dice of a detector-initialized session for every organ on every slice.
    std::vector<SegmentationSample> samples;
    const auto backend = std::make_shared<SyntheticBackend>();
    for (const auto& path : scenes) {
        const auto ph = render_phantom(load_scene(path));
        for (int z = 0; z < ph.volume.dims[2]; ++z) {
            auto image = std::make_shared<const HuImage>(slice_transversal(ph.volume, z));
            for (const auto& label : ph.truth.labels_on(z)) {
                Session s = create_session("eval", image, label, backend);
                samples.push_back({label, s.current().state.mask, ph.truth.mask(z, label)});
            }
        }
    }
    if (samples.empty()) throw Error(ErrorCode::EmptyCorpus, "no labelled slices");
    EvalResult res;
    aggregate_dice(samples, res);
    std::cout << nlohmann::json{{"samples", samples.size()}, {"per_organ_dice", res.per_organ_dice}, {"macro_dice", res.macro_dice}}.dump(2)
              << "\n";
    return 0;
}

int run_ablation_cmd(std::size_t count, std::uint64_t seed, const std::string& out) {
    const auto csv = ablation_csv(run_ablation(ablation_corpus(count, seed), SyntheticBackend{}));
    if (out.empty()) {
        std::cout << csv;
    } else {
        std::ofstream(out) << csv;
    }
    return 0;
}

int run_phantom(const std::string& scene_path, std::optional<std::uint64_t> random_seed, const std::string& out) {
    if (random_seed) {
        const auto scene = random_scene(*random_seed);
        std::ofstream(out) << nlohmann::json(scene).dump(2) << "\n";
        return 0;
    }
    nifti::write_file(out, render_phantom(load_scene(scene_path)).volume);
    return 0;
}

int run_inference(const std::string& host, int port, bool stub) {
    std::shared_ptr<const Backend> backend;
    if (stub) {
        backend = std::make_shared<StubBackend>();
    } else {
        backend = std::make_shared<SyntheticBackend>();
    }
    httplib::Server server;
    mount_inference_routes(server, backend);
    serve_until_signal(server, host, port);
    return 0;
}

int run_conformance_cmd(const std::string& url, int timeout) {
    int failed = 0;
    for (const auto& c : run_conformance(url, std::chrono::seconds(timeout))) {
        std::cout << (c.passed ? "PASS " : "FAIL ") << c.name;
        if (!c.detail.empty()) std::cout << "  " << c.detail;
        std::cout << "\n";
        failed += !c.passed;
    }
    return failed == 0 ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Language-driven interactive segmentation of CT slices"};
    app.require_subcommand(1);

    ServeOpts serve;
    auto* serve_cmd = app.add_subcommand("serve", "Run the REST service");
    serve_cmd->add_option("--host", serve.host);
    serve_cmd->add_option("--port", serve.port);
    serve_cmd->add_option("--backend", serve.backend)->check(CLI::IsMember({"synthetic", "remote", "stub"}));
    serve_cmd->add_option("--remote-url", serve.remote_url);
    serve_cmd->add_option("--presets", serve.presets, "Window preset JSON")->check(CLI::ExistingFile);
    serve_cmd->add_option("--data-dir", serve.data_dir, "Session exports go here (LIMIS_DATA_DIR overrides)");
    serve_cmd->add_option("--static-dir", serve.static_dir, "Web UI bundle");

    SessionOpts sess;
    auto* session_cmd = app.add_subcommand("session", "Interactive segmentation in the terminal");
    session_cmd->add_option("--image", sess.image, ".nii or phantom scene .json")->required()->check(CLI::ExistingFile);
    session_cmd->add_option("--slice", sess.slice);
    session_cmd->add_option("--label", sess.label)->required();
    session_cmd->add_option("--backend", sess.backend)->check(CLI::IsMember({"synthetic", "remote", "stub"}));
    session_cmd->add_option("--remote-url", sess.remote_url);
    session_cmd->add_option("--presets", sess.presets)->check(CLI::ExistingFile);
    session_cmd->add_option("--export", sess.export_path, "Write the session export here on exit");
    session_cmd->add_option("--box", sess.box, "Start from this box instead of a detection: x0 y0 x1 y1")->expected(4);

    PrepOpts prep;
    auto* prep_cmd = app.add_subcommand("prep", "Build slice records with prompts and augmentation");
    prep_cmd->add_option("--scene", prep.scenes, "Phantom scene JSON files")->check(CLI::ExistingFile);
    prep_cmd->add_option("--corpus", prep.corpus, "Also generate this many random phantoms");
    prep_cmd->add_option("--seed", prep.seed);
    prep_cmd->add_option("--out", prep.out)->required();
    prep_cmd->add_option("--num-add-lab", prep.num_add_lab, "Absent labels added to each prompt");
    prep_cmd->add_flag("--no-augment", prep.no_augment);

    auto* eval_cmd = app.add_subcommand("eval", "Detection mAP or segmentation Dice");
    eval_cmd->require_subcommand(1);
    std::string pred_path, truth_path, sessions_dir;
    std::vector<std::string> eval_scenes;
    auto* detect_cmd = eval_cmd->add_subcommand("detect", "COCO-style mAP from JSONL predictions and truth");
    detect_cmd->add_option("--pred", pred_path)->required()->check(CLI::ExistingFile);
    detect_cmd->add_option("--truth", truth_path)->required()->check(CLI::ExistingFile);
    auto* seg_cmd = eval_cmd->add_subcommand("seg", "Dice of initial segmentations, or trajectories of saved sessions");
    auto* seg_scenes = seg_cmd->add_option("--scene", eval_scenes)->check(CLI::ExistingFile);
    auto* seg_sessions = seg_cmd->add_option("--sessions", sessions_dir)->check(CLI::ExistingDirectory);
    seg_scenes->excludes(seg_sessions);
    seg_cmd->require_option(1);

    std::size_t ab_count = 16;
    std::uint64_t ab_seed = 2024;
    std::string ab_out;
    auto* ablation_cmd = app.add_subcommand("ablation", "Crop x window x margin grid as CSV");
    ablation_cmd->add_option("--count", ab_count);
    ablation_cmd->add_option("--seed", ab_seed);
    ablation_cmd->add_option("--out", ab_out);

    std::string scene_path, phantom_out;
    std::optional<std::uint64_t> random_seed;
    auto* phantom_cmd = app.add_subcommand("phantom", "Render a scene to NIfTI, or write a random scene");
    auto* scene_opt = phantom_cmd->add_option("--scene", scene_path)->check(CLI::ExistingFile);
    auto* random_opt = phantom_cmd->add_option("--random", random_seed, "Write a random scene JSON with this seed");
    scene_opt->excludes(random_opt);
    phantom_cmd->add_option("--out", phantom_out)->required();
    phantom_cmd->require_option(2);

    std::string inf_host = "127.0.0.1";
    int inf_port = 8765;
    bool inf_stub = false;
    auto* inference_cmd = app.add_subcommand("inference", "Serve /detect and /segment over the wire protocol");
    inference_cmd->add_option("--host", inf_host);
    inference_cmd->add_option("--port", inf_port);
    inference_cmd->add_flag("--stub", inf_stub, "Box-interior probabilities instead of the synthetic models");

    std::string conf_url = RemoteConfig{}.url;
    int conf_timeout = 10;
    auto* conformance_cmd = app.add_subcommand("conformance", "Check an inference server against the wire protocol");
    conformance_cmd->add_option("--url", conf_url);
    conformance_cmd->add_option("--timeout", conf_timeout, "Seconds per request");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*serve_cmd) return run_serve(serve);
        if (*session_cmd) return run_session(sess);
        if (*prep_cmd) return run_prep(prep);
        if (*detect_cmd) return run_eval_detect(pred_path, truth_path);
        if (*seg_cmd) return run_eval_seg(eval_scenes, sessions_dir);
        if (*ablation_cmd) return run_ablation_cmd(ab_count, ab_seed, ab_out);
        if (*phantom_cmd) return run_phantom(scene_path, random_seed, phantom_out);
        if (*inference_cmd) return run_inference(inf_host, inf_port, inf_stub);
        if (*conformance_cmd) return run_conformance_cmd(conf_url, conf_timeout);
    } catch (const Error& e) {
        std::cerr << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
