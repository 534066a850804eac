#pragma once

// Phantom sessions, command enumerations and the documented phrase table,
// shared by the unit tests and the acceptance binary.

#include <fstream>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "limis/command_parser.hpp"
#include "limis/engine.hpp"
#include "limis/phantom.hpp"
#include "limis/synthetic_backend.hpp"

namespace scenario {

using namespace limis;

inline std::shared_ptr<const Backend> synthetic() { return std::make_shared<SyntheticBackend>(); }

/// Noiseless single-slice scenes with one to three well separated organs.
inline std::vector<PhantomScene> e2e_corpus(std::size_t n = 30, std::uint64_t seed = 11) {
    return random_corpus(n, seed);
}

struct Case {
    std::shared_ptr<const HuImage> image;
    std::string label;
    BinMask truth;
    BBox gt_box;
};

/// Slice `z` of the scene with the `shape`-th structure as the target.
inline Case make_case(const PhantomScene& scene, std::size_t shape = 0, int z = 0) {
    const auto ph = render_phantom(scene);
    Case c;
    c.image = std::make_shared<const HuImage>(slice_transversal(ph.volume, z));
    c.label = scene.shapes.at(shape).label;
    c.truth = ph.truth.mask(z, c.label);
    c.gt_box = tight_bbox(c.truth);
    return c;
}

inline Session open(const Case& c, std::shared_ptr<const Backend> backend = synthetic(), EngineConfig cfg = {},
                    std::optional<BBox> user_box = std::nullopt, const std::string& id = "s") {
    Session s = create_session(id, c.image, c.label, std::move(backend), std::move(cfg), user_box);
    s.attach_ground_truth(c.truth);
    return s;
}

/// A large liver ellipse; its tight box shrunk by 15 px per side leaves most
/// of the organ outside the prompt.
inline PhantomScene undersegmentation_scene() {
    PhantomScene scene;
    scene.width = scene.height = 128;
    scene.shapes.push_back({ShapeKind::Ellipse, "liver", 64.0, 62.0, 34.0, 28.0, reference_hu("liver"), 0.0, 0, -1});
    return scene;
}

/// The same ellipse at twice the size. Its crops exceed the synthetic
/// backend's working resolution, and the upsampled edges give it
/// probabilities near tau.
inline PhantomScene large_liver_scene() {
    PhantomScene scene = undersegmentation_scene();
    scene.width = scene.height = 256;
    for (auto& sh : scene.shapes) {
        sh.cx *= 2.0;
        sh.cy *= 2.0;
        sh.sx *= 2.0;
        sh.sy *= 2.0;
    }
    return scene;
}

struct StrategyRun {
    double step0_dice = 0.0;
    double final_dice = 0.0;
    int steps = 0;
};

/// Runs every step of `strategy`, accepting each one.
inline StrategyRun run_strategy(Session& s, Strategy strategy) {
    StrategyRun out;
    out.step0_dice = s.dice_log().at(static_cast<std::size_t>(s.cursor()));
    s.apply_command(cmd::StartStrategy{strategy});
    s.accept();
    ++out.steps;
    while (!s.script()->exhausted()) {
        s.apply_command(cmd::NextStrategyStep{});
        s.accept();
        ++out.steps;
    }
    out.final_dice = s.dice_log().at(static_cast<std::size_t>(s.cursor()));
    return out;
}

inline StrategyRun undersegmentation_run(std::shared_ptr<const Backend> backend = synthetic()) {
    const Case c = make_case(undersegmentation_scene());
    Session s = open(c, std::move(backend), {}, c.gt_box.expanded(-15));
    return run_strategy(s, Strategy::Undersegmented);
}

/// Applies `n` random commands, skipping ones the session rejects (no child to
/// accept, a collapsed box, a stale proposal, ...).
inline void random_walk(Session& s, detail::Rng& rng, int n) {
    const auto& presets = s.config().presets.presets();
    std::vector<std::string> names;
    for (const auto& [name, w] : presets) names.push_back(name);
    for (int i = 0; i < n; ++i) {
        InteractionCommand c;
        switch (rng.uniform_int(0, 15)) {
        case 0: c = cmd::ApplyDefault{}; break;
        case 1: c = cmd::AcceptStep{}; break;
        case 2: c = cmd::SetThreshold{std::round(rng.uniform(0.05, 0.95) * 100.0) / 100.0}; break;
        case 3:
            c = cmd::ShiftBox{static_cast<int>(rng.uniform_int(-8, 8)), static_cast<int>(rng.uniform_int(-8, 8))};
            break;
        case 4: c = cmd::ResizeBox::uniform(static_cast<int>(rng.uniform_int(-6, 10))); break;
        case 5: c = cmd::GridClick{static_cast<int>(rng.uniform_int(0, 15)), rng.uniform() < 0.6}; break;
        case 6: c = cmd::CenterClick{}; break;
        case 7: c = cmd::SetWindow{names[static_cast<std::size_t>(rng.uniform_int(0, names.size() - 1))], std::nullopt}; break;
        case 8: c = cmd::RemoveComponent{static_cast<int>(rng.uniform_int(1, 3))}; break;
        case 9: c = cmd::Ensemble{}; break;
        case 10: c = cmd::ProposeCriticalPoints{}; break;
        case 11: c = cmd::ResolveCriticalPoint{static_cast<int>(rng.uniform_int(1, 3)), rng.uniform() < 0.5}; break;
        case 12: c = cmd::StartStrategy{static_cast<Strategy>(rng.uniform_int(0, 3))}; break;
        case 13: c = cmd::NextStrategyStep{}; break;
        case 14: c = cmd::RevertTo{static_cast<int>(rng.uniform_int(0, static_cast<long long>(s.steps().size()) - 1))}; break;
        default: c = cmd::SelectFinal{static_cast<int>(rng.uniform_int(0, static_cast<long long>(s.steps().size()) - 1))};
        }
        try {
            s.apply_command(c);
        } catch (const Error& e) {
            if (e.code() == ErrorCode::BackendUnavailable) throw;
        }
    }
}

/// Every command alternative with boundary arguments.
inline std::vector<InteractionCommand> enumerate_commands(const WindowPresets& presets = {}) {
    using namespace cmd;
    std::vector<InteractionCommand> out;
    for (const auto& label : default_vocabulary().names()) out.push_back(SegmentTarget{label});
    out.push_back(ApplyDefault{});
    out.push_back(AcceptStep{});
    for (int k : {0, 1, 999}) {
        out.push_back(RevertTo{k});
        out.push_back(SelectFinal{k});
    }
    for (auto [dx, dy] : {std::pair{0, 0}, {5, -3}, {-12, 0}, {0, 40}}) out.push_back(ShiftBox{dx, dy});
    for (int u : {0, 1, 10, -1, -25}) out.push_back(ResizeBox::uniform(u));
    out.push_back(ResizeBox{1, 2, 3, 4});
    out.push_back(ResizeBox{-1, 0, 7, -3});
    for (double tau : {0.0, 1.0, 0.5, 0.05, 0.123456789, 1e-7}) out.push_back(SetThreshold{tau});
    for (int cell : {0, 15, 5}) {
        out.push_back(GridClick{cell, true});
        out.push_back(GridClick{cell, false});
    }
    out.push_back(CenterClick{});
    for (const auto& [name, w] : presets.presets()) out.push_back(SetWindow{name, std::nullopt});
    out.push_back(SetWindow{"", WindowSpec{60.0, 160.0}});
    out.push_back(SetWindow{"", WindowSpec{-50.5, 1.0}});
    out.push_back(SetWindow{"", WindowSpec{0.0, 1e-3}});
    for (int k : {1, 2, 17}) out.push_back(RemoveComponent{k});
    out.push_back(Ensemble{});
    out.push_back(GenerateExamples{});
    out.push_back(ProposeCriticalPoints{});
    for (int k : {1, 5, 12}) {
        out.push_back(ResolveCriticalPoint{k, true});
        out.push_back(ResolveCriticalPoint{k, false});
    }
    for (auto s : {Strategy::WrongPart, Strategy::Oversegmented, Strategy::Undersegmented, Strategy::LowHU}) {
        out.push_back(StartStrategy{s});
    }
    out.push_back(NextStrategyStep{});
    out.push_back(Help{});
    return out;
}

/// (phrase, intent) rows of the phrase table in docs/commands.md.
inline std::vector<std::pair<std::string, std::string>> documented_phrases(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    bool in_table = false;
    while (std::getline(in, line)) {
        if (line.rfind("## ", 0) == 0) in_table = line == "## Phrase table";
        if (!in_table || line.rfind("| `", 0) != 0) continue;
        const auto close = line.find('`', 3);
        const auto bar = line.find('|', close);
        const auto end = line.find('|', bar + 1);
        if (close == std::string::npos || bar == std::string::npos || end == std::string::npos) continue;
        std::string intent = line.substr(bar + 1, end - bar - 1);
        intent.erase(0, intent.find_first_not_of(' '));
        intent.erase(intent.find_last_not_of(' ') + 1);
        out.emplace_back(line.substr(3, close - 3), intent);
    }
    return out;
}

inline std::string docs_path(const std::string& name) { return std::string(LIMIS_SOURCE_DIR) + "/docs/" + name; }

} // namespace scenario
