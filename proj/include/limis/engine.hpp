#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "limis/backend.hpp"
#include "limis/command.hpp"
#include "limis/command_parser.hpp"
#include "limis/core.hpp"
#include "limis/imaging.hpp"
#include "limis/mask_codec.hpp"
#include "limis/maskops.hpp"
#include "limis/presets.hpp"

namespace limis {

enum class CropMode { Box, Full };

struct EngineConfig {
    double initial_tau = 0.5;
    int default_margin_px = 10;
    double critical_epsilon = 0.05;
    int critical_spacing_px = 10;
    int critical_k = 5;
    double strategy_tau_step = 0.1;
    int strategy_box_grow_px = 10;
    int ensemble_box_grow_px = 10;
    EnsembleRule ensemble_rule = EnsembleRule::Majority;
    CropMode crop_mode = CropMode::Box;
    WindowPresets presets;
};

/// Resolved description of the operation that produced a step. `params`
/// holds every value needed to recompute the step from its parent.
struct StepOp {
    std::string kind;
    nlohmann::json params = nlohmann::json::object();
};

struct StepState {
    BBox box; ///< image coordinates
    std::vector<Click> clicks; ///< image coordinates
    WindowSpec window;
    double tau = 0.5;
    int margin_px = 0;
    BBox crop; ///< region of the image the segmenter saw
    ProbMask prob; ///< crop coordinates
    BinMask mask; ///< image coordinates
    BinMask erased; ///< image coordinates; empty grid when nothing was removed
    StepOp op;
};

struct SessionStep {
    int id = 0;
    std::optional<int> parent;
    StepState state;
    bool accepted = false;
};

struct CriticalPoint {
    int x = 0;
    int y = 0;
    double ambiguity = 0.0; ///< |p - tau|
    friend bool operator==(const CriticalPoint&, const CriticalPoint&) = default;
};

struct Preview {
    std::string command;
    StepOp op;
    BinMask mask;
};

// --- step derivation -------------------------------------------------------

/// What a derivation needs besides the parent state.
struct DeriveContext {
    const HuImage& image;
    const Backend& backend;
    CropMode crop_mode = CropMode::Box;
};

namespace engine_detail {

inline nlohmann::json clicks_json(const std::vector<Click>& clicks) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : clicks) arr.push_back({{"x", c.x}, {"y", c.y}, {"positive", c.positive}});
    return arr;
}

inline std::vector<Click> clicks_from(const nlohmann::json& arr) {
    std::vector<Click> out;
    for (const auto& c : arr) out.push_back({c.at("x").get<int>(), c.at("y").get<int>(), c.at("positive").get<bool>()});
    return out;
}

inline nlohmann::json window_json(const WindowSpec& w) { return {{"center", w.center}, {"width", w.width}}; }
inline WindowSpec window_from(const nlohmann::json& j) {
    return {j.at("center").get<double>(), j.at("width").get<double>()};
}

inline nlohmann::json box_json(const BBox& b) { return nlohmann::json::array({b.x0, b.y0, b.x1, b.y1}); }
inline BBox box_from(const nlohmann::json& j) {
    return {j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>(), j.at(3).get<int>()};
}

inline double snap_tau(double tau) { return std::clamp(std::round(tau * 1e9) / 1e9, 0.0, 1.0); }

inline BinMask mask_from_prob(const StepState& s, int width, int height) {
    return paste_into_blank(threshold(s.prob, s.tau), s.crop, width, height);
}

/// Re-runs the segmenter for the prompt held in `s` and refreshes prob/mask.
inline void resegment(StepState& s, const DeriveContext& ctx) {
    const int W = ctx.image.width();
    const int H = ctx.image.height();
    const BBox prompt_box = clamp_box(s.box.expanded(s.margin_px), W, H);
    s.crop = ctx.crop_mode == CropMode::Box ? prompt_box : BBox{0, 0, W, H};
    SegmentPrompt prompt;
    prompt.image = window_normalize(crop_region(ctx.image.pixels, s.crop), s.window);
    prompt.box = prompt_box.shifted(-s.crop.x0, -s.crop.y0);
    for (const auto& c : s.clicks) {
        if (s.crop.contains(c.x, c.y)) prompt.clicks.push_back({c.x - s.crop.x0, c.y - s.crop.y0, c.positive});
    }
    s.prob = ctx.backend.segment(prompt);
    if (!s.prob.same_shape(prompt.image)) {
        throw Error(ErrorCode::BackendUnavailable, "segmenter returned a map of the wrong shape");
    }
    if (!s.erased.empty()) {
        for (int y = 0; y < s.prob.height(); ++y) {
            for (int x = 0; x < s.prob.width(); ++x) {
                if (s.erased(x + s.crop.x0, y + s.crop.y0)) s.prob(x, y) = 0.0f;
            }
        }
        enforce_click_contract(s.prob, prompt.clicks);
    }
    s.mask = mask_from_prob(s, W, H);
}

inline StepState derive(const StepState& parent, const StepOp& op, const DeriveContext& ctx);

/// Ensemble members: box growth, center click and the organ window, each applied to the parent.
inline std::vector<StepOp> ensemble_members(const nlohmann::json& params) {
    std::vector<StepOp> out;
    for (const auto& m : params.at("members")) out.push_back({m.at("kind").get<std::string>(), m.at("params")});
    return out;
}

inline StepState derive(const StepState& parent, const StepOp& op, const DeriveContext& ctx) {
    const int W = ctx.image.width();
    const int H = ctx.image.height();
    const auto& p = op.params;
    StepState s = parent;
    s.op = op;
    if (op.kind == "default") {
        s.window = window_from(p.at("window"));
        s.margin_px = p.at("margin").get<int>();
        resegment(s, ctx);
    } else if (op.kind == "shift_box") {
        s.box = clamp_box(parent.box.shifted(p.at("dx").get<int>(), p.at("dy").get<int>()), W, H);
        resegment(s, ctx);
    } else if (op.kind == "resize_box") {
        const BBox grown = parent.box.expanded(p.at("left").get<int>(), p.at("top").get<int>(),
                                               p.at("right").get<int>(), p.at("bottom").get<int>());
        if (!grown.valid()) throw Error(ErrorCode::EmptyBox, "resize would collapse the box");
        s.box = clamp_box(grown, W, H);
        resegment(s, ctx);
    } else if (op.kind == "set_threshold") {
        s.tau = p.at("tau").get<double>();
        s.mask = mask_from_prob(s, W, H);
    } else if (op.kind == "set_window") {
        s.window = window_from(p.at("window"));
        resegment(s, ctx);
    } else if (op.kind == "grid_click" || op.kind == "center_click" || op.kind == "resolve_critical_point" ||
               op.kind == "critical_points") {
        for (const auto& c : clicks_from(p.at("clicks"))) {
            if (!ctx.image.pixels.contains(c.x, c.y)) throw Error(ErrorCode::InvalidArgument, "click outside the image");
            s.clicks.push_back(c);
        }
        resegment(s, ctx);
    } else if (op.kind == "detect") {
        s.box = box_from(p.at("box"));
        resegment(s, ctx);
    } else if (op.kind == "remove_component") {
        const int ordinal = p.at("ordinal").get<int>();
        const Components comps = connected_components(parent.mask);
        if (ordinal < 1 || ordinal > static_cast<int>(comps.count())) {
            throw Error(ErrorCode::UnknownComponent, "component " + std::to_string(ordinal) + " does not exist (" +
                                                         std::to_string(comps.count()) + " components)");
        }
        if (s.erased.empty()) s.erased = BinMask(W, H);
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                if (comps.labels(x, y) != ordinal) continue;
                s.erased(x, y) = 1;
                if (s.crop.contains(x, y)) s.prob(x - s.crop.x0, y - s.crop.y0) = 0.0f;
            }
        }
        // A positive click inside the removed component would bring it back
        // on the next re-segmentation.
        std::erase_if(s.clicks, [&](const Click& c) { return c.positive && comps.labels(c.x, c.y) == ordinal; });
        s.mask = mask_from_prob(s, W, H);
    } else if (op.kind == "ensemble") {
        std::vector<BinMask> masks;
        BBox region = parent.crop;
        for (const auto& member : ensemble_members(p)) {
            const StepState v = derive(parent, member, ctx);
            region = {std::min(region.x0, v.crop.x0), std::min(region.y0, v.crop.y0), std::max(region.x1, v.crop.x1),
                      std::max(region.y1, v.crop.y1)};
            masks.push_back(v.mask);
        }
        const auto rule = static_cast<EnsembleRule>(p.at("rule").get<int>());
        const BinMask voted = ensemble(masks, rule);
        // Encode votes so that p >= 0.5 reproduces the rule's decision.
        s.crop = region;
        s.tau = 0.5;
        s.prob = ProbMask(region.width(), region.height(), 0.0f);
        for (int y = region.y0; y < region.y1; ++y) {
            for (int x = region.x0; x < region.x1; ++x) {
                int votes = 0;
                for (const auto& m : masks) votes += m(x, y) ? 1 : 0;
                const float frac = static_cast<float>(votes) / static_cast<float>(masks.size());
                s.prob(x - region.x0, y - region.y0) = voted(x, y) ? 0.5f + 0.5f * frac : 0.49f * frac;
            }
        }
        s.mask = mask_from_prob(s, W, H);
    } else {
        throw Error(ErrorCode::InvalidArgument, "unknown step operation '" + op.kind + "'");
    }
    return s;
}

/// Initial state: the segmenter is only run when a box was found or given.
inline StepState initial_state(const StepOp& op, const DeriveContext& ctx) {
    StepState s;
    s.op = op;
    s.box = clamp_box(box_from(op.params.at("box")), ctx.image.width(), ctx.image.height());
    s.window = window_from(op.params.at("window"));
    s.tau = op.params.at("tau").get<double>();
    s.margin_px = op.params.at("margin").get<int>();
    if (op.params.at("segmented").get<bool>()) {
        resegment(s, ctx);
    } else {
        s.crop = ctx.crop_mode == CropMode::Box ? s.box : BBox{0, 0, ctx.image.width(), ctx.image.height()};
        s.prob = ProbMask(s.crop.width(), s.crop.height(), 0.0f);
        s.mask = BinMask(ctx.image.width(), ctx.image.height());
    }
    return s;
}

inline std::vector<int> grid_cells(Strategy s) {
    if (s == Strategy::WrongPart) return {5, 6, 9, 10};
    if (s == Strategy::Oversegmented) return {0, 3, 12, 15};
    return {};
}

} // namespace engine_detail

/// Template kinds making up a strategy script, in execution order.
enum class TemplateKind { CenterClick, OrganWindow, GridFg, GridBg, ThresholdUp, ThresholdDown, CriticalFg, CriticalBg, BoxGrow, TargetWindow };

struct StrategyTemplate {
    TemplateKind kind;
    int cell = -1;
};

inline std::vector<StrategyTemplate> strategy_templates(Strategy s) {
    using K = TemplateKind;
    switch (s) {
    case Strategy::WrongPart:
        return {{K::CenterClick}, {K::OrganWindow}, {K::GridFg, 5}, {K::GridFg, 6}, {K::GridFg, 9}, {K::GridFg, 10}};
    case Strategy::Oversegmented:
        return {{K::ThresholdUp}, {K::CriticalBg}, {K::GridBg, 0}, {K::GridBg, 3}, {K::GridBg, 12}, {K::GridBg, 15}};
    case Strategy::Undersegmented:
        return {{K::BoxGrow}, {K::ThresholdDown}, {K::CriticalFg}};
    case Strategy::LowHU:
        return {{K::TargetWindow}};
    }
    return {};
}

struct StrategyScript {
    Strategy strategy = Strategy::WrongPart;
    std::vector<StrategyTemplate> templates;
    std::size_t next = 0;

    bool exhausted() const noexcept { return next >= templates.size(); }
    std::size_t remaining() const noexcept { return templates.size() - std::min(next, templates.size()); }
};

/// Result of apply_command. Exactly one of the optional members is set,
/// except for plain cursor/final updates.
struct CommandOutcome {
    std::string command;
    std::optional<int> step_id;
    std::vector<CriticalPoint> critical_points;
    std::vector<Preview> previews;
    std::string message;
};

/// One interactive segmentation of one structure on one slice: an
/// append-only tree of steps with a cursor and an optional final choice.
/// Not internally synchronized; callers serialize access per session.
class Session {
  public:
    Session(std::string id, std::shared_ptr<const HuImage> image, std::string target,
            std::shared_ptr<const Backend> backend, EngineConfig config = {})
        : id_(std::move(id)), image_(std::move(image)), target_(std::move(target)), backend_(std::move(backend)),
          config_(std::move(config)) {}

    // --- read access ---
    const std::string& id() const noexcept { return id_; }
    const std::string& target() const noexcept { return target_; }
    const HuImage& image() const noexcept { return *image_; }
    const EngineConfig& config() const noexcept { return config_; }
    const std::vector<SessionStep>& steps() const noexcept { return steps_; }
    const SessionStep& step(int id) const {
        if (id < 0 || id >= static_cast<int>(steps_.size())) {
            throw Error(ErrorCode::UnknownStep, "step " + std::to_string(id) + " does not exist");
        }
        return steps_[static_cast<std::size_t>(id)];
    }
    int cursor() const noexcept { return cursor_; }
    const SessionStep& current() const { return step(cursor_); }
    std::optional<int> final_step() const noexcept { return final_; }
    const std::vector<Detection>& detections() const noexcept { return detections_; }
    bool detected() const noexcept { return detected_; }
    bool has_ground_truth() const noexcept { return truth_.has_value(); }
    const std::vector<double>& dice_log() const noexcept { return dice_log_; }
    const std::optional<StrategyScript>& script() const noexcept { return script_; }
    nlohmann::json& metadata() noexcept { return metadata_; }
    const nlohmann::json& metadata() const noexcept { return metadata_; }

    /// Evaluation mode: Dice of every step against `truth` is logged.
    void attach_ground_truth(BinMask truth) {
        if (truth.width() != image_->width() || truth.height() != image_->height()) {
            throw Error(ErrorCode::DimensionMismatch, "ground truth size differs from the image");
        }
        truth_ = std::move(truth);
        dice_log_.clear();
        for (const auto& s : steps_) dice_log_.push_back(dice(s.state.mask, *truth_));
    }

    // --- lifecycle ---

    /// Step 0 from a detected (or user supplied) box. Without a box the step
    /// has an empty mask and a centered placeholder box the user can move.
    void initialize(std::optional<BBox> user_box = std::nullopt) {
        if (!steps_.empty()) throw Error(ErrorCode::InvalidArgument, "session already initialized");
        default_vocabulary().require(target_);
        const int W = image_->width(), H = image_->height();
        std::optional<BBox> box;
        if (user_box) {
            box = clamp_box(*user_box, W, H);
        } else {
            detections_ = run_detector();
            if (!detections_.empty()) box = detections_.front().box;
        }
        detected_ = box.has_value();
        const BBox placeholder{W / 4, H / 4, W / 4 + std::max(1, W / 2), H / 4 + std::max(1, H / 2)};
        StepOp op{"create",
                  {{"box", engine_detail::box_json(box.value_or(placeholder))},
                   {"window", engine_detail::window_json(config_.presets.default_window())},
                   {"tau", config_.initial_tau},
                   {"margin", 0},
                   {"segmented", detected_},
                   {"source", user_box ? "user" : (detected_ ? "detector" : "placeholder")}}};
        SessionStep s0{0, std::nullopt, engine_detail::initial_state(op, context()), true};
        append(std::move(s0));
        cursor_ = 0;
    }

    std::vector<Detection> run_detector() const {
        const NormImage input = window_normalize(*image_, config_.presets.default_window());
        std::vector<Detection> dets;
        for (auto& d : backend_->detect(input, {target_})) {
            if (d.label != target_) continue;
            d.box = clamp_box(d.box, image_->width(), image_->height());
            dets.push_back(d);
        }
        return dets;
    }

    /// Organ window and the default margin, derived from the cursor step.
    int apply_default() {
        const auto& preset = config_.presets.preset_for(target_);
        return append_derived({"default",
                               {{"window", engine_detail::window_json(config_.presets.get(preset))},
                                {"preset", preset},
                                {"margin", config_.default_margin_px}}});
    }

    void accept() {
        std::optional<int> newest;
        for (const auto& s : steps_) {
            if (s.parent && *s.parent == cursor_) newest = s.id;
        }
        if (!newest) throw Error(ErrorCode::UnknownStep, "no pending step below the cursor to accept");
        steps_[static_cast<std::size_t>(*newest)].accepted = true;
        move_cursor(*newest);
    }

    void revert_to(int step_id) {
        step(step_id);
        move_cursor(step_id);
    }

    void select_final(int step_id) {
        step(step_id);
        final_ = step_id;
    }

    // --- manual adaptations ---

    int shift_box(int dx, int dy) { return append_derived({"shift_box", {{"dx", dx}, {"dy", dy}}}); }

    int resize_box(const cmd::ResizeBox& r) {
        return append_derived(
            {"resize_box", {{"left", r.left}, {"top", r.top}, {"right", r.right}, {"bottom", r.bottom}}});
    }

    int set_threshold(double tau) {
        if (!(tau >= 0.0 && tau <= 1.0)) throw Error(ErrorCode::InvalidArgument, "threshold must lie in [0,1]");
        return append_derived({"set_threshold", {{"tau", tau}}});
    }

    /// Center of grid cell (i, j) over the cursor's crop: ((2i+1) W/8, (2j+1) H/8).
    Click grid_click_position(int cell, bool positive) const {
        if (cell < 0 || cell > 15) throw Error(ErrorCode::InvalidArgument, "grid cells are 0..15");
        const BBox& crop = current().state.crop;
        const int i = cell % 4;
        const int j = cell / 4;
        const int x = crop.x0 + std::min((2 * i + 1) * crop.width() / 8, crop.width() - 1);
        const int y = crop.y0 + std::min((2 * j + 1) * crop.height() / 8, crop.height() - 1);
        return {x, y, positive};
    }

    int grid_click(int cell, bool positive) {
        const Click c = grid_click_position(cell, positive);
        return append_derived({"grid_click",
                               {{"cell", cell}, {"positive", positive}, {"clicks", engine_detail::clicks_json({c})}}});
    }

    int center_click() {
        const auto [x, y] = current().state.box.center();
        return append_derived({"center_click", {{"clicks", engine_detail::clicks_json({Click{x, y, true}})}}});
    }

    int set_window(const cmd::SetWindow& w) {
        WindowSpec spec;
        nlohmann::json params;
        if (w.window) {
            spec = *w.window;
        } else {
            spec = config_.presets.get(w.preset);
            params["preset"] = w.preset;
        }
        if (!(spec.width > 0.0)) throw Error(ErrorCode::InvalidArgument, "window width must be positive");
        params["window"] = engine_detail::window_json(spec);
        return append_derived({"set_window", params});
    }

    int remove_component(int ordinal) { return append_derived({"remove_component", {{"ordinal", ordinal}}}); }

    StepOp ensemble_op() const {
        const int g = config_.ensemble_box_grow_px;
        const auto c = current().state.box.center();
        nlohmann::json members = nlohmann::json::array();
        members.push_back({{"kind", "resize_box"}, {"params", {{"left", g}, {"top", g}, {"right", g}, {"bottom", g}}}});
        members.push_back({{"kind", "center_click"},
                           {"params", {{"clicks", engine_detail::clicks_json({Click{c.first, c.second, true}})}}}});
        members.push_back(
            {{"kind", "set_window"},
             {"params", {{"window", engine_detail::window_json(config_.presets.window_for(target_))}}}});
        return {"ensemble", {{"members", members}, {"rule", static_cast<int>(config_.ensemble_rule)}}};
    }

    int ensemble_step() { return append_derived(ensemble_op()); }

    /// Re-runs detection and moves the box to the best detection.
    int redetect() {
        auto dets = run_detector();
        if (dets.empty()) throw Error(ErrorCode::NoDetection, "no '" + target_ + "' found");
        detections_ = dets;
        return append_derived({"detect", {{"box", engine_detail::box_json(dets.front().box)}}});
    }

    // --- critical points ---

    /// Pixels with |p - tau| <= epsilon, most ambiguous first, at least
    /// `critical_spacing_px` apart; at most k. Image coordinates.
    std::vector<CriticalPoint> find_critical_points(const StepState& s, int k) const {
        std::vector<CriticalPoint> candidates;
        for (int y = 0; y < s.prob.height(); ++y) {
            for (int x = 0; x < s.prob.width(); ++x) {
                const double amb = std::abs(static_cast<double>(s.prob(x, y)) - s.tau);
                if (amb <= config_.critical_epsilon) candidates.push_back({x + s.crop.x0, y + s.crop.y0, amb});
            }
        }
        std::stable_sort(candidates.begin(), candidates.end(),
                         [](const CriticalPoint& a, const CriticalPoint& b) { return a.ambiguity < b.ambiguity; });
        std::vector<CriticalPoint> chosen;
        const double min_d2 = static_cast<double>(config_.critical_spacing_px) * config_.critical_spacing_px;
        for (const auto& c : candidates) {
            if (static_cast<int>(chosen.size()) >= k) break;
            bool far = true;
            for (const auto& o : chosen) {
                const double dx = c.x - o.x, dy = c.y - o.y;
                if (dx * dx + dy * dy < min_d2) far = false;
            }
            if (far) chosen.push_back(c);
        }
        return chosen;
    }

    std::vector<CriticalPoint> propose_critical_points(std::optional<int> k = std::nullopt) {
        auto points = find_critical_points(current().state, k.value_or(config_.critical_k));
        proposal_ = Proposal{epoch_, points};
        return points;
    }

    /// `index` is 1-based into the latest proposal.
    int resolve_critical_point(int index, bool positive) {
        if (!proposal_) throw Error(ErrorCode::StaleProposal, "no critical points have been proposed");
        if (proposal_->epoch != epoch_) throw Error(ErrorCode::StaleProposal, "the cursor moved since the proposal");
        if (index < 1 || index > static_cast<int>(proposal_->points.size())) {
            throw Error(ErrorCode::IndexOutOfRange, "critical point " + std::to_string(index) + " was not proposed");
        }
        const auto& pt = proposal_->points[static_cast<std::size_t>(index - 1)];
        return append_derived({"resolve_critical_point",
                               {{"index", index},
                                {"positive", positive},
                                {"clicks", engine_detail::clicks_json({Click{pt.x, pt.y, positive}})}}});
    }

    // --- strategies ---

    void start_strategy(Strategy s) { script_ = StrategyScript{s, strategy_templates(s), 0}; }

    /// Runs the next template against the cursor step; the user then accepts
    /// or not before asking for the following one.
    int run_strategy_step() {
        if (!script_) throw Error(ErrorCode::ScriptExhausted, "no strategy is running");
        if (script_->exhausted()) throw Error(ErrorCode::ScriptExhausted, "strategy has no steps left");
        const std::size_t position = script_->next;
        StepOp op = resolve_template(script_->templates[position]);
        op.params["via"] = std::string(strategy_name(script_->strategy)) + "#" + std::to_string(position + 1);
        const int id = append_derived(op);
        script_->next = position + 1;
        return id;
    }

    // --- previews ---

    /// Non-mutating previews of the manual adaptations applied to the cursor.
    std::vector<Preview> generate_examples() const {
        std::vector<std::pair<InteractionCommand, StepOp>> ops;
        const auto& cur = current().state;
        const int g = config_.ensemble_box_grow_px;
        ops.push_back({cmd::ResizeBox::uniform(g), {"resize_box", {{"left", g}, {"top", g}, {"right", g}, {"bottom", g}}}});
        const double up = engine_detail::snap_tau(cur.tau + config_.strategy_tau_step);
        const double down = engine_detail::snap_tau(cur.tau - config_.strategy_tau_step);
        ops.push_back({cmd::SetThreshold{up}, {"set_threshold", {{"tau", up}}}});
        ops.push_back({cmd::SetThreshold{down}, {"set_threshold", {{"tau", down}}}});
        const Click gc = grid_click_position(5, true);
        ops.push_back({cmd::GridClick{5, true},
                       {"grid_click", {{"cell", 5}, {"positive", true}, {"clicks", engine_detail::clicks_json({gc})}}}});
        const auto c = cur.box.center();
        ops.push_back({cmd::CenterClick{},
                       {"center_click", {{"clicks", engine_detail::clicks_json({Click{c.first, c.second, true}})}}}});
        const auto& preset = config_.presets.preset_for(target_);
        ops.push_back({cmd::SetWindow{preset, std::nullopt},
                       {"set_window", {{"preset", preset}, {"window", engine_detail::window_json(config_.presets.get(preset))}}}});
        const auto comps = connected_components(cur.mask);
        if (comps.count() >= 2) {
            const int last = static_cast<int>(comps.count());
            ops.push_back({cmd::RemoveComponent{last}, {"remove_component", {{"ordinal", last}}}});
        }
        ops.push_back({cmd::Ensemble{}, ensemble_op()});
        std::vector<Preview> out;
        for (const auto& [command, op] : ops) {
            try {
                out.push_back({render(command), op, engine_detail::derive(cur, op, context()).mask});
            } catch (const Error& e) {
                if (e.code() == ErrorCode::BackendUnavailable) throw;
            }
        }
        return out;
    }

    // --- command dispatch ---

    CommandOutcome apply_command(const InteractionCommand& command) {
        CommandOutcome out;
        out.command = command_name(command);
        std::visit(
            detail::overloaded{
                [&](const cmd::SegmentTarget& c) {
                    if (c.label != target_) {
                        throw Error(ErrorCode::InvalidArgument,
                                    "this session segments '" + target_ + "'; start a new session for '" + c.label + "'");
                    }
                    out.step_id = redetect();
                },
                [&](const cmd::ApplyDefault&) { out.step_id = apply_default(); },
                [&](const cmd::AcceptStep&) { accept(); },
                [&](const cmd::RevertTo& c) { revert_to(c.step); },
                [&](const cmd::SelectFinal& c) { select_final(c.step); },
                [&](const cmd::ShiftBox& c) { out.step_id = shift_box(c.dx, c.dy); },
                [&](const cmd::ResizeBox& c) { out.step_id = resize_box(c); },
                [&](const cmd::SetThreshold& c) { out.step_id = set_threshold(c.tau); },
                [&](const cmd::GridClick& c) { out.step_id = grid_click(c.cell, c.positive); },
                [&](const cmd::CenterClick&) { out.step_id = center_click(); },
                [&](const cmd::SetWindow& c) { out.step_id = set_window(c); },
                [&](const cmd::RemoveComponent& c) { out.step_id = remove_component(c.ordinal); },
                [&](const cmd::Ensemble&) { out.step_id = ensemble_step(); },
                [&](const cmd::GenerateExamples&) { out.previews = generate_examples(); },
                [&](const cmd::ProposeCriticalPoints&) { out.critical_points = propose_critical_points(); },
                [&](const cmd::ResolveCriticalPoint& c) { out.step_id = resolve_critical_point(c.index, c.positive); },
                [&](const cmd::StartStrategy& c) {
                    start_strategy(c.strategy);
                    out.step_id = run_strategy_step();
                },
                [&](const cmd::NextStrategyStep&) { out.step_id = run_strategy_step(); },
                [&](const cmd::Help&) {
                    for (const auto& info : intent_catalog()) out.message += info.intent + ": " + info.example + "\n";
                },
            },
            command);
        return out;
    }

    CommandOutcome apply_text(std::string_view text) { return apply_command(parse_command(text)); }

    // --- export ---

    nlohmann::json export_json() const {
        nlohmann::json steps = nlohmann::json::array();
        for (const auto& s : steps_) {
            const auto& st = s.state;
            nlohmann::json j{{"id", s.id},
                             {"parent", s.parent ? nlohmann::json(*s.parent) : nlohmann::json(nullptr)},
                             {"op", st.op.kind},
                             {"params", st.op.params},
                             {"tau", st.tau},
                             {"window", engine_detail::window_json(st.window)},
                             {"box", engine_detail::box_json(st.box)},
                             {"margin", st.margin_px},
                             {"crop", engine_detail::box_json(st.crop)},
                             {"clicks", engine_detail::clicks_json(st.clicks)},
                             {"accepted", s.accepted},
                             {"mask_rle", mask_to_rle(st.mask)}};
            if (truth_) j["dice"] = dice_log_[static_cast<std::size_t>(s.id)];
            steps.push_back(std::move(j));
        }
        nlohmann::json doc{{"session_id", id_},
                           {"target", target_},
                           {"image", {{"width", image_->width()}, {"height", image_->height()}}},
                           {"backend", backend_->name()},
                           {"crop_mode", config_.crop_mode == CropMode::Box ? "box" : "full"},
                           {"detections", nlohmann::json::array()},
                           {"steps", steps},
                           {"cursor", cursor_},
                           {"final", final_ ? nlohmann::json(*final_) : nlohmann::json(nullptr)},
                           {"has_ground_truth", truth_.has_value()}};
        for (const auto& d : detections_) {
            doc["detections"].push_back({{"box", engine_detail::box_json(d.box)}, {"label", d.label}, {"score", d.score}});
        }
        if (!metadata_.is_null()) doc["metadata"] = metadata_;
        return doc;
    }

  private:
    struct Proposal {
        std::uint64_t epoch;
        std::vector<CriticalPoint> points;
    };

    DeriveContext context() const { return {*image_, *backend_, config_.crop_mode}; }

    void move_cursor(int id) {
        if (id != cursor_) ++epoch_;
        cursor_ = id;
    }

    void append(SessionStep s) {
        if (truth_) dice_log_.push_back(dice(s.state.mask, *truth_));
        steps_.push_back(std::move(s));
    }

    int append_derived(const StepOp& op) {
        StepState st = engine_detail::derive(current().state, op, context());
        const int id = static_cast<int>(steps_.size());
        append(SessionStep{id, cursor_, std::move(st), false});
        return id;
    }

    StepOp resolve_template(const StrategyTemplate& t) const {
        using K = TemplateKind;
        const auto& cur = current().state;
        const double step = config_.strategy_tau_step;
        switch (t.kind) {
        case K::CenterClick: {
            const auto c = cur.box.center();
            return {"center_click", {{"clicks", engine_detail::clicks_json({Click{c.first, c.second, true}})}}};
        }
        case K::OrganWindow: {
            const auto& preset = config_.presets.preset_for(target_);
            return {"set_window", {{"preset", preset}, {"window", engine_detail::window_json(config_.presets.get(preset))}}};
        }
        case K::GridFg:
        case K::GridBg: {
            const bool positive = t.kind == K::GridFg;
            const Click c = grid_click_position(t.cell, positive);
            return {"grid_click",
                    {{"cell", t.cell}, {"positive", positive}, {"clicks", engine_detail::clicks_json({c})}}};
        }
        case K::ThresholdUp: return {"set_threshold", {{"tau", engine_detail::snap_tau(cur.tau + step)}}};
        case K::ThresholdDown: return {"set_threshold", {{"tau", engine_detail::snap_tau(cur.tau - step)}}};
        case K::CriticalFg:
        case K::CriticalBg: {
            const bool positive = t.kind == K::CriticalFg;
            std::vector<Click> clicks;
            for (const auto& p : find_critical_points(cur, config_.critical_k)) clicks.push_back({p.x, p.y, positive});
            return {"critical_points", {{"positive", positive}, {"clicks", engine_detail::clicks_json(clicks)}}};
        }
        case K::BoxGrow: {
            const int g = config_.strategy_box_grow_px;
            return {"resize_box", {{"left", g}, {"top", g}, {"right", g}, {"bottom", g}}};
        }
        case K::TargetWindow: {
            // Center the window on the structure's own attenuation (3x3 mean at
            // the box center) and keep the organ preset's width.
            const auto [cx, cy] = cur.box.center();
            double sum = 0.0;
            int n = 0;
            for (int y = cy - 1; y <= cy + 1; ++y) {
                for (int x = cx - 1; x <= cx + 1; ++x) {
                    if (image_->pixels.contains(x, y)) {
                        sum += (*image_)(x, y);
                        ++n;
                    }
                }
            }
            const WindowSpec w{sum / n, config_.presets.window_for(target_).width};
            return {"set_window", {{"window", engine_detail::window_json(w)}}};
        }
        }
        throw Error(ErrorCode::InvalidArgument, "unknown strategy template");
    }

    std::string id_;
    std::shared_ptr<const HuImage> image_;
    std::string target_;
    std::shared_ptr<const Backend> backend_;
    EngineConfig config_;
    std::vector<SessionStep> steps_;
    int cursor_ = 0;
    std::uint64_t epoch_ = 0;
    std::optional<int> final_;
    std::vector<Detection> detections_;
    bool detected_ = false;
    std::optional<BinMask> truth_;
    std::vector<double> dice_log_;
    std::optional<Proposal> proposal_;
    std::optional<StrategyScript> script_;
    nlohmann::json metadata_;
};

/// Detects the target, segments it and records step 0. When nothing is
/// detected the session still exists (detected() == false) with an empty
/// mask and a placeholder box.
inline Session create_session(std::string id, std::shared_ptr<const HuImage> image, const std::string& target,
                              std::shared_ptr<const Backend> backend, EngineConfig config = {},
                              std::optional<BBox> user_box = std::nullopt) {
    Session s(std::move(id), std::move(image), target, std::move(backend), std::move(config));
    s.initialize(user_box);
    return s;
}

/// Recomputes every step of an exported session from its op descriptors and
/// returns the masks in step order.
inline std::vector<BinMask> replay_export(const nlohmann::json& doc, const HuImage& image, const Backend& backend) {
    const CropMode mode = doc.value("crop_mode", "box") == "full" ? CropMode::Full : CropMode::Box;
    const DeriveContext ctx{image, backend, mode};
    std::vector<StepState> states;
    std::vector<BinMask> masks;
    for (const auto& s : doc.at("steps")) {
        const int id = s.at("id").get<int>();
        if (id != static_cast<int>(states.size())) throw Error(ErrorCode::InvalidArgument, "step ids must be dense");
        const StepOp op{s.at("op").get<std::string>(), s.at("params")};
        StepState st;
        if (s.at("parent").is_null()) {
            st = engine_detail::initial_state(op, ctx);
        } else {
            const int parent = s.at("parent").get<int>();
            if (parent < 0 || parent >= id) throw Error(ErrorCode::UnknownStep, "parent must precede its child");
            st = engine_detail::derive(states[static_cast<std::size_t>(parent)], op, ctx);
        }
        masks.push_back(st.mask);
        states.push_back(std::move(st));
    }
    return masks;
}

} // namespace limis
