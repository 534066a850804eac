#pragma once

#include <charconv>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "limis/core.hpp"

namespace limis {

enum class Strategy { WrongPart, Oversegmented, Undersegmented, LowHU };

inline std::string_view strategy_name(Strategy s) {
    switch (s) {
    case Strategy::WrongPart: return "wrong_part";
    case Strategy::Oversegmented: return "oversegmented";
    case Strategy::Undersegmented: return "undersegmented";
    case Strategy::LowHU: return "low_hu";
    }
    return "";
}

inline std::optional<Strategy> strategy_from_name(std::string_view name) {
    for (auto s : {Strategy::WrongPart, Strategy::Oversegmented, Strategy::Undersegmented, Strategy::LowHU}) {
        if (strategy_name(s) == name) return s;
    }
    return std::nullopt;
}

/// Button labels shown to users.
inline std::string_view strategy_title(Strategy s) {
    switch (s) {
    case Strategy::WrongPart: return "Wrong image part segmented";
    case Strategy::Oversegmented: return "Target oversegmented";
    case Strategy::Undersegmented: return "Target undersegmented";
    case Strategy::LowHU: return "Target has low HU-values";
    }
    return "";
}

namespace cmd {

struct SegmentTarget {
    std::string label;
    friend bool operator==(const SegmentTarget&, const SegmentTarget&) = default;
};
struct ApplyDefault {
    friend bool operator==(const ApplyDefault&, const ApplyDefault&) = default;
};
struct AcceptStep {
    friend bool operator==(const AcceptStep&, const AcceptStep&) = default;
};
struct RevertTo {
    int step = 0;
    friend bool operator==(const RevertTo&, const RevertTo&) = default;
};
struct SelectFinal {
    int step = 0;
    friend bool operator==(const SelectFinal&, const SelectFinal&) = default;
};
struct ShiftBox {
    int dx = 0;
    int dy = 0;
    friend bool operator==(const ShiftBox&, const ShiftBox&) = default;
};
/// Per-edge growth in pixels; negative values shrink that edge.
struct ResizeBox {
    int left = 0;
    int top = 0;
    int right = 0;
    int bottom = 0;

    static ResizeBox uniform(int d) { return {d, d, d, d}; }
    bool is_uniform() const noexcept { return left == top && top == right && right == bottom; }
    friend bool operator==(const ResizeBox&, const ResizeBox&) = default;
};
struct SetThreshold {
    double tau = 0.5;
    friend bool operator==(const SetThreshold&, const SetThreshold&) = default;
};
/// Cell 0..15, row-major over a 4x4 grid laid over the current crop.
struct GridClick {
    int cell = 0;
    bool positive = true;
    friend bool operator==(const GridClick&, const GridClick&) = default;
};
struct CenterClick {
    friend bool operator==(const CenterClick&, const CenterClick&) = default;
};
/// Either a named preset or an explicit center/width pair.
struct SetWindow {
    std::string preset;
    std::optional<WindowSpec> window;
    friend bool operator==(const SetWindow&, const SetWindow&) = default;
};
/// 1-based ordinal; components are ranked largest first.
struct RemoveComponent {
    int ordinal = 1;
    friend bool operator==(const RemoveComponent&, const RemoveComponent&) = default;
};
struct Ensemble {
    friend bool operator==(const Ensemble&, const Ensemble&) = default;
};
struct GenerateExamples {
    friend bool operator==(const GenerateExamples&, const GenerateExamples&) = default;
};
struct ProposeCriticalPoints {
    friend bool operator==(const ProposeCriticalPoints&, const ProposeCriticalPoints&) = default;
};
/// 1-based index into the latest proposal.
struct ResolveCriticalPoint {
    int index = 1;
    bool positive = true;
    friend bool operator==(const ResolveCriticalPoint&, const ResolveCriticalPoint&) = default;
};
struct StartStrategy {
    Strategy strategy = Strategy::WrongPart;
    friend bool operator==(const StartStrategy&, const StartStrategy&) = default;
};
struct NextStrategyStep {
    friend bool operator==(const NextStrategyStep&, const NextStrategyStep&) = default;
};
struct Help {
    friend bool operator==(const Help&, const Help&) = default;
};

} // namespace cmd

using InteractionCommand =
    std::variant<cmd::SegmentTarget, cmd::ApplyDefault, cmd::AcceptStep, cmd::RevertTo, cmd::SelectFinal,
                 cmd::ShiftBox, cmd::ResizeBox, cmd::SetThreshold, cmd::GridClick, cmd::CenterClick,
                 cmd::SetWindow, cmd::RemoveComponent, cmd::Ensemble, cmd::GenerateExamples,
                 cmd::ProposeCriticalPoints, cmd::ResolveCriticalPoint, cmd::StartStrategy,
                 cmd::NextStrategyStep, cmd::Help>;

/// Shortest decimal text that reads back to the same double.
inline std::string format_number(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

namespace detail {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

} // namespace detail

/// Stable intent identifier, used in step descriptors and the REST API.
inline std::string command_name(const InteractionCommand& c) {
    static constexpr const char* names[] = {
        "segment_target", "apply_default",    "accept",        "revert_to",
        "select_final",   "shift_box",        "resize_box",    "set_threshold",
        "grid_click",     "center_click",     "set_window",    "remove_component",
        "ensemble",       "generate_examples", "propose_critical_points", "resolve_critical_point",
        "start_strategy", "next_strategy_step", "help"};
    return names[c.index()];
}

/// Canonical phrase for a command; parse(render(c)) == c.
inline std::string render(const InteractionCommand& c) {
    using namespace cmd;
    return std::visit(
        detail::overloaded{
            [](const SegmentTarget& v) { return "segment " + v.label; },
            [](const ApplyDefault&) { return std::string("apply default"); },
            [](const AcceptStep&) { return std::string("accept"); },
            [](const RevertTo& v) { return "revert to step " + std::to_string(v.step); },
            [](const SelectFinal& v) { return "select step " + std::to_string(v.step) + " as final"; },
            [](const ShiftBox& v) {
                return "shift box by " + std::to_string(v.dx) + " " + std::to_string(v.dy);
            },
            [](const ResizeBox& v) {
                if (v.is_uniform()) {
                    return v.left >= 0 ? "expand box by " + std::to_string(v.left)
                                       : "shrink box by " + std::to_string(-v.left);
                }
                return "resize box " + std::to_string(v.left) + " " + std::to_string(v.top) + " " +
                       std::to_string(v.right) + " " + std::to_string(v.bottom);
            },
            [](const SetThreshold& v) { return "threshold " + format_number(v.tau); },
            [](const GridClick& v) {
                return std::string(v.positive ? "foreground" : "background") + " click in cell " +
                       std::to_string(v.cell);
            },
            [](const CenterClick&) { return std::string("center click"); },
            [](const SetWindow& v) {
                if (v.window) {
                    return "window center " + format_number(v.window->center) + " width " +
                           format_number(v.window->width);
                }
                return "window preset " + v.preset;
            },
            [](const RemoveComponent& v) { return "remove component " + std::to_string(v.ordinal); },
            [](const Ensemble&) { return std::string("ensemble"); },
            [](const GenerateExamples&) { return std::string("generate examples"); },
            [](const ProposeCriticalPoints&) { return std::string("propose critical points"); },
            [](const ResolveCriticalPoint& v) {
                return "critical point " + std::to_string(v.index) + " is " +
                       (v.positive ? "foreground" : "background");
            },
            [](const StartStrategy& v) {
                switch (v.strategy) {
                case Strategy::WrongPart: return std::string("wrong image part segmented");
                case Strategy::Oversegmented: return std::string("target oversegmented");
                case Strategy::Undersegmented: return std::string("target undersegmented");
                case Strategy::LowHU: return std::string("target has low hu values");
                }
                return std::string();
            },
            [](const NextStrategyStep&) { return std::string("next strategy step"); },
            [](const Help&) { return std::string("help"); },
        },
        c);
}

} // namespace limis
