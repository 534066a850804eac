#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "limis/command.hpp"
#include "limis/core.hpp"

namespace limis {

/// ParseError / AmbiguousLabel carry the phrases a UI should offer instead.
class CommandError : public Error {
  public:
    CommandError(ErrorCode code, const std::string& message, std::vector<std::string> suggestions)
        : Error(code, message), suggestions_(std::move(suggestions)) {}

    const std::vector<std::string>& suggestions() const noexcept { return suggestions_; }

  private:
    std::vector<std::string> suggestions_;
};

/// One grammar entry: the intent, the trigger words, and a canonical example.
struct IntentInfo {
    std::string intent;
    std::vector<std::string> keywords;
    std::string example;
};

inline const std::vector<IntentInfo>& intent_catalog() {
    static const std::vector<IntentInfo> catalog{
        {"help", {"help", "?", "commands"}, "help"},
        {"start_strategy",
         {"wrong", "oversegmented", "oversegmentation", "undersegmented", "undersegmentation", "low",
          "hypodense", "large", "small"},
         "target undersegmented"},
        {"next_strategy_step", {"next", "continue", "proceed"}, "next strategy step"},
        {"resolve_critical_point",
         {"critical", "point", "foreground", "background", "inside", "outside"},
         "critical point 1 is foreground"},
        {"propose_critical_points", {"critical", "uncertain", "ambiguous", "propose"}, "propose critical points"},
        {"grid_click", {"cell", "grid"}, "foreground click in cell 5"},
        {"center_click", {"center", "centre", "middle", "click"}, "center click"},
        {"set_threshold", {"threshold", "confidence", "tau", "cutoff"}, "threshold 0.6"},
        {"set_window", {"window", "normalization", "normalisation", "normalize", "normalise", "level"},
         "window preset liver"},
        {"remove_component", {"remove", "delete", "erase", "discard", "component", "blob", "island"},
         "remove component 2"},
        {"ensemble", {"ensemble", "combine", "majority", "vote"}, "ensemble"},
        {"generate_examples", {"examples", "example", "preview", "previews", "exemplary"}, "generate examples"},
        {"shift_box", {"shift", "move", "translate", "nudge", "left", "right", "up", "down"}, "shift box by 5 0"},
        {"resize_box",
         {"expand", "enlarge", "grow", "widen", "bigger", "increase", "shrink", "reduce", "smaller", "decrease",
          "tighten", "resize"},
         "expand box by 10"},
        {"revert_to", {"revert", "undo", "back", "rollback", "restore"}, "revert to step 0"},
        {"select_final", {"final", "submit", "finalize", "finalise"}, "select step 2 as final"},
        {"accept", {"accept", "keep", "yes", "ok", "okay", "good"}, "accept"},
        {"apply_default", {"default"}, "apply default"},
        {"segment_target", {"segment", "find", "locate", "show", "outline", "delineate", "detect"},
         "segment the liver"},
    };
    return catalog;
}

namespace detail {

inline int edit_distance(std::string_view a, std::string_view b) {
    std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = static_cast<int>(i);
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

inline std::optional<double> as_number(std::string_view tok) {
    if (tok.empty()) return std::nullopt;
    if (tok.front() == '+') tok.remove_prefix(1);
    double v = 0.0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

/// Lowercases, splits on anything that is not [a-z0-9._+-?], strips trailing
/// periods from words and unit suffixes ("5px", "40 hu") from numbers.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::string norm;
    norm.reserve(text.size());
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        const char low = static_cast<char>(std::tolower(c));
        if (std::isalnum(c) || low == '.' || low == '_' || low == '+' || low == '-') {
            norm.push_back(low);
        } else if (low == '?') {
            norm += " ? ";
        } else {
            norm.push_back(' ');
        }
    }
    std::vector<std::string> raw;
    std::size_t pos = 0;
    while (pos < norm.size()) {
        while (pos < norm.size() && norm[pos] == ' ') ++pos;
        std::size_t end = pos;
        while (end < norm.size() && norm[end] != ' ') ++end;
        if (end > pos) raw.push_back(norm.substr(pos, end - pos));
        pos = end;
    }
    std::vector<std::string> out;
    for (std::string tok : raw) {
        while (!tok.empty() && tok.back() == '.' ) tok.pop_back();
        while (!tok.empty() && (tok.front() == '.' && !(tok.size() > 1 && std::isdigit(static_cast<unsigned char>(tok[1]))))) {
            tok.erase(tok.begin());
        }
        if (tok.empty()) continue;
        for (std::string_view unit : {"px", "hu", "pixels", "pixel"}) {
            if (tok.size() > unit.size() && tok.ends_with(unit) &&
                as_number(std::string_view(tok).substr(0, tok.size() - unit.size()))) {
                tok.resize(tok.size() - unit.size());
                break;
            }
        }
        if ((tok == "px" || tok == "pixels" || tok == "pixel" || tok == "hu") && !out.empty() && as_number(out.back())) {
            continue;
        }
        out.push_back(tok);
    }
    return out;
}

inline const std::set<std::string>& filler_words() {
    static const std::set<std::string> words{"the", "a",    "an",  "please", "to",   "of",  "by",   "is",   "as",
                                             "on",  "in",   "at",  "for",    "my",   "this", "that", "me",   "with",
                                             "and", "it",   "be",  "should", "can",  "you",  "i",    "want", "now",
                                             "set", "change", "make", "current", "bounding", "mask", "image"};
    return words;
}

class TokenView {
  public:
    explicit TokenView(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {}

    bool has(std::string_view w) const { return std::find(tokens_.begin(), tokens_.end(), w) != tokens_.end(); }
    bool has_any(std::initializer_list<std::string_view> ws) const {
        return std::any_of(ws.begin(), ws.end(), [&](std::string_view w) { return has(w); });
    }
    bool has_seq(std::string_view a, std::string_view b) const {
        for (std::size_t i = 0; i + 1 < tokens_.size(); ++i) {
            if (tokens_[i] == a && tokens_[i + 1] == b) return true;
        }
        return false;
    }
    std::vector<double> numbers() const {
        std::vector<double> out;
        for (const auto& t : tokens_) {
            if (auto v = as_number(t)) out.push_back(*v);
        }
        return out;
    }
    /// Number immediately following the first occurrence of any of `keys`.
    std::optional<double> number_after(std::initializer_list<std::string_view> keys) const {
        for (std::size_t i = 0; i + 1 < tokens_.size(); ++i) {
            for (auto k : keys) {
                if (tokens_[i] == k) {
                    if (auto v = as_number(tokens_[i + 1])) return v;
                }
            }
        }
        return std::nullopt;
    }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  private:
    std::vector<std::string> tokens_;
};

inline CommandError parse_error(const std::string& message, std::vector<std::string> suggestions = {}) {
    return CommandError(ErrorCode::ParseError, message, std::move(suggestions));
}

inline int require_int(double v, const std::string& what) {
    if (std::floor(v) != v || std::abs(v) > 1e6) throw parse_error(what + " must be an integer");
    return static_cast<int>(v);
}

inline std::optional<int> first_int(const TokenView& tv, const std::string& what) {
    const auto nums = tv.numbers();
    if (nums.empty()) return std::nullopt;
    return require_int(nums.front(), what);
}

inline std::optional<bool> polarity(const TokenView& tv) {
    if (tv.has_any({"background", "bg", "negative", "neg", "outside", "exclude", "no", "not"})) return false;
    if (tv.has_any({"foreground", "fg", "positive", "pos", "inside", "include", "yes", "organ", "target"})) return true;
    return std::nullopt;
}

/// Cell codes "a1".."d4": letter = row, digit = column.
inline std::optional<int> cell_code(const std::string& tok) {
    if (tok.size() == 2 && tok[0] >= 'a' && tok[0] <= 'd' && tok[1] >= '1' && tok[1] <= '4') {
        return (tok[0] - 'a') * 4 + (tok[1] - '1');
    }
    return std::nullopt;
}

inline std::string match_label(const std::vector<std::string>& words, const LabelVocabulary& vocab) {
    std::vector<std::string> w = words;
    // "left kidney" / "kidney, left" -> "kidney left"; "gall bladder" -> "gallbladder"
    const bool kidney = std::find(w.begin(), w.end(), "kidney") != w.end();
    for (std::string side : {"left", "right"}) {
        if (kidney && std::find(w.begin(), w.end(), side) != w.end()) {
            w = {"kidney", side};
            break;
        }
    }
    if (w.size() == 2 && w[0] == "gall" && w[1] == "bladder") w = {"gallbladder"};
    std::string phrase;
    for (const auto& t : w) phrase += (phrase.empty() ? "" : " ") + t;
    if (phrase.empty()) throw parse_error("which structure should be segmented?", {"segment the liver"});
    if (vocab.contains(phrase)) return phrase;
    std::vector<std::string> hits;
    for (const auto& name : vocab.names()) {
        if (name.starts_with(phrase)) hits.push_back(name);
    }
    if (hits.size() == 1) return hits.front();
    if (hits.size() > 1) {
        std::vector<std::string> sugg;
        for (const auto& h : hits) sugg.push_back("segment " + h);
        throw CommandError(ErrorCode::AmbiguousLabel, "'" + phrase + "' matches several structures", sugg);
    }
    std::vector<std::string> near;
    for (const auto& name : vocab.names()) {
        if (edit_distance(phrase, name) <= 2) near.push_back("segment " + name);
    }
    throw parse_error("unknown structure '" + phrase + "'", near.empty() ? std::vector<std::string>{"help"} : near);
}

inline std::vector<std::string> suggestions_for(const std::vector<std::string>& tokens) {
    std::vector<std::string> out;
    for (const auto& info : intent_catalog()) {
        bool close = false;
        for (const auto& tok : tokens) {
            for (const auto& kw : info.keywords) {
                if (kw.size() > 2 && edit_distance(tok, kw) <= 2) close = true;
            }
        }
        if (close && std::find(out.begin(), out.end(), info.example) == out.end()) out.push_back(info.example);
    }
    if (out.empty()) out.push_back("help");
    return out;
}

} // namespace detail

/// Deterministic keyword/synonym grammar; see docs/commands.md.
inline InteractionCommand parse_command(std::string_view text, const LabelVocabulary& vocab = default_vocabulary()) {
    using namespace cmd;
    using detail::parse_error;
    std::vector<std::string> all = detail::tokenize(text);
    if (all.empty()) throw parse_error("empty command", {"help"});
    std::vector<std::string> content;
    for (const auto& t : all) {
        if (!detail::filler_words().count(t)) content.push_back(t);
    }
    const detail::TokenView tv(content);
    const auto nums = tv.numbers();

    if (tv.has_any({"help", "?", "commands"})) return Help{};

    // Guided strategies, named after the failure they address.
    if (tv.has_seq("wrong", "part") || tv.has_seq("wrong", "image") || tv.has_seq("wrong", "region") ||
        tv.has_seq("wrong", "organ") || tv.has_seq("wrong", "structure") || tv.has("wrong_part")) {
        return StartStrategy{Strategy::WrongPart};
    }
    if (tv.has_any({"oversegmented", "oversegmentation", "over-segmented", "oversegmenting"}) ||
        tv.has_seq("over", "segmented") || tv.has_seq("too", "large") || tv.has_seq("too", "big") ||
        tv.has_seq("too", "much")) {
        return StartStrategy{Strategy::Oversegmented};
    }
    if (tv.has_any({"undersegmented", "undersegmentation", "under-segmented", "undersegmenting"}) ||
        tv.has_seq("under", "segmented") || tv.has_seq("too", "small") || tv.has_seq("too", "little")) {
        return StartStrategy{Strategy::Undersegmented};
    }
    if (tv.has_seq("low", "hu") || tv.has_seq("low", "contrast") || tv.has_seq("low", "density") ||
        tv.has_seq("low", "attenuation") || tv.has("hypodense") || tv.has("low_hu")) {
        return StartStrategy{Strategy::LowHU};
    }
    if (tv.has("strategy") && !tv.has_any({"next", "continue", "proceed"})) {
        throw parse_error("which strategy?", {"wrong image part segmented", "target oversegmented",
                                              "target undersegmented", "target has low hu values"});
    }
    if (tv.has_any({"next", "continue", "proceed"})) return NextStrategyStep{};

    if ((tv.has("critical") || tv.has("point")) && !nums.empty()) {
        if (auto side = detail::polarity(tv)) {
            const int index = detail::require_int(nums.front(), "critical point index");
            if (index < 1) throw parse_error("critical points are numbered from 1");
            return ResolveCriticalPoint{index, *side};
        }
        throw parse_error("is the point foreground or background?",
                          {"critical point " + std::to_string(static_cast<long long>(nums.front())) + " is foreground",
                           "critical point " + std::to_string(static_cast<long long>(nums.front())) + " is background"});
    }
    if (tv.has_any({"critical", "uncertain", "ambiguous"}) || tv.has_seq("propose", "points") ||
        tv.has_seq("ask", "points")) {
        return ProposeCriticalPoints{};
    }

    std::optional<int> code;
    for (const auto& t : content) {
        if (auto c = detail::cell_code(t)) code = c;
    }
    if (tv.has_any({"cell", "grid"}) || code) {
        int cell = 0;
        if (code) {
            cell = *code;
        } else if (auto n = tv.number_after({"cell", "grid"}); n || !nums.empty()) {
            cell = detail::require_int(n ? *n : nums.front(), "grid cell");
        } else {
            throw parse_error("which grid cell (0-15 or A1-D4)?", {"foreground click in cell 5"});
        }
        if (cell < 0 || cell > 15) throw parse_error("grid cells are 0..15", {"foreground click in cell 15"});
        return GridClick{cell, detail::polarity(tv).value_or(true)};
    }

    if (tv.has_any({"center", "centre", "middle"}) && tv.has_any({"click", "point", "seed"})) return CenterClick{};

    if (tv.has_any({"threshold", "confidence", "tau", "cutoff"})) {
        if (nums.empty()) throw parse_error("threshold needs a value in [0,1]", {"threshold 0.6"});
        const double tau = nums.front();
        if (!(tau >= 0.0 && tau <= 1.0)) throw parse_error("threshold must lie in [0,1]", {"threshold 0.6"});
        return SetThreshold{tau};
    }

    if (tv.has_any({"window", "normalization", "normalisation", "normalize", "normalise", "level"})) {
        std::optional<double> center = tv.number_after({"center", "centre", "level", "c", "location"});
        std::optional<double> width = tv.number_after({"width", "w"});
        if (!center && !width && nums.size() >= 2) {
            center = nums[0];
            width = nums[1];
        }
        if (center || width) {
            if (!center || !width) throw parse_error("window needs both center and width", {"window center 60 width 160"});
            if (!(*width > 0.0)) throw parse_error("window width must be positive", {"window center 60 width 160"});
            return SetWindow{"", WindowSpec{*center, *width}};
        }
        static const std::set<std::string> skip{"window", "normalization", "normalisation", "normalize", "normalise",
                                                "level", "preset", "use", "ct", "windowing", "apply", "adjust"};
        std::string name;
        for (const auto& t : content) {
            if (skip.count(t)) continue;
            name += (name.empty() ? "" : "_") + t;
        }
        if (name.empty()) throw parse_error("which window?", {"window preset liver", "window center 60 width 160"});
        return SetWindow{name, std::nullopt};
    }

    if (tv.has_any({"remove", "delete", "erase", "discard", "drop"}) &&
        tv.has_any({"component", "blob", "island", "region", "piece", "part", "comp"})) {
        const auto ordinal = detail::first_int(tv, "component ordinal");
        if (!ordinal) throw parse_error("which component (1 = largest)?", {"remove component 2"});
        if (*ordinal < 1) throw parse_error("components are numbered from 1", {"remove component 1"});
        return RemoveComponent{*ordinal};
    }

    if (tv.has_any({"ensemble", "combine", "majority", "vote"})) return Ensemble{};
    if (tv.has_any({"examples", "example", "preview", "previews", "exemplary", "demo"})) return GenerateExamples{};

    if (tv.has_any({"shift", "move", "translate", "nudge", "pan"})) {
        int dx = 0, dy = 0;
        bool directional = false;
        const auto& toks = tv.tokens();
        for (std::size_t i = 0; i < toks.size(); ++i) {
            int sx = 0, sy = 0;
            if (toks[i] == "left") sx = -1;
            else if (toks[i] == "right") sx = 1;
            else if (toks[i] == "up") sy = -1;
            else if (toks[i] == "down") sy = 1;
            else continue;
            directional = true;
            std::optional<double> amount;
            if (i + 1 < toks.size()) amount = detail::as_number(toks[i + 1]);
            if (!amount && i > 0) amount = detail::as_number(toks[i - 1]);
            if (!amount) throw parse_error("how many pixels?", {"move box left 5"});
            const int a = detail::require_int(*amount, "shift");
            dx += sx * a;
            dy += sy * a;
        }
        if (directional) return ShiftBox{dx, dy};
        if (nums.size() >= 2) {
            return ShiftBox{detail::require_int(nums[0], "shift"), detail::require_int(nums[1], "shift")};
        }
        throw parse_error("shift needs dx dy or a direction", {"shift box by 5 0", "move box left 5"});
    }

    if (tv.has("resize")) {
        if (nums.size() >= 4) {
            return ResizeBox{detail::require_int(nums[0], "edge"), detail::require_int(nums[1], "edge"),
                             detail::require_int(nums[2], "edge"), detail::require_int(nums[3], "edge")};
        }
        if (nums.size() == 1) return ResizeBox::uniform(detail::require_int(nums[0], "resize"));
        throw parse_error("resize needs one value or four edge values", {"resize box 5 0 5 0", "expand box by 10"});
    }
    const bool grow = tv.has_any({"expand", "enlarge", "grow", "widen", "bigger", "increase", "larger", "inflate"});
    const bool shrink = tv.has_any({"shrink", "reduce", "smaller", "decrease", "tighten", "contract"});
    if (grow || shrink) {
        const int amount = detail::first_int(tv, "resize").value_or(10);
        if (amount < 0) throw parse_error("use expand/shrink with a non-negative amount", {"expand box by 10"});
        return ResizeBox::uniform(shrink ? -amount : amount);
    }

    if (tv.has_any({"revert", "undo", "back", "rollback", "restore"})) {
        const auto step = detail::first_int(tv, "step id");
        if (!step) throw parse_error("which step?", {"revert to step 0"});
        if (*step < 0) throw parse_error("step ids start at 0", {"revert to step 0"});
        return RevertTo{*step};
    }
    if (tv.has_any({"final", "submit", "finalize", "finalise"})) {
        const auto step = detail::first_int(tv, "step id");
        if (!step) throw parse_error("which step should be final?", {"select step 2 as final"});
        if (*step < 0) throw parse_error("step ids start at 0", {"select step 0 as final"});
        return SelectFinal{*step};
    }
    if (tv.has("default")) return ApplyDefault{};
    if (tv.has_any({"accept", "keep", "yes", "ok", "okay", "good"})) return AcceptStep{};

    if (tv.has_any({"segment", "find", "locate", "show", "outline", "delineate", "detect", "mark"})) {
        static const std::set<std::string> skip{"segment", "find", "locate", "show", "outline", "delineate",
                                                "detect",  "mark", "target", "organ", "structure"};
        std::vector<std::string> words;
        for (const auto& t : content) {
            if (!skip.count(t)) words.push_back(t);
        }
        return SegmentTarget{detail::match_label(words, vocab)};
    }
    // A bare structure name is read as a segmentation request.
    {
        std::string phrase;
        for (const auto& t : content) phrase += (phrase.empty() ? "" : " ") + t;
        if (vocab.contains(phrase)) return SegmentTarget{phrase};
        if (content.size() == 2 && std::find(content.begin(), content.end(), "kidney") != content.end()) {
            return SegmentTarget{detail::match_label(content, vocab)};
        }
    }
    throw parse_error("could not understand '" + std::string(text) + "'", detail::suggestions_for(all));
}

} // namespace limis
