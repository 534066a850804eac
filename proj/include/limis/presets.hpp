#pragma once

#include <fstream>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "limis/core.hpp"

namespace limis {

/// Named CT windows plus the organ -> window mapping used by the default
/// adaptation. The canonical copy lives in config/window_presets.json; the
/// built-in table below mirrors it so the library works without the file
/// (a test keeps the two in sync).
class WindowPresets {
  public:
    static constexpr const char* kBuiltinJson = R"({
  "default": "soft_tissue",
  "presets": [
    {"name": "soft_tissue", "center": 50, "width": 400},
    {"name": "liver", "center": 60, "width": 160},
    {"name": "bladder", "center": 40, "width": 400}
  ],
  "organ_map": {
    "esophagus": "soft_tissue",
    "stomach": "soft_tissue",
    "duodenum": "soft_tissue",
    "colon": "soft_tissue",
    "gallbladder": "soft_tissue",
    "liver": "liver",
    "pancreas": "soft_tissue",
    "kidney left": "soft_tissue",
    "kidney right": "soft_tissue",
    "bladder": "bladder",
    "spleen": "soft_tissue"
  }
})";

    WindowPresets() : WindowPresets(from_json(nlohmann::json::parse(kBuiltinJson))) {}

    static WindowPresets from_json(const nlohmann::json& doc, const LabelVocabulary& vocab = default_vocabulary()) {
        WindowPresets out(0);
        out.default_name_ = doc.at("default").get<std::string>();
        for (const auto& p : doc.at("presets")) {
            WindowSpec w{p.at("center").get<double>(), p.at("width").get<double>()};
            if (!(w.width > 0.0)) throw Error(ErrorCode::InvalidArgument, "preset width must be positive");
            out.presets_[p.at("name").get<std::string>()] = w;
        }
        for (const auto& [label, name] : doc.at("organ_map").items()) out.organ_map_[label] = name.get<std::string>();
        out.check(vocab);
        return out;
    }

    static WindowPresets load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw Error(ErrorCode::IoError, "cannot open preset file " + path);
        return from_json(nlohmann::json::parse(in));
    }

    nlohmann::json to_json() const {
        nlohmann::json doc{{"default", default_name_}, {"presets", nlohmann::json::array()}, {"organ_map", nlohmann::json::object()}};
        for (const auto& [name, w] : presets_) doc["presets"].push_back({{"name", name}, {"center", w.center}, {"width", w.width}});
        for (const auto& [label, name] : organ_map_) doc["organ_map"][label] = name;
        return doc;
    }

    bool has(const std::string& name) const { return presets_.count(name) != 0; }

    const WindowSpec& get(const std::string& name) const {
        auto it = presets_.find(name);
        if (it == presets_.end()) throw Error(ErrorCode::InvalidArgument, "unknown window preset '" + name + "'");
        return it->second;
    }

    const WindowSpec& default_window() const { return get(default_name_); }
    const std::string& default_name() const noexcept { return default_name_; }

    const std::string& preset_for(const std::string& label) const {
        auto it = organ_map_.find(label);
        if (it == organ_map_.end()) throw Error(ErrorCode::InvalidArgument, "no preset mapped for '" + label + "'");
        return it->second;
    }
    const WindowSpec& window_for(const std::string& label) const { return get(preset_for(label)); }

    const std::map<std::string, WindowSpec>& presets() const noexcept { return presets_; }

  private:
    explicit WindowPresets(int) {}

    void check(const LabelVocabulary& vocab) const {
        if (!has(default_name_)) throw Error(ErrorCode::InvalidArgument, "default preset is not defined");
        for (const auto& label : vocab.names()) {
            auto it = organ_map_.find(label);
            if (it == organ_map_.end()) throw Error(ErrorCode::InvalidArgument, "no preset mapped for '" + label + "'");
            if (!has(it->second)) throw Error(ErrorCode::InvalidArgument, "organ_map names unknown preset '" + it->second + "'");
        }
    }

    std::string default_name_;
    std::map<std::string, WindowSpec> presets_;
    std::map<std::string, std::string> organ_map_;
};

} // namespace limis
