#pragma once

#include <map>
#include <string>

#include "limis/core.hpp"

namespace limis {

/// Reference attenuation per structure used by the synthetic detector and by
/// the phantom generators. Values are spaced 30 HU apart so that the
/// detector's +-2 sigma bands (sigma 6 HU) never overlap.
inline const std::map<std::string, double>& organ_reference_hu() {
    static const std::map<std::string, double> table{
        {"colon", -100.0},  {"esophagus", -70.0}, {"bladder", -40.0},      {"gallbladder", -10.0},
        {"stomach", 20.0},  {"liver", 60.0},      {"duodenum", 90.0},      {"pancreas", 120.0},
        {"spleen", 150.0},  {"kidney left", 180.0}, {"kidney right", 210.0},
    };
    return table;
}

inline double reference_hu(const std::string& label) {
    const auto& table = organ_reference_hu();
    auto it = table.find(label);
    if (it == table.end()) throw Error(ErrorCode::InvalidArgument, "no reference HU for '" + label + "'");
    return it->second;
}

} // namespace limis
