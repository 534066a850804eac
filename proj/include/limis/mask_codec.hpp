#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "limis/core.hpp"
#include "limis/png.hpp"

namespace limis {

/// Run-length encoding over the row-major pixel order. Runs alternate
/// background/foreground and always start with a (possibly empty) background run.
inline nlohmann::json mask_to_rle(const BinMask& mask) {
    std::vector<std::uint64_t> runs;
    std::uint8_t current = 0;
    std::uint64_t length = 0;
    for (std::uint8_t v : mask.data()) {
        const std::uint8_t bit = v ? 1 : 0;
        if (bit != current) {
            runs.push_back(length);
            current = bit;
            length = 0;
        }
        ++length;
    }
    runs.push_back(length);
    return {{"width", mask.width()}, {"height", mask.height()}, {"rle", runs}};
}

inline BinMask mask_from_rle(const nlohmann::json& doc) {
    const int width = doc.at("width").get<int>();
    const int height = doc.at("height").get<int>();
    BinMask mask(width, height);
    std::size_t pos = 0;
    std::uint8_t value = 0;
    for (const auto& run : doc.at("rle")) {
        const auto n = run.get<std::uint64_t>();
        if (pos + n > mask.size()) throw Error(ErrorCode::DimensionMismatch, "RLE runs exceed mask size");
        std::fill_n(mask.data().begin() + static_cast<std::ptrdiff_t>(pos), n, value);
        pos += n;
        value ^= 1;
    }
    if (pos != mask.size()) throw Error(ErrorCode::DimensionMismatch, "RLE runs do not cover the mask");
    return mask;
}

/// 8-bit grayscale PNG, 0 for background and 255 for foreground.
inline std::vector<std::uint8_t> mask_to_png(const BinMask& mask) {
    png::GrayImage img{mask.width(), mask.height(), 8, {}};
    img.samples.reserve(mask.size());
    for (std::uint8_t v : mask.data()) img.samples.push_back(v ? 255 : 0);
    return png::encode(img);
}

inline BinMask mask_from_png(const std::vector<std::uint8_t>& bytes) {
    const auto img = png::decode(bytes);
    if (img.bit_depth != 8) throw Error(ErrorCode::UnsupportedDatatype, "mask PNG must be 8-bit");
    BinMask mask(img.width, img.height);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (img.samples[i] != 0 && img.samples[i] != 255) {
            throw Error(ErrorCode::InvalidArgument, "mask PNG values must be 0 or 255");
        }
        mask.data()[i] = img.samples[i] ? 1 : 0;
    }
    return mask;
}

} // namespace limis
