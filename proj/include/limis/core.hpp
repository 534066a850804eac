#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace limis {

enum class ErrorCode {
    InvalidArgument,
    EmptyBox,
    BadMagic,
    UnsupportedDatatype,
    UnsupportedDims,
    TruncatedFile,
    OverlapError,
    IndexOutOfRange,
    EmptyForeground,
    UnknownComponent,
    DimensionMismatch,
    ParseError,
    AmbiguousLabel,
    BackendUnavailable,
    NoDetection,
    StaleProposal,
    ScriptExhausted,
    UnknownStep,
    MissingGroundTruth,
    EmptyCorpus,
    TooManyNegatives,
    IoError,
};

inline std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::EmptyBox: return "EmptyBox";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedDatatype: return "UnsupportedDatatype";
    case ErrorCode::UnsupportedDims: return "UnsupportedDims";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::OverlapError: return "OverlapError";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::EmptyForeground: return "EmptyForeground";
    case ErrorCode::UnknownComponent: return "UnknownComponent";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::AmbiguousLabel: return "AmbiguousLabel";
    case ErrorCode::BackendUnavailable: return "BackendUnavailable";
    case ErrorCode::NoDetection: return "NoDetection";
    case ErrorCode::StaleProposal: return "StaleProposal";
    case ErrorCode::ScriptExhausted: return "ScriptExhausted";
    case ErrorCode::UnknownStep: return "UnknownStep";
    case ErrorCode::MissingGroundTruth: return "MissingGroundTruth";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::TooManyNegatives: return "TooManyNegatives";
    case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

/// Every failure in the library is reported as an Error carrying a code that
/// callers (the service layer in particular) map onto their own status space.
class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

  private:
    ErrorCode code_;
};

/// Row-major 2-D grid. Used for HU slices, normalized images, probability
/// maps and binary masks.
template <typename T>
class Grid {
  public:
    using value_type = T;

    Grid() = default;
    Grid(int width, int height, T fill = T{}) : width_(width), height_(height) {
        if (width < 0 || height < 0) {
            throw Error(ErrorCode::InvalidArgument, "grid dimensions must be non-negative");
        }
        data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
    }
    Grid(int width, int height, std::vector<T> data)
        : width_(width), height_(height), data_(std::move(data)) {
        if (width < 0 || height < 0 ||
            data_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
            throw Error(ErrorCode::DimensionMismatch, "grid data length does not match width*height");
        }
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    bool contains(int x, int y) const noexcept {
        return x >= 0 && y >= 0 && x < width_ && y < height_;
    }

    T& operator()(int x, int y) { return data_[index(x, y)]; }
    const T& operator()(int x, int y) const { return data_[index(x, y)]; }

    T& at(int x, int y) {
        if (!contains(x, y)) throw Error(ErrorCode::IndexOutOfRange, "pixel outside grid");
        return (*this)(x, y);
    }
    const T& at(int x, int y) const {
        if (!contains(x, y)) throw Error(ErrorCode::IndexOutOfRange, "pixel outside grid");
        return (*this)(x, y);
    }

    std::vector<T>& data() noexcept { return data_; }
    const std::vector<T>& data() const noexcept { return data_; }

    template <typename U>
    bool same_shape(const Grid<U>& other) const noexcept {
        return width_ == other.width() && height_ == other.height();
    }

    friend bool operator==(const Grid&, const Grid&) = default;

  private:
    std::size_t index(int x, int y) const noexcept {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
               static_cast<std::size_t>(x);
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<T> data_;
};

using FloatGrid = Grid<float>;
using NormImage = Grid<float>;
/// Per-pixel foreground probability in [0,1].
using ProbMask = Grid<float>;
/// 0/1 mask; uint8_t instead of bool to keep contiguous storage.
using BinMask = Grid<std::uint8_t>;

struct Spacing {
    double row = 1.0;
    double col = 1.0;
    friend bool operator==(const Spacing&, const Spacing&) = default;
};

/// 2-D CT slice in Hounsfield units.
struct HuImage {
    FloatGrid pixels;
    Spacing spacing;

    HuImage() = default;
    HuImage(FloatGrid grid, Spacing sp = {}) : pixels(std::move(grid)), spacing(sp) {
        if (pixels.width() <= 0 || pixels.height() <= 0) {
            throw Error(ErrorCode::InvalidArgument, "image must be non-empty");
        }
        if (!(spacing.row > 0.0) || !(spacing.col > 0.0)) {
            throw Error(ErrorCode::InvalidArgument, "pixel spacing must be positive");
        }
        for (float v : pixels.data()) {
            if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "HU values must be finite");
        }
    }

    int width() const noexcept { return pixels.width(); }
    int height() const noexcept { return pixels.height(); }
    float operator()(int x, int y) const { return pixels(x, y); }

    friend bool operator==(const HuImage&, const HuImage&) = default;
};

/// Half-open pixel box: x in [x0, x1), y in [y0, y1). Origin top-left, x is the column.
struct BBox {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;

    int width() const noexcept { return x1 - x0; }
    int height() const noexcept { return y1 - y0; }
    long long area() const noexcept {
        return valid() ? static_cast<long long>(width()) * height() : 0;
    }
    bool valid() const noexcept { return x0 < x1 && y0 < y1; }
    bool contains(int x, int y) const noexcept { return x >= x0 && x < x1 && y >= y0 && y < y1; }

    BBox expanded(int left, int top, int right, int bottom) const noexcept {
        return {x0 - left, y0 - top, x1 + right, y1 + bottom};
    }
    BBox expanded(int per_side) const noexcept {
        return expanded(per_side, per_side, per_side, per_side);
    }
    BBox shifted(int dx, int dy) const noexcept { return {x0 + dx, y0 + dy, x1 + dx, y1 + dy}; }

    /// Integer center, rounding toward the top-left.
    std::pair<int, int> center() const noexcept { return {(x0 + x1 - 1) / 2, (y0 + y1 - 1) / 2}; }

    friend bool operator==(const BBox&, const BBox&) = default;
};

struct WindowSpec {
    double center = 50.0;
    double width = 400.0;

    double lower() const noexcept { return center - width / 2.0; }
    double upper() const noexcept { return center + width / 2.0; }

    friend bool operator==(const WindowSpec&, const WindowSpec&) = default;
};

struct Click {
    int x = 0;
    int y = 0;
    bool positive = true;
    friend bool operator==(const Click&, const Click&) = default;
};

/// Intersects a box with [0,width) x [0,height).
inline BBox clamp_box(const BBox& box, int width, int height) {
    if (width <= 0 || height <= 0) {
        throw Error(ErrorCode::InvalidArgument, "clamp_box needs a positive image size");
    }
    BBox out{std::max(box.x0, 0), std::max(box.y0, 0), std::min(box.x1, width),
             std::min(box.y1, height)};
    if (!out.valid()) throw Error(ErrorCode::EmptyBox, "box lies outside the image");
    return out;
}

/// Smallest box holding every set pixel. Returns an invalid box for an empty mask.
inline BBox tight_bbox(const BinMask& mask) {
    BBox box{mask.width(), mask.height(), 0, 0};
    for (int y = 0; y < mask.height(); ++y) {
        for (int x = 0; x < mask.width(); ++x) {
            if (mask(x, y)) {
                box.x0 = std::min(box.x0, x);
                box.y0 = std::min(box.y0, y);
                box.x1 = std::max(box.x1, x + 1);
                box.y1 = std::max(box.y1, y + 1);
            }
        }
    }
    return box;
}

inline std::size_t count_set(const BinMask& mask) {
    return static_cast<std::size_t>(
        std::count_if(mask.data().begin(), mask.data().end(), [](std::uint8_t v) { return v != 0; }));
}

/// The eleven abdominal structures shared by the training datasets.
class LabelVocabulary {
  public:
    LabelVocabulary()
        : names_{"esophagus", "stomach", "duodenum",     "colon",         "gallbladder", "liver",
                 "pancreas",  "kidney left", "kidney right", "bladder", "spleen"} {}

    const std::vector<std::string>& names() const noexcept { return names_; }
    std::size_t size() const noexcept { return names_.size(); }

    bool contains(std::string_view label) const {
        return std::find(names_.begin(), names_.end(), label) != names_.end();
    }

    int index_of(std::string_view label) const {
        auto it = std::find(names_.begin(), names_.end(), label);
        return it == names_.end() ? -1 : static_cast<int>(it - names_.begin());
    }

    void require(std::string_view label) const {
        if (!contains(label)) {
            throw Error(ErrorCode::InvalidArgument, "unknown label '" + std::string(label) + "'");
        }
    }

  private:
    std::vector<std::string> names_;
};

inline const LabelVocabulary& default_vocabulary() {
    static const LabelVocabulary vocab;
    return vocab;
}

} // namespace limis
