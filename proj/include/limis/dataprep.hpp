#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "limis/core.hpp"
#include "limis/detail/random.hpp"
#include "limis/imaging.hpp"
#include "limis/phantom.hpp"
#include "limis/png.hpp"
#include "limis/volume_io.hpp"

namespace limis {

// --- splits -------------------------------------------------------------------

struct VolumeRef {
    std::string dataset;
    std::string id;
};

struct Split {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;
};

struct SplitConfig {
    double val_fraction = 0.10;
    double test_fraction = 0.10;
    /// Ids that must never be evaluated on (e.g. images a pretrained model has seen); always train.
    std::set<std::string> exclude_from_eval;
};

/// Within each source dataset ids are ordered by a seeded hash; the first
/// floor(0.1 n) become validation, the next floor(0.1 n) test, the rest
/// train. The per-dataset splits are then pooled.
inline Split split(const std::vector<VolumeRef>& volumes, std::uint64_t seed, const SplitConfig& cfg = {}) {
    std::map<std::string, std::vector<std::string>> by_dataset;
    std::set<std::string> seen;
    for (const auto& v : volumes) {
        if (!seen.insert(v.dataset + '\n' + v.id).second) {
            throw Error(ErrorCode::InvalidArgument, "duplicate volume id '" + v.id + "'");
        }
        by_dataset[v.dataset].push_back(v.id);
    }
    Split out;
    for (auto& [dataset, ids] : by_dataset) {
        std::vector<std::pair<std::uint64_t, std::string>> keyed;
        for (const auto& id : ids) {
            if (cfg.exclude_from_eval.count(id)) {
                out.train.push_back(id);
                continue;
            }
            keyed.emplace_back(detail::splitmix64(seed ^ detail::fnv1a64(dataset + '/' + id)), id);
        }
        std::sort(keyed.begin(), keyed.end());
        const auto n = static_cast<double>(ids.size());
        const auto n_val = static_cast<std::size_t>(std::floor(n * cfg.val_fraction + 1e-9));
        const auto n_test = static_cast<std::size_t>(std::floor(n * cfg.test_fraction + 1e-9));
        for (std::size_t i = 0; i < keyed.size(); ++i) {
            auto& dest = i < n_val ? out.val : (i < n_val + n_test ? out.test : out.train);
            dest.push_back(keyed[i].second);
        }
    }
    return out;
}

// --- prompts ------------------------------------------------------------------

struct LabelSpan {
    std::string label;
    std::size_t begin = 0; ///< character offset into the prompt
    std::size_t end = 0;   ///< one past the last character
    bool present = false;
};

struct Prompt {
    std::string text;
    std::vector<LabelSpan> spans;
};

inline constexpr int kDefaultNumAddLab = 8;

/// Present labels plus `num_add_lab` randomly drawn absent ones, shuffled and
/// joined as "a. b. c.".
inline Prompt make_prompt(const std::vector<std::string>& present, const LabelVocabulary& vocab, int num_add_lab,
                          std::uint64_t seed) {
    if (num_add_lab < 0) throw Error(ErrorCode::InvalidArgument, "num_add_lab must be >= 0");
    std::set<std::string> present_set;
    for (const auto& p : present) {
        vocab.require(p);
        if (!present_set.insert(p).second) throw Error(ErrorCode::InvalidArgument, "label '" + p + "' listed twice");
    }
    std::vector<std::string> absent;
    for (const auto& name : vocab.names()) {
        if (!present_set.count(name)) absent.push_back(name);
    }
    if (static_cast<std::size_t>(num_add_lab) > absent.size()) {
        throw Error(ErrorCode::TooManyNegatives, "asked for " + std::to_string(num_add_lab) + " negatives but only " +
                                                     std::to_string(absent.size()) + " labels are absent");
    }
    detail::Rng rng(seed);
    rng.shuffle(absent);
    std::vector<std::pair<std::string, bool>> labels;
    for (const auto& p : present) labels.emplace_back(p, true);
    for (int i = 0; i < num_add_lab; ++i) labels.emplace_back(absent[static_cast<std::size_t>(i)], false);
    rng.shuffle(labels);

    Prompt out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (i > 0) out.text += ". ";
        const std::size_t begin = out.text.size();
        out.text += labels[i].first;
        out.spans.push_back({labels[i].first, begin, out.text.size(), labels[i].second});
    }
    if (!labels.empty()) out.text += ".";
    return out;
}

// --- records ------------------------------------------------------------------

struct PrepConfig {
    std::uint64_t seed = 0;
    int num_add_lab = kDefaultNumAddLab;
    double clip_low_pct = 0.5;
    double clip_high_pct = 99.5;
    CommonGeometry geometry;
    AugmentSpec augment;
    /// Z-scored intensities are stored in 16-bit PNGs as (v - png_offset) * png_scale.
    double png_offset = -8.0;
    double png_scale = 4096.0;
    double body_threshold_hu = -500.0;
};

struct LabeledVolume {
    std::string id;
    Volume volume;
    GroundTruth truth;
};

struct SliceRecord {
    nlohmann::json record;
    std::vector<std::uint8_t> png;
};

inline std::uint64_t slice_seed(std::uint64_t seed, const std::string& volume_id, int z) {
    return detail::splitmix64(seed ^ detail::fnv1a64(volume_id) ^ detail::splitmix64(static_cast<std::uint64_t>(z)));
}

inline std::vector<std::uint8_t> encode_intensity_png(const FloatGrid& img, double offset, double scale) {
    png::GrayImage g;
    g.width = img.width();
    g.height = img.height();
    g.bit_depth = 16;
    g.samples.resize(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) {
        const double v = std::round((img.data()[i] - offset) * scale);
        g.samples[i] = static_cast<std::uint16_t>(std::clamp(v, 0.0, 65535.0));
    }
    return png::encode(g);
}

inline FloatGrid decode_intensity_png(const std::vector<std::uint8_t>& bytes, double offset, double scale) {
    const auto g = png::decode(bytes);
    FloatGrid out(g.width, g.height);
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = static_cast<float>(g.samples[i] / scale + offset);
    return out;
}

/// Clip, z-score, resample, augment one slice. Returns nothing for slices
/// without any organ, or whose organs all leave the view under augmentation.
/// Masks follow the image through resampling and the same (nearest-neighbour)
/// warp, and boxes are taken tight around the warped masks.
inline std::optional<SliceRecord> make_slice_record(const std::string& volume_id, int z, const HuImage& slice,
                                                    const std::map<std::string, BinMask>& masks, const PrepConfig& cfg,
                                                    const LabelVocabulary& vocab = default_vocabulary()) {
    std::vector<std::string> labels;
    for (const auto& [label, m] : masks) {
        if (count_set(m) > 0) labels.push_back(label);
    }
    if (labels.empty()) return std::nullopt;

    const HuImage clipped = percentile_clip(slice, cfg.clip_low_pct, cfg.clip_high_pct);
    BinMask fg(slice.width(), slice.height());
    for (const auto& label : labels) {
        const auto& m = masks.at(label);
        for (std::size_t i = 0; i < fg.size(); ++i) fg.data()[i] |= m.data()[i];
    }
    const HuImage normalized(zscore_foreground(clipped, fg), slice.spacing);
    const HuImage resampled = resample(normalized, cfg.geometry);

    AugmentSpec aug = cfg.augment;
    const std::uint64_t seed = slice_seed(cfg.seed, volume_id, z);
    aug.seed = seed;
    const AugmentParams params = draw_augment(aug);
    const Augmented warped = apply_augment(resampled.pixels, {}, params);
    const Affine m = augment_affine(params, resampled.width(), resampled.height());

    nlohmann::json boxes = nlohmann::json::array(), kept = nlohmann::json::array();
    std::vector<std::string> present;
    for (const auto& label : labels) {
        BinMask r = resample_mask(masks.at(label), slice.spacing, cfg.geometry);
        if (!params.identity()) r = warp_nearest(r, m, std::uint8_t{0});
        const BBox b = tight_bbox(r);
        if (!b.valid()) continue;
        boxes.push_back(nlohmann::json::array({b.x0, b.y0, b.x1, b.y1}));
        kept.push_back(label);
        present.push_back(label);
    }
    if (present.empty()) return std::nullopt;

    int available = static_cast<int>(vocab.size() - present.size());
    const Prompt prompt = make_prompt(present, vocab, std::min(cfg.num_add_lab, available), detail::splitmix64(seed));
    nlohmann::json spans = nlohmann::json::array();
    for (const auto& s : prompt.spans) {
        spans.push_back({{"label", s.label}, {"begin", s.begin}, {"end", s.end}, {"present", s.present}});
    }
    nlohmann::json augment_json = nlohmann::json::object();
    if (params.translate) augment_json["translate"] = {params.translate->first, params.translate->second};
    if (params.rotate_deg) augment_json["rotate_deg"] = *params.rotate_deg;
    if (params.scale) augment_json["scale"] = *params.scale;

    const std::string record_id = volume_id + "_z" + std::to_string(z);
    SliceRecord out;
    out.png = encode_intensity_png(warped.image, cfg.png_offset, cfg.png_scale);
    out.record = {{"record_id", record_id},
                  {"volume_id", volume_id},
                  {"slice", z},
                  {"image", "images/" + record_id + ".png"},
                  {"width", warped.image.width()},
                  {"height", warped.image.height()},
                  {"spacing", {cfg.geometry.spacing.row, cfg.geometry.spacing.col}},
                  {"png_offset", cfg.png_offset},
                  {"png_scale", cfg.png_scale},
                  {"boxes", boxes},
                  {"labels", kept},
                  {"prompt", prompt.text},
                  {"spans", spans},
                  {"augment", augment_json}};
    return out;
}

namespace dataprep_detail {

inline void write_atomic(const std::filesystem::path& path, const std::string& bytes) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw Error(ErrorCode::IoError, "cannot write " + tmp);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw Error(ErrorCode::IoError, "write failed for " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot rename " + tmp + ": " + ec.message());
}

} // namespace dataprep_detail

/// Writes `<out>/images/<record>.png` per kept slice and `<out>/<name>.jsonl`
/// listing the records in volume/slice order. Returns the records.
inline std::vector<nlohmann::json> emit_records(const std::vector<LabeledVolume>& volumes, const PrepConfig& cfg,
                                                const std::filesystem::path& out_dir,
                                                const std::string& name = "records") {
    std::filesystem::create_directories(out_dir / "images");
    std::vector<nlohmann::json> records;
    std::string jsonl;
    for (const auto& lv : volumes) {
        for (int z = 0; z < lv.volume.dims[2]; ++z) {
            auto rec = make_slice_record(lv.id, z, slice_transversal(lv.volume, z), lv.truth.slice(z), cfg);
            if (!rec) continue;
            dataprep_detail::write_atomic(out_dir / rec->record.at("image").get<std::string>(),
                                          std::string(rec->png.begin(), rec->png.end()));
            jsonl += rec->record.dump() + "\n";
            records.push_back(std::move(rec->record));
        }
    }
    dataprep_detail::write_atomic(out_dir / (name + ".jsonl"), jsonl);
    return records;
}

} // namespace limis
