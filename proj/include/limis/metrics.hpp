#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "limis/backend.hpp"
#include "limis/core.hpp"
#include "limis/engine.hpp"
#include "limis/maskops.hpp"
#include "limis/phantom.hpp"

namespace limis {

inline double iou(const BBox& a, const BBox& b) {
    const int ix0 = std::max(a.x0, b.x0), iy0 = std::max(a.y0, b.y0);
    const int ix1 = std::min(a.x1, b.x1), iy1 = std::min(a.y1, b.y1);
    const long long inter = (ix1 > ix0 && iy1 > iy0) ? static_cast<long long>(ix1 - ix0) * (iy1 - iy0) : 0;
    const long long uni = a.area() + b.area() - inter;
    return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

struct GtBox {
    BBox box;
    std::string label;
};

/// Recall sampling points as in the COCO evaluator (numpy linspace(0, 1, 101),
/// i.e. i * 0.01 with the endpoint pinned to 1).
inline const std::array<double, 101>& coco_recall_points() {
    static const std::array<double, 101> points = [] {
        std::array<double, 101> p{};
        for (int i = 0; i < 101; ++i) p[static_cast<std::size_t>(i)] = i * 0.01;
        p[100] = 1.0;
        return p;
    }();
    return points;
}

/// COCO-style AP for one class. preds[i] / gts[i] belong to image i and must
/// already be restricted to the class. Returns nullopt when there is no ground
/// truth at all (the class is then left out of the mean, as COCO does).
inline std::optional<double> average_precision(const std::vector<std::vector<Detection>>& preds,
                                               const std::vector<std::vector<BBox>>& gts, double iou_thresh) {
    if (preds.size() != gts.size()) throw Error(ErrorCode::DimensionMismatch, "preds and gts cover different images");
    std::size_t npos = 0;
    for (const auto& g : gts) npos += g.size();
    if (npos == 0) return std::nullopt;

    struct Ref {
        std::size_t image;
        const Detection* det;
    };
    std::vector<Ref> order;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        for (const auto& d : preds[i]) order.push_back({i, &d});
    }
    std::stable_sort(order.begin(), order.end(), [](const Ref& a, const Ref& b) { return a.det->score > b.det->score; });

    std::vector<std::vector<bool>> used(gts.size());
    for (std::size_t i = 0; i < gts.size(); ++i) used[i].assign(gts[i].size(), false);
    std::vector<double> precision, recall;
    std::size_t tp = 0, fp = 0;
    for (const auto& r : order) {
        double best = iou_thresh;
        std::optional<std::size_t> match;
        const auto& g = gts[r.image];
        for (std::size_t k = 0; k < g.size(); ++k) {
            if (used[r.image][k]) continue;
            const double v = iou(r.det->box, g[k]);
            if (v >= best) {
                best = v;
                match = k;
            }
        }
        if (match) {
            used[r.image][*match] = true;
            ++tp;
        } else {
            ++fp;
        }
        precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
        recall.push_back(static_cast<double>(tp) / static_cast<double>(npos));
    }
    for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);

    double sum = 0.0;
    for (double r : coco_recall_points()) {
        const auto it = std::lower_bound(recall.begin(), recall.end(), r);
        if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
    }
    return sum / 101.0;
}

inline const std::array<double, 10>& coco_iou_thresholds() {
    static const std::array<double, 10> t = [] {
        std::array<double, 10> v{};
        for (int i = 0; i < 10; ++i) v[static_cast<std::size_t>(i)] = 0.5 + 0.05 * i;
        return v;
    }();
    return t;
}

struct ImageDetections {
    std::string image_id;
    std::vector<Detection> detections;
};

struct ImageTruth {
    std::string image_id;
    std::vector<GtBox> boxes;
};

struct EvalResult {
    std::map<std::string, std::vector<double>> per_class_ap; ///< AP at each of coco_iou_thresholds()
    double map = 0.0;
    double map50 = 0.0;
    double map75 = 0.0;
    std::map<std::string, double> per_organ_dice;
    double macro_dice = 0.0;
};

/// Images are matched by image_id; predictions for images without an entry in
/// `truth` count as false positives of an empty image.
inline EvalResult evaluate_detections(const std::vector<ImageDetections>& preds, const std::vector<ImageTruth>& truth) {
    std::vector<std::string> ids;
    std::map<std::string, std::size_t> index;
    auto slot = [&](const std::string& id) {
        auto [it, inserted] = index.emplace(id, ids.size());
        if (inserted) ids.push_back(id);
        return it->second;
    };
    for (const auto& t : truth) slot(t.image_id);
    for (const auto& p : preds) slot(p.image_id);

    std::set<std::string> classes;
    for (const auto& t : truth) {
        for (const auto& g : t.boxes) classes.insert(g.label);
    }
    EvalResult res;
    double sum = 0.0, sum50 = 0.0, sum75 = 0.0;
    for (const auto& cls : classes) {
        std::vector<std::vector<Detection>> p(ids.size());
        std::vector<std::vector<BBox>> g(ids.size());
        for (const auto& t : truth) {
            for (const auto& b : t.boxes) {
                if (b.label == cls) g[index.at(t.image_id)].push_back(b.box);
            }
        }
        for (const auto& im : preds) {
            for (const auto& d : im.detections) {
                if (d.label == cls) p[index.at(im.image_id)].push_back(d);
            }
        }
        auto& aps = res.per_class_ap[cls];
        for (double t : coco_iou_thresholds()) aps.push_back(*average_precision(p, g, t));
        for (double a : aps) sum += a;
        sum50 += aps[0];
        sum75 += aps[5];
    }
    if (!classes.empty()) {
        const double n = static_cast<double>(classes.size());
        res.map = sum / (n * 10.0);
        res.map50 = sum50 / n;
        res.map75 = sum75 / n;
    }
    return res;
}

struct SegmentationSample {
    std::string label;
    BinMask prediction;
    BinMask truth;
};

/// Per-organ mean Dice plus the macro mean over organs; fills the Dice part of
/// an EvalResult.
inline void aggregate_dice(const std::vector<SegmentationSample>& samples, EvalResult& res) {
    std::map<std::string, std::pair<double, int>> acc;
    for (const auto& s : samples) {
        auto& [sum, n] = acc[s.label];
        sum += dice(s.prediction, s.truth);
        ++n;
    }
    res.per_organ_dice.clear();
    double macro = 0.0;
    for (const auto& [label, v] : acc) {
        res.per_organ_dice[label] = v.first / v.second;
        macro += v.first / v.second;
    }
    res.macro_dice = acc.empty() ? 0.0 : macro / static_cast<double>(acc.size());
}

// --- ablation -----------------------------------------------------------------

struct AblationConfig {
    CropMode crop = CropMode::Box;
    bool organ_window = false;
    int margin = 0;
};

inline std::vector<AblationConfig> ablation_grid() {
    std::vector<AblationConfig> out;
    for (CropMode crop : {CropMode::Full, CropMode::Box}) {
        for (bool organ : {false, true}) {
            for (int margin : {0, 10, 20}) out.push_back({crop, organ, margin});
        }
    }
    return out;
}

struct AblationRow {
    AblationConfig config;
    std::size_t samples = 0;
    double mean_dice = 0.0;
    double macro_dice = 0.0;
    std::map<std::string, double> per_organ;
};

/// Segments every organ on every slice of the corpus from its tight ground
/// truth box under each configuration, one mean-Dice row per configuration.
inline std::vector<AblationRow> run_ablation(const std::vector<RenderedPhantom>& corpus, const Backend& backend,
                                             const std::vector<AblationConfig>& grid = ablation_grid(),
                                             const WindowPresets& presets = {}) {
    std::vector<AblationRow> rows;
    for (const auto& cfg : grid) {
        std::vector<SegmentationSample> samples;
        double total = 0.0;
        for (const auto& ph : corpus) {
            for (int z = 0; z < ph.volume.dims[2]; ++z) {
                const HuImage image = slice_transversal(ph.volume, z);
                const DeriveContext ctx{image, backend, cfg.crop};
                for (const auto& label : ph.truth.labels_on(z)) {
                    const BinMask gt = ph.truth.mask(z, label);
                    const WindowSpec w = cfg.organ_window ? presets.window_for(label) : presets.default_window();
                    const StepOp op{"create",
                                    {{"box", engine_detail::box_json(tight_bbox(gt))},
                                     {"window", engine_detail::window_json(w)},
                                     {"tau", 0.5},
                                     {"margin", cfg.margin},
                                     {"segmented", true}}};
                    BinMask pred = engine_detail::initial_state(op, ctx).mask;
                    total += dice(pred, gt);
                    samples.push_back({label, std::move(pred), gt});
                }
            }
        }
        if (samples.empty()) throw Error(ErrorCode::EmptyCorpus, "ablation corpus has no labelled slices");
        AblationRow row{cfg, samples.size(), total / static_cast<double>(samples.size()), 0.0, {}};
        EvalResult agg;
        aggregate_dice(samples, agg);
        row.macro_dice = agg.macro_dice;
        row.per_organ = agg.per_organ_dice;
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::string format_fixed(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

/// Columns: crop,window,margin,n,mean_dice,macro_dice, then one column per
/// organ of the vocabulary (empty when the organ never occurs).
inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream out;
    out << "crop,window,margin,n,mean_dice,macro_dice";
    for (const auto& label : default_vocabulary().names()) out << ",dice_" << label;
    out << "\n";
    for (const auto& r : rows) {
        out << (r.config.crop == CropMode::Full ? "full" : "box") << ','
            << (r.config.organ_window ? "organ" : "default") << ',' << r.config.margin << ',' << r.samples << ','
            << format_fixed(r.mean_dice) << ',' << format_fixed(r.macro_dice);
        for (const auto& label : default_vocabulary().names()) {
            out << ',';
            if (auto it = r.per_organ.find(label); it != r.per_organ.end()) out << format_fixed(it->second);
        }
        out << "\n";
    }
    return out.str();
}

/// Phantom corpus used by the ablation: single-slice scenes, half of them with
/// two HU-adjacent organs sharing an edge, large enough that full-image crops
/// are processed at reduced resolution.
inline std::vector<RenderedPhantom> ablation_corpus(std::size_t count = 16, std::uint64_t seed = 2024) {
    std::vector<RenderedPhantom> out;
    CorpusOptions plain;
    plain.width = plain.height = 192;
    plain.min_radius = 10.0;
    plain.max_radius = 24.0;
    plain.noise_sigma = 8.0;
    CorpusOptions touching = plain;
    touching.touching_pairs = true;
    for (std::size_t i = 0; i < count; ++i) {
        out.push_back(render_phantom(random_scene(seed + i, i % 2 ? touching : plain)));
    }
    return out;
}

// --- trajectories -------------------------------------------------------------

enum class TrajectoryOutcome { Improved, Worse, Unchanged };

inline const char* outcome_name(TrajectoryOutcome o) {
    switch (o) {
    case TrajectoryOutcome::Improved: return "improved";
    case TrajectoryOutcome::Worse: return "worse";
    case TrajectoryOutcome::Unchanged: return "unchanged";
    }
    return "unchanged";
}

struct Trajectory {
    std::vector<std::pair<int, double>> series; ///< (step id, dice) from the root to the final step
    double delta = 0.0;
    TrajectoryOutcome outcome = TrajectoryOutcome::Unchanged;
};

/// Walks parent links from the final step (the cursor when no final step was
/// chosen) back to the root.
inline Trajectory dice_trajectory(const nlohmann::json& session_export) {
    if (!session_export.value("has_ground_truth", false)) {
        throw Error(ErrorCode::MissingGroundTruth, "session export carries no ground-truth Dice");
    }
    const auto& steps = session_export.at("steps");
    const auto& fin = session_export.at("final");
    int id = fin.is_null() ? session_export.at("cursor").get<int>() : fin.get<int>();
    if (id < 0 || id >= static_cast<int>(steps.size())) throw Error(ErrorCode::UnknownStep, "final step not in export");
    Trajectory t;
    for (;;) {
        const auto& s = steps.at(static_cast<std::size_t>(id));
        if (!s.contains("dice")) throw Error(ErrorCode::MissingGroundTruth, "step without Dice in export");
        t.series.emplace_back(id, s.at("dice").get<double>());
        if (s.at("parent").is_null()) break;
        id = s.at("parent").get<int>();
    }
    std::reverse(t.series.begin(), t.series.end());
    t.delta = t.series.back().second - t.series.front().second;
    t.outcome = t.delta > 0.0 ? TrajectoryOutcome::Improved
                              : (t.delta < 0.0 ? TrajectoryOutcome::Worse : TrajectoryOutcome::Unchanged);
    return t;
}

inline nlohmann::json trajectory_json(const Trajectory& t) {
    nlohmann::json series = nlohmann::json::array();
    for (const auto& [step, d] : t.series) series.push_back({{"step", step}, {"dice", d}});
    return {{"series", series}, {"delta", t.delta}, {"outcome", outcome_name(t.outcome)}};
}

// --- JSON lines interchange ---------------------------------------------------
// predictions: {"image_id", "boxes": [[x0,y0,x1,y1]...], "labels": [...], "scores": [...]}
// ground truth: {"image_id", "gt_boxes": [...], "gt_labels": [...]}

namespace metrics_detail {

template <typename F>
void for_each_line(std::istream& in, F&& f) {
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            f(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::ParseError, "line " + std::to_string(lineno) + ": " + e.what());
        }
    }
}

} // namespace metrics_detail

inline std::vector<ImageDetections> read_predictions_jsonl(std::istream& in) {
    std::vector<ImageDetections> out;
    metrics_detail::for_each_line(in, [&](const nlohmann::json& j) {
        ImageDetections im{j.at("image_id").get<std::string>(), {}};
        const auto& boxes = j.at("boxes");
        const auto& labels = j.at("labels");
        const auto& scores = j.at("scores");
        if (boxes.size() != labels.size() || boxes.size() != scores.size()) {
            throw Error(ErrorCode::ParseError, "boxes/labels/scores lengths differ for " + im.image_id);
        }
        for (std::size_t i = 0; i < boxes.size(); ++i) {
            im.detections.push_back(
                {engine_detail::box_from(boxes[i]), labels[i].get<std::string>(), scores[i].get<double>()});
        }
        out.push_back(std::move(im));
    });
    return out;
}

inline std::vector<ImageTruth> read_truth_jsonl(std::istream& in) {
    std::vector<ImageTruth> out;
    metrics_detail::for_each_line(in, [&](const nlohmann::json& j) {
        ImageTruth im{j.at("image_id").get<std::string>(), {}};
        const auto& boxes = j.at("gt_boxes");
        const auto& labels = j.at("gt_labels");
        if (boxes.size() != labels.size()) throw Error(ErrorCode::ParseError, "gt_boxes/gt_labels lengths differ");
        for (std::size_t i = 0; i < boxes.size(); ++i) {
            im.boxes.push_back({engine_detail::box_from(boxes[i]), labels[i].get<std::string>()});
        }
        out.push_back(std::move(im));
    });
    return out;
}

inline void write_predictions_jsonl(std::ostream& out, const std::vector<ImageDetections>& preds) {
    for (const auto& im : preds) {
        nlohmann::json boxes = nlohmann::json::array(), labels = nlohmann::json::array(), scores = nlohmann::json::array();
        for (const auto& d : im.detections) {
            boxes.push_back(engine_detail::box_json(d.box));
            labels.push_back(d.label);
            scores.push_back(d.score);
        }
        out << nlohmann::json{{"image_id", im.image_id}, {"boxes", boxes}, {"labels", labels}, {"scores", scores}}.dump()
            << "\n";
    }
}

inline void write_truth_jsonl(std::ostream& out, const std::vector<ImageTruth>& truth) {
    for (const auto& im : truth) {
        nlohmann::json boxes = nlohmann::json::array(), labels = nlohmann::json::array();
        for (const auto& g : im.boxes) {
            boxes.push_back(engine_detail::box_json(g.box));
            labels.push_back(g.label);
        }
        out << nlohmann::json{{"image_id", im.image_id}, {"gt_boxes", boxes}, {"gt_labels", labels}}.dump() << "\n";
    }
}

inline nlohmann::json eval_json(const EvalResult& r) {
    nlohmann::json per_class = nlohmann::json::object();
    for (const auto& [label, aps] : r.per_class_ap) per_class[label] = aps;
    return {{"mAP", r.map},
            {"mAP50", r.map50},
            {"mAP75", r.map75},
            {"per_class_ap", per_class},
            {"per_organ_dice", r.per_organ_dice},
            {"macro_dice", r.macro_dice}};
}

} // namespace limis
