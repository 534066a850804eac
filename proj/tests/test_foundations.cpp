#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "limis/detail/base64.hpp"
#include "limis/detail/random.hpp"
#include "limis/imaging.hpp"
#include "limis/mask_codec.hpp"
#include "limis/maskops.hpp"
#include "limis/phantom.hpp"
#include "limis/png.hpp"
#include "limis/presets.hpp"
#include "limis/volume_io.hpp"
#include "oracles.hpp"

using namespace limis;

namespace {

template <typename F>
ErrorCode code_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected an Error";
    return ErrorCode::IoError;
}

BinMask mask_from_rows(const std::vector<std::string>& rows) {
    BinMask m(static_cast<int>(rows[0].size()), static_cast<int>(rows.size()));
    for (int y = 0; y < m.height(); ++y) {
        for (int x = 0; x < m.width(); ++x) m(x, y) = rows[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)] == '#';
    }
    return m;
}

Volume random_volume(detail::Rng& rng, bool integral) {
    const std::array<int, 3> dims{static_cast<int>(rng.uniform_int(1, 9)), static_cast<int>(rng.uniform_int(1, 9)),
                                  static_cast<int>(rng.uniform_int(1, 5))};
    const std::array<double, 3> spacing{static_cast<float>(rng.uniform(0.3, 3.0)), static_cast<float>(rng.uniform(0.3, 3.0)),
                                        static_cast<float>(rng.uniform(0.5, 5.0))};
    std::vector<float> data(static_cast<std::size_t>(dims[0] * dims[1] * dims[2]));
    for (auto& v : data) {
        v = integral ? static_cast<float>(rng.uniform_int(-1024, 3000)) : static_cast<float>(rng.uniform(-1024.0, 3000.0));
    }
    return Volume(dims, spacing, std::move(data));
}

} // namespace

// --- core ---------------------------------------------------------------------

TEST(Core, BoxGeometryIsHalfOpen) {
    const BBox b{2, 3, 5, 7};
    EXPECT_EQ(b.width(), 3);
    EXPECT_EQ(b.height(), 4);
    EXPECT_EQ(b.area(), 12);
    EXPECT_TRUE(b.contains(2, 3));
    EXPECT_FALSE(b.contains(5, 3));
    EXPECT_FALSE(b.contains(2, 7));
    EXPECT_EQ(b.expanded(1), (BBox{1, 2, 6, 8}));
    EXPECT_EQ(b.center(), std::make_pair(3, 4));
}

TEST(Core, ClampBoxRejectsBoxesOutsideTheImage) {
    EXPECT_EQ(clamp_box({-5, -5, 10, 10}, 8, 8), (BBox{0, 0, 8, 8}));
    EXPECT_EQ(code_of([] { clamp_box({10, 10, 12, 12}, 8, 8); }), ErrorCode::EmptyBox);
}

TEST(Core, TightBoxOfMask) {
    const auto m = mask_from_rows({"....", ".##.", "..#.", "...."});
    EXPECT_EQ(tight_bbox(m), (BBox{1, 1, 3, 3}));
    EXPECT_FALSE(tight_bbox(BinMask(3, 3)).valid());
}

TEST(Core, VocabularyHoldsTheElevenOrgans) {
    const auto& v = default_vocabulary();
    EXPECT_EQ(v.size(), 11u);
    for (const char* n : {"esophagus", "stomach", "duodenum", "colon", "gallbladder", "liver", "pancreas", "kidney left",
                          "kidney right", "bladder", "spleen"}) {
        EXPECT_TRUE(v.contains(n)) << n;
    }
    EXPECT_EQ(code_of([&] { v.require("heart"); }), ErrorCode::InvalidArgument);
}

TEST(Core, HuImageValidatesInput) {
    EXPECT_EQ(code_of([] { HuImage(FloatGrid(0, 0)); }), ErrorCode::InvalidArgument);
    EXPECT_EQ(code_of([] { HuImage(FloatGrid(2, 2, NAN)); }), ErrorCode::InvalidArgument);
    EXPECT_EQ(code_of([] { HuImage(FloatGrid(2, 2), Spacing{0.0, 1.0}); }), ErrorCode::InvalidArgument);
}

// --- random / base64 ------------------------------------------------------------

TEST(Random, StreamsAreReproducible) {
    detail::Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) {
        const double x = a.uniform();
        EXPECT_EQ(x, b.uniform());
        EXPECT_GE(x, 0.0);
        EXPECT_LT(x, 1.0);
    }
    EXPECT_NE(detail::Rng(42).uniform(), c.uniform());
}

TEST(Random, UniformIntCoversInclusiveRange) {
    detail::Rng rng(1);
    std::set<long long> seen;
    for (int i = 0; i < 500; ++i) seen.insert(rng.uniform_int(-2, 2));
    EXPECT_EQ(seen, (std::set<long long>{-2, -1, 0, 1, 2}));
}

TEST(Random, ShuffleIsAPermutation) {
    detail::Rng rng(9);
    std::vector<int> v(20);
    std::iota(v.begin(), v.end(), 0);
    auto s = v;
    rng.shuffle(s);
    EXPECT_NE(s, v);
    std::sort(s.begin(), s.end());
    EXPECT_EQ(s, v);
}

TEST(Random, CounterNormalHasUnitMoments) {
    double sum = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double z = detail::counter_normal(7, static_cast<std::uint64_t>(i));
        sum += z;
        sq += z * z;
    }
    EXPECT_NEAR(sum / n, 0.0, 0.03);
    EXPECT_NEAR(sq / n, 1.0, 0.05);
}

TEST(Base64, KnownVectorsAndRoundTrip) {
    auto enc = [](const std::string& s) { return detail::base64_encode(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()); };
    EXPECT_EQ(enc(""), "");
    EXPECT_EQ(enc("f"), "Zg==");
    EXPECT_EQ(enc("fo"), "Zm8=");
    EXPECT_EQ(enc("foo"), "Zm9v");
    EXPECT_EQ(enc("foobar"), "Zm9vYmFy");
    const std::vector<float> values{0.0f, -1.5f, 3.25e-7f, 1e30f, 0.5f};
    EXPECT_EQ(detail::decode_floats_b64(detail::encode_floats_b64(values)), values);
    EXPECT_EQ(code_of([] { detail::base64_decode("%%%"); }), ErrorCode::InvalidArgument);
    EXPECT_EQ(code_of([] { detail::decode_floats_b64("Zm8="); }), ErrorCode::InvalidArgument);
}

// --- png / mask codecs ------------------------------------------------------------

TEST(Png, EightAndSixteenBitRoundTrip) {
    png::GrayImage g8{3, 2, 8, {0, 10, 255, 7, 8, 9}};
    EXPECT_EQ(png::decode(png::encode(g8)), g8);
    png::GrayImage g16{2, 2, 16, {0, 65535, 1234, 40000}};
    EXPECT_EQ(png::decode(png::encode(g16)), g16);
    EXPECT_THROW(png::decode({1, 2, 3}), Error);
}

TEST(MaskCodec, RleStartsWithBackgroundRun) {
    const auto m = mask_from_rows({"##.", "..."});
    const auto rle = mask_to_rle(m);
    EXPECT_EQ(rle.at("width"), 3);
    EXPECT_EQ(rle.at("height"), 2);
    EXPECT_EQ(rle.at("rle"), nlohmann::json::array({0, 2, 4}));
}

TEST(MaskCodec, RandomMasksRoundTripBitExactly) {
    detail::Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        const auto m = oracle::random_mask(rng);
        EXPECT_EQ(mask_from_rle(mask_to_rle(m)), m);
        const auto png = mask_to_png(m);
        EXPECT_EQ(mask_from_png(png), m);
        const auto g = png::decode(png);
        EXPECT_EQ(g.bit_depth, 8);
        for (auto v : g.samples) EXPECT_TRUE(v == 0 || v == 255);
    }
}

TEST(MaskCodec, RejectsInconsistentRle) {
    EXPECT_THROW(mask_from_rle({{"width", 2}, {"height", 2}, {"rle", {1, 1}}}), Error);
}

// --- mask operations ------------------------------------------------------------

TEST(MaskOps, ThresholdExamples) {
    ProbMask p(3, 1, std::vector<float>{0.2f, 0.5f, 0.7f});
    EXPECT_EQ(threshold(p, 0.5).data(), (std::vector<std::uint8_t>{0, 1, 1}));
    EXPECT_EQ(count_set(threshold(p, 0.0)), 3u);
    EXPECT_EQ(count_set(threshold(p, std::nextafter(0.7f, 1.0f))), 0u);
    EXPECT_EQ(code_of([&] { threshold(p, 1.5); }), ErrorCode::InvalidArgument);
}

TEST(MaskOps, ThresholdIsAntitoneInTau) {
    detail::Rng rng(11);
    for (int i = 0; i < 50; ++i) {
        ProbMask p(16, 16);
        for (auto& v : p.data()) v = static_cast<float>(rng.uniform());
        const double t1 = rng.uniform(), t2 = rng.uniform();
        const auto lo = threshold(p, std::min(t1, t2)), hi = threshold(p, std::max(t1, t2));
        for (std::size_t k = 0; k < lo.size(); ++k) EXPECT_LE(hi.data()[k], lo.data()[k]);
    }
}

TEST(MaskOps, ComponentExamples) {
    EXPECT_EQ(connected_components(mask_from_rows({"#.", ".#"})).count(), 2u);
    const auto full = connected_components(BinMask(5, 4, 1));
    ASSERT_EQ(full.count(), 1u);
    EXPECT_EQ(full.items[0].area, 20u);
    EXPECT_EQ(connected_components(BinMask(3, 3)).count(), 0u);
}

TEST(MaskOps, ComponentsMatchUnionFindOracle) {
    detail::Rng rng(12);
    for (int i = 0; i < 200; ++i) {
        const auto m = oracle::random_mask(rng);
        const auto lib = connected_components(m);
        const auto ref = oracle::label_components(m);
        ASSERT_EQ(static_cast<int>(lib.count()), ref.count);
        std::vector<std::size_t> areas;
        std::size_t total = 0;
        for (std::size_t k = 0; k < lib.items.size(); ++k) {
            EXPECT_EQ(lib.items[k].id, static_cast<int>(k) + 1);
            areas.push_back(lib.items[k].area);
            total += lib.items[k].area;
        }
        EXPECT_EQ(areas, ref.areas);
        EXPECT_EQ(total, count_set(m));
        // Same partition: two pixels share a label iff they share a root.
        std::map<int, int> lib_to_ref;
        for (std::size_t p = 0; p < m.size(); ++p) {
            const int l = lib.labels.data()[p];
            ASSERT_EQ(l == 0, ref.root[p] < 0);
            if (l == 0) continue;
            auto [it, inserted] = lib_to_ref.emplace(l, ref.root[p]);
            EXPECT_EQ(it->second, ref.root[p]);
        }
    }
}

TEST(MaskOps, RemoveComponentExamples) {
    BinMask m(20, 10);
    for (int y = 0; y < 5; ++y) {
        for (int x = 0; x < 10; ++x) m(x, y) = 1; // area 50
    }
    m(15, 8) = m(16, 8) = m(17, 8) = 1; // area 3
    const auto comps = connected_components(m);
    ASSERT_EQ(comps.items[1].area, 3u);
    const auto kept = remove_component(m, 2);
    EXPECT_EQ(count_set(kept), 50u);
    EXPECT_EQ(count_set(remove_component(remove_component(m, 2), 1)), 0u);
    EXPECT_EQ(code_of([&] { remove_component(m, 7); }), ErrorCode::UnknownComponent);
}

TEST(MaskOps, MajorityEnsemble) {
    const auto a = mask_from_rows({"##.", "#.."});
    const auto b = mask_from_rows({"#..", "##."});
    const auto c = mask_from_rows({".#.", "..#"});
    const std::vector<BinMask> same{a, a, a};
    EXPECT_EQ(majority_ensemble(same), a);
    const std::vector<BinMask> mixed{a, b, c};
    EXPECT_EQ(majority_ensemble(mixed), mask_from_rows({"##.", "#.."}));
    detail::Rng rng(13);
    for (int i = 0; i < 50; ++i) {
        const auto m = oracle::random_mask(rng);
        const auto x = oracle::random_mask_like(rng, m);
        for (const auto& order : {std::vector<BinMask>{m, m, x}, std::vector<BinMask>{x, m, m}}) {
            EXPECT_EQ(majority_ensemble(order), m);
        }
    }
    const std::vector<BinMask> bad{a, BinMask(2, 2)};
    EXPECT_EQ(code_of([&] { majority_ensemble(bad); }), ErrorCode::DimensionMismatch);
}

TEST(MaskOps, UnionAndIntersectionRules) {
    const auto a = mask_from_rows({"#.", ".."});
    const auto b = mask_from_rows({"##", ".."});
    const std::vector<BinMask> ms{a, b};
    EXPECT_EQ(ensemble(ms, EnsembleRule::Union), b);
    EXPECT_EQ(ensemble(ms, EnsembleRule::Intersection), a);
}

TEST(MaskOps, DiceExamplesAndOracle) {
    BinMask a(20, 10), b(20, 10);
    for (int i = 0; i < 100; ++i) a.data()[static_cast<std::size_t>(i)] = 1;
    for (int i = 50; i < 150; ++i) b.data()[static_cast<std::size_t>(i)] = 1;
    EXPECT_DOUBLE_EQ(dice(a, b), 0.5);
    EXPECT_DOUBLE_EQ(dice(a, a), 1.0);
    BinMask c(20, 10);
    c.data()[199] = 1;
    EXPECT_DOUBLE_EQ(dice(a, c), 0.0);
    EXPECT_DOUBLE_EQ(dice(BinMask(3, 3), BinMask(3, 3)), 1.0);
    detail::Rng rng(14);
    for (int i = 0; i < 200; ++i) {
        const auto x = oracle::random_mask(rng);
        const auto y = oracle::random_mask_like(rng, x);
        const double d = dice(x, y);
        EXPECT_NEAR(d, oracle::dice(x, y), 1e-12);
        EXPECT_DOUBLE_EQ(d, dice(y, x));
        EXPECT_GE(d, 0.0);
        EXPECT_LE(d, 1.0);
    }
}

// --- NIfTI ----------------------------------------------------------------------

TEST(Nifti, HandAssembledFloatFile) {
    std::vector<std::uint8_t> bytes(352 + 32 * 4, 0);
    auto put16 = [&](std::size_t off, std::int16_t v) { std::memcpy(bytes.data() + off, &v, 2); };
    auto put32 = [&](std::size_t off, std::int32_t v) { std::memcpy(bytes.data() + off, &v, 4); };
    auto putf = [&](std::size_t off, float v) { std::memcpy(bytes.data() + off, &v, 4); };
    put32(0, 348);
    put16(40, 3);
    put16(42, 4);
    put16(44, 4);
    put16(46, 2);
    put16(70, 16);
    put16(72, 32);
    putf(76, 1.0f);
    putf(80, 1.5f);
    putf(84, 1.5f);
    putf(88, 3.0f);
    putf(108, 352.0f);
    std::memcpy(bytes.data() + 344, "n+1\0", 4);
    for (int i = 0; i < 32; ++i) putf(352 + 4 * static_cast<std::size_t>(i), static_cast<float>(i) - 10.0f);
    const Volume v = read_nifti(bytes);
    EXPECT_EQ(v.dims, (std::array<int, 3>{4, 4, 2}));
    EXPECT_EQ(v.spacing, (std::array<double, 3>{1.5, 1.5, 3.0}));
    EXPECT_EQ(v.data[31], 21.0f);

    auto bad_magic = bytes;
    std::fill(bad_magic.begin() + 344, bad_magic.begin() + 348, 0);
    EXPECT_EQ(code_of([&] { read_nifti(bad_magic); }), ErrorCode::BadMagic);
    auto uint8 = bytes;
    std::int16_t dt = 2;
    std::memcpy(uint8.data() + 70, &dt, 2);
    EXPECT_EQ(code_of([&] { read_nifti(uint8); }), ErrorCode::UnsupportedDatatype);
    auto dims4 = bytes;
    std::int16_t four = 4;
    std::memcpy(dims4.data() + 40, &four, 2);
    EXPECT_EQ(code_of([&] { read_nifti(dims4); }), ErrorCode::UnsupportedDims);
    const std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 1);
    EXPECT_EQ(code_of([&] { read_nifti(truncated); }), ErrorCode::TruncatedFile);
    const std::vector<std::uint8_t> header_only(bytes.begin(), bytes.begin() + 100);
    EXPECT_EQ(code_of([&] { read_nifti(header_only); }), ErrorCode::TruncatedFile);
}

TEST(Nifti, RoundTripAcrossEncodings) {
    detail::Rng rng(21);
    for (int i = 0; i < 40; ++i) {
        const Volume f = random_volume(rng, false);
        EXPECT_EQ(read_nifti(nifti::write(f)), f);
        EXPECT_EQ(read_nifti(nifti::write(f, {nifti::kFloat32, true})), f);
        const Volume n = random_volume(rng, true);
        EXPECT_EQ(read_nifti(nifti::write(n, {nifti::kInt16, i % 2 == 0})), n);
    }
}

TEST(Nifti, SlopeScalingIsApplied) {
    Volume v({2, 1, 1}, {1, 1, 1}, {-1000.0f, 40.0f});
    const auto bytes = nifti::write(v, {nifti::kInt16, false, 2.0f, -1024.0f});
    EXPECT_EQ(read_nifti(bytes), v);
}

TEST(Volume, TransversalSlices) {
    std::vector<float> data(32);
    std::iota(data.begin(), data.end(), 0.0f);
    Volume v({4, 4, 2}, {0.8, 0.9, 3.0}, data);
    const HuImage s = slice_transversal(v, 1);
    EXPECT_EQ(s.width(), 4);
    EXPECT_EQ(s(0, 0), 16.0f);
    EXPECT_EQ(s(3, 3), 31.0f);
    EXPECT_EQ(s.spacing.col, 0.8);
    EXPECT_EQ(s.spacing.row, 0.9);
    EXPECT_EQ(code_of([&] { slice_transversal(v, 2); }), ErrorCode::IndexOutOfRange);
    std::vector<float> restacked;
    for (int z = 0; z < 2; ++z) {
        const HuImage sl = slice_transversal(v, z);
        restacked.insert(restacked.end(), sl.pixels.data().begin(), sl.pixels.data().end());
    }
    EXPECT_EQ(restacked, v.data);
}

// --- phantoms -------------------------------------------------------------------

TEST(Phantom, EllipseBoxMatchesAnalyticScan) {
    PhantomScene scene;
    scene.width = scene.height = 64;
    scene.shapes.push_back({ShapeKind::Ellipse, "liver", 32, 30, 12, 10, 60, 0});
    const auto r = render_phantom(scene);
    const BinMask gt = r.truth.mask(0, "liver");
    BinMask scan(64, 64);
    for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 64; ++x) {
            const double dx = (x - 32.0) / 12.0, dy = (y - 30.0) / 10.0;
            scan(x, y) = dx * dx + dy * dy <= 1.0;
        }
    }
    EXPECT_EQ(gt, scan);
    EXPECT_EQ(tight_bbox(gt), (BBox{20, 20, 45, 41}));
    const HuImage s = slice_transversal(r.volume, 0);
    for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 64; ++x) EXPECT_EQ(s(x, y), scan(x, y) ? 60.0f : -1000.0f);
    }
}

TEST(Phantom, RectangleArea) {
    PhantomScene scene;
    scene.width = scene.height = 32;
    scene.shapes.push_back({ShapeKind::Rectangle, "bladder", 10, 10, 8, 6, -40, 0});
    EXPECT_EQ(count_set(render_phantom(scene).truth.mask(0, "bladder")), 48u);
}

TEST(Phantom, RenderingIsAPureFunctionOfTheScene) {
    auto scene = random_scene(3, CorpusOptions{.noise_sigma = 10.0});
    scene.slices = 2;
    const auto a = render_phantom(scene), b = render_phantom(scene);
    EXPECT_EQ(a.volume, b.volume);
    scene.seed += 1;
    EXPECT_NE(render_phantom(scene).volume, a.volume);
}

TEST(Phantom, OverlapOfSameLabelIsRejected) {
    PhantomScene scene;
    scene.shapes.push_back({ShapeKind::Rectangle, "liver", 10, 10, 8, 8, 60, 0});
    scene.shapes.push_back({ShapeKind::Ellipse, "liver", 12, 12, 4, 4, 60, 0});
    EXPECT_EQ(code_of([&] { render_phantom(scene); }), ErrorCode::OverlapError);
}

TEST(Phantom, SceneJsonRoundTrip) {
    const auto scene = random_scene(17);
    const nlohmann::json j = scene;
    const auto back = j.get<PhantomScene>();
    EXPECT_EQ(render_phantom(back).volume, render_phantom(scene).volume);
    const auto doc = nlohmann::json::parse(
        R"({"width": 32, "height": 32, "shapes": [{"kind": "ellipse", "label": "spleen", "center": [16, 16], "size": [5, 5]}]})");
    EXPECT_EQ(doc.get<PhantomScene>().shapes[0].mean_hu, 150.0);
}

TEST(Phantom, ShippedSceneFilesLoad) {
    for (const char* name : {"liver_bladder.json", "touching_kidneys.json", "three_organs_noisy.json", "undersegmented_liver.json"}) {
        std::ifstream in(std::string(LIMIS_SOURCE_DIR) + "/data/scenes/" + name);
        ASSERT_TRUE(in) << name;
        const auto scene = nlohmann::json::parse(in).get<PhantomScene>();
        EXPECT_FALSE(render_phantom(scene).truth.labels_on(0).empty()) << name;
    }
}

TEST(Phantom, CorpusShapesStayInsideAndApart) {
    for (const auto& scene : random_corpus(40, 99)) {
        const auto r = render_phantom(scene);
        for (const auto& label : r.truth.labels_on(0)) {
            const auto gt = r.truth.mask(0, label);
            EXPECT_GT(count_set(gt), 0u);
            const BBox b = tight_bbox(gt);
            EXPECT_GT(b.x0, 0);
            EXPECT_GT(b.y0, 0);
            EXPECT_LT(b.x1, scene.width);
            EXPECT_LT(b.y1, scene.height);
        }
    }
}

// --- imaging --------------------------------------------------------------------

TEST(Imaging, PercentileClipMatchesSortOracle) {
    std::vector<float> vals(1000);
    std::iota(vals.begin(), vals.end(), 1.0f);
    const HuImage img(FloatGrid(40, 25, vals));
    auto oracle_pct = [&](double p) {
        auto s = vals;
        std::sort(s.begin(), s.end());
        const double rank = p / 100.0 * (s.size() - 1);
        const auto lo = static_cast<std::size_t>(rank);
        return s[lo] + (rank - lo) * (s[std::min(lo + 1, s.size() - 1)] - s[lo]);
    };
    const auto clipped = percentile_clip(img);
    const auto [mn, mx] = std::minmax_element(clipped.pixels.data().begin(), clipped.pixels.data().end());
    EXPECT_FLOAT_EQ(*mn, static_cast<float>(oracle_pct(0.5)));
    EXPECT_FLOAT_EQ(*mx, static_cast<float>(oracle_pct(99.5)));
    EXPECT_EQ(percentile_clip(img, 0.0, 100.0), img);

    const HuImage flat(FloatGrid(5, 5, 7.0f));
    EXPECT_EQ(percentile_clip(flat), flat);

    std::vector<float> body(10000, 40.0f);
    for (std::size_t i = 0; i < body.size(); ++i) body[i] = static_cast<float>(i % 100);
    body[1234] = 10000.0f;
    const auto out = percentile_clip(HuImage(FloatGrid(100, 100, body)));
    const float p995 = static_cast<float>(percentile(body, 99.5));
    EXPECT_EQ(out.pixels.data()[1234], p995);
    EXPECT_LT(p995, 10000.0f);
}

TEST(Imaging, ZScoreExamplesAndOracle) {
    const HuImage two(FloatGrid(2, 1, std::vector<float>{0.0f, 2.0f}));
    const auto z = zscore_foreground(two, BinMask(2, 1, 1));
    EXPECT_FLOAT_EQ(z(0, 0), -1.0f);
    EXPECT_FLOAT_EQ(z(1, 0), 1.0f);
    const auto flat = zscore_foreground(HuImage(FloatGrid(3, 3, 5.0f)), BinMask(3, 3, 1));
    for (float v : flat.data()) EXPECT_EQ(v, 0.0f);
    EXPECT_EQ(code_of([&] { zscore_foreground(two, BinMask(2, 1)); }), ErrorCode::EmptyForeground);

    detail::Rng rng(31);
    FloatGrid g(32, 32);
    for (auto& v : g.data()) v = static_cast<float>(rng.uniform(-200, 300));
    BinMask fg(32, 32);
    for (auto& v : fg.data()) v = rng.uniform() < 0.4;
    double mean = 0, n = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (fg.data()[i]) {
            mean += g.data()[i];
            ++n;
        }
    }
    mean /= n;
    double var = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (fg.data()[i]) var += (g.data()[i] - mean) * (g.data()[i] - mean);
    }
    const double sd = std::sqrt(var / n);
    const auto out = zscore_foreground(HuImage(g), fg);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(out.data()[i], (g.data()[i] - mean) / sd, 1e-5);
}

TEST(Imaging, WindowNormalizationExamples) {
    const WindowSpec w{50, 400};
    EXPECT_EQ(window_value(-150, w), 0.0f);
    EXPECT_EQ(window_value(250, w), 1.0f);
    EXPECT_EQ(window_value(50, w), 0.5f);
    EXPECT_EQ(window_value(-1000, w), 0.0f);
    detail::Rng rng(32);
    for (int i = 0; i < 200; ++i) {
        const double a = rng.uniform(-1100, 1100), b = rng.uniform(-1100, 1100);
        EXPECT_LE(window_value(std::min(a, b), w), window_value(std::max(a, b), w));
    }
    EXPECT_THROW(window_normalize(FloatGrid(2, 2), WindowSpec{0, 0}), Error);
}

TEST(Imaging, CropWithMarginExamples) {
    const FloatGrid g(64, 64);
    EXPECT_EQ(crop_with_margin(g, {12, 8, 40, 30}, 10).region, (BBox{2, 0, 50, 40}));
    EXPECT_EQ(crop_with_margin(g, {12, 8, 40, 30}, 0).region, (BBox{12, 8, 40, 30}));
}

TEST(Imaging, CropThenPasteIsIdentityOnTheRegion) {
    detail::Rng rng(33);
    for (int i = 0; i < 50; ++i) {
        FloatGrid g(40, 40);
        for (auto& v : g.data()) v = static_cast<float>(rng.uniform());
        const BBox b = oracle::random_box(rng, 40);
        const auto c = crop_with_margin(g, b, static_cast<int>(rng.uniform_int(0, 12)));
        const auto back = paste(FloatGrid(40, 40, -1.0f), c.grid, c.region.x0, c.region.y0);
        for (int y = 0; y < 40; ++y) {
            for (int x = 0; x < 40; ++x) {
                EXPECT_EQ(back(x, y), c.region.contains(x, y) ? g(x, y) : -1.0f);
            }
        }
    }
}

TEST(Imaging, ResampleExamples) {
    detail::Rng rng(34);
    FloatGrid g(16, 16);
    for (auto& v : g.data()) v = static_cast<float>(rng.uniform(-100, 100));
    const HuImage img(g, {1.5, 1.5});
    EXPECT_EQ(resample(img, {1.5, 1.5}, 16, 16), img);

    const HuImage checker(FloatGrid(2, 2, std::vector<float>{0, 100, 100, 0}), {3.0, 3.0});
    const auto up = resample(checker, {1.5, 1.5}, 4, 4);
    EXPECT_EQ(up(0, 0), 0.0f);
    EXPECT_EQ(up(3, 0), 100.0f);
    EXPECT_EQ(up(0, 3), 100.0f);
    EXPECT_EQ(up(3, 3), 0.0f);
    EXPECT_FLOAT_EQ(up(1, 1), 0.0f * 0.5625f + 100.0f * 0.1875f * 2 + 0.0f * 0.0625f);

    FloatGrid body(60, 60, 10.0f);
    body(5, 5) = -900.0f;
    const auto padded = resample(HuImage(body, {1.5, 1.5}), {1.5, 1.5}, 64, 64);
    for (int k = 0; k < 64; ++k) {
        EXPECT_EQ(padded(k, 0), -900.0f);
        EXPECT_EQ(padded(0, k), -900.0f);
        EXPECT_EQ(padded(k, 63), -900.0f);
        EXPECT_EQ(padded(63, k), -900.0f);
    }
}

TEST(Imaging, MaskResampleFollowsImageGeometry) {
    BinMask m(10, 10);
    m(4, 4) = 1;
    const auto r = resample_mask(m, {3.0, 3.0}, CommonGeometry{{1.5, 1.5}, 20, 20});
    EXPECT_EQ(count_set(r), 4u);
    EXPECT_EQ(tight_bbox(r), (BBox{8, 8, 10, 10}));
}

TEST(Imaging, AugmentDefaultsAndDeterminism) {
    const AugmentSpec spec;
    EXPECT_EQ(spec.p_translate, 0.10);
    EXPECT_EQ(spec.p_rotate, 0.10);
    EXPECT_EQ(spec.p_scale, 0.10);
    EXPECT_EQ(spec.rotate_deg_max, 10.3);
    EXPECT_EQ(spec.rotate_deg_min, -10.3);
    EXPECT_EQ(spec.translate_px_max, 10);
    EXPECT_EQ(spec.scale_min, 0.9);
    EXPECT_EQ(spec.scale_max, 1.1);

    int identity = 0;
    for (std::uint64_t seed = 0; seed < 2000; ++seed) {
        AugmentSpec s;
        s.seed = seed;
        const auto p = draw_augment(s);
        EXPECT_EQ(draw_augment(s).rotate_deg, p.rotate_deg);
        if (p.identity()) ++identity;
        if (p.rotate_deg) {
            EXPECT_GE(*p.rotate_deg, -10.3);
            EXPECT_LE(*p.rotate_deg, 10.3);
        }
        if (p.scale) {
            EXPECT_GE(*p.scale, 0.9);
            EXPECT_LE(*p.scale, 1.1);
        }
        if (p.translate) {
            EXPECT_LE(std::abs(p.translate->first), 10);
            EXPECT_LE(std::abs(p.translate->second), 10);
        }
    }
    // Each transform fires with p = 0.1, so about 0.9^3 of draws are identity.
    EXPECT_NEAR(identity / 2000.0, 0.729, 0.04);
}

TEST(Imaging, IdentityDrawLeavesImageAndBoxes) {
    std::uint64_t seed = 0;
    AugmentSpec s;
    for (;; ++seed) {
        s.seed = seed;
        if (draw_augment(s).identity()) break;
    }
    FloatGrid g(8, 8, 3.0f);
    const auto out = augment(g, {{1, 1, 4, 4}}, s);
    EXPECT_EQ(out.image, g);
    EXPECT_EQ(out.boxes[0], (BBox{1, 1, 4, 4}));
}

TEST(Imaging, TranslationAndRotationOfBoxes) {
    AugmentParams t;
    t.translate = std::make_pair(5, 3);
    EXPECT_EQ(apply_augment(FloatGrid(64, 64), {{10, 10, 20, 20}}, t).boxes[0], (BBox{15, 13, 25, 23}));

    AugmentParams r;
    r.rotate_deg = 10.3;
    const BBox sq{22, 22, 42, 42}; // centered on (31.5, 31.5) of a 64 x 64 image
    const BBox got = apply_augment(FloatGrid(64, 64), {sq}, r).boxes[0];
    const double th = 10.3 * std::numbers::pi / 180.0;
    double lx = 1e9, hx = -1e9, ly = 1e9, hy = -1e9;
    for (double x : {22.0, 42.0}) {
        for (double y : {22.0, 42.0}) {
            const double dx = x - 31.5, dy = y - 31.5;
            const double rx = 31.5 + std::cos(th) * dx - std::sin(th) * dy;
            const double ry = 31.5 + std::sin(th) * dx + std::cos(th) * dy;
            lx = std::min(lx, rx);
            hx = std::max(hx, rx);
            ly = std::min(ly, ry);
            hy = std::max(hy, ry);
        }
    }
    EXPECT_LE(std::abs(got.x0 - lx), 1.0);
    EXPECT_LE(std::abs(got.x1 - hx), 1.0);
    EXPECT_LE(std::abs(got.y0 - ly), 1.0);
    EXPECT_LE(std::abs(got.y1 - hy), 1.0);
}

// --- presets --------------------------------------------------------------------

TEST(Presets, BuiltinTableMatchesShippedConfig) {
    const auto shipped = WindowPresets::load(std::string(LIMIS_SOURCE_DIR) + "/config/window_presets.json");
    EXPECT_EQ(shipped.to_json(), WindowPresets().to_json());
}

TEST(Presets, OrganWindows) {
    const WindowPresets p;
    EXPECT_EQ(p.window_for("liver"), (WindowSpec{60, 160}));
    EXPECT_EQ(p.window_for("bladder"), (WindowSpec{40, 400}));
    for (const char* organ : {"kidney left", "kidney right", "spleen", "pancreas", "stomach", "duodenum", "colon",
                              "esophagus", "gallbladder"}) {
        EXPECT_EQ(p.window_for(organ), (WindowSpec{50, 400})) << organ;
    }
    EXPECT_EQ(p.default_window(), (WindowSpec{50, 400}));
}

TEST(Presets, IncompleteOrganMapIsRejected) {
    auto doc = nlohmann::json::parse(WindowPresets::kBuiltinJson);
    doc["organ_map"].erase("spleen");
    EXPECT_THROW(WindowPresets::from_json(doc), Error);
}
