#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "insarforge/deform.hpp"
#include "insarforge/detect.hpp"
#include "insarforge/error.hpp"
#include "insarforge/geometry.hpp"
#include "insarforge/rng.hpp"

using namespace insarforge;
using namespace insarforge::detect;
using dataset::PatchPosition;
using dataset::WeightTriple;

namespace {
Raster mogi_phase(int side, double spacing) {
    const GridShape g{side, side, spacing};
    deform::Mogi m{g.extent_east() / 2, g.extent_north() / 2, 2000.0, 2e6};
    return deform::render_deformation(m, {}, LosGeometry(30, 190), g);
}

cnn::CnnModel zero_model() {
    auto m = cnn::init_model(64, 2, 1);
    std::fill(m.params.begin(), m.params.end(), 0.0f);
    return m;
}

std::vector<PatchProbability> lattice(int w, int h, int patch, int stride, double p) {
    std::vector<PatchProbability> out;
    for (const auto& pos : dataset::patch_positions(w, h, patch, stride)) out.push_back({pos, p});
    return out;
}
} // namespace

TEST_CASE("canny rejects a constant patch") {
    Raster r({64, 64, 1.0}, Unit::gray_u8);
    for (double& v : r.values()) v = 77;
    const auto e = canny_prefilter(r);
    CHECK_FALSE(e.accepted);
    CHECK(e.edge_fraction == 0.0);
    CHECK(e.mask.max() == 0.0);
}

TEST_CASE("canny accepts a wrapped Mogi fringe pattern") {
    const auto gray = dataset::to_gray(mogi_phase(64, 100.0));
    const auto e = canny_prefilter(gray);
    CHECK(e.accepted);
    for (double v : e.mask.values()) CHECK((v == 0.0 || v == 1.0));
}

TEST_CASE("canny finds a vertical step at its column") {
    Raster r({40, 30, 1.0}, Unit::gray_u8);
    for (int row = 0; row < 30; ++row)
        for (int col = 0; col < 40; ++col) r(row, col) = col < 20 ? 20 : 220;
    const auto e = canny_prefilter(r);
    CHECK(e.accepted);
    for (int row = 1; row < 29; ++row) {
        int count = 0;
        for (int col = 0; col < 40; ++col)
            if (e.mask(row, col) == 1.0) {
                ++count;
                CHECK(std::abs(col - 19.5) <= 1.0);
            }
        CHECK(count >= 1);
    }
}

TEST_CASE("merge of a single whole-image patch is constant") {
    std::vector<PatchProbability> one{{{0, 0, false}, 0.9}};
    const auto m = merge_probabilities(one, 64, 64, 64);
    CHECK(std::abs(m.p_max - 0.9) < 1e-6);
    for (double v : m.map.values()) CHECK(std::abs(v - 0.9) < 1e-6);
    CHECK(m.map.unit() == Unit::probability);
}

TEST_CASE("merge of zero probabilities and of nothing") {
    const auto zeros = lattice(100, 100, 64, 8, 0.0);
    const auto m = merge_probabilities(zeros, 100, 100, 64);
    CHECK(m.p_max == 0.0);
    CHECK(m.map.max() == 0.0);
    CHECK(m.contours.empty());
    const auto e = merge_probabilities({}, 100, 100, 64);
    CHECK(e.p_max == 0.0);
    CHECK(e.map.width() == 100);
}

TEST_CASE("merge peaks at the high-probability patch and is monotone") {
    auto patches = lattice(100, 100, 64, 8, 0.1);
    Rng rng(3);
    for (auto& p : patches) p.p = rng.uniform(0.0, 0.3);
    auto& hot = patches[7];
    hot.p = 1.0;
    const auto m = merge_probabilities(patches, 100, 100, 64);
    CHECK(m.p_max == m.map.max());
    CHECK(m.map(m.p_max_row, m.p_max_col) == m.p_max);
    CHECK(std::abs(m.p_max_row - (hot.position.row + 31.5)) <= 8);
    CHECK(std::abs(m.p_max_col - (hot.position.col + 31.5)) <= 8);
    for (int trial = 0; trial < 30; ++trial) {
        auto raised = patches;
        auto& q = raised[rng.below(raised.size())];
        q.p = std::min(1.0, q.p + rng.uniform(0.0, 0.8));
        const auto m2 = merge_probabilities(raised, 100, 100, 64);
        CHECK(m2.p_max >= m.p_max);
        for (std::size_t i = 0; i < m.map.size(); ++i) CHECK(m2.map.values()[i] >= m.map.values()[i] - 1e-15);
    }
}

TEST_CASE("merge kernel has unit sum under reflection") {
    // a uniform lattice stays uniform everywhere including the borders
    const auto m = merge_probabilities(lattice(37, 29, 16, 4, 0.625), 37, 29, 16);
    for (double v : m.map.values()) CHECK(v == doctest::Approx(0.625).epsilon(1e-12));
}

TEST_CASE("contours of a radial bump are closed circles") {
    Raster f({60, 60, 1.0}, Unit::probability);
    for (int r = 0; r < 60; ++r)
        for (int c = 0; c < 60; ++c) f(r, c) = std::exp(-((r - 30.0) * (r - 30.0) + (c - 28.0) * (c - 28.0)) / 200.0);
    for (double level : {0.5, 0.8}) {
        const auto cs = contours(f, level);
        REQUIRE(cs.size() == 1);
        CHECK(cs[0].closed);
        const double radius = std::sqrt(-200.0 * std::log(level));
        for (const auto& p : cs[0].points) CHECK(std::hypot(p[0] - 28.0, p[1] - 30.0) == doctest::Approx(radius).epsilon(0.02));
    }
    CHECK(contours(f, 1.5).empty());
}

TEST_CASE("estimate_weights recovers one-hot classes and the centroid") {
    const auto& classes = dataset::enumerate_weight_classes();
    for (const auto& target : {WeightTriple{0, 0, 1}, WeightTriple{1, 0, 0}, WeightTriple{0, 1, 0}}) {
        std::vector<double> p(91, 0.0);
        p[dataset::weight_class_of(target)] = 1.0;
        CHECK(estimate_weights(p) == target);
    }
    // centroid oracle: primitive nonzero triples on {0..4}^3, normalized
    double a = 0, b = 0, c = 0;
    int n = 0;
    for (int i = 0; i <= 4; ++i)
        for (int j = 0; j <= 4; ++j)
            for (int k = 0; k <= 4; ++k) {
                if (i + j + k == 0 || std::gcd(std::gcd(i, j), k) != 1) continue;
                const double s = i + j + k;
                a += i / s;
                b += j / s;
                c += k / s;
                ++n;
            }
    REQUIRE(n == 91);
    const std::vector<double> uniform(91, 1.0 / 91);
    const auto w = estimate_weights(uniform);
    CHECK(std::abs(w.alpha - a / n) < 1e-12);
    CHECK(std::abs(w.beta - b / n) < 1e-12);
    CHECK(std::abs(w.gamma - c / n) < 1e-12);
    Rng rng(5);
    for (int t = 0; t < 20; ++t) {
        std::vector<double> p(91);
        double s = 0;
        for (double& v : p) s += v = rng.uniform();
        for (double& v : p) v /= s;
        const auto e = estimate_weights(p);
        CHECK(std::abs(e.alpha + e.beta + e.gamma - 1.0) < 1e-12);
        for (double v : {e.alpha, e.beta, e.gamma}) CHECK((v >= 0.0 && v <= 1.0));
    }
    CHECK_THROWS_AS(estimate_weights(std::vector<double>(91, 0.02)), DataError);
    CHECK_THROWS_AS(estimate_weights(std::vector<double>(90, 1.0 / 90)), DataError);
    (void)classes;
}

TEST_CASE("turbulence weight maps to the nearest alpha-free class") {
    const auto& classes = dataset::enumerate_weight_classes();
    CHECK(turbulence_weight(9) == 1.0);
    CHECK(turbulence_weight(5) == 0.0);
    CHECK(turbulence_weight(7) == 0.5);
    CHECK(turbulence_weight(20) == 1.0);
    CHECK(turbulence_weight(1) == 0.0);
    CHECK(classes[class_for_turbulence_weight(1.0)] == WeightTriple{0, 0, 1});
    CHECK(classes[class_for_turbulence_weight(0.0)] == WeightTriple{0, 1, 0});
    CHECK(classes[class_for_turbulence_weight(0.5)].normalized() == WeightTriple{0, 0.5, 0.5});
    for (double g = 0; g <= 1.0; g += 0.01) CHECK(classes[class_for_turbulence_weight(g)].alpha == 0.0);
}

TEST_CASE("detect rejects mismatched models and images") {
    const auto m = zero_model();
    const auto scheme2 = dataset::make_scheme(dataset::SchemeKind::two_class);
    const auto scheme3 = dataset::make_scheme(dataset::SchemeKind::three_class);
    const auto img = mogi_phase(100, 100.0);
    DetectConfig cfg;
    CHECK_THROWS_AS(detect::detect(img, m, scheme3, cfg), DataError);
    cfg.patch = 32;
    CHECK_THROWS_AS(detect::detect(img, m, scheme2, cfg), DataError);
    CHECK_THROWS_AS(detect::detect(Raster({100, 100, 1.0}, Unit::delay_mm), m, scheme2), DataError);
}

TEST_CASE("detect with an undecided model sits exactly on the threshold") {
    const auto m = zero_model();
    const auto scheme = dataset::make_scheme(dataset::SchemeKind::two_class);
    Raster img({100, 100, 100.0}, Unit::phase_rad);
    Rng rng(2);
    for (double& v : img.values()) v = rng.uniform(-3.0, 3.0);
    const auto r = detect::detect(img, m, scheme);
    for (const auto& p : r.patches) REQUIRE(p.tested);
    CHECK(r.probability_map.p_max == 0.5);
    CHECK_FALSE(r.is_positive);
    DetectConfig cfg;
    cfg.threshold = 0.4999;
    CHECK(detect::detect(img, m, scheme, cfg).is_positive);
}

TEST_CASE("edge-free images never test a patch") {
    const auto m = cnn::init_model(64, 2, 9);
    Raster img({100, 100, 100.0}, Unit::gray_u8);
    for (double& v : img.values()) v = 128;
    const auto r = detect::detect(img, m, dataset::make_scheme(dataset::SchemeKind::two_class));
    CHECK(r.probability_map.p_max == 0.0);
    CHECK_FALSE(r.is_positive);
    for (const auto& p : r.patches) CHECK_FALSE(p.tested);
    CHECK(r.patches.size() == 36);
}

TEST_CASE("detect is deterministic and thread-count independent") {
    const auto m = cnn::init_model(64, 91, 4);
    const auto scheme = dataset::make_scheme(dataset::SchemeKind::ninetyone_class);
    const auto img = mogi_phase(100, 100.0);
    DetectConfig cfg;
    const auto a = detect::detect(img, m, scheme, cfg);
    cfg.jobs = 3;
    const auto b = detect::detect(img, m, scheme, cfg);
    CHECK(a.probability_map.map == b.probability_map.map);
    CHECK(a.probability_map.p_max == b.probability_map.p_max);
    REQUIRE(a.weights.has_value());
    CHECK(*a.weights == *b.weights);
    CHECK(a.is_positive == (a.probability_map.p_max > 0.5));
}

namespace {
RetrainItem synthetic_item(bool deforming, bool positive, double p_def, int n_classes, std::uint64_t seed) {
    RetrainItem item;
    Raster img({100, 100, 500.0}, Unit::phase_rad);
    Rng rng(seed);
    for (double& v : img.values()) v = rng.uniform(-3.0, 3.0);
    item.image = img;
    item.deforming = deforming;
    item.result.is_positive = positive;
    for (const auto& pos : dataset::patch_positions(100, 100, 64, 8)) {
        PatchRecord rec;
        rec.position = pos;
        rec.tested = true;
        rec.probs.assign(n_classes, (1.0 - p_def) / (n_classes - 1));
        rec.probs[0] = p_def;
        rec.p_deformation = p_def;
        item.result.patches.push_back(rec);
    }
    return item;
}

void check_disjoint(const dataset::LabeledDataset& d, const std::vector<RetrainItem>& items) {
    for (const auto& rec : d.records) {
        const auto j = nlohmann::json::parse(rec);
        if (!j.contains("row")) continue;
        const PatchPosition q{j["row"].get<int>(), j["col"].get<int>(), false};
        for (const auto& p : items[j["item"].get<std::size_t>()].result.patches) CHECK_FALSE(p.position == q);
    }
}
} // namespace

TEST_CASE("two-class retraining selection") {
    const auto scheme = dataset::make_scheme(dataset::SchemeKind::two_class);
    std::vector<RetrainItem> items;
    items.push_back(synthetic_item(true, true, 0.9, 2, 1));    // TP: all 36 patches -> D+S+T
    items.push_back(synthetic_item(false, true, 0.3, 2, 2));   // FP with P(S+T) = 0.7 -> S+T
    items.push_back(synthetic_item(false, true, 0.8, 2, 3));   // FP, P(S+T) = 0.2: none
    items.push_back(synthetic_item(false, false, 0.1, 2, 4));  // TN: none
    auto fn = synthetic_item(true, false, 0.2, 2, 5);
    fn.source_pixel = std::array<int, 2>{2, 2};  // only the (0, 0) patch covers it
    items.push_back(fn);
    const auto d = select_retrain_patches(items, scheme);
    const auto counts = d.class_counts();
    CHECK(counts[0] == 36 + 1);
    CHECK(counts[1] == 36);
    check_disjoint(d, items);
    CHECK(select_retrain_patches({}, scheme).count() == 0);
}

TEST_CASE("three-class retraining adds synthetic turbulence") {
    const auto scheme = dataset::make_scheme(dataset::SchemeKind::three_class);
    std::vector<RetrainItem> items{synthetic_item(false, true, 0.2, 3, 7)};  // P(S+T) = 0.4 > 1/3
    const auto d = select_retrain_patches(items, scheme);
    const auto counts = d.class_counts();
    CHECK(counts[0] == 0);
    CHECK(counts[1] == 36);
    CHECK(counts[2] == 36);
    CHECK_THROWS_AS(select_retrain_patches(items, dataset::make_scheme(dataset::SchemeKind::three_class,
                                                                       dataset::ThreeClassVariant::D_S_T)),
                    UsageError);
}

TEST_CASE("ninety-one-class retraining uses the turbulence weight") {
    const auto scheme = dataset::make_scheme(dataset::SchemeKind::ninetyone_class);
    const auto& classes = dataset::enumerate_weight_classes();
    auto tp = synthetic_item(true, true, 0.0, 91, 1);
    for (auto& rec : tp.result.patches) {
        std::fill(rec.probs.begin(), rec.probs.end(), 0.0);
        rec.probs[dataset::weight_class_of({1, 0, 0})] = 1.0;
    }
    const auto fp = synthetic_item(false, true, 0.0, 91, 2);
    std::vector<RetrainItem> items{tp, fp};
    const auto d = select_retrain_patches(items, scheme);
    CHECK(d.class_counts()[dataset::weight_class_of({1, 0, 0})] == 36);
    for (std::size_t i = 0; i < d.count(); ++i) {
        if (d.records[i].find("false_positive") == std::string::npos) continue;
        CHECK(classes[d.labels[i]].alpha == 0.0);
    }
    check_disjoint(d, items);
}
