#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "insarforge/dataset.hpp"
#include "insarforge/error.hpp"
#include "insarforge/io.hpp"

using namespace insarforge;
using namespace insarforge::dataset;

namespace {
Raster random_phase(const GridShape& g, std::uint64_t seed) {
    Rng rng(seed);
    Raster r(g, Unit::phase_rad);
    for (double& v : r.values()) v = rng.uniform(-10, 10);
    return r;
}

/// Brute-force oracle: classes of nonzero grid triples under positive scaling.
int count_scaling_classes() {
    std::vector<std::array<int, 3>> reps;
    for (int a = 0; a <= 4; ++a)
        for (int b = 0; b <= 4; ++b)
            for (int c = 0; c <= 4; ++c) {
                if (a + b + c == 0) continue;
                bool seen = false;
                for (const auto& r : reps)
                    // (a,b,c) ~ r iff the cross products vanish
                    if (a * r[1] == b * r[0] && a * r[2] == c * r[0] && b * r[2] == c * r[1]) seen = true;
                if (!seen) reps.push_back({a, b, c});
            }
    return static_cast<int>(reps.size());
}
} // namespace

TEST_CASE("composition") {
    const GridShape g{12, 10, 100.0};
    const Raster d = random_phase(g, 1), s = random_phase(g, 2), t = random_phase(g, 3);
    CHECK(compose_interferogram(d, s, t, {1, 0, 0}) == d);
    const Raster mean = compose_interferogram(d, s, t, {1, 1, 1});
    for (std::size_t i = 0; i < g.size(); ++i)
        CHECK(mean.values()[i] == doctest::Approx((d.values()[i] + s.values()[i] + t.values()[i]) / 3));
    const Raster half = compose_interferogram(d, s, t, {0.5, 0.5, 0.5});
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(std::abs(half.values()[i] - mean.values()[i]) < 1e-12);
    const Raster scaled = compose_interferogram(d, s, t, {0.75 * 3, 0.25 * 3, 0.5 * 3});
    const Raster base = compose_interferogram(d, s, t, {0.75, 0.25, 0.5});
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(std::abs(scaled.values()[i] - base.values()[i]) < 1e-12);
    CHECK_THROWS_AS(compose_interferogram(d, s, t, {0, 0, 0}), UsageError);
    CHECK_THROWS_AS(compose_interferogram(d, s, random_phase({12, 11, 100.0}, 4), {1, 1, 1}), DataError);
}

TEST_CASE("weight classes") {
    const auto& classes = enumerate_weight_classes();
    CHECK(classes.size() == 91);
    CHECK(count_scaling_classes() == 91);
    CHECK(classes[0] == WeightTriple{0, 0, 1});
    CHECK(classes[1] == WeightTriple{0, 0.25, 0.75});
    CHECK(classes[2] == WeightTriple{0, 0.5, 0.5});
    CHECK(classes[90] == WeightTriple{1, 1, 1});
    CHECK(weight_class_of({0.5, 0.5, 0.5}) == weight_class_of({1, 1, 1}));
    CHECK(weight_class_of({0.5, 0.5, 0.5}) == 90);
    for (std::size_t i = 0; i < classes.size(); ++i)
        for (std::size_t j = i + 1; j < classes.size(); ++j) {
            const auto& a = classes[i];
            const auto& b = classes[j];
            const bool parallel = std::abs(a.alpha * b.beta - a.beta * b.alpha) < 1e-12 &&
                                  std::abs(a.alpha * b.gamma - a.gamma * b.alpha) < 1e-12 &&
                                  std::abs(a.beta * b.gamma - a.gamma * b.beta) < 1e-12;
            CHECK(!parallel);
        }
    for (const auto& w : classes) {
        for (double v : {w.alpha, w.beta, w.gamma}) CHECK(std::fmod(v * 4, 1.0) == 0.0);
        CHECK(std::max({w.alpha, w.beta, w.gamma}) > 0);
    }
}

TEST_CASE("schemes") {
    const auto two = make_scheme(SchemeKind::two_class);
    CHECK(two.size() == 2);
    CHECK(two.classes[0].name == "D+S+T");
    CHECK(two.classes[1].name == "S+T");
    const auto three = make_scheme(SchemeKind::three_class, ThreeClassVariant::DST_ST_T);
    CHECK(three.classes[0].name == "D+S+T");
    CHECK(three.classes[1].name == "S+T");
    CHECK(three.classes[2].name == "T");
    CHECK(make_scheme(SchemeKind::three_class, ThreeClassVariant::DT_S_T).classes[0].name == "D+T");
    const auto nine = make_scheme(SchemeKind::ninetyone_class);
    CHECK(nine.size() == 91);
    for (const auto& s : {two, three, nine, make_scheme(SchemeKind::three_class, ThreeClassVariant::D_S_T)})
        CHECK(scheme_from_name(s.name()).name() == s.name());
    CHECK_THROWS_AS(scheme_from_name("four_class"), UsageError);

    const std::vector<double> p3{0.2, 0.5, 0.3};
    CHECK(deformation_probability(three, p3) == doctest::Approx(0.2));
    std::vector<double> p91(91, 0.0);
    p91[weight_class_of({1, 0, 0})] = 0.6;
    p91[weight_class_of({1, 1, 1})] = 0.4;
    CHECK(deformation_probability(nine, p91) == doctest::Approx(0.6));
}

TEST_CASE("patch grid") {
    const auto pos = patch_positions(500, 500, 224, 28);
    const auto regular = std::count_if(pos.begin(), pos.end(), [](const auto& p) { return !p.snapped; });
    CHECK(regular == 100);
    CHECK(pos.size() == 121);
    CHECK(patch_positions(64, 64, 64, 8).size() == 1);
    CHECK(patch_positions(100, 100, 64, 8).size() == 36);

    Raster img({37, 29, 1.0}, Unit::phase_rad);
    const auto patches = extract_patches(img, 10, 7);
    std::vector<int> covered(img.size(), 0);
    for (const auto& p : patches)
        for (int r = 0; r < 10; ++r)
            for (int c = 0; c < 10; ++c) covered[(p.position.row + r) * 37 + p.position.col + c] = 1;
    CHECK(std::accumulate(covered.begin(), covered.end(), 0) == static_cast<int>(img.size()));
    CHECK_THROWS_AS(extract_patches(img, 30, 7), UsageError);
}

TEST_CASE("augmentation") {
    Rng rng(8);
    Raster p({16, 16, 1.0}, Unit::gray_u8);
    for (double& v : p.values()) v = static_cast<double>(rng.below(256));
    auto apply = [](Raster r, AugmentKind k, int times) {
        for (int i = 0; i < times; ++i) r = augment_patch(r, {k});
        return r;
    };
    CHECK(apply(p, AugmentKind::flip_h, 2) == p);
    CHECK(apply(p, AugmentKind::flip_v, 2) == p);
    CHECK(apply(p, AugmentKind::rot90, 4) == p);
    CHECK(apply(p, AugmentKind::rot90, 2) == augment_patch(p, {AugmentKind::rot180}));
    CHECK(apply(p, AugmentKind::rot90, 3) == augment_patch(p, {AugmentKind::rot270}));
    auto histogram = [](const Raster& r) {
        std::vector<int> h(256, 0);
        for (double v : r.values()) ++h[static_cast<int>(v)];
        return h;
    };
    for (auto k : {AugmentKind::flip_h, AugmentKind::flip_v, AugmentKind::rot90, AugmentKind::rot180, AugmentKind::rot270})
        CHECK(histogram(augment_patch(p, {k})) == histogram(p));
    const Raster shifted = augment_patch(p, {AugmentKind::shift, 2, -3});
    CHECK(shifted(5, 5) == p(8, 3));
    CHECK(shifted(0, 0) == p(3, 1));   // reflected across the left edge
    CHECK_THROWS_AS(augment_patch(p, {AugmentKind::shift, 4, 0}), UsageError);
}

TEST_CASE("scenes") {
    const GridShape grid{100, 100, 555.0};
    const auto two = make_scheme(SchemeKind::two_class);
    SUBCASE("deforming patch scenes carry at least one fringe") {
        for (std::uint64_t s = 0; s < 10; ++s) {
            const Scene sc = synth_patch_scene(two.classes[0], grid, 64, 8, s);
            CHECK(sc.deforming());
            CHECK(sc.d.width() == 64);
            CHECK(sc.weights.alpha * (sc.d.max() - sc.d.min()) >= 2 * std::numbers::pi);
            CHECK(sc.record() == synth_patch_scene(two.classes[0], grid, 64, 8, s).record());
        }
    }
    SUBCASE("non-deforming scenes have no D") {
        const Scene sc = synth_scene(two.classes[1], grid, 5);
        CHECK(!sc.deforming());
        CHECK(sc.d.max() == 0.0);
        CHECK(sc.composed.width() == 100);
    }
    SUBCASE("91-class scenes are normalized compositions") {
        const auto nine = make_scheme(SchemeKind::ninetyone_class);
        const Scene sc = synth_patch_scene(nine.classes[50], grid, 64, 8, 3);
        CHECK(sc.normalized);
        CHECK(sc.weights == *nine.classes[50].weights);
        const Raster expect = compose_interferogram(sc.d, sc.s, sc.t, sc.weights);
        CHECK(expect == sc.composed);
    }
    CHECK_THROWS_AS(synth_patch_scene(two.classes[0], grid, 101, 8, 1), DataError);
}

TEST_CASE("build dataset") {
    BuildOptions opt;
    opt.grid = {80, 80, 555.0};
    opt.patch = 64;
    const auto two = make_scheme(SchemeKind::two_class);
    const auto data = build_dataset(two, 6, 99, opt);
    CHECK(data.count() == 12);
    CHECK(data.class_counts() == std::vector<std::size_t>{6, 6});
    CHECK(data.pixels.size() == 12 * 64 * 64);

    opt.jobs = 3;
    const auto parallel = build_dataset(two, 6, 99, opt);
    CHECK(parallel.pixels == data.pixels);
    CHECK(manifest_text(parallel, 99) == manifest_text(data, 99));

    const auto path = std::filesystem::temp_directory_path() / "insarforge_test_packed.bin";
    write_packed(path, data);
    const auto back = read_packed(path);
    CHECK(back.pixels == data.pixels);
    CHECK(back.labels == data.labels);
    CHECK(back.scheme.name() == "two_class");
    std::filesystem::remove(path);

    const auto three = make_scheme(SchemeKind::three_class, ThreeClassVariant::DST_ST_T);
    CHECK(build_dataset(three, 2, 1, opt).class_counts() == std::vector<std::size_t>{2, 2, 2});
    opt.patch = 81;
    CHECK_THROWS_AS(build_dataset(two, 2, 1, opt), DataError);
    CHECK_THROWS_AS(build_dataset(two, 1, 1, BuildOptions{}), UsageError);
}
