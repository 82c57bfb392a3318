#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>

#include "insarforge/error.hpp"
#include "insarforge/geometry.hpp"
#include "insarforge/igrd.hpp"
#include "insarforge/io.hpp"
#include "insarforge/png.hpp"
#include "insarforge/raster.hpp"
#include "insarforge/rng.hpp"

using namespace insarforge;
constexpr double kPi = std::numbers::pi;

namespace {
Raster filled(Unit unit, std::vector<double> v, int w, int h) { return Raster({w, h, 100.0}, unit, std::move(v)); }

std::filesystem::path temp_path(const char* name) {
    return std::filesystem::temp_directory_path() / (std::string("insarforge_test_") + name);
}
} // namespace

TEST_CASE("raster invariants") {
    CHECK_THROWS_AS(Raster({0, 4, 1.0}, Unit::phase_rad), DataError);
    CHECK_THROWS_AS(Raster({4, 4, 0.0}, Unit::phase_rad), DataError);
    CHECK_THROWS_AS(Raster({2, 2, 1.0}, Unit::phase_rad, {1, 2, 3}), DataError);
    CHECK_THROWS_AS(filled(Unit::gray_u8, {0, 1.5, 2, 3}, 2, 2), DataError);
    CHECK_THROWS_AS(filled(Unit::gray_u8, {0, 256, 2, 3}, 2, 2), DataError);
    CHECK_THROWS_AS(filled(Unit::probability, {0, 1.1, 0, 0}, 2, 2), DataError);
    Raster r = filled(Unit::phase_rad, {1, 2, 3, 4, 5, 6}, 3, 2);
    CHECK(r(1, 0) == 4);
    CHECK(r.mean() == doctest::Approx(3.5));
    const Raster c = r.crop(0, 1, 2, 2);
    CHECK(c.width() == 2);
    CHECK(c(1, 1) == 6);
    CHECK_THROWS_AS(r.crop(1, 1, 2, 2), DataError);
}

TEST_CASE("pixel coordinates put row 0 at the north edge") {
    GridShape g{10, 5, 20.0};
    CHECK(g.east(3) == 60.0);
    CHECK(g.north(0) == 80.0);
    CHECK(g.north(4) == 0.0);
}

TEST_CASE("los unit vector") {
    auto v = los_unit_vector(LosGeometry(0.0, 123.0));
    CHECK(v[0] == doctest::Approx(0.0));
    CHECK(v[1] == doctest::Approx(0.0));
    CHECK(v[2] == 1.0);

    // heading 0 looks east
    v = los_unit_vector(LosGeometry(45.0, 0.0));
    CHECK(v[0] == doctest::Approx(std::sqrt(0.5)).epsilon(1e-14));
    CHECK(std::abs(v[1]) < 1e-15);
    CHECK(v[2] == doctest::Approx(std::sqrt(0.5)).epsilon(1e-14));

    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        v = los_unit_vector(LosGeometry(rng.uniform(0, 45), rng.uniform(0, 360)));
        CHECK(std::abs(std::hypot(v[0], v[1], v[2]) - 1.0) < 1e-12);
    }
    CHECK_THROWS_AS(LosGeometry(46.0, 0.0), UsageError);
    CHECK_THROWS_AS(LosGeometry(10.0, 360.0), UsageError);
    CHECK_THROWS_AS(LosGeometry(10.0, 0.0, 0.0), UsageError);
}

TEST_CASE("displacement to phase") {
    const LosGeometry geom(30.0, 10.0);
    const double lambda = geom.wavelength_m();
    Raster u = filled(Unit::displacement_m, {0.0, lambda / 2, lambda / 4, -lambda / 2}, 2, 2);
    const Raster p = displacement_to_phase(u, geom);
    CHECK(p(0, 0) == 0.0);
    CHECK(p(0, 1) == doctest::Approx(-2 * kPi));
    CHECK(std::abs(p(1, 0)) == doctest::Approx(kPi));
    CHECK(p(1, 1) == doctest::Approx(2 * kPi));
    CHECK(geom.fringe_m() == doctest::Approx(0.02773));
    CHECK(std::abs(geom.fringe_m() - 0.028) < 0.0005);

    Raster scaled = u;
    for (double& v : scaled.values()) v *= 3.5;
    const Raster ps = displacement_to_phase(scaled, geom);
    for (std::size_t i = 0; i < 4; ++i) CHECK(ps.values()[i] == doctest::Approx(3.5 * p.values()[i]));
    CHECK_THROWS_AS(displacement_to_phase(p, geom), DataError);
}

TEST_CASE("wrap phase") {
    CHECK(wrap_value(0.0) == 0.0);
    CHECK(wrap_value(1.5 * kPi) == doctest::Approx(-0.5 * kPi));
    CHECK(wrap_value(kPi) == doctest::Approx(-kPi));
    CHECK(wrap_value(-kPi) == -kPi);
    CHECK(wrap_value(-1e-18) < kPi);
    Rng rng(11);
    for (int i = 0; i < 2000; ++i) {
        const double x = rng.uniform(-50, 50);
        const double w = wrap_value(x);
        CHECK(w >= -kPi);
        CHECK(w < kPi);
        CHECK(wrap_value(w) == w);
        const int k = static_cast<int>(rng.below(11)) - 5;
        const double shifted = wrap_value(x + 2 * kPi * k);
        CHECK(std::abs(std::remainder(shifted - w, 2 * kPi)) < 1e-9);
        const double inside = rng.uniform(-kPi, kPi);
        CHECK(wrap_value(inside) == doctest::Approx(inside).epsilon(1e-15));
    }
    Raster bad = filled(Unit::phase_rad, {0, 0, NAN, 0}, 2, 2);
    try {
        (void)wrap_phase(bad);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("row 1, col 0") != std::string::npos);
    }
}

TEST_CASE("grayscale quantization") {
    Raster w = filled(Unit::phase_rad, {-kPi, std::nextafter(kPi, 0.0), 0.0, 1.0}, 2, 2);
    const Raster g = quantize_grayscale(w);
    CHECK(g.unit() == Unit::gray_u8);
    CHECK(g(0, 0) == 0);
    CHECK(g(0, 1) == 255);
    CHECK(g(1, 0) == 128);
    CHECK_THROWS_AS(quantize_grayscale(filled(Unit::phase_rad, {kPi, 0, 0, 0}, 2, 2)), DataError);

    std::vector<double> ramp;
    for (int i = 0; i < 1000; ++i) ramp.push_back(-kPi + 2 * kPi * i / 1000.0);
    const Raster q = quantize_grayscale(Raster({1000, 1, 1.0}, Unit::phase_rad, ramp));
    for (int i = 1; i < 1000; ++i) CHECK(q(0, i) >= q(0, i - 1));
    CHECK(normalize_gray(128, true) == 0.0);
    CHECK(normalize_gray(255, false) == 1.0);
}

TEST_CASE("igrd round trip") {
    Rng rng(3);
    std::vector<double> v(35);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-3, 3));
    const Raster r({7, 5, 111.0}, Unit::phase_rad, v);
    const auto bytes = igrd::encode(r);
    CHECK(bytes.size() == igrd::kHeaderSize + 35 * 4);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "IGRD");
    CHECK(igrd::decode(bytes) == r);

    std::vector<double> gv(35);
    for (auto& x : gv) x = static_cast<double>(rng.below(256));
    const Raster gray({7, 5, 111.0}, Unit::gray_u8, gv);
    const auto gb = igrd::encode(gray);
    CHECK(gb.size() == igrd::kHeaderSize + 35);
    CHECK(igrd::decode(gb) == gray);

    auto corrupt = bytes;
    corrupt[0] = 'X';
    CHECK_THROWS_AS(igrd::decode(corrupt), DataError);
    auto truncated = bytes;
    truncated.pop_back();
    CHECK_THROWS_AS(igrd::decode(truncated), DataError);

    const auto path = temp_path("rt.igrd");
    igrd::write(path.string(), r);
    CHECK(igrd::read(path.string()) == r);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(igrd::read(path.string()), DataError);
}

TEST_CASE("fnv1a checksum") {
    CHECK(fnv1a64(std::string_view("")) == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64(std::string_view("a")) == 0xaf63dc4c8601ec8cULL);
    CHECK(hex64(0xabcULL) == "0000000000000abc");
}

TEST_CASE("png export") {
    Raster w = filled(Unit::phase_rad, {-3, -1, 1, 3}, 2, 2);
    const auto img = png::phase_colormap(w);
    CHECK(img.width == 2);
    const auto path = temp_path("w.png");
    png::write(path.string(), img);
    const auto bytes = read_bytes(path.string());
    CHECK(bytes.size() > 8);
    CHECK(bytes[1] == 'P');
    std::filesystem::remove(path);
}

TEST_CASE("derived seeds are distinct and stable") {
    CHECK(derive_seed(1, 0) != derive_seed(1, 1));
    CHECK(derive_seed(1, 5) == derive_seed(1, 5));
    Rng a(9), b(9);
    for (int i = 0; i < 10; ++i) CHECK(a.normal() == b.normal());
}
