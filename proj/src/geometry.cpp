#include "insarforge/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "insarforge/error.hpp"

namespace insarforge {

namespace {
constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kTwoPi = 2.0 * std::numbers::pi;
} // namespace

LosGeometry::LosGeometry(double incidence_deg, double heading_deg, double wavelength_m)
    : incidence_deg_(incidence_deg), heading_deg_(heading_deg), wavelength_m_(wavelength_m) {
    if (!(incidence_deg >= 0.0 && incidence_deg <= 45.0))
        throw UsageError("incidence angle must lie in [0, 45] degrees, got " + std::to_string(incidence_deg));
    if (!(heading_deg >= 0.0 && heading_deg < 360.0))
        throw UsageError("heading must lie in [0, 360) degrees, got " + std::to_string(heading_deg));
    if (!(wavelength_m > 0.0) || !std::isfinite(wavelength_m))
        throw UsageError("wavelength must be positive");
}

std::array<double, 3> los_unit_vector(const LosGeometry& geom) {
    const double theta = geom.incidence_deg() * kDeg;
    const double look = (geom.heading_deg() + 90.0) * kDeg;
    return {std::sin(theta) * std::sin(look), std::sin(theta) * std::cos(look), std::cos(theta)};
}

double phase_per_mm(double wavelength_m) { return -4.0 * std::numbers::pi / (wavelength_m * 1000.0); }

Raster displacement_to_phase(const Raster& u_los, const LosGeometry& geom) {
    require_unit(u_los, Unit::displacement_m, "displacement_to_phase");
    const double k = -4.0 * std::numbers::pi / geom.wavelength_m();
    Raster out(u_los.shape(), Unit::phase_rad);
    auto src = u_los.values();
    auto dst = out.values();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = k * src[i];
    return out;
}

double wrap_value(double phase) {
    double m = std::fmod(phase + std::numbers::pi, kTwoPi);
    if (m < 0.0) m += kTwoPi;
    // m + 2 pi can round up to exactly 2 pi for tiny negative m
    if (m >= kTwoPi) m = 0.0;
    return m - std::numbers::pi;
}

Raster wrap_phase(const Raster& phase) {
    require_unit(phase, Unit::phase_rad, "wrap_phase");
    Raster out(phase.shape(), Unit::phase_rad);
    for (int r = 0; r < phase.height(); ++r) {
        for (int c = 0; c < phase.width(); ++c) {
            const double v = phase(r, c);
            if (!std::isfinite(v))
                throw NumericError("wrap_phase: non-finite value at pixel (row " + std::to_string(r) + ", col " +
                                   std::to_string(c) + ")");
            out(r, c) = wrap_value(v);
        }
    }
    return out;
}

Raster quantize_grayscale(const Raster& wrapped) {
    require_unit(wrapped, Unit::phase_rad, "quantize_grayscale");
    Raster out(wrapped.shape(), Unit::gray_u8);
    auto src = wrapped.values();
    auto dst = out.values();
    for (std::size_t i = 0; i < src.size(); ++i) {
        const double x = src[i];
        if (!(x >= -std::numbers::pi && x < std::numbers::pi))
            throw DataError("quantize_grayscale: sample " + std::to_string(i) + " lies outside [-pi, pi)");
        const double g = std::floor((x + std::numbers::pi) / kTwoPi * 255.0 + 0.5);
        dst[i] = std::min(g, 255.0);
    }
    return out;
}

} // namespace insarforge
