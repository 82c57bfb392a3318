#pragma once

#include <array>

#include "insarforge/raster.hpp"

namespace insarforge {

/// C-band wavelength; half of it (2.77 cm) is one fringe of LOS motion.
inline constexpr double kSentinel1Wavelength = 0.05546;

/// Satellite viewing geometry.
class LosGeometry {
public:
    /// Throws UsageError for incidence outside [0, 45], heading outside [0, 360)
    /// or a non-positive wavelength.
    LosGeometry(double incidence_deg, double heading_deg, double wavelength_m = kSentinel1Wavelength);

    double incidence_deg() const { return incidence_deg_; }
    double heading_deg() const { return heading_deg_; }
    double wavelength_m() const { return wavelength_m_; }

    /// LOS displacement corresponding to one 2*pi phase cycle.
    double fringe_m() const { return wavelength_m_ / 2.0; }

private:
    double incidence_deg_;
    double heading_deg_;
    double wavelength_m_;
};

/// (east, north, up) unit vector for a right-looking sensor whose look
/// azimuth is heading + 90 degrees clockwise from north.
std::array<double, 3> los_unit_vector(const LosGeometry& geom);

/// phase = -(4 pi / lambda) * u_los; motion toward the satellite gives negative phase.
Raster displacement_to_phase(const Raster& u_los, const LosGeometry& geom);

/// Radians of phase per millimeter of delay, -(4 pi) / (lambda * 1000).
double phase_per_mm(double wavelength_m);

/// Principal value on [-pi, pi).
double wrap_value(double phase);

/// Element-wise principal value. Throws NumericError naming the first non-finite pixel.
Raster wrap_phase(const Raster& phase);

/// g = round_half_up((x + pi) / (2 pi) * 255). Throws DataError for values outside [-pi, pi).
Raster quantize_grayscale(const Raster& wrapped);

/// Network input scaling for one gray level.
/// Zero-centred: (g - 128) / 128 in [-1, 1); otherwise g / 255 in [0, 1].
inline double normalize_gray(double gray, bool zero_centered) {
    return zero_centered ? (gray - 128.0) / 128.0 : gray / 255.0;
}

} // namespace insarforge
