#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "insarforge/geometry.hpp"
#include "insarforge/raster.hpp"
#include "insarforge/rng.hpp"

namespace insarforge::atmos {

/// Exponential covariance c(d) = sigma2_max * exp(-d / efold_km).
struct CovarianceParams {
    double sigma2_max = 7.0;  // mm^2
    double efold_km = 10.0;
    bool efold_defined = true;  // false when estimated from a constant image
};

double exp_covariance(double d_km, const CovarianceParams& p);

/// Uniform draw with sigma2_max in [5, 9] mm^2 and efold_km in [4, 18].
CovarianceParams sample_cov_params(Rng& rng);

enum class TurbulenceBackend { automatic, cholesky, circulant };

/// Largest grid (in pixels) served by the Cholesky backend in automatic mode.
inline constexpr std::size_t kCholeskyMaxPixels = 32 * 32;

/// Zero-mean Gaussian delay screen in mm. Throws DataError for grids smaller than 8x8
/// and NumericError when no padded circulant embedding is positive semi-definite.
Raster synth_turbulent_mm(const CovarianceParams& p, const GridShape& grid, std::uint64_t seed,
                          TurbulenceBackend backend = TurbulenceBackend::automatic);

/// synth_turbulent_mm converted to phase.
Raster synth_turbulent(const CovarianceParams& p, const GridShape& grid, std::uint64_t seed,
                       double wavelength_m = kSentinel1Wavelength,
                       TurbulenceBackend backend = TurbulenceBackend::automatic);

/// Radially binned sample autocovariance after mean removal. Bin k collects
/// offsets whose length rounds to k pixels.
struct CovarianceProfile {
    std::vector<double> lag_km;  // mean offset length per bin
    std::vector<double> cov;     // mm^2
    std::vector<double> pairs;   // number of pixel pairs per bin
};

CovarianceProfile empirical_covariance(const Raster& delay_mm, int max_lag_px);

/// Least-squares fit of sigma2 * exp(-d / L) to the binned autocovariance
/// over lags up to a quarter of the shorter grid side. The fit models the
/// downward bias from mean removal. Phase input is converted to mm first.
/// A constant image yields sigma2_max = 0 and efold_defined = false.
CovarianceParams estimate_cov_params(const Raster& img, double wavelength_m = kSentinel1Wavelength);

enum class DemKind { cone, shield };

/// Edifice centred in the grid with peak `peak_height` plus seeded fractal
/// roughness whose largest excursion is 10% of the peak; clamped at 0.
Raster synth_dem(DemKind kind, double peak_height, const GridShape& grid, std::uint64_t seed);

/// Edifice profile without roughness.
Raster dem_profile(DemKind kind, double peak_height, const GridShape& grid);

enum class StratifiedMode { linear_elevation, ztd_pair };

struct StratifiedModel {
    StratifiedMode mode = StratifiedMode::linear_elevation;
    double slope_rad_per_km = 0.0;
    std::optional<Raster> dem;
    std::optional<Raster> ztd_master, ztd_slave;
};

/// Slope drawn from +-[0.3, 2.5] rad/km.
double sample_slope(Rng& rng);

/// S = slope * (h - mean h) / cos(incidence), h in km.
Raster synth_stratified(const StratifiedModel& model, const LosGeometry& geom);

/// S = (ZTD_slave - ZTD_master) / cos(incidence), converted from mm to phase.
Raster stratified_from_ztd(const StratifiedModel& model, const LosGeometry& geom);
Raster stratified_from_ztd(const Raster& ztd_master, const Raster& ztd_slave, const LosGeometry& geom);

/// Parameters of the synthetic zenith-delay generator.
struct ZtdParams {
    double sea_level_mm = 2400.0;      // zenith delay at zero elevation
    double scale_height_m = 7000.0;    // exponential decay with elevation
    double cell_amplitude_mm = 20.0;   // peak of a Gaussian weather cell, drawn in [-1, 1] times this
    double ramp_mm = 10.0;             // largest long-wavelength tilt across the grid
};

/// Zenith delay map for one acquisition: elevation-dependent term, one
/// Gaussian weather cell and a planar tilt, all seeded.
Raster synth_ztd(const Raster& dem, const ZtdParams& params, std::uint64_t seed);

} // namespace insarforge::atmos
