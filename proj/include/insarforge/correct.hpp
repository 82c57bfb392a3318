#pragma once

#include <cstdint>
#include <vector>

#include "insarforge/geometry.hpp"
#include "insarforge/raster.hpp"

namespace insarforge::correct {

/// Raster with a validity mask; false marks incoherent or missing pixels.
struct MaskedRaster {
    Raster raster;
    std::vector<std::uint8_t> valid;

    /// All pixels valid.
    static MaskedRaster full(Raster r);
    /// Pixels where mask > 0.5 are valid. The grids must match.
    static MaskedRaster from_mask(Raster r, const Raster& mask);

    std::size_t missing() const;
};

struct InpaintOptions {
    double omega = 1.9;
    double tolerance = 1e-6;  // relative to the range of valid values
    std::size_t direct_max_pixels = 10000;
    int max_sweeps = 200000;
};

/// Harmonic extension into each 4-connected hole: the 5-point Laplacian
/// vanishes inside, valid neighbours act as Dirichlet data, and the image
/// border contributes no flux. Holes below direct_max_pixels are solved by a
/// sparse Cholesky factorization, larger ones by successive over-relaxation.
/// Throws DataError when no pixel is valid.
Raster laplacian_inpaint(const MaskedRaster& img, const InpaintOptions& opts = {});

/// True when every valid sample lies in [-pi, pi] and some pair of valid
/// neighbours differs by more than pi.
bool looks_wrapped(const MaskedRaster& phase);

/// inpaint(unwrapped) minus the LOS-projected ZTD difference. Throws DataError
/// on grid or unit mismatch and for wrapped input.
Raster apply_correction(const MaskedRaster& unwrapped, const Raster& ztd_master, const Raster& ztd_slave,
                        const LosGeometry& geom, const InpaintOptions& opts = {});

} // namespace insarforge::correct
