#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>

#include "insarforge/geometry.hpp"
#include "insarforge/raster.hpp"

namespace insarforge::deform {

/// Linear elastic half-space constants.
struct ElasticMedium {
    double poisson = 0.25;
    double shear_modulus = 3.2e10;  // Pa

    void validate() const;
};

/// Point pressure source. Horizontal position in grid coordinates (m), depth positive down.
struct Mogi {
    double x = 0, y = 0;
    double depth = 0;
    double dvolume = 0;  // m^3, negative for deflation
};

/// Uniformly pressurized horizontal circular crack.
struct PennyCrack {
    double x = 0, y = 0;
    double depth = 0;
    double radius = 0;
    double dpressure = 0;  // Pa, negative for deflation
};

enum class OkadaKind { earthquake, dyke, sill };

/// Rectangular dislocation. (x, y, depth) locate the centroid of the rectangle;
/// length runs along strike and width down dip.
struct Okada {
    double x = 0, y = 0;
    double depth = 0;
    double strike = 0, dip = 0, rake = 0;  // degrees
    double length = 0, width = 0;          // m
    double slip = 0;                       // m, shear
    double opening = 0;                    // m, tensile
    OkadaKind kind = OkadaKind::earthquake;

    double top_depth() const;
};

using SourceModel = std::variant<Mogi, PennyCrack, Okada>;

enum class SourceKind { mogi, penny, earthquake, dyke, sill };

std::string_view kind_name(SourceKind kind);
SourceKind kind_from_name(std::string_view name);
SourceKind kind_of(const SourceModel& src);

/// Surface displacement on a common grid.
struct DisplacementField {
    Raster east, north, up;

    explicit DisplacementField(const GridShape& shape);
};

struct Enu {
    double east = 0, north = 0, up = 0;
};

/// Okada (1985) surface displacement of a rectangular dislocation, evaluated at
/// a point given relative to the centroid's surface projection.
Enu okada_surface(double east, double north, double centroid_depth, double strike_deg, double dip_deg,
                  double length, double width, double rake_deg, double slip, double opening, double poisson);

DisplacementField mogi_displacement(const Mogi& src, const ElasticMedium& medium, const GridShape& grid);

/// Points where the closed form is singular are evaluated at a diagonal
/// offset of spacing / 100.
DisplacementField okada_displacement(const Okada& src, const ElasticMedium& medium, const GridShape& grid);

struct PennyOptions {
    int cells_per_diameter = 16;
};

/// Opening volume 8 (1 - nu) a^3 dp / (3 mu) of a pressurized penny crack.
double penny_volume(const PennyCrack& src, const ElasticMedium& medium);

/// Disk discretized into horizontal tensile rectangles of uniform opening;
/// cells straddling the rim open in proportion to their covered area. The field
/// is evaluated along two azimuths and interpolated radially onto the grid.
DisplacementField penny_displacement(const PennyCrack& src, const ElasticMedium& medium, const GridShape& grid,
                                     const PennyOptions& options = {});

DisplacementField displacement(const SourceModel& src, const ElasticMedium& medium, const GridShape& grid);

/// Dot product of the field with the LOS unit vector, in meters.
Raster project_los(const DisplacementField& field, const LosGeometry& geom);

/// Unwrapped LOS phase of a source.
Raster render_deformation(const SourceModel& src, const ElasticMedium& medium, const LosGeometry& geom,
                          const GridShape& grid);

/// Box (in grid coordinates, meters) inside which sampled sources are centred.
struct SourceRegion {
    double east_min = 0, east_max = 0, north_min = 0, north_max = 0;

    static SourceRegion whole(const GridShape& grid);
    static SourceRegion central(const GridShape& grid, double fraction);
};

struct SampledSource {
    SourceModel source;
    LosGeometry geometry;
};

/// Monte Carlo draw of a source and viewing geometry. Deterministic in `seed`.
/// Positions are drawn from `region`; draws whose surface footprint leaves the
/// grid, or whose dislocation reaches the free surface, are redrawn.
SampledSource sample_source(std::uint64_t seed, SourceKind kind, const GridShape& grid, const SourceRegion& region);
SampledSource sample_source(std::uint64_t seed, SourceKind kind, const GridShape& grid);

/// Shift a source's horizontal position by (de, dn) meters.
SourceModel translate(const SourceModel& src, double de, double dn);

/// Horizontal position of the source's centre.
std::pair<double, double> epicenter(const SourceModel& src);

/// One-line structured-text record (a JSON object) and its inverse.
std::string to_record(const SourceModel& src);
SourceModel from_record(std::string_view record);

} // namespace insarforge::deform
