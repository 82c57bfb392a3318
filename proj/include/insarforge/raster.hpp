#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace insarforge {

/// Physical meaning of raster samples. The numeric codes are the IGRD unit codes.
enum class Unit : std::uint16_t {
    displacement_m = 1,
    phase_rad = 2,
    delay_mm = 3,
    elevation_m = 4,
    gray_u8 = 5,
    probability = 6,
};

std::string_view unit_name(Unit unit);
Unit unit_from_code(std::uint16_t code);
Unit unit_from_name(std::string_view name);

/// Dimensions and pixel spacing of a grid.
///
/// Pixel (row, col) has its center at east = col * spacing and
/// north = (height - 1 - row) * spacing, so row 0 is the northern edge.
struct GridShape {
    int width = 0;
    int height = 0;
    double spacing = 0.0;  // meters per pixel

    std::size_t size() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
    double east(int col) const { return col * spacing; }
    double north(int row) const { return (height - 1 - row) * spacing; }
    double extent_east() const { return (width - 1) * spacing; }
    double extent_north() const { return (height - 1) * spacing; }

    /// Throws DataError unless width, height and spacing are positive.
    void validate() const;

    bool operator==(const GridShape&) const = default;
};

/// Rectangular single-band grid of samples, row-major.
class Raster {
public:
    Raster() = default;
    Raster(GridShape shape, Unit unit);
    Raster(GridShape shape, Unit unit, std::vector<double> values);

    const GridShape& shape() const { return shape_; }
    int width() const { return shape_.width; }
    int height() const { return shape_.height; }
    double spacing() const { return shape_.spacing; }
    Unit unit() const { return unit_; }
    std::size_t size() const { return values_.size(); }

    double& operator()(int row, int col) { return values_[index(row, col)]; }
    double operator()(int row, int col) const { return values_[index(row, col)]; }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }

    /// Relabel the samples; checks the range invariants of the new unit.
    void set_unit(Unit unit);

    /// Checks the per-unit value invariants (gray integral in [0,255], probability in [0,1]).
    void validate() const;

    /// Sub-window copy; throws DataError when it does not fit.
    Raster crop(int row0, int col0, int height, int width) const;

    double min() const;
    double max() const;
    double mean() const;

    bool operator==(const Raster&) const = default;

private:
    std::size_t index(int row, int col) const {
        return static_cast<std::size_t>(row) * static_cast<std::size_t>(shape_.width) + static_cast<std::size_t>(col);
    }

    GridShape shape_{};
    Unit unit_ = Unit::phase_rad;
    std::vector<double> values_;
};

/// Throws DataError unless `raster` carries `expected`.
void require_unit(const Raster& raster, Unit expected, std::string_view what);

/// Throws DataError unless both rasters share dimensions and spacing.
void require_same_grid(const Raster& a, const Raster& b, std::string_view what);

} // namespace insarforge
