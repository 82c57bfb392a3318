#include "insarforge/raster.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "insarforge/error.hpp"

namespace insarforge {

namespace {

struct UnitEntry {
    Unit unit;
    std::string_view name;
};

constexpr UnitEntry kUnits[] = {
    {Unit::displacement_m, "displacement_m"}, {Unit::phase_rad, "phase_rad"},
    {Unit::delay_mm, "delay_mm"},             {Unit::elevation_m, "elevation_m"},
    {Unit::gray_u8, "gray_u8"},               {Unit::probability, "probability"},
};

} // namespace

std::string_view unit_name(Unit unit) {
    for (const auto& e : kUnits)
        if (e.unit == unit) return e.name;
    return "unknown";
}

Unit unit_from_code(std::uint16_t code) {
    for (const auto& e : kUnits)
        if (static_cast<std::uint16_t>(e.unit) == code) return e.unit;
    throw DataError("unknown raster unit code " + std::to_string(code));
}

Unit unit_from_name(std::string_view name) {
    for (const auto& e : kUnits)
        if (e.name == name) return e.unit;
    throw UsageError("unknown raster unit '" + std::string(name) + "'");
}

void GridShape::validate() const {
    if (width <= 0 || height <= 0)
        throw DataError("grid dimensions must be positive, got " + std::to_string(width) + "x" + std::to_string(height));
    if (!(spacing > 0.0) || !std::isfinite(spacing))
        throw DataError("grid spacing must be positive, got " + std::to_string(spacing));
}

Raster::Raster(GridShape shape, Unit unit) : shape_(shape), unit_(unit) {
    shape_.validate();
    values_.assign(shape_.size(), 0.0);
}

Raster::Raster(GridShape shape, Unit unit, std::vector<double> values)
    : shape_(shape), unit_(unit), values_(std::move(values)) {
    shape_.validate();
    if (values_.size() != shape_.size())
        throw DataError("raster payload has " + std::to_string(values_.size()) + " samples, expected " +
                        std::to_string(shape_.size()));
    validate();
}

void Raster::set_unit(Unit unit) {
    unit_ = unit;
    validate();
}

void Raster::validate() const {
    if (unit_ == Unit::gray_u8) {
        for (std::size_t i = 0; i < values_.size(); ++i) {
            const double v = values_[i];
            if (!(v >= 0.0 && v <= 255.0) || v != std::floor(v))
                throw DataError("gray_u8 raster sample " + std::to_string(i) + " is not an integer in [0,255]");
        }
    } else if (unit_ == Unit::probability) {
        for (std::size_t i = 0; i < values_.size(); ++i) {
            const double v = values_[i];
            if (!(v >= 0.0 && v <= 1.0))
                throw DataError("probability raster sample " + std::to_string(i) + " is outside [0,1]");
        }
    }
}

Raster Raster::crop(int row0, int col0, int h, int w) const {
    if (row0 < 0 || col0 < 0 || h <= 0 || w <= 0 || row0 + h > height() || col0 + w > width())
        throw DataError("crop window " + std::to_string(h) + "x" + std::to_string(w) + " at (" + std::to_string(row0) +
                        "," + std::to_string(col0) + ") does not fit a " + std::to_string(height()) + "x" +
                        std::to_string(width()) + " raster");
    Raster out(GridShape{w, h, spacing()}, unit_);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) out(r, c) = (*this)(row0 + r, col0 + c);
    return out;
}

double Raster::min() const { return values_.empty() ? 0.0 : *std::min_element(values_.begin(), values_.end()); }
double Raster::max() const { return values_.empty() ? 0.0 : *std::max_element(values_.begin(), values_.end()); }

double Raster::mean() const {
    if (values_.empty()) return 0.0;
    return std::accumulate(values_.begin(), values_.end(), 0.0) / static_cast<double>(values_.size());
}

void require_unit(const Raster& raster, Unit expected, std::string_view what) {
    if (raster.unit() != expected)
        throw DataError(std::string(what) + ": expected unit " + std::string(unit_name(expected)) + ", got " +
                        std::string(unit_name(raster.unit())));
}

void require_same_grid(const Raster& a, const Raster& b, std::string_view what) {
    if (!(a.shape() == b.shape()))
        throw DataError(std::string(what) + ": grid mismatch (" + std::to_string(a.width()) + "x" +
                        std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                        std::to_string(b.height()) + ")");
}

} // namespace insarforge
