#include "insarforge/deform.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include <json.hpp>

#include "insarforge/error.hpp"
#include "insarforge/rng.hpp"

namespace insarforge::deform {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kDeg = kPi / 180.0;

// Okada (1985) surface displacement, strike-slip / dip-slip / tensile parts.
// Okada coordinates: x along strike from the lower-left corner of
// the fault, y perpendicular, d the depth of the fault's lower edge.
class OkadaKernel {
public:
    OkadaKernel(double centroid_depth, double strike_deg, double dip_deg, double length, double width,
                double rake_deg, double slip, double opening, double poisson)
        : length_(length), width_(width), mu_ratio_(1.0 - 2.0 * poisson) {
        const double strike = strike_deg * kDeg;
        const double dip = dip_deg * kDeg;
        sin_strike_ = std::sin(strike);
        cos_strike_ = std::cos(strike);
        sin_dip_ = std::sin(dip);
        cos_dip_ = std::cos(dip);
        if (std::abs(cos_dip_) < 1e-12) {
            cos_dip_ = 0.0;
            sin_dip_ = sin_dip_ > 0 ? 1.0 : -1.0;
        }
        if (std::abs(sin_dip_) < 1e-12) sin_dip_ = 0.0;
        u1_ = std::cos(rake_deg * kDeg) * slip;
        u2_ = std::sin(rake_deg * kDeg) * slip;
        u3_ = opening;
        bottom_depth_ = centroid_depth + sin_dip_ * width / 2.0;
    }

    Enu operator()(double east, double north) const {
        // move the origin from the centroid to Okada's reference corner
        const double ec = east + cos_strike_ * cos_dip_ * width_ / 2.0;
        const double nc = north - sin_strike_ * cos_dip_ * width_ / 2.0;
        const double x = cos_strike_ * nc + sin_strike_ * ec + length_ / 2.0;
        const double y = sin_strike_ * nc - cos_strike_ * ec + cos_dip_ * width_;
        const double p = y * cos_dip_ + bottom_depth_ * sin_dip_;
        const double q = y * sin_dip_ - bottom_depth_ * cos_dip_;

        std::array<double, 3> ss{}, ds{}, tf{};
        const double xis[2] = {x, x - length_};
        const double etas[2] = {p, p - width_};
        for (int i = 0; i < 2; ++i) {
            for (int j = 0; j < 2; ++j) {
                const double sign = (i + j) % 2 == 0 ? 1.0 : -1.0;
                corner(xis[i], etas[j], q, sign, ss, ds, tf);
            }
        }
        const double ux = -u1_ / (2 * kPi) * ss[0] - u2_ / (2 * kPi) * ds[0] + u3_ / (2 * kPi) * tf[0];
        const double uy = -u1_ / (2 * kPi) * ss[1] - u2_ / (2 * kPi) * ds[1] + u3_ / (2 * kPi) * tf[1];
        const double uz = -u1_ / (2 * kPi) * ss[2] - u2_ / (2 * kPi) * ds[2] + u3_ / (2 * kPi) * tf[2];
        return {sin_strike_ * ux - cos_strike_ * uy, cos_strike_ * ux + sin_strike_ * uy, uz};
    }

private:
    void corner(double xi, double eta, double q, double sign, std::array<double, 3>& ss, std::array<double, 3>& ds,
                std::array<double, 3>& tf) const {
        const double sd = sin_dip_, cd = cos_dip_;
        const double r = std::sqrt(xi * xi + eta * eta + q * q);
        const double yb = eta * cd + q * sd;
        const double db = eta * sd - q * cd;
        // tan^-1(xi eta / q R) is set to zero on q = 0
        const double theta = q == 0.0 ? 0.0 : std::atan(xi * eta / (q * r));

        double i1, i2, i3, i4, i5;
        if (cd != 0.0) {
            const double x = std::sqrt(xi * xi + q * q);
            i5 = xi == 0.0 ? 0.0
                           : mu_ratio_ * 2.0 / cd *
                                 std::atan((eta * (x + q * cd) + x * (r + x) * sd) / (xi * (r + x) * cd));
            i4 = mu_ratio_ / cd * (std::log(r + db) - sd * std::log(r + eta));
            i3 = mu_ratio_ * (yb / (cd * (r + db)) - std::log(r + eta)) + sd / cd * i4;
            i1 = mu_ratio_ * (-xi / (cd * (r + db))) - sd / cd * i5;
        } else {
            i5 = -mu_ratio_ * xi * sd / (r + db);
            i4 = -mu_ratio_ * q / (r + db);
            i3 = mu_ratio_ / 2.0 * (eta / (r + db) + yb * q / ((r + db) * (r + db)) - std::log(r + eta));
            i1 = -mu_ratio_ / 2.0 * xi * q / ((r + db) * (r + db));
        }
        i2 = mu_ratio_ * (-std::log(r + eta)) - i3;

        const double r_eta = r * (r + eta);
        const double r_xi = r * (r + xi);
        if (u1_ != 0.0) {
            ss[0] += sign * (xi * q / r_eta + theta + i1 * sd);
            ss[1] += sign * (yb * q / r_eta + q * cd / (r + eta) + i2 * sd);
            ss[2] += sign * (db * q / r_eta + q * sd / (r + eta) + i4 * sd);
        }
        if (u2_ != 0.0) {
            ds[0] += sign * (q / r - i3 * sd * cd);
            ds[1] += sign * (yb * q / r_xi + cd * theta - i1 * sd * cd);
            ds[2] += sign * (db * q / r_xi + sd * theta - i5 * sd * cd);
        }
        if (u3_ != 0.0) {
            tf[0] += sign * (q * q / r_eta - i3 * sd * sd);
            tf[1] += sign * (-db * q / r_xi - sd * (xi * q / r_eta - theta) - i1 * sd * sd);
            tf[2] += sign * (yb * q / r_xi + cd * (xi * q / r_eta - theta) - i5 * sd * sd);
        }
    }

    double length_, width_, mu_ratio_;
    double sin_strike_ = 0, cos_strike_ = 1, sin_dip_ = 0, cos_dip_ = 1;
    double u1_ = 0, u2_ = 0, u3_ = 0;
    double bottom_depth_ = 0;
};

bool finite(const Enu& u) { return std::isfinite(u.east) && std::isfinite(u.north) && std::isfinite(u.up); }

void check_finite(const DisplacementField& f, std::string_view what) {
    for (const Raster* r : {&f.east, &f.north, &f.up})
        for (double v : r->values())
            if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite displacement");
}

double log_uniform(Rng& rng, double lo, double hi) {
    return std::pow(10.0, rng.uniform(std::log10(lo), std::log10(hi)));
}

double signed_magnitude(Rng& rng, double lo, double hi) {
    const double m = log_uniform(rng, lo, hi);
    return rng.coin() ? m : -m;
}

bool inside(const GridShape& g, double e, double n) {
    return e >= 0.0 && e <= g.extent_east() && n >= 0.0 && n <= g.extent_north();
}

bool footprint_inside(const SourceModel& src, const GridShape& g) {
    if (const auto* m = std::get_if<Mogi>(&src)) return inside(g, m->x, m->y);
    if (const auto* p = std::get_if<PennyCrack>(&src))
        return inside(g, p->x - p->radius, p->y - p->radius) && inside(g, p->x + p->radius, p->y + p->radius);
    const auto& o = std::get<Okada>(src);
    const double s = std::sin(o.strike * kDeg), c = std::cos(o.strike * kDeg);
    const double half_l = o.length / 2.0;
    const double half_w = std::cos(o.dip * kDeg) * o.width / 2.0;
    // strike direction (s, c); down-dip horizontal direction (c, -s)
    for (double a : {-half_l, half_l})
        for (double b : {-half_w, half_w})
            if (!inside(g, o.x + a * s + b * c, o.y + a * c - b * s)) return false;
    return true;
}

std::string_view okada_kind_name(OkadaKind k) {
    switch (k) {
    case OkadaKind::earthquake: return "earthquake";
    case OkadaKind::dyke: return "dyke";
    case OkadaKind::sill: return "sill";
    }
    return "earthquake";
}

} // namespace

void ElasticMedium::validate() const {
    if (!(poisson > 0.0 && poisson < 0.5)) throw UsageError("Poisson ratio must lie in (0, 0.5)");
    if (!(shear_modulus > 0.0)) throw UsageError("shear modulus must be positive");
}

double Okada::top_depth() const { return depth - std::sin(dip * kDeg) * width / 2.0; }

std::string_view kind_name(SourceKind kind) {
    switch (kind) {
    case SourceKind::mogi: return "mogi";
    case SourceKind::penny: return "penny";
    case SourceKind::earthquake: return "earthquake";
    case SourceKind::dyke: return "dyke";
    case SourceKind::sill: return "sill";
    }
    return "mogi";
}

SourceKind kind_from_name(std::string_view name) {
    for (auto k : {SourceKind::mogi, SourceKind::penny, SourceKind::earthquake, SourceKind::dyke, SourceKind::sill})
        if (kind_name(k) == name) return k;
    throw UsageError("unknown source kind '" + std::string(name) + "'");
}

SourceKind kind_of(const SourceModel& src) {
    if (std::holds_alternative<Mogi>(src)) return SourceKind::mogi;
    if (std::holds_alternative<PennyCrack>(src)) return SourceKind::penny;
    switch (std::get<Okada>(src).kind) {
    case OkadaKind::earthquake: return SourceKind::earthquake;
    case OkadaKind::dyke: return SourceKind::dyke;
    case OkadaKind::sill: return SourceKind::sill;
    }
    return SourceKind::earthquake;
}

DisplacementField::DisplacementField(const GridShape& shape)
    : east(shape, Unit::displacement_m), north(shape, Unit::displacement_m), up(shape, Unit::displacement_m) {}

Enu okada_surface(double east, double north, double centroid_depth, double strike_deg, double dip_deg, double length,
                  double width, double rake_deg, double slip, double opening, double poisson) {
    return OkadaKernel(centroid_depth, strike_deg, dip_deg, length, width, rake_deg, slip, opening, poisson)(east,
                                                                                                           north);
}

DisplacementField mogi_displacement(const Mogi& src, const ElasticMedium& medium, const GridShape& grid) {
    medium.validate();
    grid.validate();
    if (!(src.depth > 0.0)) throw DataError("Mogi source depth must be positive");
    DisplacementField f(grid);
    const double k = (1.0 - medium.poisson) * src.dvolume / kPi;
    for (int r = 0; r < grid.height; ++r) {
        for (int c = 0; c < grid.width; ++c) {
            const double de = grid.east(c) - src.x;
            const double dn = grid.north(r) - src.y;
            const double big_r = std::sqrt(de * de + dn * dn + src.depth * src.depth);
            const double scale = k / (big_r * big_r * big_r);
            f.east(r, c) = scale * de;
            f.north(r, c) = scale * dn;
            f.up(r, c) = scale * src.depth;
        }
    }
    return f;
}

DisplacementField okada_displacement(const Okada& src, const ElasticMedium& medium, const GridShape& grid) {
    medium.validate();
    grid.validate();
    if (!(src.length > 0.0) || !(src.width > 0.0)) throw DataError("Okada source needs positive length and width");
    if (!(src.top_depth() > 0.0))
        throw DataError("Okada dislocation intersects the free surface (top edge depth " +
                        std::to_string(src.top_depth()) + " m)");
    const OkadaKernel kernel(src.depth, src.strike, src.dip, src.length, src.width, src.rake, src.slip, src.opening,
                             medium.poisson);
    const double eps = grid.spacing / 100.0;
    DisplacementField f(grid);
    for (int r = 0; r < grid.height; ++r) {
        for (int c = 0; c < grid.width; ++c) {
            const double de = grid.east(c) - src.x;
            const double dn = grid.north(r) - src.y;
            Enu u = kernel(de, dn);
            if (!finite(u)) u = kernel(de + eps, dn + eps);
            f.east(r, c) = u.east;
            f.north(r, c) = u.north;
            f.up(r, c) = u.up;
        }
    }
    check_finite(f, "okada_displacement");
    return f;
}

double penny_volume(const PennyCrack& src, const ElasticMedium& medium) {
    const double a = src.radius;
    return 8.0 * (1.0 - medium.poisson) * a * a * a * src.dpressure / (3.0 * medium.shear_modulus);
}

DisplacementField penny_displacement(const PennyCrack& src, const ElasticMedium& medium, const GridShape& grid,
                                     const PennyOptions& options) {
    medium.validate();
    grid.validate();
    if (!(src.depth > 0.0) || !(src.radius > 0.0)) throw DataError("penny crack needs positive depth and radius");
    if (src.depth / src.radius < 0.1)
        throw DataError("penny crack depth/radius below 0.1; the dislocation approximation is invalid there");
    const int n = std::max(options.cells_per_diameter, 2);
    const double h = 2.0 * src.radius / n;

    // covered-area fraction of each cell, by 8x8 subsampling
    constexpr int kSub = 8;
    struct Cell {
        double e, n, weight;
    };
    std::vector<Cell> cells;
    double covered = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const double ce = -src.radius + (j + 0.5) * h;
            const double cn = -src.radius + (i + 0.5) * h;
            int hits = 0;
            for (int si = 0; si < kSub; ++si)
                for (int sj = 0; sj < kSub; ++sj) {
                    const double pe = ce + ((sj + 0.5) / kSub - 0.5) * h;
                    const double pn = cn + ((si + 0.5) / kSub - 0.5) * h;
                    if (pe * pe + pn * pn <= src.radius * src.radius) ++hits;
                }
            if (hits == 0) continue;
            const double w = static_cast<double>(hits) / (kSub * kSub);
            cells.push_back({ce, cn, w});
            covered += w * h * h;
        }
    }
    const double opening = penny_volume(src, medium) / covered;

    DisplacementField f(grid);
    if (opening == 0.0) return f;
    const OkadaKernel unit_patch(src.depth, 0.0, 0.0, h, h, 0.0, 0.0, 1.0, medium.poisson);
    auto at = [&](double de, double dn) {
        Enu sum;
        for (const auto& cell : cells) {
            Enu u = unit_patch(de - cell.e, dn - cell.n);
            if (!finite(u)) u = unit_patch(de - cell.e + 1e-3 * h, dn - cell.n + 1e-3 * h);
            sum.east += cell.weight * u.east;
            sum.north += cell.weight * u.north;
            sum.up += cell.weight * u.up;
        }
        return sum;
    };

    // radial profile averaged over the 0 and 45 degree azimuths, then
    // interpolated onto the grid
    double max_r = 0.0;
    for (double e : {0.0, grid.extent_east()})
        for (double n : {0.0, grid.extent_north()}) max_r = std::max(max_r, std::hypot(e - src.x, n - src.y));
    const double step = std::min(grid.spacing, src.depth) / 4.0;
    const int samples = static_cast<int>(std::ceil(max_r / step)) + 2;
    std::vector<double> ur(samples), uz(samples);
    const double c45 = std::sqrt(0.5);
    for (int i = 0; i < samples; ++i) {
        const double rho = i * step;
        const Enu a = at(rho, 0.0);
        const Enu b = at(rho * c45, rho * c45);
        ur[i] = opening * 0.5 * (a.east + c45 * (b.east + b.north));
        uz[i] = opening * 0.5 * (a.up + b.up);
    }
    for (int r = 0; r < grid.height; ++r) {
        for (int c = 0; c < grid.width; ++c) {
            const double de = grid.east(c) - src.x;
            const double dn = grid.north(r) - src.y;
            const double rho = std::hypot(de, dn);
            const double x = rho / step;
            const int i = std::min(static_cast<int>(x), samples - 2);
            const double t = x - i;
            const double radial = (1.0 - t) * ur[i] + t * ur[i + 1];
            f.up(r, c) = (1.0 - t) * uz[i] + t * uz[i + 1];
            f.east(r, c) = rho > 0.0 ? radial * de / rho : 0.0;
            f.north(r, c) = rho > 0.0 ? radial * dn / rho : 0.0;
        }
    }
    check_finite(f, "penny_displacement");
    return f;
}

DisplacementField displacement(const SourceModel& src, const ElasticMedium& medium, const GridShape& grid) {
    return std::visit(
        [&](const auto& s) -> DisplacementField {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, Mogi>)
                return mogi_displacement(s, medium, grid);
            else if constexpr (std::is_same_v<T, PennyCrack>)
                return penny_displacement(s, medium, grid);
            else
                return okada_displacement(s, medium, grid);
        },
        src);
}

Raster project_los(const DisplacementField& field, const LosGeometry& geom) {
    const auto look = los_unit_vector(geom);
    Raster out(field.up.shape(), Unit::displacement_m);
    auto e = field.east.values(), n = field.north.values(), u = field.up.values();
    auto dst = out.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = e[i] * look[0] + n[i] * look[1] + u[i] * look[2];
    return out;
}

Raster render_deformation(const SourceModel& src, const ElasticMedium& medium, const LosGeometry& geom,
                          const GridShape& grid) {
    return displacement_to_phase(project_los(displacement(src, medium, grid), geom), geom);
}

SourceRegion SourceRegion::whole(const GridShape& grid) { return {0.0, grid.extent_east(), 0.0, grid.extent_north()}; }

SourceRegion SourceRegion::central(const GridShape& grid, double fraction) {
    const double me = grid.extent_east() / 2.0, mn = grid.extent_north() / 2.0;
    const double he = me * fraction, hn = mn * fraction;
    return {me - he, me + he, mn - hn, mn + hn};
}

SampledSource sample_source(std::uint64_t seed, SourceKind kind, const GridShape& grid, const SourceRegion& region) {
    grid.validate();
    Rng rng(seed);
    constexpr int kMaxDraws = 10000;
    for (int attempt = 0; attempt < kMaxDraws; ++attempt) {
        const double x = rng.uniform(region.east_min, region.east_max);
        const double y = rng.uniform(region.north_min, region.north_max);
        SourceModel src;
        switch (kind) {
        case SourceKind::mogi:
            src = Mogi{x, y, rng.uniform(1e3, 10e3), signed_magnitude(rng, 1e5, 1e7)};
            break;
        case SourceKind::penny: {
            const double depth = rng.uniform(0.5e3, 6e3);
            const double radius = rng.uniform(0.5e3, 6e3);
            if (depth / radius < 0.1) continue;
            src = PennyCrack{x, y, depth, radius, signed_magnitude(rng, 1e5, 1e7)};
            break;
        }
        case SourceKind::earthquake: {
            Okada o;
            o.kind = OkadaKind::earthquake;
            o.strike = rng.uniform(0.0, 360.0);
            o.dip = rng.uniform(45.0, 90.0);
            o.rake = rng.uniform(0.0, 360.0);
            o.length = rng.uniform(0.5e3, 10e3);
            o.width = o.length * rng.uniform(0.5, 1.0);
            o.depth = rng.uniform(1e3, 15e3);
            o.slip = rng.uniform(0.5, 2.0);
            src = o;
            break;
        }
        case SourceKind::dyke: {
            Okada o;
            o.kind = OkadaKind::dyke;
            o.strike = rng.uniform(0.0, 360.0);
            o.dip = rng.uniform(45.0, 90.0);
            o.length = rng.uniform(2e3, 8e3);
            o.width = o.length * rng.uniform(0.5, 1.0);
            o.depth = rng.uniform(1e3, 5e3);
            o.opening = 1.0 - rng.uniform();  // (0, 1]
            src = o;
            break;
        }
        case SourceKind::sill: {
            Okada o;
            o.kind = OkadaKind::sill;
            o.strike = rng.uniform(0.0, 360.0);
            o.dip = rng.uniform(0.0, 10.0);
            o.length = rng.uniform(0.5e3, 5e3);
            o.width = rng.uniform(0.5e3, 5e3);
            o.depth = rng.uniform(0.5e3, 6e3);
            o.opening = 1.0 - rng.uniform();
            src = o;
            break;
        }
        }
        if (auto* o = std::get_if<Okada>(&src)) {
            o->x = x;
            o->y = y;
            if (!(o->top_depth() > 0.0)) continue;
        }
        if (!footprint_inside(src, grid)) continue;
        const double incidence = rng.uniform(0.0, 45.0);
        const double heading = rng.uniform(0.0, 360.0);
        return {src, LosGeometry(incidence, heading)};
    }
    throw DataError("sample_source: no valid " + std::string(kind_name(kind)) + " source fits the grid");
}

SampledSource sample_source(std::uint64_t seed, SourceKind kind, const GridShape& grid) {
    return sample_source(seed, kind, grid, SourceRegion::whole(grid));
}

SourceModel translate(const SourceModel& src, double de, double dn) {
    SourceModel out = src;
    std::visit(
        [&](auto& s) {
            s.x += de;
            s.y += dn;
        },
        out);
    return out;
}

std::pair<double, double> epicenter(const SourceModel& src) {
    return std::visit([](const auto& s) { return std::pair{s.x, s.y}; }, src);
}

std::string to_record(const SourceModel& src) {
    nlohmann::ordered_json j;
    std::visit(
        [&](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, Mogi>) {
                j = {{"type", "mogi"}, {"x", s.x}, {"y", s.y}, {"depth", s.depth}, {"dvolume", s.dvolume}};
            } else if constexpr (std::is_same_v<T, PennyCrack>) {
                j = {{"type", "penny"},     {"x", s.x},           {"y", s.y},
                     {"depth", s.depth},    {"radius", s.radius}, {"dpressure", s.dpressure}};
            } else {
                j = {{"type", "okada"},   {"subtype", okada_kind_name(s.kind)},
                     {"x", s.x},          {"y", s.y},
                     {"depth", s.depth},  {"strike", s.strike},
                     {"dip", s.dip},      {"rake", s.rake},
                     {"length", s.length}, {"width", s.width},
                     {"slip", s.slip},    {"opening", s.opening}};
            }
        },
        src);
    return j.dump();
}

SourceModel from_record(std::string_view record) {
    try {
        const auto j = nlohmann::json::parse(record);
        const auto type = j.at("type").get<std::string>();
        if (type == "mogi")
            return Mogi{j.at("x"), j.at("y"), j.at("depth"), j.at("dvolume")};
        if (type == "penny")
            return PennyCrack{j.at("x"), j.at("y"), j.at("depth"), j.at("radius"), j.at("dpressure")};
        if (type == "okada") {
            Okada o;
            const auto sub = j.at("subtype").get<std::string>();
            o.kind = sub == "dyke" ? OkadaKind::dyke : sub == "sill" ? OkadaKind::sill : OkadaKind::earthquake;
            o.x = j.at("x");
            o.y = j.at("y");
            o.depth = j.at("depth");
            o.strike = j.at("strike");
            o.dip = j.at("dip");
            o.rake = j.at("rake");
            o.length = j.at("length");
            o.width = j.at("width");
            o.slip = j.at("slip");
            o.opening = j.at("opening");
            return o;
        }
        throw DataError("unknown source type '" + type + "'");
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed source record: ") + e.what());
    }
}

} // namespace insarforge::deform
