#pragma once

// Independent reference implementations used only by the tests.

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

namespace oracle {

/// Okada (1985) point source at depth d, surface displacement in the fault
/// frame (x along strike, y perpendicular, z up), per unit potency.
struct PointOkada {
    double ss[3], ds[3], tf[3];
};

inline PointOkada okada_point(double x, double y, double d, double dip_rad, double nu) {
    const double sd = std::sin(dip_rad), cd = std::cos(dip_rad);
    const double r2 = x * x + y * y + d * d, r = std::sqrt(r2), r3 = r2 * r, r5 = r3 * r2;
    const double p = y * cd + d * sd;
    const double q = y * sd - d * cd;
    const double k = 1.0 - 2.0 * nu;
    const double rd = r + d;
    const double i1 = k * y * (1.0 / (r * rd * rd) - x * x * (3.0 * r + d) / (r3 * rd * rd * rd));
    const double i2 = k * x * (1.0 / (r * rd * rd) - y * y * (3.0 * r + d) / (r3 * rd * rd * rd));
    const double i3 = k * x / r3 - i2;
    const double i4 = k * (-x * y * (2.0 * r + d) / (r3 * rd * rd));
    const double i5 = k * (1.0 / (r * rd) - x * x * (2.0 * r + d) / (r3 * rd * rd));
    const double c = 1.0 / (2.0 * std::numbers::pi);
    PointOkada out{};
    out.ss[0] = -c * (3.0 * x * x * q / r5 + i1 * sd);
    out.ss[1] = -c * (3.0 * x * y * q / r5 + i2 * sd);
    out.ss[2] = -c * (3.0 * x * d * q / r5 + i4 * sd);
    out.ds[0] = -c * (3.0 * x * p * q / r5 - i3 * sd * cd);
    out.ds[1] = -c * (3.0 * y * p * q / r5 - i1 * sd * cd);
    out.ds[2] = -c * (3.0 * d * p * q / r5 - i5 * sd * cd);
    out.tf[0] = c * (3.0 * x * q * q / r5 - i3 * sd * sd);
    out.tf[1] = c * (3.0 * y * q * q / r5 - i1 * sd * sd);
    out.tf[2] = c * (3.0 * d * q * q / r5 - i5 * sd * sd);
    return out;
}

/// Gauss-Legendre nodes and weights on [-1, 1].
inline void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
    x.assign(n, 0.0);
    w.assign(n, 0.0);
    for (int i = 0; i < n; ++i) {
        double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = 0.0;
            for (int j = 1; j <= n; ++j) {
                const double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j - 1.0) * z * p1 - (j - 1.0) * p2) / j;
            }
            dp = n * (z * p0 - p1) / (z * z - 1.0);
            const double dz = p0 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-16) break;
        }
        x[i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
}

/// Surface displacement (east, north, up) of a rectangular dislocation
/// obtained by integrating point sources over the plane. Position is relative
/// to the surface projection of the centroid; angles in degrees.
inline std::array<double, 3> integrated_rectangle(double east, double north, double centroid_depth, double strike_deg,
                                                  double dip_deg, double length, double width, double rake_deg,
                                                  double slip, double opening, double nu, int order = 6) {
    const double deg = std::numbers::pi / 180.0;
    const double s = std::sin(strike_deg * deg), c = std::cos(strike_deg * deg);
    const double dip = dip_deg * deg;
    const double u1 = slip * std::cos(rake_deg * deg), u2 = slip * std::sin(rake_deg * deg), u3 = opening;
    const double xo = c * north + s * east;
    const double yo = s * north - c * east;
    std::vector<double> gx, gw;
    gauss_legendre(order, gx, gw);
    double ux = 0, uy = 0, uz = 0;
    for (int i = 0; i < order; ++i)
        for (int j = 0; j < order; ++j) {
            const double a = gx[i] * length / 2.0;  // along strike
            const double t = gx[j] * width / 2.0;   // down dip
            const double area = gw[i] * gw[j] * length * width / 4.0;
            const double depth = centroid_depth + t * std::sin(dip);
            const auto g = okada_point(xo - a, yo + t * std::cos(dip), depth, dip, nu);
            ux += area * (u1 * g.ss[0] + u2 * g.ds[0] + u3 * g.tf[0]);
            uy += area * (u1 * g.ss[1] + u2 * g.ds[1] + u3 * g.tf[1]);
            uz += area * (u1 * g.ss[2] + u2 * g.ds[2] + u3 * g.tf[2]);
        }
    return {s * ux - c * uy, c * ux + s * uy, uz};
}

} // namespace oracle
