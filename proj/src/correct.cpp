#include "insarforge/correct.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "insarforge/atmos.hpp"
#include "insarforge/error.hpp"

namespace insarforge::correct {

namespace {

constexpr int kDr[4] = {-1, 1, 0, 0};
constexpr int kDc[4] = {0, 0, -1, 1};

/// 4-connected components of the missing pixels.
std::vector<std::vector<int>> holes(const MaskedRaster& img) {
    const int w = img.raster.width(), h = img.raster.height();
    std::vector<int> seen(img.valid.size(), 0);
    std::vector<std::vector<int>> out;
    for (std::size_t start = 0; start < img.valid.size(); ++start) {
        if (img.valid[start] || seen[start]) continue;
        std::vector<int> comp{static_cast<int>(start)};
        seen[start] = 1;
        for (std::size_t k = 0; k < comp.size(); ++k) {
            const int r = comp[k] / w, c = comp[k] % w;
            for (int d = 0; d < 4; ++d) {
                const int rr = r + kDr[d], cc = c + kDc[d];
                if (rr < 0 || cc < 0 || rr >= h || cc >= w) continue;
                const int j = rr * w + cc;
                if (!img.valid[j] && !seen[j]) {
                    seen[j] = 1;
                    comp.push_back(j);
                }
            }
        }
        out.push_back(std::move(comp));
    }
    return out;
}

void solve_direct(const std::vector<int>& hole, int w, int h, std::vector<double>& v) {
    std::vector<int> local(static_cast<std::size_t>(w) * h, -1);
    for (std::size_t k = 0; k < hole.size(); ++k) local[hole[k]] = static_cast<int>(k);
    std::vector<Eigen::Triplet<double>> trip;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(hole.size()));
    for (std::size_t k = 0; k < hole.size(); ++k) {
        const int r = hole[k] / w, c = hole[k] % w;
        int degree = 0;
        for (int d = 0; d < 4; ++d) {
            const int rr = r + kDr[d], cc = c + kDc[d];
            if (rr < 0 || cc < 0 || rr >= h || cc >= w) continue;
            ++degree;
            const int j = rr * w + cc;
            if (local[j] >= 0)
                trip.emplace_back(static_cast<int>(k), local[j], -1.0);
            else
                rhs[static_cast<Eigen::Index>(k)] += v[j];
        }
        trip.emplace_back(static_cast<int>(k), static_cast<int>(k), degree);
    }
    Eigen::SparseMatrix<double> a(static_cast<Eigen::Index>(hole.size()), static_cast<Eigen::Index>(hole.size()));
    a.setFromTriplets(trip.begin(), trip.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(a);
    if (solver.info() != Eigen::Success) throw NumericError("inpainting system could not be factorized");
    const Eigen::VectorXd x = solver.solve(rhs);
    for (std::size_t k = 0; k < hole.size(); ++k) v[hole[k]] = x[static_cast<Eigen::Index>(k)];
}

void solve_sor(const std::vector<int>& hole, int w, int h, std::vector<double>& v, double tol,
               const InpaintOptions& opts) {
    std::vector<std::uint8_t> inside(static_cast<std::size_t>(w) * h, 0);
    for (int i : hole) inside[i] = 1;
    double sum = 0;
    int count = 0;
    for (int i : hole) {
        const int r = i / w, c = i % w;
        for (int d = 0; d < 4; ++d) {
            const int rr = r + kDr[d], cc = c + kDc[d];
            if (rr >= 0 && cc >= 0 && rr < h && cc < w && !inside[rr * w + cc]) {
                sum += v[rr * w + cc];
                ++count;
            }
        }
    }
    for (int i : hole) v[i] = sum / count;
    double previous = 0;
    for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
        double max_update = 0;
        for (int i : hole) {
            const int r = i / w, c = i % w;
            double s = 0;
            int degree = 0;
            for (int d = 0; d < 4; ++d) {
                const int rr = r + kDr[d], cc = c + kDc[d];
                if (rr < 0 || cc < 0 || rr >= h || cc >= w) continue;
                s += v[rr * w + cc];
                ++degree;
            }
            const double update = opts.omega * (s / degree - v[i]);
            v[i] += update;
            max_update = std::max(max_update, std::abs(update));
        }
        // remaining error of a linearly converging iteration: update * q / (1 - q)
        const double q = previous > 0 ? max_update / previous : 1.0;
        previous = max_update;
        if (max_update == 0 || (q < 1 && max_update * q / (1 - q) < tol)) return;
    }
    throw NumericError("inpainting did not converge in " + std::to_string(opts.max_sweeps) + " sweeps");
}

} // namespace

MaskedRaster MaskedRaster::full(Raster r) {
    MaskedRaster m;
    m.valid.assign(r.size(), 1);
    m.raster = std::move(r);
    return m;
}

MaskedRaster MaskedRaster::from_mask(Raster r, const Raster& mask) {
    if (mask.width() != r.width() || mask.height() != r.height())
        throw DataError("mask is " + std::to_string(mask.width()) + "x" + std::to_string(mask.height()) +
                        ", raster is " + std::to_string(r.width()) + "x" + std::to_string(r.height()));
    MaskedRaster m;
    m.valid.resize(r.size());
    auto mv = mask.values();
    for (std::size_t i = 0; i < mv.size(); ++i) m.valid[i] = mv[i] > 0.5;
    m.raster = std::move(r);
    return m;
}

std::size_t MaskedRaster::missing() const { return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 0)); }

Raster laplacian_inpaint(const MaskedRaster& img, const InpaintOptions& opts) {
    if (img.valid.size() != img.raster.size()) throw DataError("mask size does not match the raster");
    if (!(opts.omega > 0 && opts.omega < 2)) throw UsageError("SOR relaxation factor must lie in (0, 2)");
    Raster out = img.raster;
    if (img.missing() == 0) return out;
    if (img.missing() == img.valid.size()) throw DataError("cannot inpaint: no valid pixel in the image");
    const int w = out.width(), h = out.height();
    std::vector<double> v(out.values().begin(), out.values().end());
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (img.valid[i]) {
            if (!std::isfinite(v[i])) throw NumericError("non-finite valid pixel at index " + std::to_string(i));
            lo = std::min(lo, v[i]);
            hi = std::max(hi, v[i]);
        }
    const double tol = opts.tolerance * std::max(hi - lo, 1e-300);
    for (const auto& hole : holes(img)) {
        if (hole.size() < opts.direct_max_pixels)
            solve_direct(hole, w, h, v);
        else
            solve_sor(hole, w, h, v, tol, opts);
    }
    std::copy(v.begin(), v.end(), out.values().begin());
    return out;
}

bool looks_wrapped(const MaskedRaster& phase) {
    const Raster& r = phase.raster;
    const double pi = std::numbers::pi;
    for (std::size_t i = 0; i < r.size(); ++i)
        if (phase.valid[i] && std::abs(r.values()[i]) > pi) return false;
    for (int row = 0; row < r.height(); ++row)
        for (int col = 0; col < r.width(); ++col) {
            const std::size_t i = static_cast<std::size_t>(row) * r.width() + col;
            if (!phase.valid[i]) continue;
            if (col + 1 < r.width() && phase.valid[i + 1] && std::abs(r(row, col + 1) - r(row, col)) > pi) return true;
            if (row + 1 < r.height() && phase.valid[i + r.width()] && std::abs(r(row + 1, col) - r(row, col)) > pi)
                return true;
        }
    return false;
}

Raster apply_correction(const MaskedRaster& unwrapped, const Raster& ztd_master, const Raster& ztd_slave,
                        const LosGeometry& geom, const InpaintOptions& opts) {
    require_unit(unwrapped.raster, Unit::phase_rad, "correction input");
    require_unit(ztd_master, Unit::delay_mm, "master zenith delay");
    require_unit(ztd_slave, Unit::delay_mm, "slave zenith delay");
    require_same_grid(unwrapped.raster, ztd_master, "correction input and master zenith delay");
    require_same_grid(unwrapped.raster, ztd_slave, "correction input and slave zenith delay");
    if (looks_wrapped(unwrapped))
        throw DataError("correction needs unwrapped phase; the input has wrapped phase jumps");
    Raster out = laplacian_inpaint(unwrapped, opts);
    const Raster s = atmos::stratified_from_ztd(ztd_master, ztd_slave, geom);
    auto o = out.values();
    auto sv = s.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] -= sv[i];
    return out;
}

} // namespace insarforge::correct
