#include "insarforge/atmos.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <list>
#include <memory>
#include <mutex>
#include <numbers>
#include <string>
#include <tuple>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <fftw3.h>

#include "insarforge/error.hpp"

namespace insarforge::atmos {

namespace {

constexpr double kPi = std::numbers::pi;

std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

/// In-place 2-D complex FFT on an fftw_malloc'd buffer.
class Fft2d {
public:
    Fft2d(int rows, int cols, int sign) : rows_(rows), cols_(cols) {
        data_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * static_cast<std::size_t>(rows) * cols));
        if (!data_) throw NumericError("FFT buffer allocation failed");
        std::lock_guard lock(fftw_planner_mutex());
        plan_ = fftw_plan_dft_2d(rows, cols, data_, data_, sign, FFTW_ESTIMATE);
    }
    ~Fft2d() {
        {
            std::lock_guard lock(fftw_planner_mutex());
            fftw_destroy_plan(plan_);
        }
        fftw_free(data_);
    }
    Fft2d(const Fft2d&) = delete;
    Fft2d& operator=(const Fft2d&) = delete;

    std::complex<double>& at(int r, int c) {
        return reinterpret_cast<std::complex<double>*>(data_)[static_cast<std::size_t>(r) * cols_ + c];
    }
    void execute() { fftw_execute(plan_); }

private:
    int rows_, cols_;
    fftw_complex* data_ = nullptr;
    fftw_plan plan_ = nullptr;
};

void check_params(const CovarianceParams& p) {
    if (!(p.sigma2_max > 0.0) || !(p.efold_km > 0.0))
        throw UsageError("covariance parameters must be positive");
}

struct CholeskyKey {
    int width, height;
    double spacing, sigma2, efold;
    auto tie() const { return std::tie(width, height, spacing, sigma2, efold); }
    bool operator==(const CholeskyKey& o) const { return tie() == o.tie(); }
};

std::shared_ptr<const Eigen::MatrixXd> cholesky_factor(const CovarianceParams& p, const GridShape& grid) {
    static std::mutex mutex;
    static std::list<std::pair<CholeskyKey, std::shared_ptr<const Eigen::MatrixXd>>> cache;
    constexpr std::size_t kCacheEntries = 2;

    const CholeskyKey key{grid.width, grid.height, grid.spacing, p.sigma2_max, p.efold_km};
    {
        std::lock_guard lock(mutex);
        for (const auto& [k, v] : cache)
            if (k == key) return v;
    }
    const int n = static_cast<int>(grid.size());
    Eigen::MatrixXd cov(n, n);
    for (int i = 0; i < n; ++i) {
        const int ri = i / grid.width, ci = i % grid.width;
        for (int j = 0; j <= i; ++j) {
            const int rj = j / grid.width, cj = j % grid.width;
            const double d = std::hypot(ri - rj, ci - cj) * grid.spacing / 1000.0;
            cov(i, j) = cov(j, i) = exp_covariance(d, p);
        }
        cov(i, i) += 1e-10 * p.sigma2_max;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) throw NumericError("covariance matrix is not positive definite");
    auto factor = std::make_shared<const Eigen::MatrixXd>(llt.matrixL());
    std::lock_guard lock(mutex);
    cache.emplace_front(key, factor);
    if (cache.size() > kCacheEntries) cache.pop_back();
    return factor;
}

Raster turbulent_cholesky(const CovarianceParams& p, const GridShape& grid, std::uint64_t seed) {
    const auto factor = cholesky_factor(p, grid);
    const int n = static_cast<int>(grid.size());
    Rng rng(seed);
    Eigen::VectorXd z(n);
    for (int i = 0; i < n; ++i) z[i] = rng.normal();
    const Eigen::VectorXd x = factor->triangularView<Eigen::Lower>() * z;
    Raster out(grid, Unit::delay_mm);
    auto v = out.values();
    for (int i = 0; i < n; ++i) v[i] = x[i];
    return out;
}

Raster turbulent_circulant(const CovarianceParams& p, const GridShape& grid, std::uint64_t seed) {
    for (int pad : {1, 2, 4, 8}) {
        const int m1 = 2 * grid.height * pad, m2 = 2 * grid.width * pad;
        Fft2d fft(m1, m2, FFTW_FORWARD);
        for (int i = 0; i < m1; ++i) {
            const int di = std::min(i, m1 - i);
            for (int j = 0; j < m2; ++j) {
                const int dj = std::min(j, m2 - j);
                fft.at(i, j) = exp_covariance(std::hypot(di, dj) * grid.spacing / 1000.0, p);
            }
        }
        fft.execute();
        double lmax = 0.0, lmin = 0.0;
        for (int i = 0; i < m1; ++i)
            for (int j = 0; j < m2; ++j) {
                const double l = fft.at(i, j).real();
                lmax = std::max(lmax, l);
                lmin = std::min(lmin, l);
            }
        if (lmin < -1e-6 * lmax) continue;

        const double scale = 1.0 / (static_cast<double>(m1) * m2);
        std::vector<double> sqrt_lambda(static_cast<std::size_t>(m1) * m2);
        for (int i = 0; i < m1; ++i)
            for (int j = 0; j < m2; ++j)
                sqrt_lambda[static_cast<std::size_t>(i) * m2 + j] = std::sqrt(std::max(0.0, fft.at(i, j).real()) * scale);
        Rng rng(seed);
        for (int i = 0; i < m1; ++i)
            for (int j = 0; j < m2; ++j) {
                const double a = rng.normal();
                const double b = rng.normal();
                fft.at(i, j) = sqrt_lambda[static_cast<std::size_t>(i) * m2 + j] * std::complex<double>(a, b);
            }
        fft.execute();
        Raster out(grid, Unit::delay_mm);
        for (int r = 0; r < grid.height; ++r)
            for (int c = 0; c < grid.width; ++c) out(r, c) = fft.at(r, c).real();
        return out;
    }
    throw NumericError("circulant embedding is not positive semi-definite even with 8x padding");
}

Raster to_mm(const Raster& img, double wavelength_m) {
    if (img.unit() == Unit::delay_mm) return img;
    if (img.unit() != Unit::phase_rad)
        throw DataError("expected a phase or delay raster, got " + std::string(unit_name(img.unit())));
    Raster out(img.shape(), Unit::delay_mm);
    const double k = 1.0 / phase_per_mm(wavelength_m);
    auto src = img.values();
    auto dst = out.values();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] * k;
    return out;
}

double cos_incidence(const LosGeometry& geom) { return std::cos(geom.incidence_deg() * kPi / 180.0); }

} // namespace

double exp_covariance(double d_km, const CovarianceParams& p) { return p.sigma2_max * std::exp(-d_km / p.efold_km); }

CovarianceParams sample_cov_params(Rng& rng) {
    CovarianceParams p;
    p.sigma2_max = rng.uniform(5.0, 9.0);
    p.efold_km = rng.uniform(4.0, 18.0);
    return p;
}

Raster synth_turbulent_mm(const CovarianceParams& p, const GridShape& grid, std::uint64_t seed,
                          TurbulenceBackend backend) {
    grid.validate();
    check_params(p);
    if (grid.width < 8 || grid.height < 8) throw DataError("turbulence grids must be at least 8x8");
    if (backend == TurbulenceBackend::automatic)
        backend = grid.size() <= kCholeskyMaxPixels ? TurbulenceBackend::cholesky : TurbulenceBackend::circulant;
    return backend == TurbulenceBackend::cholesky ? turbulent_cholesky(p, grid, seed)
                                                  : turbulent_circulant(p, grid, seed);
}

Raster synth_turbulent(const CovarianceParams& p, const GridShape& grid, std::uint64_t seed, double wavelength_m,
                       TurbulenceBackend backend) {
    Raster mm = synth_turbulent_mm(p, grid, seed, backend);
    Raster out(grid, Unit::phase_rad);
    const double k = phase_per_mm(wavelength_m);
    auto src = mm.values();
    auto dst = out.values();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = k * src[i];
    return out;
}

CovarianceProfile empirical_covariance(const Raster& delay_mm, int max_lag_px) {
    const int w = delay_mm.width(), h = delay_mm.height();
    const double mean = delay_mm.mean();
    std::vector<double> x(delay_mm.size());
    auto v = delay_mm.values();
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = v[i] - mean;

    CovarianceProfile prof;
    prof.lag_km.assign(max_lag_px + 1, 0.0);
    prof.cov.assign(max_lag_px + 1, 0.0);
    prof.pairs.assign(max_lag_px + 1, 0.0);
    const double km = delay_mm.spacing() / 1000.0;
    for (int dy = 0; dy <= max_lag_px; ++dy) {
        for (int dx = -max_lag_px; dx <= max_lag_px; ++dx) {
            if (dy == 0 && dx < 0) continue;
            const double r = std::hypot(dx, dy);
            const int bin = static_cast<int>(std::lround(r));
            if (bin > max_lag_px || dy >= h || std::abs(dx) >= w) continue;
            double sum = 0.0;
            const int c0 = std::max(0, -dx), c1 = std::min(w, w - dx);
            for (int row = 0; row + dy < h; ++row) {
                const double* a = &x[static_cast<std::size_t>(row) * w];
                const double* b = &x[static_cast<std::size_t>(row + dy) * w];
                for (int c = c0; c < c1; ++c) sum += a[c] * b[c + dx];
            }
            const double n = static_cast<double>(h - dy) * (c1 - c0);
            prof.cov[bin] += sum;
            prof.pairs[bin] += n;
            prof.lag_km[bin] += n * r * km;
        }
    }
    for (int b = 0; b <= max_lag_px; ++b) {
        if (prof.pairs[b] > 0) {
            prof.cov[b] /= prof.pairs[b];
            prof.lag_km[b] /= prof.pairs[b];
        }
    }
    return prof;
}

CovarianceParams estimate_cov_params(const Raster& img, double wavelength_m) {
    const Raster mm = to_mm(img, wavelength_m);
    const int w = mm.width(), h = mm.height();
    if (w < 16 || h < 16) throw DataError("covariance estimation needs at least 16x16 pixels");
    for (double v : mm.values())
        if (!std::isfinite(v)) throw DataError("covariance estimation needs finite pixels");

    const int max_lag = std::min(w, h) / 4;
    const auto prof = empirical_covariance(mm, max_lag);
    if (!(prof.cov[0] > 1e-24)) return {0.0, 0.0, false};

    // offsets contributing to each bin, for the model average
    struct Offset {
        double d_km, pairs;
        int bin;
    };
    std::vector<Offset> offsets;
    const double km = mm.spacing() / 1000.0;
    for (int dy = 0; dy <= max_lag; ++dy)
        for (int dx = -max_lag; dx <= max_lag; ++dx) {
            if (dy == 0 && dx < 0) continue;
            const double r = std::hypot(dx, dy);
            const int bin = static_cast<int>(std::lround(r));
            if (bin > max_lag) continue;
            offsets.push_back({r * km, static_cast<double>(h - dy) * (w - std::abs(dx)), bin});
        }
    // all-pairs histogram for the covariance of the image mean
    std::vector<Offset> all_pairs;
    for (int dy = 0; dy < h; ++dy)
        for (int dx = 0; dx < w; ++dx) {
            const double mult = (dx > 0 ? 2.0 : 1.0) * (dy > 0 ? 2.0 : 1.0);
            all_pairs.push_back({std::hypot(dx, dy) * km, mult * (h - dy) * (w - dx), 0});
        }
    const double n2 = static_cast<double>(w) * w * h * h;

    const int bins = max_lag + 1;
    std::vector<double> g(bins);
    auto model = [&](double efold, std::vector<double>& out) {
        double ebar = 0.0;
        for (const auto& o : all_pairs) ebar += o.pairs * std::exp(-o.d_km / efold);
        ebar /= n2;
        std::fill(out.begin(), out.end(), 0.0);
        for (const auto& o : offsets) out[o.bin] += o.pairs * std::exp(-o.d_km / efold);
        for (int b = 0; b < bins; ++b) out[b] = out[b] / prof.pairs[b] - ebar;
    };
    auto fit = [&](double log_efold, double* sigma2) {
        model(std::exp(log_efold), g);
        double cg = 0.0, gg = 0.0;
        for (int b = 0; b < bins; ++b) {
            cg += prof.cov[b] * g[b];
            gg += g[b] * g[b];
        }
        const double s2 = gg > 0.0 ? std::max(0.0, cg / gg) : 0.0;
        double sse = 0.0;
        for (int b = 0; b < bins; ++b) sse += (prof.cov[b] - s2 * g[b]) * (prof.cov[b] - s2 * g[b]);
        if (sigma2) *sigma2 = s2;
        return sse;
    };

    const double lo = std::log(0.05 * km);
    const double hi = std::log(1000.0 * km * std::max(w, h));
    constexpr int kScan = 80;
    int best = 0;
    double best_sse = INFINITY;
    for (int i = 0; i <= kScan; ++i) {
        const double sse = fit(lo + (hi - lo) * i / kScan, nullptr);
        if (sse < best_sse) {
            best_sse = sse;
            best = i;
        }
    }
    double a = lo + (hi - lo) * std::max(0, best - 1) / kScan;
    double b = lo + (hi - lo) * std::min(kScan, best + 1) / kScan;
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
    double f1 = fit(x1, nullptr), f2 = fit(x2, nullptr);
    for (int it = 0; it < 60; ++it) {
        if (f1 < f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = fit(x1, nullptr);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = fit(x2, nullptr);
        }
    }
    CovarianceParams out;
    const double log_efold = (a + b) / 2.0;
    fit(log_efold, &out.sigma2_max);
    out.efold_km = std::exp(log_efold);
    return out;
}

Raster dem_profile(DemKind kind, double peak_height, const GridShape& grid) {
    grid.validate();
    if (!(peak_height > 0.0)) throw UsageError("DEM peak height must be positive");
    Raster out(grid, Unit::elevation_m);
    const double ce = grid.extent_east() / 2.0, cn = grid.extent_north() / 2.0;
    const double half = std::min(ce, cn);
    for (int r = 0; r < grid.height; ++r)
        for (int c = 0; c < grid.width; ++c) {
            const double d = std::hypot(grid.east(c) - ce, grid.north(r) - cn);
            if (kind == DemKind::cone) {
                out(r, c) = peak_height * std::max(0.0, 1.0 - d / (0.8 * half));
            } else {
                const double s = d / (0.5 * half);
                out(r, c) = peak_height * std::exp(-0.5 * s * s);
            }
        }
    return out;
}

Raster synth_dem(DemKind kind, double peak_height, const GridShape& grid, std::uint64_t seed) {
    Raster out = dem_profile(kind, peak_height, grid);
    const int h = grid.height, w = grid.width;
    Fft2d fft(h, w, FFTW_BACKWARD);
    Rng rng(seed);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const double fi = std::min(i, h - i) / static_cast<double>(h);
            const double fj = std::min(j, w - j) / static_cast<double>(w);
            const double f = std::hypot(fi, fj);
            const double a = rng.normal(), b = rng.normal();
            // amplitude ~ f^-1.5 gives a rough, self-affine surface
            fft.at(i, j) = f > 0.0 ? std::pow(f, -1.5) * std::complex<double>(a, b) : 0.0;
        }
    fft.execute();
    double peak = 0.0;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) peak = std::max(peak, std::abs(fft.at(i, j).real()));
    const double scale = peak > 0.0 ? 0.1 * peak_height / peak : 0.0;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) out(i, j) = std::max(0.0, out(i, j) + scale * fft.at(i, j).real());
    return out;
}

double sample_slope(Rng& rng) {
    const double m = rng.uniform(0.3, 2.5);
    return rng.coin() ? m : -m;
}

Raster synth_stratified(const StratifiedModel& model, const LosGeometry& geom) {
    if (model.mode != StratifiedMode::linear_elevation) return stratified_from_ztd(model, geom);
    if (!model.dem) throw DataError("linear stratified model requires a DEM");
    const Raster& dem = *model.dem;
    require_unit(dem, Unit::elevation_m, "synth_stratified");
    const double mean = dem.mean();
    const double k = model.slope_rad_per_km / 1000.0 / cos_incidence(geom);
    Raster out(dem.shape(), Unit::phase_rad);
    auto src = dem.values();
    auto dst = out.values();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = k * (src[i] - mean);
    return out;
}

Raster stratified_from_ztd(const StratifiedModel& model, const LosGeometry& geom) {
    if (!model.ztd_master || !model.ztd_slave) throw DataError("ZTD stratified model requires both ZTD rasters");
    return stratified_from_ztd(*model.ztd_master, *model.ztd_slave, geom);
}

Raster stratified_from_ztd(const Raster& ztd_master, const Raster& ztd_slave, const LosGeometry& geom) {
    require_unit(ztd_master, Unit::delay_mm, "stratified_from_ztd master");
    require_unit(ztd_slave, Unit::delay_mm, "stratified_from_ztd slave");
    require_same_grid(ztd_master, ztd_slave, "stratified_from_ztd");
    const double k = phase_per_mm(geom.wavelength_m()) / cos_incidence(geom);
    Raster out(ztd_master.shape(), Unit::phase_rad);
    auto m = ztd_master.values();
    auto s = ztd_slave.values();
    auto dst = out.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = k * (s[i] - m[i]);
    return out;
}

Raster synth_ztd(const Raster& dem, const ZtdParams& params, std::uint64_t seed) {
    require_unit(dem, Unit::elevation_m, "synth_ztd");
    const GridShape& g = dem.shape();
    Rng rng(seed);
    const double ce = rng.uniform(0.0, g.extent_east());
    const double cn = rng.uniform(0.0, g.extent_north());
    const double extent = std::max(g.extent_east(), g.extent_north());
    const double radius = rng.uniform(0.1, 0.3) * extent;
    const double amplitude = rng.uniform(-1.0, 1.0) * params.cell_amplitude_mm;
    const double azimuth = rng.uniform(0.0, 2.0 * kPi);
    const double tilt = rng.uniform(-1.0, 1.0) * params.ramp_mm / extent;
    Raster out(g, Unit::delay_mm);
    for (int r = 0; r < g.height; ++r)
        for (int c = 0; c < g.width; ++c) {
            const double e = g.east(c), n = g.north(r);
            const double d2 = ((e - ce) * (e - ce) + (n - cn) * (n - cn)) / (radius * radius);
            out(r, c) = params.sea_level_mm * std::exp(-dem(r, c) / params.scale_height_m) +
                        amplitude * std::exp(-0.5 * d2) +
                        tilt * ((e - g.extent_east() / 2) * std::sin(azimuth) + (n - g.extent_north() / 2) * std::cos(azimuth));
        }
    return out;
}

} // namespace insarforge::atmos
