#include "insarforge/png.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <numbers>

#include "insarforge/error.hpp"

namespace insarforge::png {

namespace {

Rgb hsv(double hue01, double sat, double val) {
    const double h = 6.0 * (hue01 - std::floor(hue01));
    const int sector = static_cast<int>(h) % 6;
    const double f = h - std::floor(h);
    const double p = val * (1 - sat), q = val * (1 - sat * f), t = val * (1 - sat * (1 - f));
    double r = 0, g = 0, b = 0;
    switch (sector) {
    case 0: r = val, g = t, b = p; break;
    case 1: r = q, g = val, b = p; break;
    case 2: r = p, g = val, b = t; break;
    case 3: r = p, g = q, b = val; break;
    case 4: r = t, g = p, b = val; break;
    default: r = val, g = p, b = q; break;
    }
    auto u8 = [](double x) { return static_cast<std::uint8_t>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0)); };
    return {u8(r), u8(g), u8(b)};
}

} // namespace

void write(const std::filesystem::path& path, const Image& image) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!fp) throw DataError("cannot write '" + path.string() + "'");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw DataError("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("libpng failed writing '" + path.string() + "'");
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int r = 0; r < image.height; ++r) {
        auto* row = const_cast<Rgb*>(image.pixels.data() + static_cast<std::size_t>(r) * image.width);
        png_write_row(png, reinterpret_cast<png_bytep>(row));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image phase_colormap(const Raster& phase) {
    Image img{phase.width(), phase.height(), std::vector<Rgb>(phase.size())};
    auto v = phase.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double cycles = (v[i] + std::numbers::pi) / (2.0 * std::numbers::pi);
        img.pixels[i] = hsv(cycles, 1.0, 1.0);
    }
    return img;
}

Image grayscale(const Raster& raster) {
    Image img{raster.width(), raster.height(), std::vector<Rgb>(raster.size())};
    const double lo = raster.min(), hi = raster.max();
    const double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;
    auto v = raster.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
        const auto g = static_cast<std::uint8_t>(std::lround((v[i] - lo) * scale));
        img.pixels[i] = {g, g, g};
    }
    return img;
}

} // namespace insarforge::png
