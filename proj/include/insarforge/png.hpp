#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "insarforge/raster.hpp"

namespace insarforge::png {

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
};

/// Row-major RGB image.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<Rgb> pixels;

    Rgb& at(int row, int col) { return pixels[static_cast<std::size_t>(row) * width + col]; }
};

void write(const std::filesystem::path& path, const Image& image);

/// Cyclic HSV colormap, one hue cycle per 2 pi. Accepts wrapped or unwrapped phase.
Image phase_colormap(const Raster& phase);

/// Gray image for any raster, linearly stretched between its min and max.
Image grayscale(const Raster& raster);

} // namespace insarforge::png
