#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "insarforge/raster.hpp"

namespace insarforge::igrd {

inline constexpr std::uint16_t kFormatVersion = 1;
inline constexpr std::size_t kHeaderSize = 32;

// Layout (all little-endian):
//   0  magic "IGRD"
//   4  u16 format version
//   6  u16 unit code
//   8  u32 width
//  12  u32 height
//  16  f32 spacing in meters
//  20  12 reserved zero bytes
//  32  payload: f32 row-major, or u8 for gray_u8 rasters

std::vector<std::uint8_t> encode(const Raster& raster);
Raster decode(std::span<const std::uint8_t> bytes);

void write(const std::filesystem::path& path, const Raster& raster);
Raster read(const std::filesystem::path& path);

} // namespace insarforge::igrd
