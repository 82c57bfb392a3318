#include "insarforge/igrd.hpp"

#include <cmath>
#include <string>

#include "insarforge/error.hpp"
#include "insarforge/io.hpp"

namespace insarforge::igrd {

std::vector<std::uint8_t> encode(const Raster& raster) {
    const bool gray = raster.unit() == Unit::gray_u8;
    std::vector<std::uint8_t> out;
    out.reserve(kHeaderSize + raster.size() * (gray ? 1 : 4));
    for (char c : {'I', 'G', 'R', 'D'}) out.push_back(static_cast<std::uint8_t>(c));
    put_u16(out, kFormatVersion);
    put_u16(out, static_cast<std::uint16_t>(raster.unit()));
    put_u32(out, static_cast<std::uint32_t>(raster.width()));
    put_u32(out, static_cast<std::uint32_t>(raster.height()));
    put_f32(out, static_cast<float>(raster.spacing()));
    out.resize(kHeaderSize, 0);
    for (double v : raster.values()) {
        if (gray)
            out.push_back(static_cast<std::uint8_t>(v));
        else
            put_f32(out, static_cast<float>(v));
    }
    return out;
}

Raster decode(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kHeaderSize || bytes[0] != 'I' || bytes[1] != 'G' || bytes[2] != 'R' || bytes[3] != 'D')
        throw DataError("not an IGRD raster (bad magic)");
    const auto version = get_u16(bytes, 4);
    if (version != kFormatVersion) throw DataError("unsupported IGRD version " + std::to_string(version));
    const Unit unit = unit_from_code(get_u16(bytes, 6));
    const auto width = get_u32(bytes, 8);
    const auto height = get_u32(bytes, 12);
    const double spacing = get_f32(bytes, 16);
    const GridShape shape{static_cast<int>(width), static_cast<int>(height), spacing};
    shape.validate();
    const bool gray = unit == Unit::gray_u8;
    const std::size_t expected = kHeaderSize + shape.size() * (gray ? 1 : 4);
    if (bytes.size() != expected)
        throw DataError("IGRD payload size " + std::to_string(bytes.size()) + " does not match header (" +
                        std::to_string(expected) + ")");
    std::vector<double> values(shape.size());
    for (std::size_t i = 0; i < values.size(); ++i)
        values[i] = gray ? bytes[kHeaderSize + i] : static_cast<double>(get_f32(bytes, kHeaderSize + 4 * i));
    return Raster(shape, unit, std::move(values));
}

void write(const std::filesystem::path& path, const Raster& raster) { write_bytes(path, encode(raster)); }

Raster read(const std::filesystem::path& path) {
    try {
        return decode(read_bytes(path));
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

} // namespace insarforge::igrd
