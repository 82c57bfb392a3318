#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace insarforge {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);

/// Writes through a temporary sibling and renames, so readers never see a partial file.
void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

/// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::uint64_t fnv1a64(std::string_view text);
std::uint64_t file_checksum(const std::filesystem::path& path);
std::string hex64(std::uint64_t value);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double value);

/// Little-endian packing helpers shared by the binary formats.
void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v);
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_f32(std::vector<std::uint8_t>& out, float v);
std::uint16_t get_u16(std::span<const std::uint8_t> in, std::size_t offset);
std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t offset);
float get_f32(std::span<const std::uint8_t> in, std::size_t offset);

} // namespace insarforge
