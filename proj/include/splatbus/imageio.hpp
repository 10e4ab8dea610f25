#pragma once

#include "splatbus/image.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace splatbus::imageio {

void write_ppm(const Rgba8Image& image, const std::filesystem::path& path);
void write_png(const Rgba8Image& image, const std::filesystem::path& path);

std::vector<std::uint8_t> encode_png(const Rgba8Image& image);
/// Throws Errc::parse_error for anything libpng rejects.
Rgba8Image decode_png(std::span<const std::uint8_t> bytes);
Rgba8Image read_png(const std::filesystem::path& path);

/// 16-bit binary PGM of linear depth: round(65535 * clamp(z / vis_max, 0, 1)).
std::uint16_t depth_to_u16(float z, double vis_max);
void write_pgm16(const DepthImage& depth, const std::filesystem::path& path, double vis_max = 100.0);

} // namespace splatbus::imageio
