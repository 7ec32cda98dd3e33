#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "revealtoy/image.hpp"

namespace revealtoy {

// 8-bit RGBA PNG with the linear map [0, 255] <-> [-1, +1].
/// `opaque` drops the alpha channel and writes an RGB file.
std::vector<std::uint8_t> encode_png(const RgbaImage& img, bool opaque = false);
RgbaImage decode_png(std::span<const std::uint8_t> bytes);

void write_png(const std::filesystem::path& path, const RgbaImage& img, bool opaque = false);
RgbaImage read_png(const std::filesystem::path& path);

}  // namespace revealtoy
