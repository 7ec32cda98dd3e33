#include "revealtoy/png_io.hpp"

#include <png.h>

#include <cstring>
#include <fstream>
#include <iterator>

#include "revealtoy/error.hpp"

namespace revealtoy {
namespace {

std::vector<std::uint8_t> to_bytes(const RgbaImage& img, bool opaque) {
  const std::size_t channels = opaque ? 3 : 4;
  std::vector<std::uint8_t> raw(img.pixels() * channels);
  const auto v = img.values();
  for (std::size_t p = 0; p < img.pixels(); ++p)
    for (std::size_t c = 0; c < channels; ++c) raw[p * channels + c] = to_byte(v[p * 4 + c]);
  return raw;
}

png_image make_descriptor(const RgbaImage& img, bool opaque) {
  png_image desc;
  std::memset(&desc, 0, sizeof(desc));
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(img.width());
  desc.height = static_cast<png_uint_32>(img.height());
  desc.format = opaque ? PNG_FORMAT_RGB : PNG_FORMAT_RGBA;
  return desc;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const RgbaImage& img, bool opaque) {
  if (img.pixels() == 0) throw Error("encode_png: empty image");
  const std::vector<std::uint8_t> raw = to_bytes(img, opaque);
  png_image desc = make_descriptor(img, opaque);
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&desc, nullptr, &size, 0, raw.data(), 0, nullptr)) {
    throw Error(std::string("encode_png: ") + desc.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&desc, out.data(), &size, 0, raw.data(), 0, nullptr)) {
    throw Error(std::string("encode_png: ") + desc.message);
  }
  out.resize(size);
  return out;
}

RgbaImage decode_png(std::span<const std::uint8_t> bytes) {
  png_image desc;
  std::memset(&desc, 0, sizeof(desc));
  desc.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&desc, bytes.data(), bytes.size())) {
    throw Error(std::string("decode_png: ") + desc.message);
  }
  desc.format = PNG_FORMAT_RGBA;
  std::vector<std::uint8_t> raw(PNG_IMAGE_SIZE(desc));
  if (!png_image_finish_read(&desc, nullptr, raw.data(), 0, nullptr)) {
    png_image_free(&desc);
    throw Error(std::string("decode_png: ") + desc.message);
  }
  std::vector<double> values(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) values[i] = from_byte(raw[i]);
  return RgbaImage(desc.height, desc.width, std::move(values));
}

void write_png(const std::filesystem::path& path, const RgbaImage& img, bool opaque) {
  const auto bytes = encode_png(img, opaque);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

RgbaImage read_png(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_png(bytes);
}

}  // namespace revealtoy
