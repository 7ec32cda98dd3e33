#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace revealtoy {

/// RGBA image in the signed range [-1, +1]. Alpha -1 is fully transparent,
/// +1 fully opaque. Storage is interleaved row-major (y, x, channel).
class RgbaImage {
 public:
  static constexpr std::size_t kChannels = 4;

  RgbaImage() = default;
  RgbaImage(std::size_t height, std::size_t width, double fill = 0.0);
  RgbaImage(std::size_t height, std::size_t width, std::vector<double> values);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t pixels() const noexcept { return height_ * width_; }

  double operator()(std::size_t y, std::size_t x, std::size_t c) const {
    return values_[(y * width_ + x) * kChannels + c];
  }
  double& operator()(std::size_t y, std::size_t x, std::size_t c) {
    return values_[(y * width_ + x) * kChannels + c];
  }
  double alpha(std::size_t y, std::size_t x) const { return (*this)(y, x, 3); }

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }

  bool same_size(const RgbaImage& o) const noexcept { return height_ == o.height_ && width_ == o.width_; }
  bool in_range() const noexcept;

  friend bool operator==(const RgbaImage&, const RgbaImage&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> values_;
};

/// Axis-aligned pixel box: top-left (x, y), extent (w, h).
struct BoundingBox {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  int right() const noexcept { return x + w; }
  int bottom() const noexcept { return y + h; }
  bool contains(int px, int py) const noexcept { return px >= x && px < right() && py >= y && py < bottom(); }
  bool inside(std::size_t width, std::size_t height) const noexcept;
  bool grid_aligned(int patch) const noexcept;

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Expands a box outward to patch multiples, clipped to the canvas.
BoundingBox snap_outward(const BoundingBox& box, int patch, std::size_t width, std::size_t height);

/// Ground-truth layered scene. Foregrounds are ordered back-to-front.
struct LayeredScene {
  RgbaImage composite;
  RgbaImage background;
  std::vector<RgbaImage> foregrounds;
  std::vector<BoundingBox> boxes;

  std::size_t layer_count() const noexcept { return foregrounds.size(); }
  std::size_t height() const noexcept { return composite.height(); }
  std::size_t width() const noexcept { return composite.width(); }
};

/// Throws ValidationError when the LayeredScene invariants fail.
/// `composite_tol` bounds |composite - recomposite| per channel.
void validate_scene(const LayeredScene& scene, double composite_tol);

/// Back-to-front alpha-over. Result alpha is +1 everywhere.
RgbaImage composite_layers(const RgbaImage& background, std::span<const RgbaImage> foregrounds);

/// RGB <- (0.5 a + 0.5) * RGB, alpha unchanged.
RgbaImage gray_background_convert(const RgbaImage& fg);

/// Inverse of gray_background_convert where alpha > 0 (to 8-bit precision);
/// RGB 0 where the layer is fully transparent.
RgbaImage gray_background_invert(const RgbaImage& fg);

RgbaImage crop(const RgbaImage& img, const BoundingBox& box);
/// Places `layer` at `box` on a transparent canvas (RGB 0, alpha -1).
RgbaImage place_on_canvas(const RgbaImage& layer, const BoundingBox& box, std::size_t height, std::size_t width);

/// Maps alpha from the signed range to [0, 1].
inline double unit_alpha(double a) noexcept { return 0.5 * (a + 1.0); }

/// Alpha channel in [0, 1], row-major.
std::vector<double> unit_alpha_map(const RgbaImage& img);
/// Luma 0.299 R + 0.587 G + 0.114 B after mapping RGB to [0, 1].
std::vector<double> luma(const RgbaImage& img);

/// Nearest 8-bit code for a signed value, and its inverse.
std::uint8_t to_byte(double v) noexcept;
inline double from_byte(std::uint8_t b) noexcept { return static_cast<double>(b) / 127.5 - 1.0; }
/// Rounds every channel onto the 8-bit grid.
RgbaImage quantize_8bit(const RgbaImage& img);

}  // namespace revealtoy
