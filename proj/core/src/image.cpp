#include "revealtoy/image.hpp"

#include <algorithm>
#include <cmath>

#include "revealtoy/error.hpp"

namespace revealtoy {

RgbaImage::RgbaImage(std::size_t height, std::size_t width, double fill)
    : height_(height), width_(width), values_(height * width * kChannels, fill) {}

RgbaImage::RgbaImage(std::size_t height, std::size_t width, std::vector<double> values)
    : height_(height), width_(width), values_(std::move(values)) {
  if (values_.size() != height * width * kChannels) {
    throw ShapeError("RgbaImage: " + std::to_string(values_.size()) + " values for " +
                     std::to_string(height) + "x" + std::to_string(width) + "x4");
  }
}

bool RgbaImage::in_range() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return v >= -1.0 && v <= 1.0; });
}

bool BoundingBox::inside(std::size_t width, std::size_t height) const noexcept {
  return x >= 0 && y >= 0 && w > 0 && h > 0 && right() <= static_cast<int>(width) &&
         bottom() <= static_cast<int>(height);
}

bool BoundingBox::grid_aligned(int patch) const noexcept {
  return x % patch == 0 && y % patch == 0 && w % patch == 0 && h % patch == 0;
}

BoundingBox snap_outward(const BoundingBox& box, int patch, std::size_t width, std::size_t height) {
  auto floor_to = [patch](int v) { return v >= 0 ? (v / patch) * patch : -(((-v) + patch - 1) / patch) * patch; };
  auto ceil_to = [patch](int v) { return v >= 0 ? ((v + patch - 1) / patch) * patch : -((-v) / patch) * patch; };
  int x0 = std::max(0, floor_to(box.x));
  int y0 = std::max(0, floor_to(box.y));
  int x1 = std::min(static_cast<int>(width), ceil_to(box.right()));
  int y1 = std::min(static_cast<int>(height), ceil_to(box.bottom()));
  return BoundingBox{x0, y0, std::max(0, x1 - x0), std::max(0, y1 - y0)};
}

void validate_scene(const LayeredScene& scene, double composite_tol) {
  const std::size_t n = scene.foregrounds.size();
  if (n == 0) throw ValidationError("foregrounds", "scene needs at least one foreground layer");
  if (scene.boxes.size() != n) throw ValidationError("boxes", "one box per foreground required");
  if (!scene.composite.same_size(scene.background)) throw ValidationError("background", "size mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    const RgbaImage& fg = scene.foregrounds[i];
    const BoundingBox& b = scene.boxes[i];
    if (!fg.same_size(scene.composite)) throw ValidationError("foregrounds", "size mismatch at layer " + std::to_string(i));
    if (!b.inside(scene.width(), scene.height())) throw ValidationError("boxes", "box " + std::to_string(i) + " outside canvas");
    for (std::size_t y = 0; y < fg.height(); ++y)
      for (std::size_t x = 0; x < fg.width(); ++x)
        if (!b.contains(static_cast<int>(x), static_cast<int>(y)) && fg.alpha(y, x) != -1.0) {
          throw ValidationError("foregrounds", "layer " + std::to_string(i) + " is visible outside its box");
        }
  }
  RgbaImage recomposite = composite_layers(scene.background, scene.foregrounds);
  for (std::size_t i = 0; i < recomposite.values().size(); ++i) {
    if (std::fabs(recomposite.values()[i] - scene.composite.values()[i]) > composite_tol) {
      throw ValidationError("composite", "composite disagrees with its layers");
    }
  }
}

RgbaImage composite_layers(const RgbaImage& background, std::span<const RgbaImage> foregrounds) {
  RgbaImage out = background;
  for (const RgbaImage& fg : foregrounds) {
    if (!fg.same_size(background)) throw ShapeError("composite_layers: layer size mismatch");
    for (std::size_t y = 0; y < out.height(); ++y) {
      for (std::size_t x = 0; x < out.width(); ++x) {
        const double a = unit_alpha(fg.alpha(y, x));
        for (std::size_t c = 0; c < 3; ++c) out(y, x, c) = a * fg(y, x, c) + (1.0 - a) * out(y, x, c);
      }
    }
  }
  for (std::size_t y = 0; y < out.height(); ++y)
    for (std::size_t x = 0; x < out.width(); ++x) out(y, x, 3) = 1.0;
  return out;
}

RgbaImage gray_background_convert(const RgbaImage& fg) {
  RgbaImage out = fg;
  for (std::size_t y = 0; y < out.height(); ++y) {
    for (std::size_t x = 0; x < out.width(); ++x) {
      const double k = 0.5 * fg.alpha(y, x) + 0.5;
      for (std::size_t c = 0; c < 3; ++c) out(y, x, c) = k * fg(y, x, c);
    }
  }
  return out;
}

RgbaImage gray_background_invert(const RgbaImage& fg) {
  RgbaImage out = fg;
  for (std::size_t y = 0; y < out.height(); ++y) {
    for (std::size_t x = 0; x < out.width(); ++x) {
      const double k = 0.5 * fg.alpha(y, x) + 0.5;
      for (std::size_t c = 0; c < 3; ++c)
        out(y, x, c) = k > 1.0 / 255.0 ? std::clamp(fg(y, x, c) / k, -1.0, 1.0) : 0.0;
    }
  }
  return out;
}

RgbaImage crop(const RgbaImage& img, const BoundingBox& box) {
  if (!box.inside(img.width(), img.height())) throw ShapeError("crop: box outside image");
  RgbaImage out(static_cast<std::size_t>(box.h), static_cast<std::size_t>(box.w));
  for (int y = 0; y < box.h; ++y)
    for (int x = 0; x < box.w; ++x)
      for (std::size_t c = 0; c < 4; ++c) out(y, x, c) = img(box.y + y, box.x + x, c);
  return out;
}

RgbaImage place_on_canvas(const RgbaImage& layer, const BoundingBox& box, std::size_t height, std::size_t width) {
  if (!box.inside(width, height) || layer.height() != static_cast<std::size_t>(box.h) ||
      layer.width() != static_cast<std::size_t>(box.w)) {
    throw ShapeError("place_on_canvas: layer does not fit its box");
  }
  RgbaImage out(height, width, 0.0);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) out(y, x, 3) = -1.0;
  for (int y = 0; y < box.h; ++y)
    for (int x = 0; x < box.w; ++x)
      for (std::size_t c = 0; c < 4; ++c) out(box.y + y, box.x + x, c) = layer(y, x, c);
  return out;
}

std::vector<double> unit_alpha_map(const RgbaImage& img) {
  std::vector<double> a(img.pixels());
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x) a[y * img.width() + x] = unit_alpha(img.alpha(y, x));
  return a;
}

std::vector<double> luma(const RgbaImage& img) {
  std::vector<double> l(img.pixels());
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < img.width(); ++x) {
      auto u = [&](std::size_t c) { return 0.5 * (img(y, x, c) + 1.0); };
      l[y * img.width() + x] = 0.299 * u(0) + 0.587 * u(1) + 0.114 * u(2);
    }
  }
  return l;
}

std::uint8_t to_byte(double v) noexcept {
  const double b = std::round((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5);
  return static_cast<std::uint8_t>(std::clamp(b, 0.0, 255.0));
}

RgbaImage quantize_8bit(const RgbaImage& img) {
  RgbaImage out = img;
  for (double& v : out.values()) v = from_byte(to_byte(v));
  return out;
}

}  // namespace revealtoy
