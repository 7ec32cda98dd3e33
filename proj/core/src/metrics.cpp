#include "revealtoy/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "revealtoy/error.hpp"

namespace revealtoy {
namespace {

void check_same(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(what) + ": inputs have " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()) + " values");
  }
}

void check_dims(std::span<const double> img, std::size_t height, std::size_t width, const char* what) {
  if (img.size() != height * width) throw ShapeError(std::string(what) + ": buffer does not match height*width");
}

constexpr std::size_t kWin = 11;

std::array<double, kWin * kWin> gaussian_window() {
  std::array<double, kWin * kWin> w{};
  const double sigma = 1.5;
  double total = 0.0;
  for (std::size_t y = 0; y < kWin; ++y) {
    for (std::size_t x = 0; x < kWin; ++x) {
      const double dy = static_cast<double>(y) - 5.0, dx = static_cast<double>(x) - 5.0;
      w[y * kWin + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      total += w[y * kWin + x];
    }
  }
  for (double& v : w) v /= total;
  return w;
}

}  // namespace

double psnr(std::span<const double> a, std::span<const double> b, double max_val) {
  check_same(a, b, "psnr");
  if (a.empty()) return kPsnrCap;
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
  const double mse = se / static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(max_val * max_val / mse));
}

double ssim(std::span<const double> a, std::span<const double> b, std::size_t height, std::size_t width,
            double range) {
  check_same(a, b, "ssim");
  check_dims(a, height, width, "ssim");
  if (height < kWin || width < kWin) throw ValidationError("image", "ssim needs images of at least 11x11");
  static const auto w = gaussian_window();
  const double c1 = (0.01 * range) * (0.01 * range);
  const double c2 = (0.03 * range) * (0.03 * range);
  double total = 0.0;
  std::size_t windows = 0;
  for (std::size_t y0 = 0; y0 + kWin <= height; ++y0) {
    for (std::size_t x0 = 0; x0 + kWin <= width; ++x0) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (std::size_t y = 0; y < kWin; ++y) {
        for (std::size_t x = 0; x < kWin; ++x) {
          const double k = w[y * kWin + x];
          const double va = a[(y0 + y) * width + x0 + x], vb = b[(y0 + y) * width + x0 + x];
          ma += k * va;
          mb += k * vb;
          saa += k * va * va;
          sbb += k * vb * vb;
          sab += k * va * vb;
        }
      }
      const double var_a = saa - ma * ma, var_b = sbb - mb * mb, cov = sab - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
      ++windows;
    }
  }
  return total / static_cast<double>(windows);
}

double soft_iou(std::span<const double> a, std::span<const double> b) {
  check_same(a, b, "soft_iou");
  double lo = 0.0, hi = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    lo += std::min(a[i], b[i]);
    hi += std::max(a[i], b[i]);
  }
  return hi == 0.0 ? 1.0 : lo / hi;
}

MattingErrors matting_errors(std::span<const double> predicted, std::span<const double> truth) {
  check_same(predicted, truth, "matting_errors");
  MattingErrors e;
  if (predicted.empty()) return e;
  double sad = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double d = predicted[i] - truth[i];
    sad += std::abs(d);
    sq += d * d;
  }
  const double n = static_cast<double>(predicted.size());
  e.sad = sad / 1000.0;
  e.mad = sad / n;
  e.mse = sq / n;
  return e;
}

double texture_logvar_laplacian(std::span<const double> img, std::size_t height, std::size_t width) {
  check_dims(img, height, width, "texture_logvar_laplacian");
  if (height < 3 || width < 3) throw ValidationError("image", "laplacian statistic needs at least 3x3");
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (std::size_t y = 1; y + 1 < height; ++y) {
    for (std::size_t x = 1; x + 1 < width; ++x) {
      const double r = img[(y - 1) * width + x] + img[(y + 1) * width + x] + img[y * width + x - 1] +
                       img[y * width + x + 1] - 4.0 * img[y * width + x];
      sum += r;
      sq += r * r;
      ++n;
    }
  }
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(0.0, sq / static_cast<double>(n) - mean * mean);
  return std::log(var + 1e-12);
}

}  // namespace revealtoy
