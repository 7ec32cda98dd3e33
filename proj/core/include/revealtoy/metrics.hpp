#pragma once

#include <span>

namespace revealtoy {

/// Peak signal-to-noise ratio in dB. Identical inputs give kPsnrCap.
inline constexpr double kPsnrCap = 99.0;
double psnr(std::span<const double> a, std::span<const double> b, double max_val = 2.0);

/// Windowed SSIM on single-channel images with value range `range`:
/// 11x11 Gaussian window (sigma 1.5), valid positions only, averaged.
double ssim(std::span<const double> a, std::span<const double> b, std::size_t height, std::size_t width,
            double range = 1.0);

/// sum(min) / sum(max) over alpha maps in [0, 1]; 1 when both are empty.
double soft_iou(std::span<const double> a, std::span<const double> b);

struct MattingErrors {
  double sad = 0.0;  // sum |a_hat - a| / 1000
  double mad = 0.0;
  double mse = 0.0;
};
MattingErrors matting_errors(std::span<const double> predicted, std::span<const double> truth);

/// ln(var(Laplacian(img)) + 1e-12) over the valid region.
double texture_logvar_laplacian(std::span<const double> img, std::size_t height, std::size_t width);

}  // namespace revealtoy
