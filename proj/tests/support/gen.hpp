#pragma once
// Hand-rolled generators for property tests. Each property draws its cases
// from a seeded Gen, so a failure is reproduced by the printed case index.

#include <cstdint>
#include <random>
#include <vector>

#include "revealtoy/image.hpp"
#include "revealtoy/tensor.hpp"

namespace revealtoy::testing {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  std::mt19937_64& rng() { return rng_; }

  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }
  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(rng_); }
  bool coin(double p = 0.5) { return uniform() < p; }

  std::vector<double> uniforms(std::size_t n, double lo = 0.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = uniform(lo, hi);
    return v;
  }

  Tensor normal_tensor(Shape shape, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& x : t.values()) x = scale * normal();
    return t;
  }

  RgbaImage image(std::size_t h, std::size_t w) {
    RgbaImage img(h, w);
    for (double& v : img.values()) v = uniform(-1.0, 1.0);
    return img;
  }

  /// Grid-aligned box inside a canvas of grid_h x grid_w cells.
  BoundingBox grid_box(std::size_t grid_h, std::size_t grid_w, int patch) {
    const int gx0 = integer(0, static_cast<int>(grid_w) - 1);
    const int gy0 = integer(0, static_cast<int>(grid_h) - 1);
    const int gw = integer(1, static_cast<int>(grid_w) - gx0);
    const int gh = integer(1, static_cast<int>(grid_h) - gy0);
    return BoundingBox{gx0 * patch, gy0 * patch, gw * patch, gh * patch};
  }

  std::vector<BoundingBox> grid_boxes(std::size_t n, std::size_t grid_h, std::size_t grid_w, int patch) {
    std::vector<BoundingBox> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(grid_box(grid_h, grid_w, patch));
    return out;
  }

 private:
  std::mt19937_64 rng_;
};

}  // namespace revealtoy::testing
