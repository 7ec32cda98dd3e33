#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "revealtoy/autodiff.hpp"
#include "revealtoy/image.hpp"
#include "revealtoy/tensor.hpp"

namespace revealtoy {

// ---------------------------------------------------------------------------
// Patchify codec. A token carries one p x p patch, channels ordered
// (dy, dx, rgba), so a token has 4 p^2 values. Tokens are row-major over the
// patch grid. This is an exact, invertible stand-in for a learned encoder.
// ---------------------------------------------------------------------------

inline std::size_t token_channels(std::size_t patch) { return 4 * patch * patch; }

/// [(H/p)(W/p), 4p^2] token grid.
Tensor patchify(const RgbaImage& img, std::size_t patch);
RgbaImage unpatchify(const Tensor& tokens, std::size_t height, std::size_t width, std::size_t patch);

/// For each value of an interleaved h x w x 4 image, the flat index into the
/// token tensor that holds it. Gathering with this permutation decodes tokens.
std::vector<std::size_t> unpatchify_permutation(std::size_t height, std::size_t width, std::size_t patch);

/// Differentiable decode: tokens [T, 4p^2] -> pixels [h*w, 4].
Var decode_tokens(const Var& tokens, std::size_t height, std::size_t width, std::size_t patch);

/// Grid-cell indices (row-major over the canvas grid) covered by a grid-aligned box.
std::vector<std::size_t> box_cells(const BoundingBox& box, std::size_t grid_w, std::size_t patch);

/// Rows of a canvas token grid that fall inside `box`, in box row-major order.
Tensor crop_tokens(const Tensor& grid_tokens, const BoundingBox& box, std::size_t grid_w, std::size_t patch);

// ---------------------------------------------------------------------------
// Unified token sequence.
// ---------------------------------------------------------------------------

enum class Role : std::uint8_t { text, cond, background, foreground };

struct Segment {
  Role role;
  std::size_t layer;  // 0 for background, i >= 1 for FG(i); 0 otherwise
  std::size_t begin;
  std::size_t end;
  std::size_t size() const noexcept { return end - begin; }
};

/// 3-axis token position (layer, y-patch, x-patch).
struct TokenPosition {
  int layer = 0;
  int y = 0;
  int x = 0;
  friend bool operator==(const TokenPosition&, const TokenPosition&) = default;
};

/// Segments are [TEXT | COND | BG | FG(1) ... FG(N)] and partition [0, L).
struct TokenLayout {
  std::vector<Segment> segments;
  std::vector<TokenPosition> positions;
  /// Canvas grid cell of every token; -1 for text tokens.
  std::vector<long> cells;
  std::vector<BoundingBox> boxes;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t patch = 1;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::size_t token_dim = 0;

  std::size_t length() const noexcept { return positions.size(); }
  std::size_t grid_cells() const noexcept { return grid_h * grid_w; }
  std::size_t foreground_count() const noexcept { return segments.size() - 3; }
  const Segment& text() const { return segments[0]; }
  const Segment& cond() const { return segments[1]; }
  const Segment& background() const { return segments[2]; }
  const Segment& foreground(std::size_t i) const { return segments.at(2 + i); }  // i in 1..N
  /// Segment for latent layer i (0 = background).
  const Segment& latent(std::size_t i) const { return segments.at(2 + i); }
  /// First token of the generation targets (BG onward).
  std::size_t latent_begin() const { return background().begin; }
  std::size_t latent_count() const { return length() - latent_begin(); }
};

/// Layout from canvas geometry and grid-snapped boxes.
TokenLayout build_layout(std::size_t height, std::size_t width, std::size_t patch, std::size_t text_tokens,
                         std::span<const BoundingBox> boxes);

/// Token data for a training scene.
struct SequenceData {
  TokenLayout layout;
  Tensor cond;                   // [G, 4p^2]: patchified composite
  std::vector<Tensor> latents;   // [0] background grid, [i] FG(i) crop tokens
  /// All latent tokens stacked in layout order: [latent_count, 4p^2].
  Tensor stacked_latents() const;
};

SequenceData build_sequence(const LayeredScene& scene, std::size_t patch, std::size_t text_tokens);

// ---------------------------------------------------------------------------
// 3-axis rotary embedding.
// ---------------------------------------------------------------------------

struct RopeSplit {
  std::size_t layer = 2;
  std::size_t y = 2;
  std::size_t x = 2;
  std::size_t total() const noexcept { return layer + y + x; }
};

/// Per token and per rotated pair: cos/sin of the rotation angle.
class RopeTable {
 public:
  RopeTable(std::span<const TokenPosition> positions, RopeSplit split, double base = 100.0);

  std::size_t tokens() const noexcept { return tokens_; }
  std::size_t head_dim() const noexcept { return head_dim_; }
  double cos(std::size_t token, std::size_t pair) const { return cos_[token * pairs_ + pair]; }
  double sin(std::size_t token, std::size_t pair) const { return sin_[token * pairs_ + pair]; }
  /// Row subset, for applying to a slice of the sequence.
  RopeTable rows(std::size_t begin, std::size_t end) const;

 private:
  RopeTable() = default;
  std::size_t tokens_ = 0;
  std::size_t head_dim_ = 0;
  std::size_t pairs_ = 0;
  std::vector<double> cos_;
  std::vector<double> sin_;
};

/// Rotates each head_dim chunk of every row; x is [tokens, k * head_dim].
Var apply_rope(const Var& x, const RopeTable& table);
Tensor apply_rope(const Tensor& x, std::span<const TokenPosition> positions, RopeSplit split, double base = 100.0);

}  // namespace revealtoy
