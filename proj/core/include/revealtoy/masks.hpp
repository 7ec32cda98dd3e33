#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "revealtoy/autodiff.hpp"
#include "revealtoy/codec.hpp"

namespace revealtoy {

/// Additive L x L attention bias with entries in {0, kBlocked}.
struct AttentionMask {
  Tensor bias;

  std::size_t size() const noexcept { return bias.rows(); }
  bool allowed(std::size_t q, std::size_t k) const { return bias.at(q, k) == 0.0; }
};

/// Region-aware mask. A key is visible iff it is a text token, or the query is
/// a text/background token, or both are condition tokens, or the query is in
/// FG(i) and the key is in FG(i) or in R_i (condition tokens inside box i).
AttentionMask build_raa_mask(const TokenLayout& layout);

/// Everything visible; used for the no-RAA ablation.
AttentionMask build_dense_mask(const TokenLayout& layout);

/// Per-layer patch-grid masks M_0..M_N and per-foreground region sets R_i.
struct RegionMasks {
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  /// oga[i][cell] is 1 iff the cell belongs to M_i; oga[0] is the background.
  std::vector<std::vector<std::uint8_t>> oga;
  /// region_cells[i] lists the grid cells (= indices inside the COND segment)
  /// covered by box i; entry 0 is empty.
  std::vector<std::vector<std::size_t>> region_cells;

  std::size_t layers() const noexcept { return oga.size(); }
  bool empty(std::size_t layer) const;
};

/// M_0 = 1 - U_j B_j;  M_i = B_i n (1 - U_{j != i} B_j).
RegionMasks build_oga_masks(std::span<const BoundingBox> boxes, std::size_t grid_h, std::size_t grid_w,
                            std::size_t patch);

/// Cross-attention mask from latent queries (BG then FG tokens) to COND keys.
struct OgaMask {
  Tensor bias;              // [latent_count, G]
  std::vector<bool> skip;   // rows whose layer mask is empty pass through
  std::vector<std::size_t> active_rows() const;
};

OgaMask build_oga_attention_mask(const TokenLayout& layout, const RegionMasks& masks);

/// Plain-text PGM ("P2") rendering: 255 = visible, 0 = blocked.
std::string mask_to_pgm(const Tensor& bias);

/// Multi-head attention softmax(q k^T / sqrt(d) + bias) v with q, k, v of
/// shape [*, heads * d]. Rope, if any, is applied by the caller.
Var masked_attention(const Var& q, const Var& k, const Var& v, const Tensor& bias, std::size_t heads);

}  // namespace revealtoy
