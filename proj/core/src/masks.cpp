#include "revealtoy/masks.hpp"

#include <cmath>
#include <sstream>

#include "revealtoy/error.hpp"

namespace revealtoy {

AttentionMask build_raa_mask(const TokenLayout& layout) {
  const std::size_t L = layout.length();
  const std::size_t nfg = layout.foreground_count();
  AttentionMask mask{Tensor({L, L}, ops::kBlocked)};
  const Segment& text = layout.text();
  const Segment& cond = layout.cond();

  auto allow_row_range = [&](std::size_t q, std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) mask.bias.at(q, k) = 0.0;
  };
  for (std::size_t q = 0; q < L; ++q) allow_row_range(q, text.begin, text.end);
  for (std::size_t q = text.begin; q < text.end; ++q) allow_row_range(q, 0, L);
  const Segment& bg = layout.background();
  for (std::size_t q = bg.begin; q < bg.end; ++q) allow_row_range(q, 0, L);
  for (std::size_t q = cond.begin; q < cond.end; ++q) allow_row_range(q, cond.begin, cond.end);
  for (std::size_t i = 1; i <= nfg; ++i) {
    const Segment& fg = layout.foreground(i);
    const auto region = box_cells(layout.boxes[i - 1], layout.grid_w, layout.patch);
    for (std::size_t q = fg.begin; q < fg.end; ++q) {
      allow_row_range(q, fg.begin, fg.end);
      for (std::size_t cell : region) mask.bias.at(q, cond.begin + cell) = 0.0;
    }
  }
  return mask;
}

AttentionMask build_dense_mask(const TokenLayout& layout) {
  const std::size_t L = layout.length();
  return AttentionMask{Tensor({L, L}, 0.0)};
}

bool RegionMasks::empty(std::size_t layer) const {
  for (std::uint8_t v : oga.at(layer))
    if (v) return false;
  return true;
}

RegionMasks build_oga_masks(std::span<const BoundingBox> boxes, std::size_t grid_h, std::size_t grid_w,
                            std::size_t patch) {
  const std::size_t G = grid_h * grid_w;
  RegionMasks out;
  out.grid_h = grid_h;
  out.grid_w = grid_w;
  out.region_cells.emplace_back();
  std::vector<std::uint32_t> cover(G, 0);
  for (const BoundingBox& b : boxes) {
    auto cells = box_cells(b, grid_w, patch);
    for (std::size_t c : cells) {
      if (c >= G) throw ShapeError("build_oga_masks: box outside the grid");
      ++cover[c];
    }
    out.region_cells.push_back(std::move(cells));
  }
  out.oga.assign(boxes.size() + 1, std::vector<std::uint8_t>(G, 0));
  for (std::size_t c = 0; c < G; ++c) out.oga[0][c] = cover[c] == 0;
  for (std::size_t i = 1; i <= boxes.size(); ++i)
    for (std::size_t c : out.region_cells[i]) out.oga[i][c] = cover[c] == 1;
  return out;
}

std::vector<std::size_t> OgaMask::active_rows() const {
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < skip.size(); ++r)
    if (!skip[r]) rows.push_back(r);
  return rows;
}

OgaMask build_oga_attention_mask(const TokenLayout& layout, const RegionMasks& masks) {
  const std::size_t G = layout.grid_cells();
  if (masks.layers() != layout.foreground_count() + 1 || masks.grid_h * masks.grid_w != G) {
    throw ShapeError("build_oga_attention_mask: region masks do not match the layout");
  }
  const std::size_t base = layout.latent_begin();
  OgaMask out{Tensor({layout.latent_count(), G}, ops::kBlocked), std::vector<bool>(layout.latent_count(), false)};
  for (std::size_t layer = 0; layer < masks.layers(); ++layer) {
    const Segment& seg = layout.latent(layer);
    const bool empty = masks.empty(layer);
    for (std::size_t q = seg.begin; q < seg.end; ++q) {
      const std::size_t row = q - base;
      out.skip[row] = empty;
      for (std::size_t c = 0; c < G; ++c)
        if (masks.oga[layer][c]) out.bias.at(row, c) = 0.0;
    }
  }
  return out;
}

std::string mask_to_pgm(const Tensor& bias) {
  std::ostringstream os;
  os << "P2\n" << bias.cols() << ' ' << bias.rows() << "\n255\n";
  for (std::size_t r = 0; r < bias.rows(); ++r) {
    for (std::size_t c = 0; c < bias.cols(); ++c) {
      if (c) os << ' ';
      os << (bias.at(r, c) == 0.0 ? 255 : 0);
    }
    os << '\n';
  }
  return os.str();
}

Var masked_attention(const Var& q, const Var& k, const Var& v, const Tensor& bias, std::size_t heads) {
  const std::size_t width = q->value.cols();
  if (heads == 0 || width % heads || k->value.cols() != width || v->value.cols() != width ||
      k->value.rows() != v->value.rows()) {
    throw ShapeError("masked_attention: incompatible q/k/v shapes");
  }
  if (bias.rows() != q->value.rows() || bias.cols() != k->value.rows()) {
    throw ShapeError("masked_attention: bias " + shape_str(bias.shape()) + " does not match attention shape");
  }
  const std::size_t d = width / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = heads == 1 ? q : ops::slice_cols(q, h * d, (h + 1) * d);
    Var kh = heads == 1 ? k : ops::slice_cols(k, h * d, (h + 1) * d);
    Var vh = heads == 1 ? v : ops::slice_cols(v, h * d, (h + 1) * d);
    Var logits = ops::matmul_nt(ops::scale(qh, inv_sqrt_d), kh);
    outs.push_back(ops::matmul(ops::softmax_masked(logits, bias), vh));
  }
  return heads == 1 ? outs[0] : ops::concat_cols(outs);
}

}  // namespace revealtoy
