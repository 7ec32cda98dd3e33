#include "revealtoy/codec.hpp"

#include <cmath>
#include <string>

#include "revealtoy/error.hpp"

namespace revealtoy {

Tensor patchify(const RgbaImage& img, std::size_t patch) {
  if (patch == 0 || img.height() % patch || img.width() % patch) {
    throw ShapeError("patchify: " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                     " is not divisible by patch " + std::to_string(patch));
  }
  const std::size_t gh = img.height() / patch, gw = img.width() / patch, ch = token_channels(patch);
  Tensor out({gh * gw, ch});
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx) {
      double* tok = out.data() + (gy * gw + gx) * ch;
      for (std::size_t dy = 0; dy < patch; ++dy)
        for (std::size_t dx = 0; dx < patch; ++dx)
          for (std::size_t c = 0; c < 4; ++c) tok[(dy * patch + dx) * 4 + c] = img(gy * patch + dy, gx * patch + dx, c);
    }
  return out;
}

std::vector<std::size_t> unpatchify_permutation(std::size_t height, std::size_t width, std::size_t patch) {
  if (patch == 0 || height % patch || width % patch) throw ShapeError("unpatchify: indivisible dimensions");
  const std::size_t gw = width / patch, ch = token_channels(patch);
  std::vector<std::size_t> perm(height * width * 4);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < 4; ++c) {
        const std::size_t t = (y / patch) * gw + x / patch;
        perm[(y * width + x) * 4 + c] = t * ch + ((y % patch) * patch + x % patch) * 4 + c;
      }
  return perm;
}

RgbaImage unpatchify(const Tensor& tokens, std::size_t height, std::size_t width, std::size_t patch) {
  const auto perm = unpatchify_permutation(height, width, patch);
  if (tokens.size() != perm.size()) {
    throw ShapeError("unpatchify: " + shape_str(tokens.shape()) + " tokens for a " + std::to_string(height) + "x" +
                     std::to_string(width) + " image");
  }
  std::vector<double> values(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) values[i] = tokens[perm[i]];
  return RgbaImage(height, width, std::move(values));
}

Var decode_tokens(const Var& tokens, std::size_t height, std::size_t width, std::size_t patch) {
  auto perm = unpatchify_permutation(height, width, patch);
  if (tokens->value.size() != perm.size()) throw ShapeError("decode_tokens: token count does not match image size");
  Var flat = ops::reshape(tokens, {tokens->value.size(), 1});
  return ops::reshape(ops::gather_rows(flat, std::move(perm)), {height * width, 4});
}

std::vector<std::size_t> box_cells(const BoundingBox& box, std::size_t grid_w, std::size_t patch) {
  const int p = static_cast<int>(patch);
  if (!box.grid_aligned(p)) throw ShapeError("box_cells: box is not aligned to the patch grid");
  std::vector<std::size_t> cells;
  for (int gy = box.y / p; gy < box.bottom() / p; ++gy)
    for (int gx = box.x / p; gx < box.right() / p; ++gx) cells.push_back(gy * grid_w + gx);
  return cells;
}

Tensor crop_tokens(const Tensor& grid_tokens, const BoundingBox& box, std::size_t grid_w, std::size_t patch) {
  const auto cells = box_cells(box, grid_w, patch);
  const std::size_t ch = grid_tokens.cols();
  Tensor out({cells.size(), ch});
  for (std::size_t r = 0; r < cells.size(); ++r) {
    if (cells[r] >= grid_tokens.rows()) throw ShapeError("crop_tokens: box outside token grid");
    std::copy_n(grid_tokens.data() + cells[r] * ch, ch, out.data() + r * ch);
  }
  return out;
}

TokenLayout build_layout(std::size_t height, std::size_t width, std::size_t patch, std::size_t text_tokens,
                         std::span<const BoundingBox> boxes) {
  if (boxes.empty()) throw ValidationError("boxes", "at least one foreground box is required");
  if (patch == 0 || height % patch || width % patch) {
    throw ValidationError("patch", "canvas is not divisible by the patch size");
  }
  const int p = static_cast<int>(patch);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (!boxes[i].inside(width, height)) {
      throw ValidationError("boxes[" + std::to_string(i) + "]", "box outside canvas");
    }
    if (!boxes[i].grid_aligned(p)) {
      throw ValidationError("boxes[" + std::to_string(i) + "]", "box not snapped to the patch grid");
    }
  }
  TokenLayout lay;
  lay.height = height;
  lay.width = width;
  lay.patch = patch;
  lay.grid_h = height / patch;
  lay.grid_w = width / patch;
  lay.token_dim = token_channels(patch);
  lay.boxes.assign(boxes.begin(), boxes.end());

  auto push_grid = [&](Role role, std::size_t layer, int axis_layer) {
    const std::size_t begin = lay.positions.size();
    for (std::size_t gy = 0; gy < lay.grid_h; ++gy)
      for (std::size_t gx = 0; gx < lay.grid_w; ++gx) {
        lay.positions.push_back({axis_layer, static_cast<int>(gy), static_cast<int>(gx)});
        lay.cells.push_back(static_cast<long>(gy * lay.grid_w + gx));
      }
    lay.segments.push_back({role, layer, begin, lay.positions.size()});
  };

  for (std::size_t k = 0; k < text_tokens; ++k) {
    lay.positions.push_back({0, 0, static_cast<int>(k)});
    lay.cells.push_back(-1);
  }
  lay.segments.push_back({Role::text, 0, 0, text_tokens});
  push_grid(Role::cond, 0, 1);
  push_grid(Role::background, 0, 2);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const std::size_t begin = lay.positions.size();
    for (std::size_t cell : box_cells(boxes[i], lay.grid_w, patch)) {
      lay.positions.push_back({static_cast<int>(2 + i + 1), static_cast<int>(cell / lay.grid_w),
                               static_cast<int>(cell % lay.grid_w)});
      lay.cells.push_back(static_cast<long>(cell));
    }
    lay.segments.push_back({Role::foreground, i + 1, begin, lay.positions.size()});
  }
  return lay;
}

Tensor SequenceData::stacked_latents() const {
  std::size_t rows = 0;
  for (const Tensor& t : latents) rows += t.rows();
  const std::size_t ch = layout.token_dim;
  Tensor out({rows, ch});
  std::size_t off = 0;
  for (const Tensor& t : latents) {
    std::copy(t.values().begin(), t.values().end(), out.data() + off);
    off += t.size();
  }
  return out;
}

SequenceData build_sequence(const LayeredScene& scene, std::size_t patch, std::size_t text_tokens) {
  SequenceData seq;
  seq.layout = build_layout(scene.height(), scene.width(), patch, text_tokens, scene.boxes);
  if (scene.foregrounds.size() != scene.boxes.size()) throw ValidationError("foregrounds", "one layer per box required");
  seq.cond = patchify(scene.composite, patch);
  seq.latents.push_back(patchify(scene.background, patch));
  for (std::size_t i = 0; i < scene.foregrounds.size(); ++i) {
    Tensor grid = patchify(gray_background_convert(scene.foregrounds[i]), patch);
    seq.latents.push_back(crop_tokens(grid, scene.boxes[i], seq.layout.grid_w, patch));
  }
  return seq;
}

RopeTable::RopeTable(std::span<const TokenPosition> positions, RopeSplit split, double base)
    : tokens_(positions.size()), head_dim_(split.total()), pairs_(split.total() / 2) {
  if (split.layer % 2 || split.y % 2 || split.x % 2) {
    throw ShapeError("rope: every axis group must have an even width");
  }
  cos_.resize(tokens_ * pairs_);
  sin_.resize(tokens_ * pairs_);
  const std::size_t groups[3] = {split.layer, split.y, split.x};
  for (std::size_t t = 0; t < tokens_; ++t) {
    const int coord[3] = {positions[t].layer, positions[t].y, positions[t].x};
    std::size_t pair = 0;
    for (int axis = 0; axis < 3; ++axis) {
      const std::size_t width = groups[axis];
      for (std::size_t j = 0; j < width / 2; ++j, ++pair) {
        const double freq = std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(width));
        const double angle = coord[axis] * freq;
        cos_[t * pairs_ + pair] = std::cos(angle);
        sin_[t * pairs_ + pair] = std::sin(angle);
      }
    }
  }
}

RopeTable RopeTable::rows(std::size_t begin, std::size_t end) const {
  if (begin > end || end > tokens_) throw ShapeError("rope: row range out of table");
  RopeTable t;
  t.tokens_ = end - begin;
  t.head_dim_ = head_dim_;
  t.pairs_ = pairs_;
  t.cos_.assign(cos_.begin() + begin * pairs_, cos_.begin() + end * pairs_);
  t.sin_.assign(sin_.begin() + begin * pairs_, sin_.begin() + end * pairs_);
  return t;
}

namespace {

// Rotates pairs in place; `sign` = -1 applies the inverse rotation.
void rotate(const RopeTable& table, const double* src, double* dst, std::size_t rows, std::size_t cols, double sign) {
  const std::size_t d = table.head_dim();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t h = 0; h < cols / d; ++h) {
      for (std::size_t k = 0; k < d / 2; ++k) {
        const std::size_t i = r * cols + h * d + 2 * k;
        const double c = table.cos(r, k), s = sign * table.sin(r, k);
        const double a = src[i], b = src[i + 1];
        dst[i] = a * c - b * s;
        dst[i + 1] = a * s + b * c;
      }
    }
  }
}

}  // namespace

Var apply_rope(const Var& x, const RopeTable& table) {
  const std::size_t rows = x->value.rows(), cols = x->value.cols();
  if (rows != table.tokens() || table.head_dim() == 0 || cols % table.head_dim()) {
    throw ShapeError("apply_rope: " + shape_str(x->value.shape()) + " incompatible with table of " +
                     std::to_string(table.tokens()) + " tokens, head dim " + std::to_string(table.head_dim()));
  }
  Tensor y(x->value.shape());
  rotate(table, x->value.data(), y.data(), rows, cols, 1.0);
  return make_op(std::move(y), {x}, "rope", [table, rows, cols](Node& self) {
    Tensor g(self.value.shape());
    rotate(table, self.grad.data(), g.data(), rows, cols, -1.0);
    self.parents[0]->accumulate(g);
  });
}

Tensor apply_rope(const Tensor& x, std::span<const TokenPosition> positions, RopeSplit split, double base) {
  if (x.cols() != split.total()) throw ShapeError("apply_rope: head dim does not match split");
  RopeTable table(positions, split, base);
  NoGradGuard guard;
  return apply_rope(constant(x), table)->value;
}

}  // namespace revealtoy
