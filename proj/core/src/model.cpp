#include "revealtoy/model.hpp"

#include <cmath>

#include "revealtoy/error.hpp"

namespace revealtoy {
namespace {

const char* const kStreams[2] = {"ctx", "lat"};

std::string block_prefix(std::size_t b) { return "blocks." + std::to_string(b) + "."; }

Var linear(const Var& x, const ModelParams& p, const std::string& name) {
  return ops::add_row(ops::matmul(x, p[name + ".w"]), p[name + ".b"]);
}

// LN(x) * (1 + scale) + shift
Var modulate(const Var& x, const Var& shift, const Var& scale) {
  return ops::add_row(ops::mul_row(ops::layer_norm(x), ops::add_scalar(scale, 1.0)), shift);
}

struct Modulation {
  Var shift1, scale1, gate1, shift2, scale2, gate2;
};

Modulation split_modulation(const Var& mod, std::size_t d) {
  auto part = [&](std::size_t k) { return ops::slice_cols(mod, k * d, (k + 1) * d); };
  return {part(0), part(1), part(2), part(3), part(4), part(5)};
}

}  // namespace

void ModelConfig::validate() const {
  if (heads == 0 || width % heads) throw ValidationError("heads", "width must be divisible by heads");
  if (rope.total() != head_dim()) throw ValidationError("rope", "rope split must sum to the head dim");
  if (rope.layer % 2 || rope.y % 2 || rope.x % 2) throw ValidationError("rope", "rope groups must be even");
  if (blocks == 0) throw ValidationError("blocks", "at least one block required");
  if (mlp_ratio == 0) throw ValidationError("mlp_ratio", "must be positive");
  if (patch == 0 || canvas % patch) throw ValidationError("patch", "canvas must be divisible by the patch");
}

const Var& ModelParams::operator[](const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("missing parameter '" + name + "'");
  return it->second;
}

void ModelParams::set(const std::string& name, Tensor value) {
  if (!value.all_finite()) throw NumericError("parameter '" + name + "' has non-finite values");
  params_[name] = parameter(std::move(value));
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, v] : params_) n += v->value.size();
  return n;
}

std::map<std::string, Shape> ModelParams::layout_for(const ModelConfig& cfg) {
  const std::size_t D = cfg.width, C = cfg.token_dim(), H = cfg.mlp_ratio * cfg.width;
  std::map<std::string, Shape> m;
  auto lin = [&](const std::string& name, std::size_t in, std::size_t out) {
    m[name + ".w"] = {in, out};
    m[name + ".b"] = {out};
  };
  m["text_emb"] = {cfg.text_tokens, D};
  m["layer_emb"] = {2, D};
  lin("cond_in", C, D);
  lin("latent_in", C, D);
  lin("time.fc1", D, D);
  lin("time.fc2", D, D);
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const std::string pre = block_prefix(b);
    for (const char* s : kStreams) {
      const std::string sp = pre + s;
      lin(sp + ".mod", D, 6 * D);
      lin(sp + ".qkv", D, 3 * D);
      lin(sp + ".out", D, D);
      lin(sp + ".mlp1", D, H);
      lin(sp + ".mlp2", H, D);
    }
    if (cfg.use_oga) {
      for (const char* n : {"q", "k", "v", "out"}) lin(pre + "oga." + n, D, D);
    }
  }
  lin("head.mod", D, 2 * D);
  lin("head.proj", D, C);
  return m;
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed, double std, bool zero_gates) {
  cfg.validate();
  ModelParams params(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const auto& [name, shape] : ModelParams::layout_for(cfg)) {
    Tensor t(shape);
    const bool is_bias = name.size() > 2 && name.ends_with(".b");
    const bool gate = name.find(".mod.") != std::string::npos || name.find("oga.out.") != std::string::npos ||
                      name.starts_with("head.proj.");
    double sigma;
    if (zero_gates && gate) {
      sigma = 0.0;
    } else if (name == "text_emb" || name == "layer_emb") {
      sigma = 1.0;
    } else if (is_bias) {
      sigma = zero_gates ? 0.0 : std;
    } else {
      sigma = 1.0 / std::sqrt(static_cast<double>(shape[0]));
    }
    // Draw unconditionally so every parameter's stream position is stable.
    for (double& v : t.values()) v = sigma * normal(rng);
    params.set(name, std::move(t));
  }
  return params;
}

PreparedLayout prepare_layout(const ModelConfig& cfg, TokenLayout layout) {
  cfg.validate();
  if (layout.patch != cfg.patch || layout.height != cfg.canvas || layout.width != cfg.canvas ||
      layout.text().size() != cfg.text_tokens) {
    throw ValidationError("layout", "layout does not match the model configuration");
  }
  AttentionMask attention = cfg.use_raa ? build_raa_mask(layout) : build_dense_mask(layout);
  RegionMasks regions = build_oga_masks(layout.boxes, layout.grid_h, layout.grid_w, layout.patch);
  OgaMask oga = build_oga_attention_mask(layout, regions);
  RopeTable rope(layout.positions, cfg.rope, cfg.rope_base);
  RopeTable rope_latent = rope.rows(layout.latent_begin(), layout.length());
  RopeTable rope_cond = rope.rows(layout.cond().begin, layout.cond().end);
  return PreparedLayout{std::move(layout), std::move(attention), std::move(regions), std::move(oga),
                        std::move(rope), std::move(rope_latent), std::move(rope_cond)};
}

Tensor timestep_features(double t, std::size_t dim) {
  Tensor f({1, dim});
  const std::size_t half = dim / 2;
  for (std::size_t k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
    f[k] = std::cos(1000.0 * t * freq);
    f[k + half] = std::sin(1000.0 * t * freq);
  }
  return f;
}

Var forward(const ModelParams& params, const PreparedLayout& prep, const Tensor& cond_tokens,
            const Var& noisy_latents, double t, const ForwardOptions& opts) {
  const ModelConfig& cfg = params.config();
  const TokenLayout& lay = prep.layout;
  const std::size_t D = cfg.width, C = cfg.token_dim();
  const std::size_t n_ctx = lay.latent_begin();
  const std::size_t n_lat = lay.latent_count();
  const std::size_t K = lay.text().size();
  const std::size_t G = lay.grid_cells();
  if (cond_tokens.rows() != G || cond_tokens.cols() != C) {
    throw ShapeError("forward: condition tokens " + shape_str(cond_tokens.shape()) + " do not match the layout");
  }
  if (noisy_latents->value.rows() != n_lat || noisy_latents->value.cols() != C) {
    throw ShapeError("forward: latent tokens " + shape_str(noisy_latents->value.shape()) +
                     " do not match the layout");
  }

  // Timestep conditioning vector, shared by every block.
  Var temb = constant(timestep_features(t, D));
  Var cvec = linear(ops::silu(linear(temb, params, "time.fc1")), params, "time.fc2");
  Var cact = ops::silu(cvec);

  // Streams: context = [TEXT | COND], latent = [BG | FG...].
  Var cond_x = linear(constant(cond_tokens), params, "cond_in");
  const Var parts_ctx[2] = {params["text_emb"], cond_x};
  Var x_ctx = ops::concat_rows(parts_ctx);
  std::vector<std::size_t> layer_ids(n_lat, 1);
  for (std::size_t r = 0; r < lay.background().size(); ++r) layer_ids[r] = 0;
  Var x_lat = ops::add(linear(noisy_latents, params, "latent_in"), ops::gather_rows(params["layer_emb"], layer_ids));

  std::vector<std::size_t> active_rows;
  std::vector<std::size_t> scatter;
  Tensor oga_bias;
  if (cfg.use_oga) {
    active_rows = prep.oga.active_rows();
    scatter.assign(n_lat, active_rows.size());  // index of the zero row
    for (std::size_t i = 0; i < active_rows.size(); ++i) scatter[active_rows[i]] = i;
    oga_bias = Tensor({active_rows.size(), G});
    for (std::size_t i = 0; i < active_rows.size(); ++i)
      std::copy_n(prep.oga.bias.data() + active_rows[i] * G, G, oga_bias.data() + i * G);
  }
  RopeTable rope_active = cfg.use_oga && !active_rows.empty() ? [&] {
    std::vector<TokenPosition> pos;
    for (std::size_t r : active_rows) pos.push_back(lay.positions[n_ctx + r]);
    return RopeTable(pos, cfg.rope, cfg.rope_base);
  }() : prep.rope_latent;

  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const std::string pre = block_prefix(b);
    Var* xs[2] = {&x_ctx, &x_lat};
    Modulation mod[2];
    Var q[2], k[2], v[2];
    for (int s = 0; s < 2; ++s) {
      const std::string sp = pre + kStreams[s];
      mod[s] = split_modulation(linear(cact, params, sp + ".mod"), D);
      Var h = modulate(*xs[s], mod[s].shift1, mod[s].scale1);
      Var qkv = linear(h, params, sp + ".qkv");
      q[s] = ops::slice_cols(qkv, 0, D);
      k[s] = ops::slice_cols(qkv, D, 2 * D);
      v[s] = ops::slice_cols(qkv, 2 * D, 3 * D);
    }
    Var Q = apply_rope(ops::concat_rows(q), prep.rope);
    Var Kt = apply_rope(ops::concat_rows(k), prep.rope);
    Var V = ops::concat_rows(v);
    Var O = masked_attention(Q, Kt, V, prep.attention.bias, cfg.heads);
    for (int s = 0; s < 2; ++s) {
      const std::string sp = pre + kStreams[s];
      Var os = s == 0 ? ops::slice_rows(O, 0, n_ctx) : ops::slice_rows(O, n_ctx, n_ctx + n_lat);
      *xs[s] = ops::add(*xs[s], ops::mul_row(linear(os, params, sp + ".out"), mod[s].gate1));
      Var h = modulate(*xs[s], mod[s].shift2, mod[s].scale2);
      Var m = linear(ops::silu(linear(h, params, sp + ".mlp1")), params, sp + ".mlp2");
      *xs[s] = ops::add(*xs[s], ops::mul_row(m, mod[s].gate2));
    }

    if (cfg.use_oga && !active_rows.empty()) {
      // Occlusion-guided cross-attention from latent tokens onto their
      // exclusively visible condition tokens.
      Var cond_feat = ops::layer_norm(ops::slice_rows(x_ctx, K, K + G));
      Var lat_feat = ops::layer_norm(ops::gather_rows(x_lat, active_rows));
      Var oq = apply_rope(linear(lat_feat, params, pre + "oga.q"), rope_active);
      Var ok = apply_rope(linear(cond_feat, params, pre + "oga.k"), prep.rope_cond);
      Var ov = linear(cond_feat, params, pre + "oga.v");
      Var delta = linear(masked_attention(oq, ok, ov, oga_bias, cfg.heads), params, pre + "oga.out");
      const Var padded_parts[2] = {delta, constant(Tensor({1, D}))};
      Var padded = ops::concat_rows(padded_parts);
      x_lat = ops::add(x_lat, ops::gather_rows(padded, scatter));
    }
  }

  Var head_mod = linear(cact, params, "head.mod");
  Var h = modulate(x_lat, ops::slice_cols(head_mod, 0, D), ops::slice_cols(head_mod, D, 2 * D));
  if (opts.pre_head) *opts.pre_head = x_lat;
  return linear(h, params, "head.proj");
}

}  // namespace revealtoy
