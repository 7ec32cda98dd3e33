#include "revealtoy/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "revealtoy/flow.hpp"
#include "revealtoy/train.hpp"

namespace revealtoy {
namespace {

double rel_error(double g, double fd, double floor) {
  return std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), floor});
}

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  Tensor normal(Shape shape, double stddev = 1.0) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> d(0.0, stddev);
    for (double& v : t.values()) v = d(rng_);
    return t;
  }
  /// Values in [lo, hi] with |v| >= margin, keeping away from kinks at 0.
  Tensor away_from_zero(Shape shape, double lo, double hi, double margin) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> d(lo, hi);
    for (double& v : t.values()) {
      do v = d(rng_);
      while (std::abs(v) < margin);
    }
    return t;
  }
  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

LayeredScene tiny_scene(Sampler& s, std::size_t canvas) {
  LayeredScene scene;
  scene.background = RgbaImage(canvas, canvas);
  std::uniform_real_distribution<double> u(-0.9, 0.9);
  for (std::size_t y = 0; y < canvas; ++y)
    for (std::size_t x = 0; x < canvas; ++x) {
      for (std::size_t c = 0; c < 3; ++c) scene.background(y, x, c) = u(s.rng());
      scene.background(y, x, 3) = 1.0;
    }
  const int n = static_cast<int>(canvas);
  scene.boxes = {{0, 0, n - 1, n - 1}, {1, 1, n - 1, n - 2}};
  for (const BoundingBox& b : scene.boxes) {
    RgbaImage fg(canvas, canvas);
    for (std::size_t y = 0; y < canvas; ++y)
      for (std::size_t x = 0; x < canvas; ++x) {
        const bool in = b.contains(static_cast<int>(x), static_cast<int>(y));
        for (std::size_t c = 0; c < 3; ++c) fg(y, x, c) = in ? u(s.rng()) : 0.0;
        fg(y, x, 3) = in ? u(s.rng()) : -1.0;
      }
    scene.foregrounds.push_back(std::move(fg));
  }
  scene.composite = composite_layers(scene.background, scene.foregrounds);
  return scene;
}

GradCheckResult check_model_loss(std::uint64_t seed) {
  const ModelConfig cfg = gradcheck_model_config();
  ModelParams params = init_params(cfg, seed, 0.3, /*zero_gates=*/false);
  Sampler s(seed + 17);
  const LayeredScene scene = tiny_scene(s, cfg.canvas);
  const SequenceData seq = build_sequence(scene, cfg.patch, cfg.text_tokens);
  const Tensor noise = s.normal(seq.stacked_latents().shape());
  const LossConfig loss_cfg;
  const double t = 0.6;

  GradCheckResult r{"model.total_loss", 0.0, 1e-3, 0};
  backward(evaluate_losses(params, scene, loss_cfg, t, noise).total);
  const double h = 1e-5;
  for (const auto& [name, var] : params.all()) {
    const Tensor grad = var->grad;
    for (std::size_t i = 0; i < var->value.size(); ++i) {
      const double orig = var->value[i];
      double f[2];
      for (int k = 0; k < 2; ++k) {
        var->value[i] = orig + (k == 0 ? h : -h);
        NoGradGuard guard;
        f[k] = evaluate_losses(params, scene, loss_cfg, t, noise).total->value.item();
      }
      var->value[i] = orig;
      const double fd = (f[0] - f[1]) / (2.0 * h);
      r.max_rel_error = std::max(r.max_rel_error, rel_error(grad[i], fd, 1e-6));
      ++r.entries;
    }
  }
  return r;
}

}  // namespace

GradCheckResult check_gradients(const std::string& name, std::vector<Tensor> inputs, const ScalarFn& fn,
                                double tolerance, double h, double floor) {
  std::vector<Var> leaves;
  for (const Tensor& t : inputs) leaves.push_back(parameter(t));
  backward(fn(leaves));

  GradCheckResult r{name, 0.0, tolerance, 0};
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    const Tensor grad = leaves[a]->grad.empty() ? Tensor(inputs[a].shape()) : leaves[a]->grad;
    for (std::size_t i = 0; i < inputs[a].size(); ++i) {
      double f[2];
      for (int k = 0; k < 2; ++k) {
        NoGradGuard guard;
        std::vector<Var> probe;
        for (std::size_t b = 0; b < inputs.size(); ++b) {
          Tensor v = inputs[b];
          if (b == a) v[i] += k == 0 ? h : -h;
          probe.push_back(constant(std::move(v)));
        }
        f[k] = fn(probe)->value.item();
      }
      const double fd = (f[0] - f[1]) / (2.0 * h);
      r.max_rel_error = std::max(r.max_rel_error, rel_error(grad[i], fd, floor));
      ++r.entries;
    }
  }
  return r;
}

ModelConfig gradcheck_model_config() {
  ModelConfig cfg;
  cfg.width = 6;
  cfg.heads = 1;
  cfg.rope = {2, 2, 2};
  cfg.blocks = 1;
  cfg.mlp_ratio = 2;
  cfg.patch = 1;
  cfg.text_tokens = 2;
  cfg.canvas = 4;
  return cfg;
}

std::vector<GradCheckResult> gradcheck_suite(std::uint64_t seed) {
  Sampler s(seed);
  std::vector<GradCheckResult> out;
  const double tol = 1e-4;
  auto run = [&](const std::string& name, std::vector<Tensor> inputs, std::function<Var(std::span<const Var>)> op) {
    // Fixed random weights so that every output entry contributes a distinct amount.
    Tensor w = s.normal({257});
    out.push_back(check_gradients(name, std::move(inputs),
                                  [op, w](std::span<const Var> in) {
                                    Var y = op(in);
                                    Tensor wt(y->value.shape());
                                    for (std::size_t i = 0; i < wt.size(); ++i) wt[i] = w[i % w.size()];
                                    return ops::sum(ops::mul(y, constant(std::move(wt))));
                                  },
                                  tol));
  };

  run("matmul", {s.normal({5, 7}), s.normal({7, 3})}, [](auto in) { return ops::matmul(in[0], in[1]); });
  run("matmul_nt", {s.normal({5, 7}), s.normal({4, 7})}, [](auto in) { return ops::matmul_nt(in[0], in[1]); });
  run("add", {s.normal({3, 4}), s.normal({3, 4})}, [](auto in) { return ops::add(in[0], in[1]); });
  run("sub", {s.normal({3, 4}), s.normal({3, 4})}, [](auto in) { return ops::sub(in[0], in[1]); });
  run("mul", {s.normal({3, 4}), s.normal({3, 4})}, [](auto in) { return ops::mul(in[0], in[1]); });
  run("div", {s.normal({3, 4}), s.away_from_zero({3, 4}, -2.0, 2.0, 0.5)},
      [](auto in) { return ops::div(in[0], in[1]); });
  run("add_row", {s.normal({3, 4}), s.normal({4})}, [](auto in) { return ops::add_row(in[0], in[1]); });
  run("mul_row", {s.normal({3, 4}), s.normal({4})}, [](auto in) { return ops::mul_row(in[0], in[1]); });
  run("mul_col", {s.normal({3, 4}), s.normal({3, 1})}, [](auto in) { return ops::mul_col(in[0], in[1]); });
  run("scale", {s.normal({3, 4})}, [](auto in) { return ops::scale(in[0], -1.7); });
  run("add_scalar", {s.normal({3, 4})}, [](auto in) { return ops::add_scalar(in[0], 0.3); });
  run("silu", {s.normal({3, 4}, 2.0)}, [](auto in) { return ops::silu(in[0]); });
  run("log", {s.away_from_zero({3, 4}, 0.2, 3.0, 0.2)}, [](auto in) { return ops::log(in[0]); });
  run("abs", {s.away_from_zero({3, 4}, -2.0, 2.0, 0.1)}, [](auto in) { return ops::abs(in[0]); });
  run("pow", {s.away_from_zero({3, 4}, 0.1, 2.0, 0.1)}, [](auto in) { return ops::pow(in[0], 1.5); });
  {
    Tensor x = s.away_from_zero({3, 4}, -2.0, 2.0, 0.1);
    for (double& v : x.values())
      if (std::abs(std::abs(v) - 1.0) < 0.05) v *= 1.2;  // stay off the clamp edges
    run("clamp", {x}, [](auto in) { return ops::clamp(in[0], -1.0, 1.0); });
  }
  run("layer_norm", {s.normal({3, 5})}, [](auto in) { return ops::layer_norm(in[0]); });
  run("layer_norm_affine", {s.normal({3, 5}), s.normal({5}), s.normal({5})},
      [](auto in) { return ops::layer_norm(in[0], in[1], in[2]); });
  run("sum", {s.normal({3, 4})}, [](auto in) { return ops::sum(in[0]); });
  run("mean", {s.normal({3, 4})}, [](auto in) { return ops::mean(in[0]); });
  run("sum_cols", {s.normal({3, 4})}, [](auto in) { return ops::sum_cols(in[0]); });
  run("row_norm", {s.normal({3, 4})}, [](auto in) { return ops::row_norm(in[0]); });
  run("concat_rows", {s.normal({2, 3}), s.normal({4, 3})},
      [](auto in) { return ops::concat_rows(std::vector<Var>{in[0], in[1]}); });
  run("concat_cols", {s.normal({3, 2}), s.normal({3, 4})},
      [](auto in) { return ops::concat_cols(std::vector<Var>{in[0], in[1]}); });
  run("slice_rows", {s.normal({5, 3})}, [](auto in) { return ops::slice_rows(in[0], 1, 4); });
  run("slice_cols", {s.normal({3, 5})}, [](auto in) { return ops::slice_cols(in[0], 2, 5); });
  run("reshape", {s.normal({3, 4})}, [](auto in) { return ops::reshape(in[0], {2, 6}); });
  run("transpose", {s.normal({3, 4})}, [](auto in) { return ops::transpose(in[0]); });
  run("gather_rows", {s.normal({4, 3})}, [](auto in) { return ops::gather_rows(in[0], {3, 0, 3, 1}); });
  {
    Tensor bias({4, 8});
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 8; ++c) bias.at(r, c) = (r + c) % 3 == 0 ? ops::kBlocked : 0.0;
    run("softmax_masked", {s.normal({4, 8})}, [bias](auto in) { return ops::softmax_masked(in[0], bias); });
    Tensor attn_bias({4, 8});
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 8; ++c) attn_bias.at(r, c) = (r * 3 + c) % 4 == 1 ? ops::kBlocked : 0.0;
    run("masked_attention", {s.normal({4, 6}), s.normal({8, 6}), s.normal({8, 6})},
        [attn_bias](auto in) { return masked_attention(in[0], in[1], in[2], attn_bias, 2); });
  }
  {
    const std::vector<TokenPosition> pos = {{0, 0, 0}, {1, 2, 3}, {2, 1, 0}, {3, 4, 4}};
    const RopeTable table(pos, RopeSplit{2, 2, 2}, 100.0);
    run("apply_rope", {s.normal({4, 12})}, [table](auto in) { return apply_rope(in[0], table); });
  }
  run("decode_tokens", {s.normal({4, 16})}, [](auto in) { return decode_tokens(in[0], 4, 4, 2); });
  run("mean_cosine", {s.normal({5, 3}), s.normal({5, 3})},
      [](auto in) { return mean_cosine(in[0], in[1], 1e-6); });
  run("fm_loss", {s.normal({3, 4}), s.normal({2, 4})}, [](auto in) {
    static const std::vector<Tensor> target = {Tensor({3, 4}, 0.25), Tensor({2, 4}, -0.5)};
    return fm_loss(std::vector<Var>{in[0], in[1]}, target);
  });
  {
    // Predicted alpha strictly inside (-1, 1) so the clamp is inactive.
    const Tensor target({6, 1}, std::vector<double>{-1.0, 1.0, 0.2, -0.4, 1.0, -1.0});
    run("alpha_loss", {s.away_from_zero({6, 1}, -0.9, 0.9, 0.05)}, [target](auto in) {
      return alpha_loss(std::vector<Var>{in[0]}, std::vector<Tensor>{target}, LossConfig{});
    });
  }
  {
    const Tensor bg_true = s.normal({5, 3}), fg_true = s.normal({5, 3});
    run("orth_loss", {s.normal({5, 3}), s.normal({5, 3})}, [bg_true, fg_true](auto in) {
      const std::vector<OrthPair> pairs = {{in[0], in[1], bg_true, fg_true}};
      return orth_loss(pairs, LossConfig{});
    });
  }
  out.push_back(check_model_loss(seed));
  return out;
}

}  // namespace revealtoy
