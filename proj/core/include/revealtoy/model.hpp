#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "revealtoy/autodiff.hpp"
#include "revealtoy/codec.hpp"
#include "revealtoy/masks.hpp"

namespace revealtoy {

struct ModelConfig {
  std::size_t width = 64;  // D
  std::size_t heads = 4;
  RopeSplit rope{4, 6, 6};
  double rope_base = 100.0;
  std::size_t blocks = 4;
  std::size_t mlp_ratio = 2;
  std::size_t patch = 2;
  std::size_t text_tokens = 4;
  std::size_t canvas = 32;
  bool use_raa = true;
  bool use_oga = true;

  std::size_t head_dim() const noexcept { return heads ? width / heads : 0; }
  std::size_t token_dim() const noexcept { return token_channels(patch); }
  void validate() const;
};

/// Named parameter store. Names are dotted paths ("blocks.0.ctx.qkv.w").
class ModelParams {
 public:
  ModelParams() = default;
  explicit ModelParams(ModelConfig cfg) : config_(std::move(cfg)) {}

  const ModelConfig& config() const noexcept { return config_; }
  const Var& operator[](const std::string& name) const;
  bool contains(const std::string& name) const { return params_.contains(name); }
  void set(const std::string& name, Tensor value);
  const std::map<std::string, Var>& all() const noexcept { return params_; }
  std::size_t parameter_count() const;
  /// Names and expected shapes of every parameter for `cfg`.
  static std::map<std::string, Shape> layout_for(const ModelConfig& cfg);

 private:
  ModelConfig config_;
  std::map<std::string, Var> params_;
};

/// Random init: weights ~ N(0, std^2), biases and embeddings as noted in the
/// source. `zero_gates` zero-initializes modulation and adapter outputs.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed, double std = 0.02, bool zero_gates = true);

/// Everything that depends only on the layout: masks and rotary tables.
struct PreparedLayout {
  TokenLayout layout;
  AttentionMask attention;
  RegionMasks regions;
  OgaMask oga;
  RopeTable rope;
  RopeTable rope_latent;
  RopeTable rope_cond;
};

PreparedLayout prepare_layout(const ModelConfig& cfg, TokenLayout layout);

struct ForwardOptions {
  /// When set, receives the latent-stream features right before the output head.
  Var* pre_head = nullptr;
};

/// Predicted velocity for every latent token: [latent_count, 4p^2].
Var forward(const ModelParams& params, const PreparedLayout& prep, const Tensor& cond_tokens,
            const Var& noisy_latents, double t, const ForwardOptions& opts = {});

/// Sinusoidal timestep features of width `dim`.
Tensor timestep_features(double t, std::size_t dim);

}  // namespace revealtoy
