#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "revealtoy/flow.hpp"
#include "revealtoy/sampler.hpp"
#include "revealtoy/scene.hpp"

namespace revealtoy {

/// Metrics of one decomposed scene. Foreground entries average over layers.
struct SceneMetrics {
  double bg_psnr = 0.0;
  double bg_ssim = 0.0;
  double fg_psnr = 0.0;
  double fg_soft_iou = 0.0;
  double fg_sad = 0.0;
  double fg_mad = 0.0;
  double fg_mse = 0.0;
  double texture_bg = 0.0;       // predicted background luma
  double texture_fg = 0.0;       // predicted foregrounds on canvas, mean over layers
  double texture_bg_true = 0.0;
  double texture_fg_true = 0.0;
};

/// Field names in report order, and accessors by index.
inline constexpr std::size_t kMetricCount = 11;
const char* metric_name(std::size_t i);
double& metric_ref(SceneMetrics& m, std::size_t i);
double metric_value(const SceneMetrics& m, std::size_t i);

/// Arithmetic mean over scenes, field by field.
SceneMetrics mean_metrics(std::span<const SceneMetrics> scenes);

/// Scores a prediction against ground truth. `layers[i]` is a crop at `boxes[i]`
/// (gray-converted RGB + alpha, as produced by the sampler).
SceneMetrics score_prediction(const LayeredScene& truth, const RgbaImage& background, std::span<const RgbaImage> layers,
                              std::span<const BoundingBox> boxes);

struct EvalOptions {
  std::size_t steps = 20;
  std::uint64_t seed = 0;
  bool shared_noise = false;
};

/// Sampling seed used for scene `index`.
std::uint64_t eval_scene_seed(std::uint64_t seed, std::size_t index);

/// Decomposes scene `index` from `boxes` and scores it.
SceneMetrics evaluate_scene(const ModelParams& params, const LayeredScene& scene, std::span<const BoundingBox> boxes,
                            std::size_t index, const EvalOptions& opts);

struct EvalSection {
  std::vector<SceneMetrics> scenes;
  SceneMetrics mean;
};

EvalSection evaluate(const ModelParams& params, std::span<const LayeredScene> scenes, const EvalOptions& opts);

/// One row of the box-perturbation sweep; lo == hi == 0 for the precise row.
struct RobustnessVariant {
  std::string name;
  bool precise = true;
  Perturbation kind = Perturbation::offset;
  double lo = 0.0;
  double hi = 0.0;
};
std::vector<RobustnessVariant> robustness_variants();

struct RobustnessRow {
  RobustnessVariant variant;
  EvalSection result;
  // Boxes whose snapped placement differs from the unperturbed snap. Perturbations
  // under half a patch per edge snap back and leave the input unchanged.
  std::size_t boxes_moved = 0;
  std::size_t boxes_total = 0;
};

std::vector<RobustnessRow> robustness_sweep(const ModelParams& params, std::span<const LayeredScene> scenes,
                                            const EvalOptions& opts);

/// Orthogonality loss of the clean estimate against ground truth, per Euler step.
std::vector<double> orth_trajectory(const ModelParams& params, const LayeredScene& scene, std::size_t steps,
                                    std::uint64_t seed, const LossConfig& loss_cfg = {});

struct EvalReport {
  std::string checkpoint;
  std::uint64_t seed = 0;
  std::size_t steps = 0;
  EvalSection plain;
  std::vector<RobustnessRow> robustness;
  std::vector<double> orth_trajectory;
};

std::string report_json(const EvalReport& report);
std::string report_markdown(const EvalReport& report);

}  // namespace revealtoy
