#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "revealtoy/image.hpp"

namespace revealtoy {

enum class ShapeKind : std::uint8_t { disk, rectangle, soft_blob };

const char* shape_name(ShapeKind kind);
ShapeKind parse_shape(const std::string& name);

struct GeneratorConfig {
  std::size_t canvas = 32;
  std::size_t patch = 2;
  std::size_t layers_min = 2;
  std::size_t layers_max = 3;
  std::vector<ShapeKind> shapes = {ShapeKind::disk, ShapeKind::rectangle, ShapeKind::soft_blob};
  double occlusion_min_iou = 0.1;
  double occluded_fraction = 0.5;
  std::uint64_t seed = 0;

  /// Throws ValidationError naming the offending field.
  void validate() const;
};

/// Per-layer generator parameters, kept for provenance.
struct ShapeProvenance {
  ShapeKind kind = ShapeKind::disk;
  double cx = 0, cy = 0, rx = 0, ry = 0;
  friend bool operator==(const ShapeProvenance&, const ShapeProvenance&) = default;
};

struct SceneRecord {
  LayeredScene scene;
  std::uint64_t seed = 0;
  std::vector<ShapeProvenance> provenance;
};

/// Seed of scene `index` within a dataset generated from `base_seed`.
std::uint64_t derive_scene_seed(std::uint64_t base_seed, std::uint64_t index);

/// Deterministic in (cfg, seed). Images are on the 8-bit grid.
SceneRecord generate_scene(const GeneratorConfig& cfg, std::uint64_t seed);

/// True iff some layer pair has IoU >= min_iou between masks alpha > 0.
bool occlusion_filter(const LayeredScene& scene, double min_iou);
double mask_iou(const RgbaImage& a, const RgbaImage& b);

/// Mean |composite - background| over RGB of pixels outside every foreground support.
double background_consistency_error(const LayeredScene& scene);
bool consistency_filter(const LayeredScene& scene, double tol);

// ---------------------------------------------------------------------------
// Box perturbations for robustness sweeps.
// ---------------------------------------------------------------------------

enum class Perturbation : std::uint8_t { excessive, offset, inadequate };

const char* perturbation_name(Perturbation kind);

/// Continuous box, before clamping and grid snapping.
struct RectF {
  double x = 0, y = 0, w = 0, h = 0;
};

/// Applies one perturbation with magnitude u; signs pick the offset direction.
RectF perturb_box(const BoundingBox& box, Perturbation kind, double u, int sign_x = 1, int sign_y = 1);

/// Clamps to the canvas and moves each edge to the nearest grid line (exact
/// half-patch ties go outward). Nearest rather than outward snapping keeps
/// sub-patch shrinks and shifts visible: outward snapping would undo every
/// shrink smaller than one patch per side.
/// Returns a zero-area box when nothing of the rectangle stays on the canvas.
BoundingBox clamp_and_snap(const RectF& r, std::size_t width, std::size_t height, int patch);

/// u ~ Uniform(lo, hi) per box (fractions, e.g. 0.05 for 5%).
std::vector<BoundingBox> perturb_boxes(std::span<const BoundingBox> boxes, Perturbation kind, double lo, double hi,
                                       std::mt19937_64& rng, std::size_t width, std::size_t height, int patch);

// ---------------------------------------------------------------------------
// On-disk dataset: <root>/manifest.json and <root>/scene_%06d/.
// ---------------------------------------------------------------------------

inline constexpr int kDatasetFormatVersion = 1;

std::string scene_dir_name(std::size_t index);

void dataset_write(const std::filesystem::path& root, std::span<const SceneRecord> records,
                   const GeneratorConfig& cfg);
std::vector<SceneRecord> dataset_read(const std::filesystem::path& root);
GeneratorConfig dataset_config(const std::filesystem::path& root);

}  // namespace revealtoy
