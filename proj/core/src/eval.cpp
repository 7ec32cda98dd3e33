#include "revealtoy/eval.hpp"

#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "revealtoy/error.hpp"
#include "revealtoy/metrics.hpp"

namespace revealtoy {
namespace {

constexpr const char* kMetricNames[kMetricCount] = {
    "bg_psnr", "bg_ssim",    "fg_psnr",         "fg_soft_iou",    "fg_sad",          "fg_mad",
    "fg_mse",  "texture_bg", "texture_fg",      "texture_bg_true", "texture_fg_true"};

std::vector<double> rgb_at(const RgbaImage& img, std::span<const std::size_t> pixels) {
  std::vector<double> out;
  out.reserve(pixels.size() * 3);
  const auto v = img.values();
  for (std::size_t p : pixels)
    for (std::size_t c = 0; c < 3; ++c) out.push_back(v[p * 4 + c]);
  return out;
}

std::vector<std::size_t> all_pixels(const RgbaImage& img) {
  std::vector<std::size_t> idx(img.pixels());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

double texture(const RgbaImage& img) {
  return texture_logvar_laplacian(luma(img), img.height(), img.width());
}

nlohmann::ordered_json metrics_json(const SceneMetrics& m) {
  nlohmann::ordered_json j;
  for (std::size_t i = 0; i < kMetricCount; ++i) j[kMetricNames[i]] = metric_value(m, i);
  return j;
}

nlohmann::ordered_json section_json(const EvalSection& s) {
  nlohmann::ordered_json scenes = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < s.scenes.size(); ++i) {
    nlohmann::ordered_json row;
    row["index"] = i;
    const nlohmann::ordered_json m = metrics_json(s.scenes[i]);
    for (const auto& [k, v] : m.items()) row[k] = v;
    scenes.push_back(std::move(row));
  }
  nlohmann::ordered_json j;
  j["aggregate"] = metrics_json(s.mean);
  j["scenes"] = std::move(scenes);
  return j;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace

const char* metric_name(std::size_t i) { return kMetricNames[i]; }

double& metric_ref(SceneMetrics& m, std::size_t i) {
  double* fields[kMetricCount] = {&m.bg_psnr,    &m.bg_ssim,    &m.fg_psnr,         &m.fg_soft_iou,
                                  &m.fg_sad,     &m.fg_mad,     &m.fg_mse,          &m.texture_bg,
                                  &m.texture_fg, &m.texture_bg_true, &m.texture_fg_true};
  return *fields[i];
}

double metric_value(const SceneMetrics& m, std::size_t i) { return metric_ref(const_cast<SceneMetrics&>(m), i); }

SceneMetrics mean_metrics(std::span<const SceneMetrics> scenes) {
  SceneMetrics out;
  if (scenes.empty()) return out;
  for (std::size_t f = 0; f < kMetricCount; ++f) {
    double sum = 0.0;
    for (const SceneMetrics& s : scenes) sum += metric_value(s, f);
    metric_ref(out, f) = sum / static_cast<double>(scenes.size());
  }
  return out;
}

SceneMetrics score_prediction(const LayeredScene& truth, const RgbaImage& background, std::span<const RgbaImage> layers,
                              std::span<const BoundingBox> boxes) {
  const std::size_t H = truth.height(), W = truth.width();
  if (!background.same_size(truth.background)) throw ShapeError("score_prediction: background size mismatch");
  if (layers.size() != truth.layer_count() || boxes.size() != layers.size()) {
    throw ShapeError("score_prediction: expected " + std::to_string(truth.layer_count()) + " layers");
  }
  SceneMetrics m;
  const auto every = all_pixels(background);
  m.bg_psnr = psnr(rgb_at(background, every), rgb_at(truth.background, every));
  m.bg_ssim = ssim(luma(background), luma(truth.background), H, W);
  m.texture_bg = texture(background);
  m.texture_bg_true = texture(truth.background);

  const double n = static_cast<double>(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const RgbaImage pred = place_on_canvas(layers[i], boxes[i], H, W);
    const RgbaImage gt = gray_background_convert(truth.foregrounds[i]);
    const auto region = box_pixels(truth.boxes[i], W);
    m.fg_psnr += psnr(rgb_at(pred, region), rgb_at(gt, region)) / n;
    const auto a_pred = unit_alpha_map(pred);
    const auto a_true = unit_alpha_map(gt);
    m.fg_soft_iou += soft_iou(a_pred, a_true) / n;
    const MattingErrors e = matting_errors(a_pred, a_true);
    m.fg_sad += e.sad / n;
    m.fg_mad += e.mad / n;
    m.fg_mse += e.mse / n;
    m.texture_fg += texture(pred) / n;
    m.texture_fg_true += texture(gt) / n;
  }
  return m;
}

std::uint64_t eval_scene_seed(std::uint64_t seed, std::size_t index) { return derive_scene_seed(seed, index); }

SceneMetrics evaluate_scene(const ModelParams& params, const LayeredScene& scene, std::span<const BoundingBox> boxes,
                            std::size_t index, const EvalOptions& opts) {
  SampleOptions so;
  so.steps = opts.steps;
  so.seed = eval_scene_seed(opts.seed, index);
  so.shared_noise = opts.shared_noise;
  const SampleResult r = sample_euler(params, scene.composite, boxes, so);
  return score_prediction(scene, r.background, r.layers, r.boxes);
}

EvalSection evaluate(const ModelParams& params, std::span<const LayeredScene> scenes, const EvalOptions& opts) {
  EvalSection s;
  for (std::size_t i = 0; i < scenes.size(); ++i)
    s.scenes.push_back(evaluate_scene(params, scenes[i], scenes[i].boxes, i, opts));
  s.mean = mean_metrics(s.scenes);
  return s;
}

std::vector<RobustnessVariant> robustness_variants() {
  return {{"precise", true, Perturbation::offset, 0.0, 0.0},
          {"excessive 10-20%", false, Perturbation::excessive, 0.10, 0.20},
          {"offset 0-5%", false, Perturbation::offset, 0.0, 0.05},
          {"offset 5-10%", false, Perturbation::offset, 0.05, 0.10},
          {"inadequate 0-5%", false, Perturbation::inadequate, 0.0, 0.05},
          {"inadequate 5-10%", false, Perturbation::inadequate, 0.05, 0.10}};
}

std::vector<RobustnessRow> robustness_sweep(const ModelParams& params, std::span<const LayeredScene> scenes,
                                            const EvalOptions& opts) {
  std::vector<RobustnessRow> rows;
  const auto variants = robustness_variants();
  for (std::size_t v = 0; v < variants.size(); ++v) {
    RobustnessRow row{variants[v], {}};
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      const LayeredScene& scene = scenes[i];
      std::vector<BoundingBox> boxes = scene.boxes;
      if (!row.variant.precise) {
        std::mt19937_64 rng(derive_scene_seed(derive_scene_seed(opts.seed, 0x5eed0000 + v), i));
        boxes = perturb_boxes(scene.boxes, row.variant.kind, row.variant.lo, row.variant.hi, rng, scene.width(),
                              scene.height(), static_cast<int>(params.config().patch));
      }
      // scene boxes are grid-aligned already
      for (std::size_t b = 0; b < boxes.size(); ++b) {
        const BoundingBox &s = scene.boxes[b], &q = boxes[b];
        row.boxes_moved += q.x != s.x || q.y != s.y || q.w != s.w || q.h != s.h;
        ++row.boxes_total;
      }
      row.result.scenes.push_back(evaluate_scene(params, scene, boxes, i, opts));
    }
    row.result.mean = mean_metrics(row.result.scenes);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<double> orth_trajectory(const ModelParams& params, const LayeredScene& scene, std::size_t steps,
                                    std::uint64_t seed, const LossConfig& loss_cfg) {
  const ModelConfig& cfg = params.config();
  const SequenceData seq = build_sequence(scene, cfg.patch, cfg.text_tokens);
  const Tensor z_data = seq.stacked_latents();
  std::vector<double> series;
  series.reserve(steps);
  SampleOptions so;
  so.steps = steps;
  so.seed = seed;
  sample_euler(params, scene.composite, scene.boxes, so,
               [&](std::size_t, double t, const Tensor& z_t, const Tensor& v_hat) {
                 series.push_back(latent_orth_loss(seq.layout, clean_estimate(z_t, v_hat, t), z_data, loss_cfg));
               });
  return series;
}

std::string report_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["checkpoint"] = report.checkpoint;
  j["seed"] = report.seed;
  j["steps"] = report.steps;
  j["evaluation"] = section_json(report.plain);
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const RobustnessRow& r : report.robustness) {
    nlohmann::ordered_json row;
    row["variant"] = r.variant.name;
    row["kind"] = r.variant.precise ? "precise" : perturbation_name(r.variant.kind);
    row["lo"] = r.variant.lo;
    row["hi"] = r.variant.hi;
    row["boxes_moved"] = r.boxes_moved;
    row["boxes_total"] = r.boxes_total;
    const nlohmann::ordered_json sec = section_json(r.result);
    for (const auto& [k, v] : sec.items()) row[k] = v;
    rows.push_back(std::move(row));
  }
  j["robustness"] = std::move(rows);
  j["orth_trajectory"] = report.orth_trajectory;
  return j.dump(2) + "\n";
}

std::string report_markdown(const EvalReport& report) {
  std::ostringstream os;
  os << "# Evaluation\n\n"
     << "checkpoint `" << report.checkpoint << "`, seed " << report.seed << ", " << report.steps << " steps, "
     << report.plain.scenes.size() << " scenes\n\n";
  auto header = [&](const char* first) {
    os << "| " << first << " | bg PSNR | bg SSIM | fg PSNR | SoftIoU | SAD | MAD | MSE |\n"
       << "|---|---|---|---|---|---|---|---|\n";
  };
  auto line = [&](const std::string& label, const SceneMetrics& m) {
    os << "| " << label << " | " << fixed(m.bg_psnr, 2) << " | " << fixed(m.bg_ssim, 4) << " | "
       << fixed(m.fg_psnr, 2) << " | " << fixed(m.fg_soft_iou, 4) << " | " << fixed(m.fg_sad, 4) << " | "
       << fixed(m.fg_mad, 4) << " | " << fixed(m.fg_mse, 4) << " |\n";
  };
  header("set");
  line("all", report.plain.mean);
  if (!report.robustness.empty()) {
    os << "\n## Box robustness\n\n";
    header("variant");
    for (const RobustnessRow& r : report.robustness) line(r.variant.name, r.result.mean);
  }
  const SceneMetrics& m = report.plain.mean;
  os << "\n## Texture (log-variance of Laplacian)\n\n"
     << "| layer | predicted | ground truth |\n|---|---|---|\n"
     << "| background | " << fixed(m.texture_bg, 3) << " | " << fixed(m.texture_bg_true, 3) << " |\n"
     << "| foreground | " << fixed(m.texture_fg, 3) << " | " << fixed(m.texture_fg_true, 3) << " |\n";
  if (!report.orth_trajectory.empty()) {
    os << "\n## Orthogonality loss per step\n\n";
    for (std::size_t i = 0; i < report.orth_trajectory.size(); ++i)
      os << (i ? ", " : "") << fixed(report.orth_trajectory[i], 4);
    os << "\n";
  }
  return os.str();
}

}  // namespace revealtoy
