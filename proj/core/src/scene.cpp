#include "revealtoy/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "json.hpp"
#include "revealtoy/error.hpp"
#include "revealtoy/png_io.hpp"

namespace revealtoy {
namespace {

using nlohmann::json;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::size_t uniform_int(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

struct Rgb {
  double r, g, b;
};

Rgb random_color(std::mt19937_64& rng, double lo, double hi) {
  return {uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi)};
}

RgbaImage make_background(std::size_t s, std::mt19937_64& rng) {
  const Rgb c0 = random_color(rng, -0.8, 0.8), c1 = random_color(rng, -0.8, 0.8), c2 = random_color(rng, -0.8, 0.8);
  const double theta = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double fx = uniform(rng, 0.5, 2.0) * 2.0 * std::numbers::pi / static_cast<double>(s);
  const double fy = uniform(rng, 0.5, 2.0) * 2.0 * std::numbers::pi / static_cast<double>(s);
  const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double mix = uniform(rng, 0.15, 0.4);
  RgbaImage bg(s, s);
  const double half = 0.5 * static_cast<double>(s);
  for (std::size_t y = 0; y < s; ++y) {
    for (std::size_t x = 0; x < s; ++x) {
      const double u = ((x + 0.5 - half) * std::cos(theta) + (y + 0.5 - half) * std::sin(theta)) / s + 0.5;
      const double t = std::clamp(u, 0.0, 1.0);
      const double w = mix * (0.5 + 0.5 * std::sin(fx * x + fy * y + phase));
      auto blend = [&](double a, double b, double c) {
        return std::clamp((1.0 - w) * ((1.0 - t) * a + t * b) + w * c, -1.0, 1.0);
      };
      bg(y, x, 0) = blend(c0.r, c1.r, c2.r);
      bg(y, x, 1) = blend(c0.g, c1.g, c2.g);
      bg(y, x, 2) = blend(c0.b, c1.b, c2.b);
      bg(y, x, 3) = 1.0;
    }
  }
  return quantize_8bit(bg);
}

// Coverage in [0, 1] of the pixel centred at (px, py).
double coverage(const ShapeProvenance& s, double px, double py) {
  const double dx = px - s.cx, dy = py - s.cy;
  switch (s.kind) {
    case ShapeKind::disk: {
      const double d = std::hypot(dx, dy) - s.rx;
      return std::clamp(0.5 - d, 0.0, 1.0);
    }
    case ShapeKind::rectangle: {
      const double d = std::max(std::fabs(dx) - s.rx, std::fabs(dy) - s.ry);
      return std::clamp(0.5 - d, 0.0, 1.0);
    }
    case ShapeKind::soft_blob: {
      // Radial falloff over the outer 40% of an ellipse.
      const double r = std::hypot(dx / s.rx, dy / s.ry);
      const double t = std::clamp((1.0 - r) / 0.4, 0.0, 1.0);
      return t * t * (3.0 - 2.0 * t);
    }
  }
  return 0.0;
}

RgbaImage rasterize(const ShapeProvenance& shape, std::size_t s, std::mt19937_64& rng) {
  const Rgb base = random_color(rng, -0.9, 0.9);
  const double gx = uniform(rng, -0.2, 0.2), gy = uniform(rng, -0.2, 0.2);
  RgbaImage fg(s, s, 0.0);
  for (std::size_t y = 0; y < s; ++y) {
    for (std::size_t x = 0; x < s; ++x) {
      const double a = coverage(shape, x + 0.5, y + 0.5);
      const std::uint8_t code = to_byte(2.0 * a - 1.0);
      fg(y, x, 3) = from_byte(code);
      if (code == 0) continue;
      const double ux = (x + 0.5 - shape.cx) / std::max(1.0, shape.rx);
      const double uy = (y + 0.5 - shape.cy) / std::max(1.0, shape.ry);
      const double shade = gx * ux + gy * uy;
      fg(y, x, 0) = std::clamp(base.r + shade, -1.0, 1.0);
      fg(y, x, 1) = std::clamp(base.g + shade, -1.0, 1.0);
      fg(y, x, 2) = std::clamp(base.b + shade, -1.0, 1.0);
    }
  }
  return quantize_8bit(fg);
}

// Tight bounding box of alpha > -1, or zero-area if empty.
BoundingBox support_box(const RgbaImage& fg) {
  int x0 = static_cast<int>(fg.width()), y0 = static_cast<int>(fg.height()), x1 = -1, y1 = -1;
  for (std::size_t y = 0; y < fg.height(); ++y)
    for (std::size_t x = 0; x < fg.width(); ++x)
      if (fg.alpha(y, x) > -1.0) {
        x0 = std::min(x0, static_cast<int>(x));
        y0 = std::min(y0, static_cast<int>(y));
        x1 = std::max(x1, static_cast<int>(x));
        y1 = std::max(y1, static_cast<int>(y));
      }
  if (x1 < 0) return {};
  return {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

ShapeProvenance random_shape(const GeneratorConfig& cfg, std::mt19937_64& rng, const ShapeProvenance* anchor) {
  const double s = static_cast<double>(cfg.canvas);
  ShapeProvenance shape;
  shape.kind = cfg.shapes[uniform_int(rng, 0, cfg.shapes.size() - 1)];
  shape.rx = uniform(rng, 0.12 * s, 0.28 * s);
  shape.ry = shape.kind == ShapeKind::disk ? shape.rx : uniform(rng, 0.12 * s, 0.28 * s);
  if (anchor) {
    // Overlap an earlier shape: offset below the smaller radius.
    const double reach = 0.6 * std::min({shape.rx, shape.ry, anchor->rx, anchor->ry});
    shape.cx = std::clamp(anchor->cx + uniform(rng, -reach, reach), 0.15 * s, 0.85 * s);
    shape.cy = std::clamp(anchor->cy + uniform(rng, -reach, reach), 0.15 * s, 0.85 * s);
  } else {
    shape.cx = uniform(rng, 0.2 * s, 0.8 * s);
    shape.cy = uniform(rng, 0.2 * s, 0.8 * s);
  }
  return shape;
}

json config_to_json(const GeneratorConfig& cfg) {
  json shapes = json::array();
  for (ShapeKind k : cfg.shapes) shapes.push_back(shape_name(k));
  return json{{"canvas", cfg.canvas},
              {"patch", cfg.patch},
              {"layers_min", cfg.layers_min},
              {"layers_max", cfg.layers_max},
              {"shapes", shapes},
              {"occlusion_min_iou", cfg.occlusion_min_iou},
              {"occluded_fraction", cfg.occluded_fraction},
              {"seed", cfg.seed}};
}

GeneratorConfig config_from_json(const json& j) {
  GeneratorConfig cfg;
  cfg.canvas = j.at("canvas").get<std::size_t>();
  cfg.patch = j.value("patch", cfg.patch);
  cfg.layers_min = j.at("layers_min").get<std::size_t>();
  cfg.layers_max = j.at("layers_max").get<std::size_t>();
  cfg.shapes.clear();
  for (const auto& s : j.at("shapes")) cfg.shapes.push_back(parse_shape(s.get<std::string>()));
  cfg.occlusion_min_iou = j.at("occlusion_min_iou").get<double>();
  cfg.occluded_fraction = j.at("occluded_fraction").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

json read_json(const std::filesystem::path& path, const std::string& scene) {
  std::ifstream in(path);
  if (!in) throw DatasetError(scene, "missing " + path.filename().string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DatasetError(scene, "corrupt " + path.filename().string() + ": " + e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace

const char* shape_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::disk: return "disk";
    case ShapeKind::rectangle: return "rectangle";
    case ShapeKind::soft_blob: return "soft-blob";
  }
  return "?";
}

ShapeKind parse_shape(const std::string& name) {
  if (name == "disk") return ShapeKind::disk;
  if (name == "rectangle") return ShapeKind::rectangle;
  if (name == "soft-blob") return ShapeKind::soft_blob;
  throw ValidationError("shapes", "unknown shape '" + name + "'");
}

void GeneratorConfig::validate() const {
  if (canvas < 8) throw ValidationError("canvas", "canvas must be at least 8 pixels");
  if (patch == 0 || canvas % patch) throw ValidationError("patch", "canvas must be divisible by the patch size");
  if (layers_min < 1) throw ValidationError("layers_min", "at least one layer is required");
  if (layers_max < layers_min) throw ValidationError("layers_max", "layers_max < layers_min");
  if (layers_max > 8) throw ValidationError("layers_max", "at most eight layers are supported");
  if (shapes.empty()) throw ValidationError("shapes", "no shape kinds enabled");
  if (!(occlusion_min_iou >= 0.0 && occlusion_min_iou < 1.0)) {
    throw ValidationError("occlusion_min_iou", "must lie in [0, 1)");
  }
  if (!(occluded_fraction >= 0.0 && occluded_fraction <= 1.0)) {
    throw ValidationError("occluded_fraction", "must lie in [0, 1]");
  }
}

std::uint64_t derive_scene_seed(std::uint64_t base_seed, std::uint64_t index) {
  // splitmix64 finalizer over (base, index)
  std::uint64_t z = base_seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

SceneRecord generate_scene(const GeneratorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const std::size_t s = cfg.canvas;
  SceneRecord rec;
  rec.seed = seed;
  rec.scene.background = make_background(s, rng);
  const std::size_t n = uniform_int(rng, cfg.layers_min, cfg.layers_max);
  const bool want_occlusion = n >= 2 && uniform(rng, 0.0, 1.0) < cfg.occluded_fraction;

  constexpr int kMaxAttempts = 200;
  for (int attempt = 0;; ++attempt) {
    if (attempt == kMaxAttempts) throw Error("generate_scene: could not satisfy the occlusion requirement");
    std::vector<ShapeProvenance> shapes;
    std::vector<RgbaImage> layers;
    std::vector<BoundingBox> boxes;
    while (layers.size() < n) {
      const ShapeProvenance* anchor = nullptr;
      if (want_occlusion && !shapes.empty() && (shapes.size() == 1 || uniform(rng, 0.0, 1.0) < 0.5)) {
        anchor = &shapes[uniform_int(rng, 0, shapes.size() - 1)];
      }
      ShapeProvenance shape = random_shape(cfg, rng, anchor);
      RgbaImage fg = rasterize(shape, s, rng);
      const BoundingBox tight = support_box(fg);
      if (tight.w == 0) continue;  // degenerate, draw again
      shapes.push_back(shape);
      layers.push_back(std::move(fg));
      boxes.push_back(snap_outward(tight, static_cast<int>(cfg.patch), s, s));
    }
    rec.scene.foregrounds = std::move(layers);
    rec.scene.boxes = std::move(boxes);
    rec.provenance = std::move(shapes);
    if (!want_occlusion || occlusion_filter(rec.scene, cfg.occlusion_min_iou)) break;
  }
  rec.scene.composite = quantize_8bit(composite_layers(rec.scene.background, rec.scene.foregrounds));
  validate_scene(rec.scene, 1.0 / 255.0 + 1e-9);
  return rec;
}

double mask_iou(const RgbaImage& a, const RgbaImage& b) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t y = 0; y < a.height(); ++y)
    for (std::size_t x = 0; x < a.width(); ++x) {
      const bool ma = a.alpha(y, x) > 0.0, mb = b.alpha(y, x) > 0.0;
      inter += ma && mb;
      uni += ma || mb;
    }
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

bool occlusion_filter(const LayeredScene& scene, double min_iou) {
  const auto& fgs = scene.foregrounds;
  for (std::size_t i = 0; i < fgs.size(); ++i)
    for (std::size_t j = i + 1; j < fgs.size(); ++j)
      if (mask_iou(fgs[i], fgs[j]) >= min_iou) return true;
  return false;
}

double background_consistency_error(const LayeredScene& scene) {
  double err = 0.0;
  std::size_t count = 0;
  for (std::size_t y = 0; y < scene.height(); ++y)
    for (std::size_t x = 0; x < scene.width(); ++x) {
      const bool covered = std::any_of(scene.foregrounds.begin(), scene.foregrounds.end(),
                                       [&](const RgbaImage& fg) { return fg.alpha(y, x) > -1.0; });
      if (covered) continue;
      for (std::size_t c = 0; c < 3; ++c) err += std::fabs(scene.composite(y, x, c) - scene.background(y, x, c));
      count += 3;
    }
  return count ? err / static_cast<double>(count) : 0.0;
}

bool consistency_filter(const LayeredScene& scene, double tol) { return background_consistency_error(scene) <= tol; }

const char* perturbation_name(Perturbation kind) {
  switch (kind) {
    case Perturbation::excessive: return "excessive";
    case Perturbation::offset: return "offset";
    case Perturbation::inadequate: return "inadequate";
  }
  return "?";
}

RectF perturb_box(const BoundingBox& box, Perturbation kind, double u, int sign_x, int sign_y) {
  const double cx = box.x + 0.5 * box.w, cy = box.y + 0.5 * box.h;
  switch (kind) {
    case Perturbation::excessive:
    case Perturbation::inadequate: {
      const double k = kind == Perturbation::excessive ? 1.0 + u : 1.0 - u;
      const double w = box.w * k, h = box.h * k;
      return {cx - 0.5 * w, cy - 0.5 * h, w, h};
    }
    case Perturbation::offset:
      return {box.x + sign_x * u * box.w, box.y + sign_y * u * box.h, static_cast<double>(box.w),
              static_cast<double>(box.h)};
  }
  return {};
}

BoundingBox clamp_and_snap(const RectF& r, std::size_t width, std::size_t height, int patch) {
  const double x0 = std::clamp(r.x, 0.0, static_cast<double>(width));
  const double y0 = std::clamp(r.y, 0.0, static_cast<double>(height));
  const double x1 = std::clamp(r.x + r.w, 0.0, static_cast<double>(width));
  const double y1 = std::clamp(r.y + r.h, 0.0, static_cast<double>(height));
  if (x1 - x0 <= 0.0 || y1 - y0 <= 0.0) return {};
  const double p = patch;
  const int sx0 = static_cast<int>(std::ceil(x0 / p - 0.5)) * patch;
  const int sy0 = static_cast<int>(std::ceil(y0 / p - 0.5)) * patch;
  const int sx1 = static_cast<int>(std::floor(x1 / p + 0.5)) * patch;
  const int sy1 = static_cast<int>(std::floor(y1 / p + 0.5)) * patch;
  if (sx1 <= sx0 || sy1 <= sy0) return {};
  return {sx0, sy0, sx1 - sx0, sy1 - sy0};
}

std::vector<BoundingBox> perturb_boxes(std::span<const BoundingBox> boxes, Perturbation kind, double lo, double hi,
                                       std::mt19937_64& rng, std::size_t width, std::size_t height, int patch) {
  if (!(lo >= 0.0 && lo <= hi)) throw ValidationError("range", "perturbation range needs 0 <= lo <= hi");
  std::vector<BoundingBox> out;
  for (const BoundingBox& b : boxes) {
    BoundingBox result;
    int tries = 0;
    do {
      if (tries++ == 8) throw Error("perturb_boxes: box collapsed after 8 redraws");
      const double u = lo == hi ? lo : uniform(rng, lo, hi);
      const int sx = std::bernoulli_distribution(0.5)(rng) ? 1 : -1;
      const int sy = std::bernoulli_distribution(0.5)(rng) ? 1 : -1;
      result = clamp_and_snap(perturb_box(b, kind, u, sx, sy), width, height, patch);
    } while (result.w < patch || result.h < patch);
    out.push_back(result);
  }
  return out;
}

std::string scene_dir_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%06zu", index);
  return buf;
}

void dataset_write(const std::filesystem::path& root, std::span<const SceneRecord> records,
                   const GeneratorConfig& cfg) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec || !fs::is_directory(root)) throw Error("cannot create dataset directory " + root.string());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const SceneRecord& rec = records[i];
    const fs::path dir = root / scene_dir_name(i);
    fs::create_directories(dir, ec);
    if (ec) throw DatasetError(scene_dir_name(i), "cannot create directory");
    write_png(dir / "composite.png", rec.scene.composite);
    write_png(dir / "background.png", rec.scene.background);
    char name[32];
    for (std::size_t k = 0; k < rec.scene.foregrounds.size(); ++k) {
      std::snprintf(name, sizeof(name), "fg_%02zu.png", k);
      write_png(dir / name, rec.scene.foregrounds[k]);
    }
    json boxes = json::array();
    for (const BoundingBox& b : rec.scene.boxes) boxes.push_back({{"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}});
    json prov = json::array();
    for (const ShapeProvenance& p : rec.provenance) {
      prov.push_back({{"kind", shape_name(p.kind)}, {"cx", p.cx}, {"cy", p.cy}, {"rx", p.rx}, {"ry", p.ry}});
    }
    write_text(dir / "scene.json", json{{"boxes", boxes}, {"seed", rec.seed}, {"provenance", prov}}.dump(2) + "\n");
  }
  json manifest{{"count", records.size()},
                {"canvas", cfg.canvas},
                {"config", config_to_json(cfg)},
                {"format_version", kDatasetFormatVersion}};
  write_text(root / "manifest.json", manifest.dump(2) + "\n");
}

GeneratorConfig dataset_config(const std::filesystem::path& root) {
  const json manifest = read_json(root / "manifest.json", "");
  return config_from_json(manifest.at("config"));
}

std::vector<SceneRecord> dataset_read(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  const json manifest = read_json(root / "manifest.json", "");
  if (manifest.value("format_version", 0) != kDatasetFormatVersion) {
    throw DatasetError("", "unsupported dataset format_version");
  }
  const std::size_t count = manifest.at("count").get<std::size_t>();
  std::vector<SceneRecord> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::string id = scene_dir_name(i);
    const fs::path dir = root / id;
    if (!fs::is_directory(dir)) throw DatasetError(id, "missing scene directory");
    auto load = [&](const std::string& file) {
      if (!fs::exists(dir / file)) throw DatasetError(id, "missing " + file);
      try {
        return read_png(dir / file);
      } catch (const DatasetError&) {
        throw;
      } catch (const Error& e) {
        throw DatasetError(id, "corrupt " + file + ": " + e.what());
      }
    };
    SceneRecord rec;
    const json meta = read_json(dir / "scene.json", id);
    rec.scene.composite = load("composite.png");
    rec.scene.background = load("background.png");
    try {
      rec.seed = meta.at("seed").get<std::uint64_t>();
      for (const auto& b : meta.at("boxes")) {
        rec.scene.boxes.push_back({b.at("x").get<int>(), b.at("y").get<int>(), b.at("w").get<int>(), b.at("h").get<int>()});
      }
      if (meta.contains("provenance")) {
        for (const auto& p : meta.at("provenance")) {
          rec.provenance.push_back({parse_shape(p.at("kind").get<std::string>()), p.at("cx").get<double>(),
                                    p.at("cy").get<double>(), p.at("rx").get<double>(), p.at("ry").get<double>()});
        }
      }
    } catch (const json::exception& e) {
      throw DatasetError(id, std::string("corrupt scene.json: ") + e.what());
    }
    char name[32];
    for (std::size_t k = 0; k < rec.scene.boxes.size(); ++k) {
      std::snprintf(name, sizeof(name), "fg_%02zu.png", k);
      rec.scene.foregrounds.push_back(load(name));
    }
    out.push_back(std::move(rec));
  }
  std::size_t dirs = 0;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && entry.path().filename().string().rfind("scene_", 0) == 0) ++dirs;
  }
  if (dirs != count) {
    throw DatasetError("", "manifest lists " + std::to_string(count) + " scenes but found " + std::to_string(dirs));
  }
  return out;
}

}  // namespace revealtoy
