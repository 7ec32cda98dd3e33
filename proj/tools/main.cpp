// revealtoy: data generation, training, decomposition, evaluation and serving.

#include <spdlog/spdlog.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "httplib.h"
#include "json.hpp"
#include "revealtoy/checkpoint.hpp"
#include "revealtoy/error.hpp"
#include "revealtoy/eval.hpp"
#include "revealtoy/gradcheck.hpp"
#include "revealtoy/png_io.hpp"
#include "revealtoy/sampler.hpp"
#include "revealtoy/scene.hpp"
#include "revealtoy/train.hpp"
#include "service.hpp"

namespace fs = std::filesystem;
using namespace revealtoy;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void configure_logging() {
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  const char* level = std::getenv("REVEALTOY_LOG");
  if (level == nullptr || *level == '\0') {
    spdlog::set_level(spdlog::level::info);
    return;
  }
  const auto parsed = spdlog::level::from_str(level);
  // from_str maps unknown names to "off"; only honour that when asked for explicitly.
  if (parsed == spdlog::level::off && std::string(level) != "off") {
    spdlog::set_level(spdlog::level::info);
    spdlog::warn("unknown REVEALTOY_LOG level '{}', using info", level);
  } else {
    spdlog::set_level(parsed);
  }
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error("cannot create directory " + dir.string());
}

std::vector<LayeredScene> scenes_of(std::vector<SceneRecord> records) {
  std::vector<LayeredScene> out;
  out.reserve(records.size());
  for (SceneRecord& r : records) out.push_back(std::move(r.scene));
  return out;
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  fs::path out;
  std::size_t count = 100;
  std::size_t size = 32;
  std::size_t patch = 2;
  std::string layers = "2..3";
  double occlusion_min_iou = 0.1;
  double occluded_fraction = 0.5;
  std::uint64_t seed = 0;
};

int run_gen_data(const GenDataArgs& a) {
  GeneratorConfig cfg;
  cfg.canvas = a.size;
  cfg.patch = a.patch;
  cfg.occlusion_min_iou = a.occlusion_min_iou;
  cfg.occluded_fraction = a.occluded_fraction;
  cfg.seed = a.seed;
  const auto dots = a.layers.find("..");
  try {
    if (dots == std::string::npos) {
      cfg.layers_min = cfg.layers_max = std::stoul(a.layers);
    } else {
      cfg.layers_min = std::stoul(a.layers.substr(0, dots));
      cfg.layers_max = std::stoul(a.layers.substr(dots + 2));
    }
  } catch (const std::exception&) {
    throw ValidationError("layers", "--layers expects MIN..MAX, got '" + a.layers + "'");
  }
  cfg.validate();

  std::vector<SceneRecord> records;
  records.reserve(a.count);
  std::size_t occl_pass = 0, cons_pass = 0;
  for (std::size_t i = 0; i < a.count; ++i) {
    records.push_back(generate_scene(cfg, derive_scene_seed(cfg.seed, i)));
    occl_pass += occlusion_filter(records.back().scene, cfg.occlusion_min_iou);
    cons_pass += consistency_filter(records.back().scene, 1.0 / 255.0);
  }
  dataset_write(a.out, records, cfg);
  std::cout << "scenes: " << a.count << "\n"
            << "occlusion_filter: pass " << occl_pass << " fail " << a.count - occl_pass << "\n"
            << "consistency_filter: pass " << cons_pass << " fail " << a.count - cons_pass << "\n";
  spdlog::info("wrote {} scenes to {}", a.count, a.out.string());
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  fs::path data;
  fs::path config;
  fs::path out;
  fs::path resume;
  std::size_t steps = 1000;
  std::uint64_t seed = 0;
};

fs::path checkpoint_name(const fs::path& dir, std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_%06zu.rvlt", step);
  return dir / buf;
}

fs::path optimizer_path(const fs::path& ckpt) {
  fs::path p = ckpt;
  return p.replace_extension(".adam");
}

int run_train(const TrainArgs& a) {
  RunConfig cfg = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  const GeneratorConfig data_cfg = dataset_config(a.data);
  if (data_cfg.canvas != cfg.model.canvas) {
    throw ValidationError("config", "dataset canvas " + std::to_string(data_cfg.canvas) + " differs from model canvas " +
                                        std::to_string(cfg.model.canvas));
  }
  if (data_cfg.patch % cfg.model.patch != 0) {
    throw ValidationError("config", "dataset boxes are aligned to patch " + std::to_string(data_cfg.patch) +
                                        ", which the model patch " + std::to_string(cfg.model.patch) +
                                        " does not divide");
  }
  const std::vector<LayeredScene> scenes = scenes_of(dataset_read(a.data));
  if (scenes.empty()) throw ValidationError("data", "dataset " + a.data.string() + " is empty");
  ensure_dir(a.out);

  ModelParams params;
  Adam opt(cfg.adam);
  std::size_t first = 1;
  if (!a.resume.empty()) {
    LoadedCheckpoint ck = load_checkpoint(a.resume);
    params = std::move(ck.params);
    cfg.model = ck.config.model;
    load_optimizer(optimizer_path(a.resume), opt);
    first = static_cast<std::size_t>(opt.steps()) + 1;
    spdlog::info("resuming from {} at step {}", a.resume.string(), first);
  } else {
    params = init_params(cfg.model, cfg.init_seed);
  }
  const std::size_t last = first + a.steps - 1;
  spdlog::info("training {} parameters on {} scenes, steps {}..{}", params.parameter_count(), scenes.size(), first,
               last);

  std::ofstream metrics(a.out / "metrics.jsonl", first == 1 ? std::ios::trunc : std::ios::app);
  if (!metrics) throw Error("cannot write metrics.jsonl in " + a.out.string());
  auto save = [&](std::size_t step, const fs::path& path) {
    save_checkpoint(path, params, cfg);
    save_optimizer(optimizer_path(path), opt);
    spdlog::info("step {}: saved {}", step, path.string());
  };
  const auto t0 = std::chrono::steady_clock::now();
  TrainLoopOptions lo;
  lo.first_step = first;
  lo.last_step = last;
  lo.seed = a.seed;
  train_loop(params, opt, scenes, cfg.loss, lo, [&](std::size_t step, std::size_t scene, const StepMetrics& m) {
    ordered_json line;
    line["step"] = step;
    line["scene"] = scene;
    line["t"] = m.t;
    line["fm"] = m.fm;
    line["alpha"] = m.alpha;
    line["orth"] = m.orth;
    line["total"] = m.total;
    metrics << line.dump() << "\n";
    if (step % 50 == 0 || step == last) {
      metrics.flush();
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      spdlog::info("step {} total {:.4f} (fm {:.4f} alpha {:.4f} orth {:.4f}) {:.1f}s", step, m.total, m.fm, m.alpha,
                   m.orth, secs);
    }
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) save(step, checkpoint_name(a.out, step));
  });
  save(last, a.out / "model.rvlt");
  return 0;
}

// ---------------------------------------------------------------------------

struct DecomposeArgs {
  fs::path ckpt;
  fs::path image;
  std::string boxes;
  fs::path out;
  std::size_t steps = 20;
  std::uint64_t seed = 0;
  bool shared_noise = false;
};

std::vector<BoundingBox> parse_boxes(const std::string& arg, std::size_t width, std::size_t height) {
  json j;
  try {
    j = json::parse(arg);
  } catch (const json::exception&) {
    try {
      j = json::parse(read_text(arg));
    } catch (const std::exception&) {
      throw ValidationError("boxes", "--boxes is neither JSON nor a readable JSON file");
    }
  }
  if (!j.is_array() || j.empty() || j.size() > service::kMaxBoxes) {
    throw ValidationError("boxes", "expected 1.." + std::to_string(service::kMaxBoxes) + " boxes");
  }
  std::vector<BoundingBox> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string field = "boxes[" + std::to_string(i) + "]";
    const json& b = j[i];
    BoundingBox box;
    try {
      if (b.is_array() && b.size() == 4) {
        box = {b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()};
      } else if (b.is_object()) {
        box = {b.at("x").get<int>(), b.at("y").get<int>(), b.at("w").get<int>(), b.at("h").get<int>()};
      } else {
        throw ValidationError(field, "box must be {x,y,w,h} or [x,y,w,h]");
      }
    } catch (const json::exception&) {
      throw ValidationError(field, "box must hold integer x, y, w, h");
    }
    if (!box.inside(width, height)) throw ValidationError(field, "box is empty or leaves the image");
    out.push_back(box);
  }
  return out;
}

int run_decompose(const DecomposeArgs& a) {
  const LoadedCheckpoint ck = load_checkpoint(a.ckpt);
  const ModelConfig& mc = ck.params.config();
  const RgbaImage image = read_png(a.image);
  std::vector<BoundingBox> boxes = parse_boxes(a.boxes, image.width(), image.height());
  for (BoundingBox& b : boxes) b = snap_outward(b, static_cast<int>(mc.patch), image.width(), image.height());
  SampleOptions opts;
  opts.steps = a.steps;
  opts.seed = a.seed;
  opts.shared_noise = a.shared_noise;
  const SampleResult r = sample_euler(ck.params, image, boxes, opts);

  ensure_dir(a.out);
  write_png(a.out / "background.png", r.background, /*opaque=*/true);
  for (std::size_t i = 0; i < r.layers.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "fg_%02zu.png", i);
    write_png(a.out / name, gray_background_invert(r.layers[i]));
  }
  ordered_json j;
  j["checkpoint"] = ck.id;
  j["seed"] = a.seed;
  j["steps"] = a.steps;
  j["shared_noise"] = a.shared_noise;
  ordered_json sb = ordered_json::array();
  for (const BoundingBox& b : boxes) sb.push_back({{"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}});
  j["snapped_boxes"] = std::move(sb);
  write_text(a.out / "result.json", j.dump(2) + "\n");
  spdlog::info("wrote background + {} layers to {}", r.layers.size(), a.out.string());
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  fs::path ckpt;
  fs::path data;
  fs::path report;
  bool robustness = false;
  std::size_t steps = 20;
  std::uint64_t seed = 0;
  std::size_t limit = 0;
};

int run_eval(const EvalArgs& a) {
  const LoadedCheckpoint ck = load_checkpoint(a.ckpt);
  std::vector<LayeredScene> scenes = scenes_of(dataset_read(a.data));
  if (a.limit > 0 && scenes.size() > a.limit) scenes.resize(a.limit);
  if (scenes.empty()) throw ValidationError("data", "no scenes to evaluate");
  EvalOptions opts;
  opts.steps = a.steps;
  opts.seed = a.seed;

  EvalReport report;
  report.checkpoint = ck.id;
  report.seed = a.seed;
  report.steps = a.steps;
  spdlog::info("evaluating {} scenes", scenes.size());
  report.plain = evaluate(ck.params, scenes, opts);
  if (a.robustness) {
    spdlog::info("running the box-robustness sweep");
    report.robustness = robustness_sweep(ck.params, scenes, opts);
  }
  report.orth_trajectory = orth_trajectory(ck.params, scenes.front(), a.steps, eval_scene_seed(a.seed, 0), ck.config.loss);

  if (a.report.has_parent_path()) ensure_dir(a.report.parent_path());
  write_text(a.report, report_json(report));
  fs::path md = a.report;
  md.replace_extension(".md");
  write_text(md, report_markdown(report));
  std::cout << report_markdown(report);
  return 0;
}

// ---------------------------------------------------------------------------

int run_gradcheck(std::uint64_t seed) {
  const auto results = gradcheck_suite(seed);
  bool ok = true;
  for (const GradCheckResult& r : results) {
    std::printf("%-4s %-20s max_rel_err %.3e (tol %.0e, %zu entries)\n", r.passed() ? "ok" : "FAIL", r.name.c_str(),
                r.max_rel_error, r.tolerance, r.entries);
    ok = ok && r.passed();
  }
  std::printf("%s\n", ok ? "gradcheck passed" : "gradcheck FAILED");
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------

struct ServeArgs {
  fs::path ckpt;
  std::string addr = "127.0.0.1:8080";
  fs::path ui_dir;
  std::size_t steps = 20;
};

int run_serve(const ServeArgs& a) {
  LoadedCheckpoint ck = load_checkpoint(a.ckpt);
  const auto colon = a.addr.rfind(':');
  if (colon == std::string::npos) throw ValidationError("addr", "--addr expects HOST:PORT");
  const std::string host = a.addr.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(a.addr.substr(colon + 1));
  } catch (const std::exception&) {
    throw ValidationError("addr", "invalid port in --addr");
  }
  const service::DecomposeService svc(std::move(ck.params), ck.id, a.steps);
  httplib::Server server;
  service::mount(server, svc, a.ui_dir);
  server.set_logger([](const httplib::Request& req, const httplib::Response& res) {
    spdlog::debug("{} {} -> {}", req.method, req.path, res.status);
  });
  spdlog::info("serving checkpoint {} on http://{}:{}", svc.checkpoint_id(), host, port);
  if (!server.listen(host, port)) throw Error("cannot listen on " + a.addr);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"revealtoy: layered image decomposition toolkit"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic layered-scene dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--count", gen.count, "Number of scenes");
  gen_cmd->add_option("--size", gen.size, "Canvas side in pixels");
  gen_cmd->add_option("--patch", gen.patch, "Patch size boxes are aligned to");
  gen_cmd->add_option("--layers", gen.layers, "Foreground layers per scene, MIN..MAX");
  gen_cmd->add_option("--occlusion-min-iou", gen.occlusion_min_iou, "IoU threshold of the occlusion filter");
  gen_cmd->add_option("--occluded-fraction", gen.occluded_fraction, "Fraction of scenes built with occlusion");
  gen_cmd->add_option("--seed", gen.seed, "Base seed");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train the flow model");
  train_cmd->add_option("--data", tr.data, "Dataset directory")->required();
  train_cmd->add_option("--config", tr.config, "Run config JSON (defaults when omitted)");
  train_cmd->add_option("--out", tr.out, "Output directory")->required();
  train_cmd->add_option("--steps", tr.steps, "Optimizer steps to run");
  train_cmd->add_option("--seed", tr.seed, "Seed for scene order, timesteps and noise");
  train_cmd->add_option("--resume", tr.resume, "Checkpoint to continue from");

  DecomposeArgs dc;
  auto* dec_cmd = app.add_subcommand("decompose", "Decompose one image into layers");
  dec_cmd->add_option("--ckpt", dc.ckpt, "Checkpoint file")->required();
  dec_cmd->add_option("--image", dc.image, "Input PNG")->required();
  dec_cmd->add_option("--boxes", dc.boxes, "JSON list of boxes, inline or a file path")->required();
  dec_cmd->add_option("--out", dc.out, "Output directory")->required();
  dec_cmd->add_option("--steps", dc.steps, "Euler steps")->check(CLI::Range(std::size_t{1}, service::kMaxSteps));
  dec_cmd->add_option("--seed", dc.seed, "Noise seed");
  dec_cmd->add_flag("--shared-noise", dc.shared_noise, "Start all foregrounds from one noise field");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required();
  eval_cmd->add_option("--report", ev.report, "report.json path; report.md is written next to it")->required();
  eval_cmd->add_flag("--robustness", ev.robustness, "Also run the box-perturbation sweep");
  eval_cmd->add_option("--steps", ev.steps, "Euler steps")->check(CLI::Range(std::size_t{1}, service::kMaxSteps));
  eval_cmd->add_option("--seed", ev.seed, "Sampling seed");
  eval_cmd->add_option("--limit", ev.limit, "Evaluate only the first N scenes");

  std::uint64_t gc_seed = 1;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  gc_cmd->add_option("--seed", gc_seed, "Seed for random inputs");

  ServeArgs sv;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP API and UI");
  serve_cmd->add_option("--ckpt", sv.ckpt, "Checkpoint file")->required();
  serve_cmd->add_option("--addr", sv.addr, "HOST:PORT to listen on");
  serve_cmd->add_option("--ui-dir", sv.ui_dir, "Directory of static UI files");
  serve_cmd->add_option("--steps", sv.steps, "Default Euler steps")->check(CLI::Range(std::size_t{1}, service::kMaxSteps));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen_cmd) return run_gen_data(gen);
    if (*train_cmd) return run_train(tr);
    if (*dec_cmd) return run_decompose(dc);
    if (*eval_cmd) return run_eval(ev);
    if (*gc_cmd) return run_gradcheck(gc_seed);
    if (*serve_cmd) return run_serve(sv);
  } catch (const ValidationError& e) {
    spdlog::error("invalid {}: {}", e.field(), e.what());
    return 2;
  } catch (const DatasetError& e) {
    spdlog::error("dataset error in {}: {}", e.scene(), e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
