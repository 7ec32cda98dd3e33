// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
//
//   revealtoy_acceptance [--work-dir DIR] [--only A1,A6] [--reuse]
//
// A6/A7 train two desk-scale models (full, no-RAA). Checkpoints and loss
// curves land in the work dir; --reuse loads them instead of retraining.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gen.hpp"
#include "oracles.hpp"
#include "properties.hpp"
#include "revealtoy/checkpoint.hpp"
#include "revealtoy/codec.hpp"
#include "revealtoy/error.hpp"
#include "revealtoy/eval.hpp"
#include "revealtoy/flow.hpp"
#include "revealtoy/gradcheck.hpp"
#include "revealtoy/masks.hpp"
#include "revealtoy/sampler.hpp"
#include "revealtoy/scene.hpp"
#include "revealtoy/train.hpp"

namespace fs = std::filesystem;
using namespace revealtoy;
using revealtoy::testing::Gen;
using revealtoy::testing::PropertyResult;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += (ok ? "" : "FAILED ") + what;
  }
  void require(const PropertyResult& r, const std::string& what) {
    std::ostringstream os;
    os << what << " " << r.cases << " cases";
    if (r.max_error > 0) os << " (max err " << r.max_error << ")";
    if (!r.ok()) os << " first failure: " << r.first_failure;
    require(r.ok(), os.str());
  }
};

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.width = 16;
  cfg.heads = 2;
  cfg.rope = {2, 2, 4};
  cfg.blocks = 1;
  cfg.text_tokens = 2;
  cfg.canvas = 16;
  return cfg;
}

// ---------------------------------------------------------------------------

Verdict a1_autodiff() {
  Verdict v;
  const auto t0 = Clock::now();
  const auto results = gradcheck_suite(1);
  const double secs = seconds_since(t0);
  std::size_t ok = 0;
  bool composed = false;
  std::string worst;
  for (const GradCheckResult& r : results) {
    ok += r.passed();
    composed = composed || r.name == "model.total_loss";
    if (!r.passed()) worst += " " + r.name + "=" + fmt(r.max_rel_error, 6);
  }
  v.require(ok == results.size(), std::to_string(ok) + "/" + std::to_string(results.size()) + " checks" + worst);
  v.require(composed, "composed total_loss graph checked");
  v.require(secs < 120.0, "runtime " + fmt(secs, 1) + " s");
  return v;
}

Verdict a2_raa() {
  Verdict v;
  v.require(testing::raa_mask_property(2001, 1000), "mask vs pair rule");
  v.require(testing::raa_leakage_property(2002, 300), "leakage invariance");
  return v;
}

Verdict a3_oga() {
  Verdict v;
  v.require(testing::oga_mask_property(3001, 1000), "region masks vs set algebra");
  std::size_t skips = 0;
  v.require(testing::oga_attention_property(3002, 1000, &skips), "attention mask rows");
  v.require(skips > 0, std::to_string(skips) + " layouts hit SKIP");

  // SKIP through the full model: a box nested in a duplicate leaves both masks empty.
  const ModelParams p = init_params(small_config(), 3, 0.02, false);
  GeneratorConfig gc;
  gc.canvas = 16;
  const LayeredScene s = generate_scene(gc, 3003).scene;
  const std::vector<BoundingBox> boxes = {{2, 2, 8, 8}, {2, 2, 8, 8}, {4, 4, 2, 2}};
  const SampleResult r = sample_euler(p, s.composite, boxes, SampleOptions{3, 5, false});
  bool finite = true;
  for (double x : r.final_latents.values()) finite = finite && std::isfinite(x);
  v.require(finite && r.layers.size() == 3, "nested boxes sample to finite layers");
  return v;
}

Verdict a4_flow() {
  Verdict v;
  v.require(testing::flow_identity_property(4001, 300), "endpoints, clean estimate, zero loss at truth");
  v.require(testing::flow_loss_property(4002, 100, 1e-9), "fm/alpha/orth vs oracle");
  return v;
}

Verdict a5_codec(const fs::path& work) {
  Verdict v;
  Gen g(5001);
  std::size_t exact = 0, cases = 0;
  for (; cases < 300; ++cases) {
    const std::size_t p = std::size_t{1} << g.integer(0, 2);
    const std::size_t h = p * g.integer(1, 8), w = p * g.integer(1, 8);
    const RgbaImage img = g.image(h, w);
    exact += unpatchify(patchify(img, p), h, w, p) == img;
  }
  v.require(exact == cases, "patchify round trip " + std::to_string(exact) + "/" + std::to_string(cases));

  GeneratorConfig gc;
  double worst = 0;
  std::vector<SceneRecord> records;
  for (std::size_t i = 0; i < 500; ++i) {
    SceneRecord rec = generate_scene(gc, derive_scene_seed(5002, i));
    const RgbaImage want = oracle::over(rec.scene.background, rec.scene.foregrounds);
    for (std::size_t k = 0; k < want.values().size(); ++k)
      worst = std::max(worst, std::fabs(want.values()[k] - rec.scene.composite.values()[k]));
    if (i < 50) records.push_back(std::move(rec));
  }
  v.require(worst <= 1.0 / 255.0 + 1e-12, "500 scenes re-composite, worst " + fmt(worst * 255.0, 3) + "/255");

  const fs::path dir = work / "a5_dataset";
  fs::remove_all(dir);
  dataset_write(dir, records, gc);
  const auto back = dataset_read(dir);
  bool same = back.size() == records.size();
  for (std::size_t i = 0; same && i < back.size(); ++i) {
    const LayeredScene &a = records[i].scene, &b = back[i].scene;
    same = a.composite == b.composite && a.background == b.background && a.foregrounds == b.foregrounds &&
           a.boxes == b.boxes && records[i].seed == back[i].seed;
  }
  fs::remove_all(dir);
  v.require(same, "dataset round trip of " + std::to_string(records.size()) + " scenes");
  return v;
}

// ---------------------------------------------------------------------------
// Desk-scale training shared by A6 and A7.

constexpr std::size_t kTrainScenes = 500;
constexpr std::size_t kHeldOut = 32;
constexpr std::size_t kDefaultTrainSteps = 2000;
constexpr double kLearningRate = 1e-3;
constexpr double kBudgetSeconds = 30 * 60;

struct TrainedModel {
  ModelParams params;
  std::vector<double> totals;
  double seconds = 0;
};

TrainedModel train_or_load(const std::string& tag, bool use_raa, std::span<const LayeredScene> scenes,
                           std::size_t steps, const fs::path& work, bool reuse) {
  // one directory per model: each checkpoint carries its own config.json
  const fs::path ckpt = work / tag / "model.rvlt", curve = work / tag / "loss.txt";
  TrainedModel m;
  if (reuse && fs::exists(ckpt) && fs::exists(curve)) {
    m.params = load_checkpoint(ckpt).params;
    std::ifstream in(curve);
    in >> m.seconds;
    for (double x; in >> x;) m.totals.push_back(x);
    if (m.totals.size() == steps && m.params.config().use_raa == use_raa) {
      std::printf("  [%s] reused %s\n", tag.c_str(), ckpt.c_str());
      return m;
    }
    m = TrainedModel{};
  }
  RunConfig rc;
  rc.model.use_raa = use_raa;
  rc.adam.lr = kLearningRate;
  m.params = init_params(rc.model, rc.init_seed);
  Adam opt(rc.adam);
  TrainLoopOptions lo;
  lo.first_step = 1;
  lo.last_step = steps;
  lo.seed = 6001;
  const auto t0 = Clock::now();
  train_loop(m.params, opt, scenes, rc.loss, lo, [&](std::size_t step, std::size_t, const StepMetrics& sm) {
    m.totals.push_back(sm.total);
    if (step % 250 == 0) {
      std::printf("  [%s] step %zu total %.4f  %.0f s\n", tag.c_str(), step, sm.total, seconds_since(t0));
      std::fflush(stdout);
    }
  });
  m.seconds = seconds_since(t0);
  fs::create_directories(ckpt.parent_path());
  save_checkpoint(ckpt, m.params, rc);
  std::ofstream out(curve);
  out.precision(17);
  out << m.seconds << "\n";
  for (double x : m.totals) out << x << "\n";
  return m;
}

double window_mean(const std::vector<double>& xs, std::size_t begin, std::size_t end) {
  double s = 0;
  for (std::size_t i = begin; i < end; ++i) s += xs[i];
  return s / static_cast<double>(end - begin);
}

struct DeskScale {
  TrainedModel full, ablation;
  std::vector<RobustnessRow> sweep;  // full model
  EvalSection ablation_eval;
};

DeskScale run_desk_scale(std::size_t steps, const fs::path& work, bool reuse) {
  GeneratorConfig gc;
  std::vector<LayeredScene> train, held;
  for (std::size_t i = 0; i < kTrainScenes; ++i) train.push_back(generate_scene(gc, derive_scene_seed(6002, i)).scene);
  for (std::size_t i = 0; i < kHeldOut; ++i) held.push_back(generate_scene(gc, derive_scene_seed(6003, i)).scene);

  DeskScale d;
  d.full = train_or_load("full", true, train, steps, work, reuse);
  d.ablation = train_or_load("no_raa", false, train, steps, work, reuse);
  EvalOptions eo;
  eo.seed = 6004;
  const auto t0 = Clock::now();
  d.sweep = robustness_sweep(d.full.params, held, eo);
  d.ablation_eval = evaluate(d.ablation.params, held, eo);
  std::printf("  evaluation %.0f s\n", seconds_since(t0));
  return d;
}

Verdict a6_training(const DeskScale& d) {
  Verdict v;
  const std::size_t n = d.full.totals.size(), tenth = n / 10;
  const double first = window_mean(d.full.totals, 0, tenth), last = window_mean(d.full.totals, n - tenth, n);
  v.require(last <= 0.5 * first, "full loss " + fmt(first) + " -> " + fmt(last) + " (ratio " + fmt(last / first, 3) + ")");
  v.require(d.full.seconds <= kBudgetSeconds && d.ablation.seconds <= kBudgetSeconds,
            "train time " + fmt(d.full.seconds / 60, 1) + " / " + fmt(d.ablation.seconds / 60, 1) + " min");
  const double full_iou = d.sweep.front().result.mean.fg_soft_iou, abl_iou = d.ablation_eval.mean.fg_soft_iou;
  v.require(full_iou > abl_iou, "SoftIoU full " + fmt(full_iou) + " vs no-RAA " + fmt(abl_iou));
  std::printf("  soft goal SoftIoU >= 0.6: %s\n", full_iou >= 0.6 ? "met" : "not met");
  return v;
}

Verdict a7_robustness(const DeskScale& d) {
  Verdict v;
  auto iou = [&](bool precise, Perturbation kind, double lo) {
    for (const RobustnessRow& r : d.sweep)
      if (r.variant.precise == precise && (precise || (r.variant.kind == kind && r.variant.lo == lo)))
        return r.result.mean.fg_soft_iou;
    throw Error("missing robustness row");
  };
  auto moved = [&](Perturbation kind, double lo) {
    for (const RobustnessRow& r : d.sweep)
      if (!r.variant.precise && r.variant.kind == kind && r.variant.lo == lo)
        return " (" + std::to_string(r.boxes_moved) + "/" + std::to_string(r.boxes_total) + " moved)";
    return std::string();
  };
  const double slack = 0.02;
  const double precise = iou(true, Perturbation::offset, 0);
  const double off1 = iou(false, Perturbation::offset, 0.0), off2 = iou(false, Perturbation::offset, 0.05);
  const double in1 = iou(false, Perturbation::inadequate, 0.0), in2 = iou(false, Perturbation::inadequate, 0.05);
  v.require(precise + slack >= off1 && off1 + slack >= off2,
            "offset " + fmt(precise) + " >= " + fmt(off1) + moved(Perturbation::offset, 0.0) + " >= " + fmt(off2) +
                moved(Perturbation::offset, 0.05));
  v.require(precise + slack >= in1 && in1 + slack >= in2,
            "inadequate " + fmt(precise) + " >= " + fmt(in1) + moved(Perturbation::inadequate, 0.0) + " >= " +
                fmt(in2) + moved(Perturbation::inadequate, 0.05));
  return v;
}

// ---------------------------------------------------------------------------

Verdict a8_shared_noise() {
  Verdict v;
  Gen g(8001);
  std::size_t pairs = 0, equal = 0, independent_equal = 0;
  for (int c = 0; c < 200; ++c) {
    const std::size_t n = 2 + g.index(3);
    const auto boxes = g.grid_boxes(n, 16, 16, 2);
    const TokenLayout lay = build_layout(32, 32, 2, 4, boxes);
    const std::uint64_t seed = g.rng()();
    const Tensor shared = initial_noise(lay, seed, true), indep = initial_noise(lay, seed, false);
    const std::size_t base = lay.latent_begin();
    auto token = [&](std::size_t i, int gy, int gx) {
      const BoundingBox& b = boxes[i];
      return lay.foreground(i + 1).begin - base + (gy - b.y / 2) * (b.w / 2) + (gx - b.x / 2);
    };
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        for (int gy = 0; gy < 16; ++gy)
          for (int gx = 0; gx < 16; ++gx) {
            if (!oracle::patch_in_box(gy, gx, 2, boxes[i]) || !oracle::patch_in_box(gy, gx, 2, boxes[j])) continue;
            ++pairs;
            const std::size_t ti = token(i, gy, gx), tj = token(j, gy, gx);
            bool same = true, same_indep = true;
            for (std::size_t ch = 0; ch < shared.shape()[1]; ++ch) {
              same = same && shared.at(ti, ch) == shared.at(tj, ch);
              same_indep = same_indep && indep.at(ti, ch) == indep.at(tj, ch);
            }
            equal += same;
            independent_equal += same_indep;
          }
  }
  v.require(pairs > 0 && equal == pairs,
            "shared overlap patches equal " + std::to_string(equal) + "/" + std::to_string(pairs));
  v.require(independent_equal == 0, "independent noise differs on all overlaps");

  const ModelParams p = init_params(small_config(), 8, 0.02, false);
  GeneratorConfig gc;
  gc.canvas = 16;
  const LayeredScene s = generate_scene(gc, 8002).scene;
  const std::vector<BoundingBox> boxes = {{0, 0, 10, 10}, {4, 4, 12, 12}};
  bool deterministic = true;
  for (bool sh : {false, true}) {
    const SampleResult a = sample_euler(p, s.composite, boxes, SampleOptions{4, 99, sh});
    const SampleResult b = sample_euler(p, s.composite, boxes, SampleOptions{4, 99, sh});
    const SampleResult c = sample_euler(p, s.composite, boxes, SampleOptions{4, 100, sh});
    deterministic = deterministic && a.final_latents == b.final_latents && a.background == b.background &&
                    a.layers == b.layers && !(a.final_latents == c.final_latents);
  }
  v.require(deterministic, "sampling bit-reproducible per seed, seed-sensitive");
  return v;
}

Verdict a9_metrics() {
  Verdict v;
  for (const std::string& name : testing::metric_names())
    v.require(testing::metric_property(name, 9001, 50, 1e-9), name);
  const ModelParams p = init_params(small_config(), 9, 0.02, false);
  GeneratorConfig gc;
  gc.canvas = 16;
  const LayeredScene s = generate_scene(gc, 9002).scene;
  const auto a = orth_trajectory(p, s, 6, 7), b = orth_trajectory(p, s, 6, 7);
  const SampleResult r = sample_euler(p, s.composite, s.boxes, SampleOptions{6, 7, false});
  const SequenceData seq = build_sequence(s, 2, 2);
  const bool final_matches =
      !a.empty() && a.back() == latent_orth_loss(seq.layout, r.final_latents, seq.stacked_latents(), LossConfig{});
  v.require(a.size() == 6 && a == b && final_matches, "orth trajectory length/determinism/final value");
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"revealtoy acceptance runner"};
  fs::path work = fs::temp_directory_path() / "revealtoy_acceptance";
  std::string only;
  bool reuse = false;
  std::size_t train_steps = kDefaultTrainSteps;
  app.add_option("--work-dir", work, "Directory for trained checkpoints and scratch data");
  app.add_option("--only", only, "Comma-separated subset, e.g. A1,A6");
  app.add_option("--train-steps", train_steps, "Optimizer steps per desk-scale model");
  app.add_flag("--reuse", reuse, "Load A6/A7 checkpoints from the work dir when present");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  std::set<std::string> wanted;
  for (std::stringstream ss(only); ss.good();) {
    std::string id;
    std::getline(ss, id, ',');
    if (!id.empty()) wanted.insert(id);
  }
  auto selected = [&](const std::string& id) { return wanted.empty() || wanted.count(id) > 0; };

  std::optional<DeskScale> desk;
  auto desk_scale = [&]() -> const DeskScale& {
    if (!desk) desk = run_desk_scale(train_steps, work, reuse);
    return *desk;
  };

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"A1", a1_autodiff},
      {"A2", a2_raa},
      {"A3", a3_oga},
      {"A4", a4_flow},
      {"A5", [&] { return a5_codec(work); }},
      {"A6", [&] { return a6_training(desk_scale()); }},
      {"A7", [&] { return a7_robustness(desk_scale()); }},
      {"A8", a8_shared_noise},
      {"A9", a9_metrics},
  };

  int failures = 0;
  for (const auto& [id, run] : criteria) {
    if (!selected(id)) continue;
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = run();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("exception: ") + e.what();
    }
    failures += !v.pass;
    std::printf("%s %s  %s  [%.1f s]\n", id.c_str(), v.pass ? "PASS" : "FAIL", v.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
