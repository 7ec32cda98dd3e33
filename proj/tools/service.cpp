#include "service.hpp"

#include <boost/beast/core/detail/base64.hpp>
#include <chrono>
#include <random>

#include "httplib.h"
#include "json.hpp"
#include "revealtoy/error.hpp"
#include "revealtoy/png_io.hpp"
#include "revealtoy/sampler.hpp"
#include "revealtoy/scene.hpp"

namespace revealtoy::service {
namespace {

using nlohmann::ordered_json;
namespace b64 = boost::beast::detail::base64;

Reply error_reply(int status, const std::string& message, const std::string& field = {}) {
  ordered_json j;
  j["error"] = message;
  if (!field.empty()) j["field"] = field;
  return {status, j.dump()};
}

ordered_json box_json(const BoundingBox& b) { return {{"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}}; }

std::string png_base64(const RgbaImage& img, bool opaque) {
  const auto bytes = encode_png(img, opaque);
  return base64_encode(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

int box_field(const nlohmann::json& box, const char* key, const std::string& field) {
  if (!box.is_object() || !box.contains(key) || !box.at(key).is_number_integer()) {
    throw ValidationError(field, std::string("missing or non-integer \"") + key + "\"");
  }
  const auto v = box.at(key).get<long long>();
  if (v < -(1LL << 20) || v > (1LL << 20)) throw ValidationError(field, std::string("\"") + key + "\" out of range");
  return static_cast<int>(v);
}

struct Request {
  RgbaImage image;
  std::vector<BoundingBox> boxes;
  std::size_t steps = 0;
  std::optional<std::uint64_t> seed;
  bool shared_noise = false;
};

Request parse_request(std::string_view body, const ModelConfig& cfg, std::size_t default_steps) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception&) {
    throw ValidationError("body", "request body is not valid JSON");
  }
  if (!j.is_object()) throw ValidationError("body", "request body must be a JSON object");

  Request r;
  if (!j.contains("image") || !j.at("image").is_string()) throw ValidationError("image", "image must be a base64 string");
  const auto png = base64_decode(j.at("image").get_ref<const std::string&>());
  if (!png) throw ValidationError("image", "image is not valid base64");
  try {
    r.image = decode_png(std::span(reinterpret_cast<const std::uint8_t*>(png->data()), png->size()));
  } catch (const Error& e) {
    throw ValidationError("image", std::string("image is not a readable PNG: ") + e.what());
  }
  if (r.image.width() != cfg.canvas || r.image.height() != cfg.canvas) {
    throw ValidationError("image", "image is " + std::to_string(r.image.width()) + "x" +
                                       std::to_string(r.image.height()) + ", the model expects " +
                                       std::to_string(cfg.canvas) + "x" + std::to_string(cfg.canvas));
  }

  if (!j.contains("boxes") || !j.at("boxes").is_array()) throw ValidationError("boxes", "boxes must be an array");
  const auto& boxes = j.at("boxes");
  if (boxes.empty() || boxes.size() > kMaxBoxes) {
    throw ValidationError("boxes", "between 1 and " + std::to_string(kMaxBoxes) + " boxes are required, got " +
                                       std::to_string(boxes.size()));
  }
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const std::string field = "boxes[" + std::to_string(i) + "]";
    const BoundingBox b{box_field(boxes[i], "x", field), box_field(boxes[i], "y", field),
                        box_field(boxes[i], "w", field), box_field(boxes[i], "h", field)};
    if (!b.inside(r.image.width(), r.image.height())) throw ValidationError(field, "box is empty or leaves the image");
    r.boxes.push_back(b);
  }

  r.steps = default_steps;
  if (j.contains("steps") && !j.at("steps").is_null()) {
    const auto& s = j.at("steps");
    if (!s.is_number_integer() || s.get<long long>() < 1 || s.get<long long>() > static_cast<long long>(kMaxSteps)) {
      throw ValidationError("steps", "steps must be an integer in [1, " + std::to_string(kMaxSteps) + "]");
    }
    r.steps = s.get<std::size_t>();
  }
  if (j.contains("seed") && !j.at("seed").is_null()) {
    const auto& s = j.at("seed");
    if (!s.is_number_unsigned()) throw ValidationError("seed", "seed must be a non-negative integer");
    r.seed = s.get<std::uint64_t>();
  }
  if (j.contains("shared_noise") && !j.at("shared_noise").is_null()) {
    if (!j.at("shared_noise").is_boolean()) throw ValidationError("shared_noise", "shared_noise must be a boolean");
    r.shared_noise = j.at("shared_noise").get<bool>();
  }
  return r;
}

std::uint64_t fresh_seed() {
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

Reply guarded(const std::function<Reply()>& fn) {
  try {
    return fn();
  } catch (const ValidationError& e) {
    return error_reply(400, e.what(), e.field());
  } catch (const std::exception& e) {
    return error_reply(500, e.what());
  }
}

void send(httplib::Response& res, const Reply& r) {
  res.status = r.status;
  res.set_content(r.body, "application/json; charset=utf-8");
}

}  // namespace

std::string base64_encode(std::string_view bytes) {
  std::string out(b64::encoded_size(bytes.size()), '\0');
  out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
  return out;
}

std::optional<std::string> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) return std::nullopt;
  std::size_t pad = 0;
  while (pad < 2 && pad < text.size() && text[text.size() - 1 - pad] == '=') ++pad;
  const std::size_t body = text.size() - pad;
  for (std::size_t i = 0; i < body; ++i) {
    const char c = text[i];
    const bool ok = (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '+' || c == '/';
    if (!ok) return std::nullopt;
  }
  std::string out(b64::decoded_size(text.size()), '\0');
  const auto [written, read] = b64::decode(out.data(), text.data(), text.size());
  if (read != body) return std::nullopt;
  out.resize(written);
  return out;
}

DecomposeService::DecomposeService(ModelParams params, std::string checkpoint_id, std::size_t default_steps)
    : params_(std::move(params)), checkpoint_id_(std::move(checkpoint_id)), default_steps_(default_steps) {}

Reply DecomposeService::health() const {
  ordered_json j;
  j["status"] = "ok";
  j["checkpoint"] = checkpoint_id_;
  return {200, j.dump()};
}

Reply DecomposeService::decompose(std::string_view body) const {
  if (body.size() > kMaxBodyBytes) {
    return error_reply(413, "request body exceeds " + std::to_string(kMaxBodyBytes) + " bytes", "body");
  }
  return guarded([&] {
    const auto t0 = std::chrono::steady_clock::now();
    const ModelConfig& cfg = params_.config();
    Request req = parse_request(body, cfg, default_steps_);
    const double parse_ms = ms_since(t0);

    std::vector<BoundingBox> snapped;
    for (const BoundingBox& b : req.boxes)
      snapped.push_back(snap_outward(b, static_cast<int>(cfg.patch), cfg.canvas, cfg.canvas));
    SampleOptions opts;
    opts.steps = req.steps;
    opts.seed = req.seed ? *req.seed : fresh_seed();
    opts.shared_noise = req.shared_noise;
    const auto t1 = std::chrono::steady_clock::now();
    const SampleResult result = sample_euler(params_, req.image, snapped, opts);
    const double sample_ms = ms_since(t1);

    const auto t2 = std::chrono::steady_clock::now();
    ordered_json j;
    j["background"] = png_base64(result.background, /*opaque=*/true);
    ordered_json layers = ordered_json::array();
    std::vector<RgbaImage> placed;
    for (std::size_t i = 0; i < result.layers.size(); ++i) {
      const RgbaImage straight = quantize_8bit(gray_background_invert(result.layers[i]));
      layers.push_back({{"box", box_json(snapped[i])}, {"rgba", png_base64(straight, false)}});
      placed.push_back(place_on_canvas(straight, snapped[i], cfg.canvas, cfg.canvas));
    }
    j["layers"] = std::move(layers);
    ordered_json boxes = ordered_json::array();
    for (const BoundingBox& b : snapped) boxes.push_back(box_json(b));
    j["snapped_boxes"] = std::move(boxes);
    j["recomposite"] = png_base64(composite_layers(quantize_8bit(result.background), placed), true);
    j["seed_used"] = opts.seed;
    j["steps"] = opts.steps;
    j["shared_noise"] = opts.shared_noise;
    j["checkpoint"] = checkpoint_id_;
    const double encode_ms = ms_since(t2);
    j["timings_ms"] = {{"parse", parse_ms}, {"sample", sample_ms}, {"encode", encode_ms}, {"total", ms_since(t0)}};
    return Reply{200, j.dump()};
  });
}

Reply DecomposeService::scenes(std::string_view n_text, std::optional<std::uint64_t> seed) const {
  return guarded([&] {
    std::size_t n = 1;
    if (!n_text.empty()) {
      std::size_t pos = 0;
      long long v = 0;
      try {
        v = std::stoll(std::string(n_text), &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos != n_text.size() || v < 1 || v > static_cast<long long>(kMaxScenes)) {
        throw ValidationError("n", "n must be an integer in [1, " + std::to_string(kMaxScenes) + "]");
      }
      n = static_cast<std::size_t>(v);
    }
    const ModelConfig& cfg = params_.config();
    GeneratorConfig gen;
    gen.canvas = cfg.canvas;
    gen.patch = cfg.patch;
    gen.seed = seed ? *seed : fresh_seed();
    ordered_json list = ordered_json::array();
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint64_t s = derive_scene_seed(gen.seed, i);
      const SceneRecord rec = generate_scene(gen, s);
      ordered_json boxes = ordered_json::array();
      for (const BoundingBox& b : rec.scene.boxes) boxes.push_back(box_json(b));
      list.push_back({{"seed", s},
                      {"width", rec.scene.width()},
                      {"height", rec.scene.height()},
                      {"image", png_base64(rec.scene.composite, true)},
                      {"boxes", std::move(boxes)}});
    }
    ordered_json j;
    j["seed"] = gen.seed;
    j["scenes"] = std::move(list);
    return Reply{200, j.dump()};
  });
}

void mount(httplib::Server& server, const DecomposeService& service, const std::filesystem::path& ui_dir) {
  // Bodies just above the limit still reach the handler, which answers 413 with JSON.
  server.set_payload_max_length(kMaxBodyBytes + 1024);
  server.Get("/api/health", [&service](const httplib::Request&, httplib::Response& res) { send(res, service.health()); });
  server.Post("/api/decompose", [&service](const httplib::Request& req, httplib::Response& res) {
    send(res, service.decompose(req.body));
  });
  server.Get("/api/scenes", [&service](const httplib::Request& req, httplib::Response& res) {
    std::optional<std::uint64_t> seed;
    if (req.has_param("seed")) {
      try {
        std::size_t pos = 0;
        const std::string s = req.get_param_value("seed");
        seed = std::stoull(s, &pos);
        if (pos != s.size() || s.starts_with('-')) throw std::invalid_argument("seed");
      } catch (const std::exception&) {
        send(res, error_reply(400, "seed must be a non-negative integer", "seed"));
        return;
      }
    }
    send(res, service.scenes(req.has_param("n") ? req.get_param_value("n") : std::string(), seed));
  });
  server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    send(res, error_reply(500, what));
  });
  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    const char* message = res.status == 413 ? "request body too large" : res.status == 404 ? "not found" : "request failed";
    send(res, error_reply(res.status, message, res.status == 413 ? "body" : ""));
  });
  if (!ui_dir.empty()) {
    if (!server.set_mount_point("/", ui_dir.string())) throw Error("cannot serve UI directory " + ui_dir.string());
  }
}

}  // namespace revealtoy::service
