#include <doctest.h>

#include <httplib.h>

#include <string>
#include <thread>

#include "json.hpp"

#include "revealtoy/image.hpp"
#include "revealtoy/png_io.hpp"
#include "revealtoy/scene.hpp"
#include "service.hpp"

using namespace revealtoy;
using nlohmann::json;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.width = 16;
  cfg.heads = 2;
  cfg.rope = {2, 2, 4};
  cfg.blocks = 1;
  cfg.text_tokens = 2;
  cfg.canvas = 16;
  return cfg;
}

// A live server on an ephemeral loopback port for the duration of a test case.
struct LiveServer {
  service::DecomposeService svc{init_params(tiny_config(), 5, 0.02, false), "ckpt-test", 3};
  httplib::Server server;
  std::thread thread;
  int port = 0;

  LiveServer() {
    service::mount(server, svc, {});
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~LiveServer() {
    server.stop();
    thread.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(60, 0);
    return c;
  }
};

std::string image_b64(const RgbaImage& img) {
  const auto bytes = encode_png(img, true);
  return service::base64_encode(std::string(bytes.begin(), bytes.end()));
}

RgbaImage decode_b64_png(const std::string& text) {
  const auto raw = service::base64_decode(text);
  REQUIRE(raw.has_value());
  return decode_png(std::span(reinterpret_cast<const std::uint8_t*>(raw->data()), raw->size()));
}

json request_body(const RgbaImage& img, const json& boxes) {
  return json{{"image", image_b64(img)}, {"boxes", boxes}, {"steps", 2}, {"seed", 42}};
}

RgbaImage test_scene_image() {
  GeneratorConfig gc;
  gc.canvas = 16;
  return generate_scene(gc, 77).scene.composite;
}

}  // namespace

TEST_SUITE("service") {
  TEST_CASE("base64 round trip and strict rejection") {
    for (const std::string s : {"", "f", "fo", "foo", "foob", "fooba", "foobar"})
      CHECK(service::base64_decode(service::base64_encode(s)) == s);
    CHECK(service::base64_encode("foobar") == "Zm9vYmFy");
    CHECK_FALSE(service::base64_decode("Zm9").has_value());
    CHECK_FALSE(service::base64_decode("Zm9v!mFy").has_value());
    CHECK_FALSE(service::base64_decode("Zm=v").has_value());
  }

  TEST_CASE("health reports the checkpoint") {
    LiveServer s;
    auto res = s.client().Get("/api/health");
    REQUIRE(res);
    CHECK(res->status == 200);
    const json j = json::parse(res->body);
    CHECK(j["status"] == "ok");
    CHECK(j["checkpoint"] == "ckpt-test");
  }

  TEST_CASE("validation errors name the offending field") {
    LiveServer s;
    auto c = s.client();
    const RgbaImage img = test_scene_image();
    const json box = {{"x", 2}, {"y", 2}, {"w", 6}, {"h", 6}};

    auto bad_json = c.Post("/api/decompose", "{not json", "application/json");
    REQUIRE(bad_json);
    CHECK(bad_json->status == 400);
    CHECK(json::parse(bad_json->body)["field"] == "body");

    json b = request_body(img, json::array({box}));
    b["image"] = "@@@@";
    auto bad_b64 = c.Post("/api/decompose", b.dump(), "application/json");
    REQUIRE(bad_b64);
    CHECK(bad_b64->status == 400);
    CHECK(json::parse(bad_b64->body)["field"] == "image");

    b["image"] = service::base64_encode("not a png");
    auto bad_png = c.Post("/api/decompose", b.dump(), "application/json");
    REQUIRE(bad_png);
    CHECK(bad_png->status == 400);
    CHECK(json::parse(bad_png->body)["field"] == "image");

    auto wrong_size = c.Post("/api/decompose", request_body(RgbaImage(8, 8), json::array({box})).dump(),
                             "application/json");
    REQUIRE(wrong_size);
    CHECK(wrong_size->status == 400);
    CHECK(json::parse(wrong_size->body)["field"] == "image");

    json nine = json::array();
    for (int i = 0; i < 9; ++i) nine.push_back(box);
    auto too_many = c.Post("/api/decompose", request_body(img, nine).dump(), "application/json");
    REQUIRE(too_many);
    CHECK(too_many->status == 400);
    CHECK(json::parse(too_many->body)["field"] == "boxes");

    auto none = c.Post("/api/decompose", request_body(img, json::array()).dump(), "application/json");
    REQUIRE(none);
    CHECK(json::parse(none->body)["field"] == "boxes");

    auto outside = c.Post("/api/decompose",
                          request_body(img, json::array({box, {{"x", 12}, {"y", 0}, {"w", 8}, {"h", 4}}})).dump(),
                          "application/json");
    REQUIRE(outside);
    CHECK(outside->status == 400);
    CHECK(json::parse(outside->body)["field"] == "boxes[1]");

    json steps = request_body(img, json::array({box}));
    steps["steps"] = 0;
    auto bad_steps = c.Post("/api/decompose", steps.dump(), "application/json");
    REQUIRE(bad_steps);
    CHECK(json::parse(bad_steps->body)["field"] == "steps");

    auto bad_n = c.Get("/api/scenes?n=0");
    REQUIRE(bad_n);
    CHECK(bad_n->status == 400);
    CHECK(json::parse(bad_n->body)["field"] == "n");
  }

  TEST_CASE("oversized bodies are refused with 413") {
    LiveServer s;
    const std::string body(service::kMaxBodyBytes + 16, 'x');
    auto res = s.client().Post("/api/decompose", body, "application/json");
    REQUIRE(res);
    CHECK(res->status == 413);
    CHECK(json::parse(res->body)["field"] == "body");
  }

  TEST_CASE("decompose round trip: layers match the snapped boxes") {
    LiveServer s;
    const RgbaImage img = test_scene_image();
    const json boxes = json::array({{{"x", 1}, {"y", 3}, {"w", 5}, {"h", 6}}, {{"x", 8}, {"y", 8}, {"w", 8}, {"h", 8}}});
    auto res = s.client().Post("/api/decompose", request_body(img, boxes).dump(), "application/json");
    REQUIRE(res);
    REQUIRE(res->status == 200);
    const json j = json::parse(res->body);

    const RgbaImage bg = decode_b64_png(j["background"]);
    CHECK(bg.width() == 16);
    CHECK(bg.height() == 16);
    REQUIRE(j["layers"].size() == 2);
    // (1,3,5,6) grows outward onto the 2-pixel grid
    CHECK(j["snapped_boxes"][0] == json{{"x", 0}, {"y", 2}, {"w", 6}, {"h", 8}});
    CHECK(j["snapped_boxes"][1] == json{{"x", 8}, {"y", 8}, {"w", 8}, {"h", 8}});
    for (std::size_t i = 0; i < 2; ++i) {
      const json& layer = j["layers"][i];
      CHECK(layer["box"] == j["snapped_boxes"][i]);
      const RgbaImage rgba = decode_b64_png(layer["rgba"]);
      CHECK(rgba.width() == layer["box"]["w"].get<std::size_t>());
      CHECK(rgba.height() == layer["box"]["h"].get<std::size_t>());
    }
    CHECK(decode_b64_png(j["recomposite"]).width() == 16);
    CHECK(j["seed_used"] == 42);
    CHECK(j["steps"] == 2);
    CHECK(j["checkpoint"] == "ckpt-test");
    CHECK(j["timings_ms"].contains("total"));
  }

  TEST_CASE("same body and seed give the same response apart from timings") {
    LiveServer s;
    auto c = s.client();
    json body = request_body(test_scene_image(), json::array({{{"x", 0}, {"y", 0}, {"w", 10}, {"h", 10}},
                                                             {{"x", 4}, {"y", 4}, {"w", 10}, {"h", 10}}}));
    body["shared_noise"] = true;
    auto a = c.Post("/api/decompose", body.dump(), "application/json");
    auto b = c.Post("/api/decompose", body.dump(), "application/json");
    REQUIRE(a);
    REQUIRE(b);
    json ja = json::parse(a->body), jb = json::parse(b->body);
    ja.erase("timings_ms");
    jb.erase("timings_ms");
    CHECK(ja == jb);
    CHECK(ja["shared_noise"] == true);
  }

  TEST_CASE("scenes endpoint is seeded and well formed") {
    LiveServer s;
    auto c = s.client();
    auto a = c.Get("/api/scenes?n=3&seed=9");
    auto b = c.Get("/api/scenes?n=3&seed=9");
    REQUIRE(a);
    REQUIRE(b);
    CHECK(a->status == 200);
    CHECK(a->body == b->body);
    const json j = json::parse(a->body);
    CHECK(j["seed"] == 9);
    REQUIRE(j["scenes"].size() == 3);
    for (const json& sc : j["scenes"]) {
      CHECK(decode_b64_png(sc["image"]).width() == 16);
      CHECK(sc["boxes"].size() >= 1);
      for (const json& box : sc["boxes"]) CHECK(box["x"].get<int>() % 2 == 0);
    }
    auto bad_seed = c.Get("/api/scenes?seed=-4");
    REQUIRE(bad_seed);
    CHECK(bad_seed->status == 400);
    CHECK(json::parse(bad_seed->body)["field"] == "seed");
  }

  TEST_CASE("unknown routes answer JSON 404") {
    LiveServer s;
    auto res = s.client().Get("/api/nope");
    REQUIRE(res);
    CHECK(res->status == 404);
    CHECK(json::parse(res->body).contains("error"));
  }
}
