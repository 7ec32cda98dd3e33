#include <doctest.h>

#include <cmath>
#include <vector>

#include "gen.hpp"
#include "oracles.hpp"
#include "properties.hpp"
#include "revealtoy/codec.hpp"
#include "revealtoy/error.hpp"
#include "revealtoy/flow.hpp"

using namespace revealtoy;
using revealtoy::testing::Gen;

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

// Random layout on a 8x8 canvas with p = 2, plus matching data and noise.
struct Case {
  TokenLayout layout;
  Tensor data, noise;
};

Case random_case(Gen& g, std::size_t max_fg = 3) {
  Case c;
  const auto boxes = g.grid_boxes(1 + g.index(max_fg), 4, 4, 2);
  c.layout = build_layout(8, 8, 2, 1, boxes);
  c.data = Tensor({c.layout.latent_count(), 16});
  for (double& v : c.data.values()) v = g.uniform(-1, 1);
  c.noise = g.normal_tensor({c.layout.latent_count(), 16});
  return c;
}

}  // namespace

TEST_SUITE("flow") {
  TEST_CASE("interpolation endpoints and arithmetic") {
    Gen g(91);
    const Tensor x = g.normal_tensor({3, 4}), e = g.normal_tensor({3, 4});
    CHECK(interpolate(x, e, 0.0).z_t == x);
    CHECK(interpolate(x, e, 1.0).z_t == e);
    const FlowState s = interpolate(Tensor::scalar(2.0), Tensor::scalar(-1.0), 0.25);
    CHECK(s.z_t.item() == 1.25);
    CHECK(s.v_t.item() == -3.0);
    CHECK_THROWS_AS(interpolate(x, e, 1.5), ValidationError);
    CHECK_THROWS_AS(interpolate(x, e, -0.1), ValidationError);
    CHECK_THROWS_AS(interpolate(x, Tensor({2, 4}), 0.5), ShapeError);
  }

  TEST_CASE("clean estimate recovers the data from the true velocity") {
    Gen g(92);
    for (int trial = 0; trial < 200; ++trial) {
      const Tensor x = g.normal_tensor({5, 6}), e = g.normal_tensor({5, 6});
      const double t = trial == 0 ? 1.0 : g.uniform();
      const FlowState s = interpolate(x, e, t);
      CHECK(max_abs_diff(clean_estimate(s.z_t, s.v_t, t), x) <= 1e-12);
    }
    const Tensor z = g.normal_tensor({2, 2});
    CHECK(clean_estimate(z, g.normal_tensor({2, 2}), 0.0) == z);
  }

  TEST_CASE("velocity error maps to -t times the error") {
    Gen g(93);
    for (int trial = 0; trial < 50; ++trial) {
      const Tensor x = g.normal_tensor({4, 4}), e = g.normal_tensor({4, 4}), err = g.normal_tensor({4, 4});
      const double t = g.uniform();
      const FlowState s = interpolate(x, e, t);
      Tensor v = s.v_t;
      for (std::size_t i = 0; i < v.size(); ++i) v[i] += err[i];
      const Tensor z = clean_estimate(s.z_t, v, t);
      for (std::size_t i = 0; i < z.size(); ++i) CHECK(z[i] - x[i] == doctest::Approx(-t * err[i]).epsilon(1e-9));
    }
  }

  TEST_CASE("fm loss: zero at truth, constant offset, brute force") {
    Gen g(94);
    std::vector<Tensor> target = {g.normal_tensor({4, 8}), g.normal_tensor({2, 8}), g.normal_tensor({6, 8})};
    std::vector<Var> exact, offset;
    for (const Tensor& t : target) {
      exact.push_back(constant(t));
      Tensor o = t;
      for (double& v : o.values()) v += 0.3;
      offset.push_back(constant(o));
    }
    CHECK(fm_loss(exact, target)->value.item() == 0.0);
    CHECK(fm_loss(offset, target)->value.item() == doctest::Approx(3 * 0.09).epsilon(1e-12));
    std::vector<Var> rnd;
    double want = 0;
    for (const Tensor& t : target) {
      const Tensor p = g.normal_tensor(t.shape());
      double se = 0;
      for (std::size_t i = 0; i < t.size(); ++i) se += (p[i] - t[i]) * (p[i] - t[i]);
      want += se / t.size();
      rnd.push_back(constant(p));
    }
    CHECK(std::fabs(fm_loss(rnd, target)->value.item() - want) <= 1e-9);
  }

  TEST_CASE("alpha loss: zero at truth, worst pixel value, monotone") {
    LossConfig cfg;
    const std::vector<Tensor> truth = {Tensor({1, 1}, -1.0)};
    const std::vector<Var> same = {constant(truth[0])};
    CHECK(alpha_loss(same, truth, cfg)->value.item() == 0.0);
    const std::vector<Var> worst = {constant(Tensor({1, 1}, 1.0))};
    const double want = -std::pow(0.95, 1.5) * std::log(0.05 + 1e-6);
    CHECK(alpha_loss(worst, truth, cfg)->value.item() == doctest::Approx(want).epsilon(1e-12));
    CHECK(want == doctest::Approx(2.774).epsilon(1e-3));
    double prev = 0.0;
    for (int k = 1; k <= 100; ++k) {
      const double gap = k / 100.0;  // unit-domain difference
      const std::vector<Var> p = {constant(Tensor({1, 1}, -1.0 + 2 * gap))};
      const double v = alpha_loss(p, truth, cfg)->value.item();
      CHECK(v > prev);
      prev = v;
    }
  }

  TEST_CASE("alpha loss matches the per-pixel oracle, including out-of-range predictions") {
    Gen g(95);
    LossConfig cfg;
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<Tensor> truth;
      std::vector<Var> pred;
      double want = 0;
      for (std::size_t l = 0; l < 1 + g.index(3); ++l) {
        const std::size_t n = 1 + g.index(40);
        Tensor t({n, 1}), p({n, 1});
        double s = 0;
        for (std::size_t i = 0; i < n; ++i) {
          t[i] = g.uniform(-1, 1);
          p[i] = g.uniform(-1.3, 1.3);
          s += oracle::alpha_pixel(p[i], t[i], cfg.tau, cfg.gamma, cfg.eps_log);
        }
        want += s / n;
        truth.push_back(t);
        pred.push_back(constant(p));
      }
      CHECK(std::fabs(alpha_loss(pred, truth, cfg)->value.item() - want) <= 1e-9);
    }
  }

  TEST_CASE("cosine: parallel vectors, zero norms") {
    const Tensor bg = Tensor::matrix({{0.5, 0, 0}}), fg = Tensor::matrix({{1, 0, 0}});
    CHECK(mean_cosine(bg, fg, 1e-6) == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(mean_cosine(Tensor::matrix({{0, 0, 0}}), fg, 1e-6) == 0.0);
  }

  TEST_CASE("orth loss: zero at truth, random fields vs oracle") {
    Gen g(96);
    LossConfig cfg;
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<OrthPair> pairs;
      double want = 0;
      for (std::size_t j = 0; j < 1 + g.index(3); ++j) {
        const std::size_t n = 1 + g.index(30);
        OrthPair p{constant(g.normal_tensor({n, 3})), constant(g.normal_tensor({n, 3})), g.normal_tensor({n, 3}),
                   g.normal_tensor({n, 3})};
        double sp = 0, st = 0;
        for (std::size_t r = 0; r < n; ++r) {
          sp += oracle::cosine(p.bg_pred->value.data() + 3 * r, p.fg_pred->value.data() + 3 * r, 3, cfg.eps_cos);
          st += oracle::cosine(p.bg_true.data() + 3 * r, p.fg_true.data() + 3 * r, 3, cfg.eps_cos);
        }
        want += std::fabs(sp / n - st / n);
        pairs.push_back(p);
      }
      CHECK(std::fabs(orth_loss(pairs, cfg)->value.item() - want) <= 1e-9);
      for (OrthPair& p : pairs) {
        p.bg_pred = constant(p.bg_true);
        p.fg_pred = constant(p.fg_true);
      }
      CHECK(orth_loss(pairs, cfg)->value.item() == 0.0);
    }
  }

  TEST_CASE("all losses vanish at ground truth") {
    Gen g(97);
    LossConfig cfg;
    for (int trial = 0; trial < 20; ++trial) {
      const Case c = random_case(g);
      const FlowState s = interpolate(c.data, c.noise, g.uniform());
      const LossTerms terms = flow_losses(c.layout, constant(s.v_t), s, cfg);
      CHECK(terms.fm->value.item() == 0.0);
      CHECK(terms.alpha->value.item() <= 1e-12);
      CHECK(terms.orth->value.item() <= 1e-9);
      CHECK(terms.total->value.item() <= 1e-9);
      CHECK(terms.total->value.item() >= 0.0);
    }
  }

  TEST_CASE("losses on random predictions match the image-space oracle") {
    const auto r = revealtoy::testing::flow_loss_property(98, 30, 1e-9);
    INFO(r.first_failure << " max err " << r.max_error);
    CHECK(r.ok());
  }

  TEST_CASE("identities hold on random layouts") {
    const auto r = revealtoy::testing::flow_identity_property(100, 50);
    INFO(r.first_failure << " max err " << r.max_error);
    CHECK(r.ok());
    CHECK(r.max_error <= 1e-12);
  }

  TEST_CASE("zero weights reduce the total to the flow-matching term") {
    Gen g(99);
    LossConfig cfg;
    cfg.lambda_alpha = cfg.lambda_orth = 0.0;
    const Case c = random_case(g);
    const FlowState s = interpolate(c.data, c.noise, 0.4);
    const LossTerms terms = flow_losses(c.layout, constant(g.normal_tensor(s.v_t.shape())), s, cfg);
    CHECK(terms.total->value.item() == terms.fm->value.item());
  }

  TEST_CASE("loss config validation") {
    LossConfig cfg;
    cfg.tau = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = LossConfig{};
    cfg.gamma = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    CHECK(LossConfig{}.tau == 0.95);
    CHECK(LossConfig{}.gamma == 1.5);
    CHECK(LossConfig{}.lambda_alpha == 1.0);
    CHECK(LossConfig{}.lambda_orth == 1.0);
  }
}
