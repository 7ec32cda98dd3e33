#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "gen.hpp"
#include "revealtoy/autodiff.hpp"
#include "revealtoy/error.hpp"
#include "revealtoy/gradcheck.hpp"
#include "revealtoy/tensor.hpp"

using namespace revealtoy;
using revealtoy::testing::Gen;

namespace {

// Central differences of a scalar function of one tensor, compared with the
// gradient left on the leaf by backward().
double fd_max_rel_error(Tensor x, const std::function<Var(const Var&)>& f) {
  Var leaf = parameter(x);
  Var out = f(leaf);
  backward(out);
  const Tensor g = leaf->grad;
  double worst = 0.0;
  const double h = 1e-5;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double fp = f(constant(xp))->value.item();
    const double fm = f(constant(xm))->value.item();
    const double fd = (fp - fm) / (2 * h);
    const double denom = std::max({std::fabs(fd), std::fabs(g[i]), 1e-6});
    worst = std::max(worst, std::fabs(fd - g[i]) / denom);
  }
  return worst;
}

Var weighted_sum(const Var& y, const Tensor& w) { return ops::sum(ops::mul(y, constant(w))); }

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("shape bookkeeping") {
    Tensor t(Shape{2, 3, 4}, 1.5);
    CHECK(t.size() == 24);
    CHECK(t.rows() == 6);
    CHECK(t.cols() == 4);
    CHECK(t.reshaped({4, 6}).cols() == 6);
    CHECK_THROWS_AS(t.reshaped({5, 5}), ShapeError);
    CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
    CHECK(Tensor::scalar(3).item() == 3);
    CHECK_THROWS(t.item());
  }

  TEST_CASE("matmul identity and hand arithmetic") {
    const Tensor b = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
    CHECK(ops::matmul(constant(Tensor::matrix({{1, 0}, {0, 1}})), constant(b))->value == b);
    const Var r = ops::matmul(constant(Tensor::matrix({{1, 2}})), constant(Tensor::matrix({{3}, {4}})));
    CHECK(r->value.item() == 11);
    CHECK_THROWS_AS(ops::matmul(constant(b), constant(b)), ShapeError);
  }

  TEST_CASE("matmul gradients match central differences") {
    Gen g(11);
    const Tensor a = g.normal_tensor({5, 7});
    const Tensor b = g.normal_tensor({7, 3});
    const Tensor w = g.normal_tensor({5, 3});
    CHECK(fd_max_rel_error(a, [&](const Var& x) { return weighted_sum(ops::matmul(x, constant(b)), w); }) < 1e-4);
    CHECK(fd_max_rel_error(b, [&](const Var& x) { return weighted_sum(ops::matmul(constant(a), x), w); }) < 1e-4);
  }

  TEST_CASE("softmax_masked examples") {
    Var y = ops::softmax_masked(constant(Tensor::matrix({{0, 0, 0}})), Tensor(Shape{1, 3}, 0.0));
    for (double v : y->value.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    Var z = ops::softmax_masked(constant(Tensor::matrix({{5, 1}})), Tensor::matrix({{0, ops::kBlocked}}));
    CHECK(z->value[0] == 1.0);
    CHECK(z->value[1] == 0.0);
    CHECK_THROWS(ops::softmax_masked(constant(Tensor::matrix({{1, 2}})),
                                     Tensor::matrix({{ops::kBlocked, ops::kBlocked}})));
  }

  TEST_CASE("softmax_masked rows sum to one; blocked entries are exactly zero") {
    Gen g(5);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t rows = 1 + g.index(6), cols = 1 + g.index(12);
      Tensor logits = g.normal_tensor({rows, cols}, 10.0);
      Tensor bias(Shape{rows, cols});
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t keep = g.index(cols);
        for (std::size_t c = 0; c < cols; ++c)
          if (c != keep && g.coin()) bias.at(r, c) = ops::kBlocked;
      }
      const Tensor y = ops::softmax_masked(constant(logits), bias)->value;
      for (std::size_t r = 0; r < rows; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < cols; ++c) {
          s += y.at(r, c);
          if (bias.at(r, c) != 0.0) CHECK(y.at(r, c) == 0.0);
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
      }
    }
  }

  TEST_CASE("softmax_masked gradient") {
    Gen g(6);
    const Tensor logits = g.normal_tensor({4, 8});
    Tensor bias(Shape{4, 8});
    bias.at(1, 3) = ops::kBlocked;
    bias.at(2, 0) = ops::kBlocked;
    const Tensor w = g.normal_tensor({4, 8});
    CHECK(fd_max_rel_error(logits, [&](const Var& x) { return weighted_sum(ops::softmax_masked(x, bias), w); }) <
          1e-4);
  }

  TEST_CASE("layer_norm gives zero mean, unit variance") {
    Gen g(7);
    const Tensor x = g.normal_tensor({3, 17}, 4.0);
    const Tensor y = ops::layer_norm(constant(x))->value;
    for (std::size_t r = 0; r < 3; ++r) {
      double m = 0, v = 0;
      for (std::size_t c = 0; c < 17; ++c) m += y.at(r, c);
      m /= 17;
      for (std::size_t c = 0; c < 17; ++c) v += (y.at(r, c) - m) * (y.at(r, c) - m);
      v /= 17;
      CHECK(std::fabs(m) < 1e-12);
      CHECK(v == doctest::Approx(1.0).epsilon(1e-5));
    }
  }

  TEST_CASE("sum of squares has gradient 2x") {
    Gen g(8);
    const Tensor x = g.normal_tensor({4, 3});
    Var p = parameter(x);
    backward(ops::sum(ops::mul(p, p)));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(p->grad[i] == 2 * x[i]);
  }

  TEST_CASE("concat then slice round-trips") {
    Gen g(9);
    const Tensor a = g.normal_tensor({2, 3}), b = g.normal_tensor({4, 3});
    const std::vector<Var> parts = {constant(a), constant(b)};
    Var c = ops::concat_rows(parts);
    CHECK(ops::slice_rows(c, 0, 2)->value == a);
    CHECK(ops::slice_rows(c, 2, 6)->value == b);
    const Tensor d = g.normal_tensor({2, 5});
    const std::vector<Var> cols = {constant(a), constant(d)};
    Var e = ops::concat_cols(cols);
    CHECK(ops::slice_cols(e, 0, 3)->value == a);
    CHECK(ops::slice_cols(e, 3, 8)->value == d);
    CHECK_THROWS_AS(ops::slice_rows(c, 4, 9), ShapeError);
  }

  TEST_CASE("transpose, reshape and gather") {
    const Tensor a = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
    const Tensor t = ops::transpose(constant(a))->value;
    CHECK(t.shape() == Shape{3, 2});
    CHECK(t.at(2, 1) == 6);
    CHECK(ops::reshape(constant(a), {3, 2})->value.at(2, 1) == 6);
    const Tensor gth = ops::gather_rows(constant(a), {1, 1, 0})->value;
    CHECK(gth.at(0, 0) == 4);
    CHECK(gth.at(2, 2) == 3);
    // gradient of a repeated gather scatters back with multiplicity
    Var p = parameter(a);
    backward(ops::sum(ops::gather_rows(p, {1, 1, 0})));
    CHECK(p->grad.at(1, 0) == 2);
    CHECK(p->grad.at(0, 0) == 1);
  }

  TEST_CASE("backward: leaf root, shared paths, non-scalar root") {
    Var p = parameter(Tensor::scalar(3.0));
    backward(p);
    CHECK(p->grad.item() == 1.0);
    Var q = parameter(Tensor::scalar(2.0));
    backward(ops::add(ops::scale(q, 3.0), ops::mul(q, q)));  // 3q + q^2 -> 3 + 2q
    CHECK(q->grad.item() == 7.0);
    CHECK_THROWS_AS(backward(parameter(Tensor(Shape{2}, 1.0))), ShapeError);
  }

  TEST_CASE("backward is deterministic") {
    Gen g(10);
    const Tensor a = g.normal_tensor({6, 6}), b = g.normal_tensor({6, 6});
    auto run = [&] {
      Var p = parameter(a);
      Var y = ops::softmax_masked(ops::matmul_nt(p, constant(b)), Tensor(Shape{6, 6}));
      backward(ops::sum(ops::silu(ops::matmul(y, p))));
      return p->grad;
    };
    CHECK(run() == run());
  }

  TEST_CASE("no-grad guard records nothing") {
    Var p = parameter(Tensor::scalar(1.0));
    {
      NoGradGuard guard;
      CHECK_FALSE(grad_enabled());
      Var y = ops::scale(p, 2.0);
      CHECK(y->parents.empty());
    }
    CHECK(grad_enabled());
  }

  TEST_CASE("every differentiable op passes the finite-difference suite") {
    for (const GradCheckResult& r : gradcheck_suite(3)) {
      if (r.name == "model.total_loss") continue;  // covered by the acceptance run
      INFO(r.name << " rel err " << r.max_rel_error);
      CHECK(r.passed());
    }
  }
}
