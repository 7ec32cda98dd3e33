#include "revealtoy/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <unordered_set>

#include "revealtoy/error.hpp"

namespace revealtoy {
namespace {

thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;

MapMat as_mat(Tensor& t) {
  return MapMat(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

Var make_node(Tensor value, std::vector<Var> parents, const char* op, std::function<void(Node&)> fn) {
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + op);
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  if (g_grad_enabled) {
    bool any = std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p->requires_grad; });
    if (any) {
      node->requires_grad = true;
      node->parents = std::move(parents);
      node->backward_fn = std::move(fn);
    }
  }
  return node;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_matrix(const Tensor& a, const char* op) {
  if (a.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}

template <class F>
Tensor map_values(const Tensor& x, F f) {
  Tensor out(x.shape());
  const double* src = x.data();
  double* dst = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(src[i]);
  return out;
}

// Elementwise unary op with derivative d(x, y) evaluated from input and output.
template <class F, class D>
Var unary(const Var& x, const char* name, F f, D deriv) {
  Tensor y = map_values(x->value, f);
  return make_node(std::move(y), {x}, name, [deriv](Node& self) {
    const Node& in = *self.parents[0];
    Tensor g(in.value.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] = self.grad[i] * deriv(in.value[i], self.value[i]);
    }
    self.parents[0]->accumulate(g);
  });
}

}  // namespace

void Node::accumulate(const Tensor& g) {
  if (!requires_grad) return;
  if (g.size() != value.size()) {
    throw ShapeError(std::string("gradient size mismatch at ") + op);
  }
  if (grad.empty()) {
    grad = Tensor(value.shape(), std::vector<double>(g.values().begin(), g.values().end()));
    return;
  }
  double* dst = grad.data();
  const double* src = g.data();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
}

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape());
  return grad;
}

Var parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->op = "parameter";
  return n;
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = "constant";
  return n;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() noexcept { return g_grad_enabled; }

Var make_op(Tensor value, std::vector<Var> parents, const char* op, std::function<void(Node&)> backward_fn) {
  return make_node(std::move(value), std::move(parents), op, std::move(backward_fn));
}

void backward(const Var& root) {
  if (root->value.size() != 1) {
    throw ShapeError("backward requires a scalar root, got " + shape_str(root->value.shape()));
  }
  // Iterative post-order DFS; deterministic because parents are visited in order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) n->grad = Tensor();
  root->grad = Tensor(root->value.shape(), 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

namespace ops {

Var matmul(const Var& a, const Var& b) {
  require_matrix(a->value, "matmul");
  require_matrix(b->value, "matmul");
  const std::size_t m = a->value.rows(), k = a->value.cols(), n = b->value.cols();
  if (b->value.rows() != k) {
    throw ShapeError("matmul: inner extents disagree " + shape_str(a->value.shape()) + " x " +
                     shape_str(b->value.shape()));
  }
  Tensor y({m, n});
  as_mat(y).noalias() = as_mat(a->value) * as_mat(b->value);
  return make_node(std::move(y), {a, b}, "matmul", [](Node& self) {
    Node& A = *self.parents[0];
    Node& B = *self.parents[1];
    if (A.requires_grad) {
      Tensor ga(A.value.shape());
      as_mat(ga).noalias() = as_mat(self.grad) * as_mat(B.value).transpose();
      A.accumulate(ga);
    }
    if (B.requires_grad) {
      Tensor gb(B.value.shape());
      as_mat(gb).noalias() = as_mat(A.value).transpose() * as_mat(self.grad);
      B.accumulate(gb);
    }
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  require_matrix(a->value, "matmul_nt");
  require_matrix(b->value, "matmul_nt");
  const std::size_t m = a->value.rows(), n = b->value.rows();
  if (a->value.cols() != b->value.cols()) {
    throw ShapeError("matmul_nt: inner extents disagree " + shape_str(a->value.shape()) + " x " +
                     shape_str(b->value.shape()) + "^T");
  }
  Tensor y({m, n});
  as_mat(y).noalias() = as_mat(a->value) * as_mat(b->value).transpose();
  return make_node(std::move(y), {a, b}, "matmul_nt", [](Node& self) {
    Node& A = *self.parents[0];
    Node& B = *self.parents[1];
    if (A.requires_grad) {
      Tensor ga(A.value.shape());
      as_mat(ga).noalias() = as_mat(self.grad) * as_mat(B.value);
      A.accumulate(ga);
    }
    if (B.requires_grad) {
      Tensor gb(B.value.shape());
      as_mat(gb).noalias() = as_mat(self.grad).transpose() * as_mat(A.value);
      B.accumulate(gb);
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "add");
  Tensor y(a->value.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a->value[i] + b->value[i];
  return make_node(std::move(y), {a, b}, "add", [](Node& self) {
    self.parents[0]->accumulate(self.grad);
    self.parents[1]->accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "sub");
  Tensor y(a->value.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a->value[i] - b->value[i];
  return make_node(std::move(y), {a, b}, "sub", [](Node& self) {
    self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) {
      Tensor g = map_values(self.grad, [](double v) { return -v; });
      self.parents[1]->accumulate(g);
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "mul");
  Tensor y(a->value.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a->value[i] * b->value[i];
  return make_node(std::move(y), {a, b}, "mul", [](Node& self) {
    Node& A = *self.parents[0];
    Node& B = *self.parents[1];
    if (A.requires_grad) {
      Tensor g(A.value.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * B.value[i];
      A.accumulate(g);
    }
    if (B.requires_grad) {
      Tensor g(B.value.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * A.value[i];
      B.accumulate(g);
    }
  });
}

Var div(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "div");
  Tensor y(a->value.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a->value[i] / b->value[i];
  return make_node(std::move(y), {a, b}, "div", [](Node& self) {
    Node& A = *self.parents[0];
    Node& B = *self.parents[1];
    if (A.requires_grad) {
      Tensor g(A.value.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] / B.value[i];
      A.accumulate(g);
    }
    if (B.requires_grad) {
      Tensor g(B.value.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = -self.grad[i] * self.value[i] / B.value[i];
      B.accumulate(g);
    }
  });
}

Var add_row(const Var& x, const Var& v) {
  const std::size_t m = x->value.rows(), n = x->value.cols();
  if (v->value.size() != n) {
    throw ShapeError("add_row: vector of " + std::to_string(v->value.size()) + " for rows of " +
                     std::to_string(n));
  }
  Tensor y(x->value.shape());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) y[r * n + c] = x->value[r * n + c] + v->value[c];
  return make_node(std::move(y), {x, v}, "add_row", [m, n](Node& self) {
    self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) {
      Tensor g(self.parents[1]->value.shape());
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) g[c] += self.grad[r * n + c];
      self.parents[1]->accumulate(g);
    }
  });
}

Var mul_row(const Var& x, const Var& v) {
  const std::size_t m = x->value.rows(), n = x->value.cols();
  if (v->value.size() != n) {
    throw ShapeError("mul_row: vector of " + std::to_string(v->value.size()) + " for rows of " +
                     std::to_string(n));
  }
  Tensor y(x->value.shape());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) y[r * n + c] = x->value[r * n + c] * v->value[c];
  return make_node(std::move(y), {x, v}, "mul_row", [m, n](Node& self) {
    Node& X = *self.parents[0];
    Node& V = *self.parents[1];
    if (X.requires_grad) {
      Tensor g(X.value.shape());
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) g[r * n + c] = self.grad[r * n + c] * V.value[c];
      X.accumulate(g);
    }
    if (V.requires_grad) {
      Tensor g(V.value.shape());
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) g[c] += self.grad[r * n + c] * X.value[r * n + c];
      V.accumulate(g);
    }
  });
}

Var mul_col(const Var& x, const Var& s) {
  const std::size_t m = x->value.rows(), n = x->value.cols();
  if (s->value.size() != m) {
    throw ShapeError("mul_col: column of " + std::to_string(s->value.size()) + " for " +
                     std::to_string(m) + " rows");
  }
  Tensor y(x->value.shape());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) y[r * n + c] = x->value[r * n + c] * s->value[r];
  return make_node(std::move(y), {x, s}, "mul_col", [m, n](Node& self) {
    Node& X = *self.parents[0];
    Node& S = *self.parents[1];
    if (X.requires_grad) {
      Tensor g(X.value.shape());
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) g[r * n + c] = self.grad[r * n + c] * S.value[r];
      X.accumulate(g);
    }
    if (S.requires_grad) {
      Tensor g(S.value.shape());
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) g[r] += self.grad[r * n + c] * X.value[r * n + c];
      S.accumulate(g);
    }
  });
}

Var scale(const Var& x, double s) {
  return unary(x, "scale", [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& x, double s) {
  return unary(x, "add_scalar", [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Var silu(const Var& x) {
  return unary(
      x, "silu", [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double v, double) {
        double sig = 1.0 / (1.0 + std::exp(-v));
        return sig * (1.0 + v * (1.0 - sig));
      });
}

Var log(const Var& x) {
  return unary(x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var abs(const Var& x) {
  return unary(
      x, "abs", [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Var pow(const Var& x, double e) {
  return unary(
      x, "pow", [e](double v) { return std::pow(v, e); },
      [e](double v, double) {
        if (v == 0.0) return e == 1.0 ? 1.0 : 0.0;
        return e * std::pow(v, e - 1.0);
      });
}

Var clamp(const Var& x, double lo, double hi) {
  return unary(
      x, "clamp", [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Var layer_norm(const Var& x, double eps) {
  const std::size_t m = x->value.rows(), n = x->value.cols();
  Tensor y(x->value.shape());
  std::vector<double> inv_std(m);
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = x->value.data() + r * n;
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += row[c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) y[r * n + c] = (row[c] - mu) * inv_std[r];
  }
  return make_node(std::move(y), {x}, "layer_norm", [m, n, inv_std = std::move(inv_std)](Node& self) {
    Tensor g(self.parents[0]->value.shape());
    for (std::size_t r = 0; r < m; ++r) {
      const double* gy = self.grad.data() + r * n;
      const double* xh = self.value.data() + r * n;
      double mean_g = 0.0, mean_gx = 0.0;
      for (std::size_t c = 0; c < n; ++c) {
        mean_g += gy[c];
        mean_gx += gy[c] * xh[c];
      }
      mean_g /= static_cast<double>(n);
      mean_gx /= static_cast<double>(n);
      for (std::size_t c = 0; c < n; ++c) g[r * n + c] = inv_std[r] * (gy[c] - mean_g - xh[c] * mean_gx);
    }
    self.parents[0]->accumulate(g);
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  return add_row(mul_row(layer_norm(x, eps), gamma), beta);
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x->value.values()) s += v;
  return make_node(Tensor::scalar(s), {x}, "sum", [](Node& self) {
    Tensor g(self.parents[0]->value.shape(), self.grad[0]);
    self.parents[0]->accumulate(g);
  });
}

Var mean(const Var& x) {
  const double n = static_cast<double>(x->value.size());
  double s = 0.0;
  for (double v : x->value.values()) s += v;
  return make_node(Tensor::scalar(s / n), {x}, "mean", [n](Node& self) {
    Tensor g(self.parents[0]->value.shape(), self.grad[0] / n);
    self.parents[0]->accumulate(g);
  });
}

Var sum_cols(const Var& x) {
  const std::size_t m = x->value.rows(), n = x->value.cols();
  Tensor y({m, 1});
  for (std::size_t r = 0; r < m; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += x->value[r * n + c];
    y[r] = s;
  }
  return make_node(std::move(y), {x}, "sum_cols", [m, n](Node& self) {
    Tensor g(self.parents[0]->value.shape());
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) g[r * n + c] = self.grad[r];
    self.parents[0]->accumulate(g);
  });
}

Var row_norm(const Var& x) {
  const std::size_t m = x->value.rows(), n = x->value.cols();
  Tensor y({m, 1});
  for (std::size_t r = 0; r < m; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += x->value[r * n + c] * x->value[r * n + c];
    y[r] = std::sqrt(s);
  }
  return make_node(std::move(y), {x}, "row_norm", [m, n](Node& self) {
    const Tensor& xv = self.parents[0]->value;
    Tensor g(xv.shape());
    for (std::size_t r = 0; r < m; ++r) {
      if (self.value[r] == 0.0) continue;
      const double k = self.grad[r] / self.value[r];
      for (std::size_t c = 0; c < n; ++c) g[r * n + c] = k * xv[r * n + c];
    }
    self.parents[0]->accumulate(g);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t n = parts[0]->value.cols();
  std::size_t m = 0;
  for (const Var& p : parts) {
    if (p->value.cols() != n) throw ShapeError("concat_rows: column count mismatch");
    m += p->value.rows();
  }
  Tensor y({m, n});
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    std::copy(p->value.values().begin(), p->value.values().end(), y.data() + off);
    off += p->value.size();
  }
  return make_node(std::move(y), std::vector<Var>(parts.begin(), parts.end()), "concat_rows",
                   [offsets = std::move(offsets)](Node& self) {
                     for (std::size_t i = 0; i < self.parents.size(); ++i) {
                       Node& p = *self.parents[i];
                       if (!p.requires_grad) continue;
                       Tensor g(p.value.shape());
                       std::copy_n(self.grad.data() + offsets[i], g.size(), g.data());
                       p.accumulate(g);
                     }
                   });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts[0]->value.rows();
  std::size_t n = 0;
  for (const Var& p : parts) {
    if (p->value.rows() != m) throw ShapeError("concat_cols: row count mismatch");
    n += p->value.cols();
  }
  Tensor y({m, n});
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    const std::size_t pc = p->value.cols();
    for (std::size_t r = 0; r < m; ++r) std::copy_n(p->value.data() + r * pc, pc, y.data() + r * n + off);
    off += pc;
  }
  return make_node(std::move(y), std::vector<Var>(parts.begin(), parts.end()), "concat_cols",
                   [offsets = std::move(offsets), m, n](Node& self) {
                     for (std::size_t i = 0; i < self.parents.size(); ++i) {
                       Node& p = *self.parents[i];
                       if (!p.requires_grad) continue;
                       const std::size_t pc = p.value.cols();
                       Tensor g(p.value.shape());
                       for (std::size_t r = 0; r < m; ++r)
                         std::copy_n(self.grad.data() + r * n + offsets[i], pc, g.data() + r * pc);
                       p.accumulate(g);
                     }
                   });
}

Var slice_rows(const Var& x, std::size_t begin, std::size_t end) {
  const std::size_t m = x->value.rows(), n = x->value.cols();
  if (begin > end || end > m) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) + ") out of " +
                     std::to_string(m) + " rows");
  }
  Tensor y({end - begin, n});
  std::copy_n(x->value.data() + begin * n, (end - begin) * n, y.data());
  return make_node(std::move(y), {x}, "slice_rows", [begin, n](Node& self) {
    Tensor g(self.parents[0]->value.shape());
    std::copy_n(self.grad.data(), self.grad.size(), g.data() + begin * n);
    self.parents[0]->accumulate(g);
  });
}

Var slice_cols(const Var& x, std::size_t begin, std::size_t end) {
  const std::size_t m = x->value.rows(), n = x->value.cols();
  if (begin > end || end > n) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) + ") out of " +
                     std::to_string(n) + " cols");
  }
  const std::size_t w = end - begin;
  Tensor y({m, w});
  for (std::size_t r = 0; r < m; ++r) std::copy_n(x->value.data() + r * n + begin, w, y.data() + r * w);
  return make_node(std::move(y), {x}, "slice_cols", [m, n, w, begin](Node& self) {
    Tensor g(self.parents[0]->value.shape());
    for (std::size_t r = 0; r < m; ++r) std::copy_n(self.grad.data() + r * w, w, g.data() + r * n + begin);
    self.parents[0]->accumulate(g);
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor y = x->value.reshaped(std::move(shape));
  return make_node(std::move(y), {x}, "reshape", [](Node& self) {
    self.parents[0]->accumulate(self.grad);
  });
}

Var transpose(const Var& x) {
  require_matrix(x->value, "transpose");
  const std::size_t m = x->value.rows(), n = x->value.cols();
  Tensor y({n, m});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) y[c * m + r] = x->value[r * n + c];
  return make_node(std::move(y), {x}, "transpose", [m, n](Node& self) {
    Tensor g(self.parents[0]->value.shape());
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) g[r * n + c] = self.grad[c * m + r];
    self.parents[0]->accumulate(g);
  });
}

Var gather_rows(const Var& x, std::vector<std::size_t> indices) {
  const std::size_t m = x->value.rows(), n = x->value.cols();
  Tensor y({indices.size(), n});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= m) {
      throw ShapeError("gather_rows: index " + std::to_string(indices[r]) + " out of " + std::to_string(m));
    }
    std::copy_n(x->value.data() + indices[r] * n, n, y.data() + r * n);
  }
  return make_node(std::move(y), {x}, "gather_rows", [n, indices = std::move(indices)](Node& self) {
    Tensor g(self.parents[0]->value.shape());
    for (std::size_t r = 0; r < indices.size(); ++r) {
      double* dst = g.data() + indices[r] * n;
      const double* src = self.grad.data() + r * n;
      for (std::size_t c = 0; c < n; ++c) dst[c] += src[c];
    }
    self.parents[0]->accumulate(g);
  });
}

Var softmax_masked(const Var& logits, const Tensor& mask_bias) {
  const Tensor& z = logits->value;
  if (mask_bias.size() != z.size()) {
    throw ShapeError("softmax_masked: bias " + shape_str(mask_bias.shape()) + " for logits " +
                     shape_str(z.shape()));
  }
  const std::size_t m = z.rows(), n = z.cols();
  Tensor y(z.shape());
  for (std::size_t r = 0; r < m; ++r) {
    const double* zr = z.data() + r * n;
    const double* br = mask_bias.data() + r * n;
    double* yr = y.data() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    bool open = false;
    for (std::size_t c = 0; c < n; ++c) {
      open = open || br[c] > kBlocked / 2;
      mx = std::max(mx, zr[c] + br[c]);
    }
    if (!open) throw Error("softmax_masked: row " + std::to_string(r) + " is fully blocked");
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      // Blocked entries underflow to exactly 0; skip the exp.
      yr[c] = br[c] > kBlocked / 2 ? std::exp(zr[c] + br[c] - mx) : 0.0;
      s += yr[c];
    }
    const double inv = 1.0 / s;
    for (std::size_t c = 0; c < n; ++c) yr[c] *= inv;
  }
  return make_node(std::move(y), {logits}, "softmax_masked", [m, n](Node& self) {
    Tensor g(self.value.shape());
    for (std::size_t r = 0; r < m; ++r) {
      const double* yr = self.value.data() + r * n;
      const double* gy = self.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += yr[c] * gy[c];
      for (std::size_t c = 0; c < n; ++c) g[r * n + c] = yr[c] * (gy[c] - dot);
    }
    self.parents[0]->accumulate(g);
  });
}

}  // namespace ops
}  // namespace revealtoy
