#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "revealtoy/tensor.hpp"

namespace revealtoy {

/// One vertex of the reverse-mode graph. Values are immutable once the node
/// is published; gradients are (re)allocated by `backward`.
struct Node {
  Tensor value;
  Tensor grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";
  bool requires_grad = false;

  /// Adds `g` into `grad`, allocating zeros on first touch.
  void accumulate(const Tensor& g);
  Tensor& grad_buffer();
};

using Var = std::shared_ptr<Node>;

/// Leaf that receives a gradient.
Var parameter(Tensor value);
/// Leaf that never receives a gradient.
Var constant(Tensor value);

/// Disables graph recording on the current thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled() noexcept;

/// Publishes a node computed outside the built-in op set. `backward_fn`
/// reads `self.grad` and accumulates into `self.parents`.
Var make_op(Tensor value, std::vector<Var> parents, const char* op, std::function<void(Node&)> backward_fn);

/// Reverse pass from a scalar root. Every node reachable from `root` gets a
/// fresh gradient; leaves created with `parameter` keep theirs afterwards.
void backward(const Var& root);

namespace ops {

// Large-negative additive bias that removes a key from a softmax row.
inline constexpr double kBlocked = -1e9;

Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

/// x[m x n] + v[n] on every row.
Var add_row(const Var& x, const Var& v);
/// x[m x n] * v[n] on every row.
Var mul_row(const Var& x, const Var& v);
/// x[m x n] * s[m x 1] on every column.
Var mul_col(const Var& x, const Var& s);

Var scale(const Var& x, double s);
Var add_scalar(const Var& x, double s);

Var silu(const Var& x);
Var log(const Var& x);
Var abs(const Var& x);
Var pow(const Var& x, double exponent);
Var clamp(const Var& x, double lo, double hi);

/// Per-row normalization to zero mean and unit variance.
Var layer_norm(const Var& x, double eps = 1e-6);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6);

Var sum(const Var& x);
Var mean(const Var& x);
/// Row sums: [m x n] -> [m x 1].
Var sum_cols(const Var& x);
/// Euclidean norm of each row: [m x n] -> [m x 1]. Zero rows get zero gradient.
Var row_norm(const Var& x);

Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(const Var& x, std::size_t begin, std::size_t end);
Var slice_cols(const Var& x, std::size_t begin, std::size_t end);
Var reshape(const Var& x, Shape shape);
Var transpose(const Var& x);
/// out[r] = x[indices[r]]; gradient scatters back.
Var gather_rows(const Var& x, std::vector<std::size_t> indices);

/// Row-wise softmax of `logits + mask_bias`. Every row must keep at least one
/// entry that is not `kBlocked`.
Var softmax_masked(const Var& logits, const Tensor& mask_bias);

}  // namespace ops
}  // namespace revealtoy
