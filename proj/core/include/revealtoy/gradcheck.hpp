#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "revealtoy/autodiff.hpp"
#include "revealtoy/model.hpp"

namespace revealtoy {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t entries = 0;
  bool passed() const noexcept { return max_rel_error < tolerance; }
};

/// Scalar function of leaf variables.
using ScalarFn = std::function<Var(std::span<const Var>)>;

/// Compares backward() against central differences on every input entry.
/// Error per entry: |g - fd| / max(|g|, |fd|, floor).
GradCheckResult check_gradients(const std::string& name, std::vector<Tensor> inputs, const ScalarFn& fn,
                                double tolerance, double h = 1e-5, double floor = 1e-6);

/// Tiny model used by the composed check: every parameter participates.
ModelConfig gradcheck_model_config();

/// Every differentiable op (tolerance 1e-4) and the full training loss of a
/// tiny model w.r.t. all of its parameters (tolerance 1e-3).
std::vector<GradCheckResult> gradcheck_suite(std::uint64_t seed = 1);

}  // namespace revealtoy
