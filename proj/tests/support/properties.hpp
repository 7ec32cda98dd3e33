#pragma once
// Randomized property sweeps shared by the unit tests and the acceptance
// runner. Each returns how many cases ran and the first counterexample.

#include <cstdint>
#include <string>
#include <vector>

namespace revealtoy::testing {

struct PropertyResult {
  std::size_t cases = 0;
  std::size_t failures = 0;
  std::string first_failure;
  double max_error = 0.0;  // for numeric comparisons

  bool ok() const noexcept { return cases > 0 && failures == 0; }
  void fail(const std::string& why) {
    if (failures++ == 0) first_failure = why;
  }
};

/// RAA mask vs the per-pair rule on random layouts (<= 128 tokens, <= 4 FG).
PropertyResult raa_mask_property(std::uint64_t seed, std::size_t cases);

/// One masked attention: FG(i) outputs are bit-identical when FG(j != i)
/// keys/values are replaced by fresh random values.
PropertyResult raa_leakage_property(std::uint64_t seed, std::size_t cases);

/// OGA region masks vs per-patch set algebra, plus disjointness and coverage.
PropertyResult oga_mask_property(std::uint64_t seed, std::size_t cases);

/// OGA cross-attention mask vs the per-row rule; SKIP rows iff M_i is empty.
/// Also counts how many layouts hit the SKIP path.
PropertyResult oga_attention_property(std::uint64_t seed, std::size_t cases, std::size_t* skip_layouts = nullptr);

/// Flow identities on random layouts: exact interpolation endpoints, the
/// clean-estimate round trip (max_error), and every loss at ground truth.
PropertyResult flow_identity_property(std::uint64_t seed, std::size_t cases);

/// flow_losses on random predictions vs an image-space recomputation.
PropertyResult flow_loss_property(std::uint64_t seed, std::size_t cases, double tol);

/// Library metric vs the brute-force oracle; max_error is the largest
/// absolute deviation seen. `metric` is one of psnr, ssim, soft_iou, sad,
/// mad, mse, texture.
PropertyResult metric_property(const std::string& metric, std::uint64_t seed, std::size_t cases, double tol);

std::vector<std::string> metric_names();

}  // namespace revealtoy::testing
