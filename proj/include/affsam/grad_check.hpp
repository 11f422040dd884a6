#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "affsam/tensor.hpp"

namespace affsam {

struct GradCheckOptions {
  double step = 1e-5;
  /// 0 checks every coordinate; otherwise a seeded sample of this many per input.
  std::size_t max_coords_per_input = 0;
  std::uint64_t sample_seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_coord = 0;
  std::size_t coords_checked = 0;
  bool finite = true;
  std::string message;

  bool passed(double tolerance) const { return finite && max_rel_error <= tolerance; }
};

/// Compares the taped gradient of a scalar function against central finite
/// differences. `f` reads `inputs` by handle; each coordinate is perturbed in
/// place and restored. Per-coordinate error is
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& options = {});

}  // namespace affsam
