#pragma once

#include <span>
#include <vector>

#include "affsam/image_io.hpp"

namespace affsam {

struct PostprocConfig {
  double gamma = 0.45;
  int num_filtrations = 3;

  void validate() const;
};

/// Cascade filter that suppresses low-response regions of a pseudo-label map.
///
/// With t1 = gamma * max(M), t2 = 0.4 * t1, t3 = 0.2 * t2, the first
/// `num_filtrations` of these steps are applied in order:
///   M <- M >= t1 ? M : M^2 / t1
///   M <- M >= t2 ? M : M^2 / t2
///   M <- M >= t3 ? M : 0
/// A step whose threshold is zero leaves the map unchanged. Throws InputError
/// on negative values.
std::vector<double> postprocess(std::span<const double> map, const PostprocConfig& config);
AffordanceMap postprocess(const AffordanceMap& map, const PostprocConfig& config);

}  // namespace affsam
