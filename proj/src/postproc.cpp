#include "affsam/postproc.hpp"

#include <algorithm>
#include <cmath>

#include "affsam/errors.hpp"

namespace affsam {

void PostprocConfig::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("postprocess: gamma must lie in [0, 1]");
  if (num_filtrations < 1 || num_filtrations > 3) throw ConfigError("postprocess: num_filtrations must be 1, 2 or 3");
}

std::vector<double> postprocess(std::span<const double> map, const PostprocConfig& config) {
  config.validate();
  double peak = 0.0;
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (!(map[i] >= 0.0)) throw InputError("postprocess: map value at index " + std::to_string(i) + " is negative or NaN");
    peak = std::max(peak, map[i]);
  }
  std::vector<double> out(map.begin(), map.end());
  const double t1 = config.gamma * peak;
  const double t2 = 0.4 * t1;
  const double t3 = 0.2 * t2;

  auto squash = [&out](double threshold) {
    if (threshold == 0.0) return;
    for (auto& v : out) {
      if (!(v >= threshold)) v = v * v / threshold;
    }
  };
  squash(t1);
  if (config.num_filtrations >= 2) squash(t2);
  if (config.num_filtrations >= 3 && t3 != 0.0) {
    for (auto& v : out) {
      if (!(v >= t3)) v = 0.0;
    }
  }
  return out;
}

AffordanceMap postprocess(const AffordanceMap& map, const PostprocConfig& config) {
  return AffordanceMap::from(map.height, map.width, postprocess(map.values, config));
}

}  // namespace affsam
