#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "affsam/backbone.hpp"
#include "affsam/image_io.hpp"
#include "affsam/nn.hpp"
#include "affsam/tensor.hpp"

namespace test {

inline affsam::BackboneConfig tiny_backbone() {
  affsam::BackboneConfig c;
  c.sam_dim = 8;
  c.mm_dim = 8;
  c.image_size = 16;
  c.patch = 8;
  c.text_tokens = 3;
  c.taps = 2;
  c.depth = 2;
  c.mm_depth = 1;
  c.heads = 2;
  c.vocab = 16;
  c.mask_channels = 2;
  c.decoder_rounds = 1;
  return c;
}

inline affsam::Tensor random_tensor(affsam::Shape shape, affsam::Rng& rng, double lo = -1.0, double hi = 1.0,
                                    bool requires_grad = false) {
  std::vector<double> v(affsam::shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return affsam::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline affsam::AffordanceMap random_map(std::size_t h, std::size_t w, affsam::Rng& rng, double sparsity = 0.0) {
  auto m = affsam::AffordanceMap::zeros(h, w);
  for (auto& v : m.values) v = rng.uniform() < sparsity ? 0.0 : rng.uniform();
  m.values[rng.below(m.values.size())] += 0.5;  // never all-zero
  return m;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

// Fresh scratch directory under the build tree, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(std::filesystem::temp_directory_path() / ("affsam_test_" + name)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace test
