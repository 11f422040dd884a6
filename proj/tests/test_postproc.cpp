#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>

#include "affsam/errors.hpp"
#include "affsam/postproc.hpp"
#include "support.hpp"

using namespace affsam;

namespace {

// Blob-like random map: a few Gaussian bumps plus low noise.
std::vector<double> blobs(Rng& rng, std::size_t side) {
  std::vector<double> m(side * side);
  const int n = 1 + static_cast<int>(rng.below(3));
  std::vector<std::array<double, 3>> c(n);
  for (auto& b : c) b = {rng.uniform(0, side), rng.uniform(0, side), rng.uniform(1.5, 5.0)};
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      double v = 0.05 * rng.uniform();
      for (const auto& b : c) v += std::exp(-((x - b[0]) * (x - b[0]) + (y - b[1]) * (y - b[1])) / (2 * b[2] * b[2]));
      m[y * side + x] = v;
    }
  }
  return m;
}

}  // namespace

TEST_SUITE("postproc") {

TEST_CASE("hand-traced vector") {
  const std::vector<double> in = {1.0, 0.4, 0.2, 0.05};
  const auto out = postprocess(in, PostprocConfig{0.45, 3});
  // 0.4 -> 0.16/0.45; 0.2 -> 0.04/0.45 -> (0.04/0.45)^2/0.18; 0.05 -> squashed twice then cut at 0.036
  const double a = 0.04 / 0.45;
  const std::vector<double> expect = {1.0, 0.16 / 0.45, a * a / 0.18, 0.0};
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(out[i] - expect[i]) <= 1e-12);
  CHECK(out[1] == doctest::Approx(0.35556).epsilon(1e-4));
  CHECK(out[2] == doctest::Approx(0.043896).epsilon(1e-4));
}

TEST_CASE("filtration count selects a prefix of the steps") {
  const std::vector<double> in = {1.0, 0.4, 0.2, 0.05};
  const auto one = postprocess(in, PostprocConfig{0.45, 1});
  CHECK(one[3] == doctest::Approx(0.0025 / 0.45).epsilon(1e-14));
  const auto two = postprocess(in, PostprocConfig{0.45, 2});
  const double s = 0.0025 / 0.45;
  CHECK(two[3] == doctest::Approx(s * s / 0.18).epsilon(1e-14));
}

TEST_CASE("identity cases") {
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const auto m = blobs(rng, 12);
    CHECK(postprocess(m, PostprocConfig{0.0, 3}) == m);
  }
  const std::vector<double> c(9, 0.3);
  CHECK(postprocess(c, PostprocConfig{}) == c);
  const std::vector<double> z(9, 0.0);
  CHECK(postprocess(z, PostprocConfig{}) == z);
}

TEST_CASE("invalid input and configuration") {
  CHECK_THROWS_AS(postprocess(std::vector<double>{0.2, -0.1}, PostprocConfig{}), InputError);
  CHECK_THROWS_AS(postprocess(std::vector<double>{0.2}, PostprocConfig{1.2, 3}), ConfigError);
  CHECK_THROWS_AS(postprocess(std::vector<double>{0.2}, PostprocConfig{0.45, 4}), ConfigError);
}

TEST_CASE("contraction, max and argmax preservation, monotone in gamma") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const auto m = blobs(rng, 10);
    const double gamma = rng.uniform();
    const auto out = postprocess(m, PostprocConfig{gamma, 3});
    const auto out_hi = postprocess(m, PostprocConfig{std::min(1.0, gamma + 0.1), 3});
    const double mx = *std::max_element(m.begin(), m.end());
    CHECK(*std::max_element(out.begin(), out.end()) == mx);
    for (std::size_t i = 0; i < m.size(); ++i) {
      CHECK(out[i] <= m[i]);
      CHECK((m[i] == mx) == (out[i] == mx));
      CHECK(out_hi[i] <= out[i]);
    }
  }
}

TEST_CASE("processed blob maps have fewer pixels above 5% of the peak") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = blobs(rng, 24);
    const auto out = postprocess(m, PostprocConfig{});
    const double cut = 0.05 * *std::max_element(m.begin(), m.end());
    const auto above = [cut](const std::vector<double>& v) {
      return std::count_if(v.begin(), v.end(), [cut](double x) { return x > cut; });
    };
    CHECK(above(out) < above(m));
  }
}

}  // TEST_SUITE
