#include <doctest.h>

#include <cmath>

#include "affsam/dataset.hpp"
#include "affsam/errors.hpp"
#include "affsam/metrics.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace affsam;

namespace {

AffordanceMap row(std::vector<double> v) {
  const std::size_t n = v.size();
  return AffordanceMap::from(1, n, std::move(v));
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("kld closed forms") {
  CHECK(kld(row({0.25, 0.25, 0.25, 0.25}), row({0.5, 0.5, 0, 0})) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  Rng rng(1);
  const auto m = test::random_map(6, 6, rng);
  CHECK(std::abs(kld(m, m)) <= 1e-8);
  auto scaled = m;
  for (auto& v : scaled.values) v *= 7.0;
  CHECK(std::abs(kld(scaled, m)) <= 1e-8);
}

TEST_CASE("sim closed forms") {
  CHECK(sim(row({0.5, 0.5}), row({1, 0})) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(sim(row({1, 0, 0}), row({0, 0, 2})) == 0.0);
  Rng rng(2);
  const auto m = test::random_map(5, 5, rng);
  CHECK(sim(m, m) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("nss closed forms and conventions") {
  CHECK(nss(row({1, 0, 0, 0}), row({1, 0, 0, 0})) == doctest::Approx(0.75 / std::sqrt(0.1875)).epsilon(1e-12));
  CHECK(nss(row({1, 0, 0, 0}), row({1, 0, 0, 0})) == doctest::Approx(1.7321).epsilon(1e-4));
  CHECK(nss(row({0.3, 0.3, 0.3}), row({1, 0, 0})) == 0.0);
  Rng rng(3);
  const auto p = test::random_map(4, 4, rng);
  const auto g = test::random_map(4, 4, rng);
  auto affine = p;
  for (auto& v : affine.values) v = 2.5 * v + 0.7;
  CHECK(nss(affine, g) == doctest::Approx(nss(p, g)).epsilon(1e-12));
}

TEST_CASE("invalid maps are rejected") {
  CHECK_THROWS_AS(kld(row({0, 0}), row({1, 0})), InputError);
  CHECK_THROWS_AS(sim(row({1, 0}), row({0, 0})), InputError);
  CHECK_THROWS_AS(nss(row({1, 0}), row({0, 0})), InputError);
  CHECK_THROWS_AS(kld(row({-1, 2}), row({1, 0})), InputError);
  CHECK_THROWS_AS(sim(row({1, 0, 1}), row({1, 0})), DimensionError);
}

TEST_CASE("agreement with naive oracles on random pairs") {
  Rng rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t h = 1 + rng.below(12), w = 1 + rng.below(12);
    const auto p = test::random_map(h, w, rng, 0.3);
    const auto g = test::random_map(h, w, rng, 0.3);
    CHECK(std::abs(kld(p, g) - oracle::kld(p.values, g.values)) <= 1e-9);
    CHECK(std::abs(sim(p, g) - oracle::sim(p.values, g.values)) <= 1e-9);
    CHECK(std::abs(nss(p, g) - oracle::nss(p.values, g.values)) <= 1e-9);
    CHECK(kld(p, g) >= -1e-12);
    const double s = sim(p, g);
    CHECK(s >= 0.0);
    CHECK(s <= 1.0 + 1e-12);
    CHECK(s == doctest::Approx(sim(g, p)).epsilon(1e-14));
  }
}

TEST_CASE("evaluate_split: ordering, aggregation, missing predictions and resizing") {
  test::TempDir dir("metrics_split");
  const auto root = dir.path();
  Rng rng(5);
  Manifest manifest;
  std::vector<AffordanceMap> gts;
  for (int i = 0; i < 4; ++i) {
    SampleRecord r;
    r.id = "s" + std::to_string(3 - i);
    r.image_path = "images/" + r.id + ".ppm";
    r.label_path = "labels/" + r.id + ".pgm";
    r.label_kind = LabelKind::human_map;
    r.part = 3;
    r.action = "hold";
    r.object = "cup";
    r.subset = Subset::test;
    const auto gt = quantized(test::random_map(8, 8, rng));
    write_map_pgm(root / r.label_path, gt);
    manifest.records.push_back(r);
    gts.push_back(gt);
  }
  const auto preds = root / "pred";
  for (int i = 0; i < 4; ++i) write_map_f64(preds / (manifest.records[i].id + ".f64"), gts[i]);

  const MetricsReport self = evaluate_split(preds, manifest, root);
  CHECK(self.complete());
  CHECK(self.n_samples == 4);
  CHECK(self.samples.front().id == "s0");
  CHECK(std::abs(self.kld) <= 1e-8);
  CHECK(self.sim == doctest::Approx(1.0).epsilon(1e-12));
  for (const char* key : {"kld", "sim", "nss", "n_samples"}) CHECK(self.to_json().contains(key));

  Manifest shuffled = manifest;
  std::swap(shuffled.records[0], shuffled.records[2]);
  const MetricsReport again = evaluate_split(preds, shuffled, root);
  CHECK(again.kld == self.kld);
  CHECK(again.sim == self.sim);
  CHECK(again.nss == self.nss);

  // single sample equals its own metrics
  Manifest one;
  one.records = {manifest.records[1]};
  auto other = test::random_map(8, 8, rng);
  write_map_f64(preds / (one.records[0].id + ".f64"), other);
  const MetricsReport single = evaluate_split(preds, one, root);
  CHECK(single.kld == kld(other, gts[1]));
  CHECK(single.sim == sim(other, gts[1]));

  // missing and resized predictions
  std::filesystem::remove(preds / "s0.f64");
  write_map_pgm(preds / "s2.pgm", AffordanceMap::from(4, 4, std::vector<double>(16, 0.5)));
  std::filesystem::remove(preds / "s2.f64");
  const MetricsReport partial = evaluate_split(preds, manifest, root);
  CHECK_FALSE(partial.complete());
  CHECK(partial.missing == std::vector<std::string>{"s0"});
  CHECK(partial.n_samples == 3);
  CHECK(partial.resized == std::vector<std::string>{"s2"});
}

}  // TEST_SUITE
