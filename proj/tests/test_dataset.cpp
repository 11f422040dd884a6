#include <doctest.h>

#include <algorithm>
#include <fstream>

#include "affsam/dataset.hpp"
#include "affsam/detail/hash.hpp"
#include "affsam/errors.hpp"
#include "affsam/metrics.hpp"
#include "affsam/postproc.hpp"
#include "affsam/synth.hpp"
#include "support.hpp"

using namespace affsam;
namespace fs = std::filesystem;

namespace {

SampleRecord record(const std::string& id, const std::string& object, Subset subset, Split split = Split::hard) {
  SampleRecord r;
  r.id = id;
  r.image_path = "images/" + id + ".ppm";
  r.label_path = "labels/" + id + ".pgm";
  r.label_kind = LabelKind::human_map;
  r.part = 3;
  r.action = "hold";
  r.object = object;
  r.split = split;
  r.subset = subset;
  return r;
}

SynthConfig small_synth() {
  SynthConfig c;
  c.n_objects = 4;
  c.n_actions = 2;
  c.size = 32;
  c.part1_per_pair = 1;
  c.part2_per_pair = 1;
  return c;
}

// Hash of every file (relative path + bytes) under a directory, in path order.
std::uint64_t tree_hash(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), root));
  }
  std::sort(files.begin(), files.end());
  std::uint64_t h = detail::fnv1a("");
  for (const auto& f : files) {
    h = detail::fnv1a(f.generic_string(), h);
    const auto bytes = read_file_bytes(root / f);
    h = detail::fnv1a(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), h);
  }
  return h;
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("prompt template") {
  CHECK(build_prompt("wear", "hat") == "wear hat");
  CHECK(build_prompt("hold", "cup") == "hold cup");
  CHECK(build_prompt("Drink", "Cup") == "drink cup");
  CHECK(build_prompt("  pick   up ", "Tea  Cup") == "pick up tea cup");
  CHECK_THROWS_AS(build_prompt("", "cup"), ValidationError);
  CHECK_THROWS_AS(build_prompt("hold", " "), ValidationError);
}

TEST_CASE("label kind follows the part") {
  CHECK(label_kind_for_part(1) == LabelKind::binary_mask);
  CHECK(label_kind_for_part(2) == LabelKind::pseudo_map);
  CHECK(label_kind_for_part(3) == LabelKind::human_map);
  Manifest m;
  m.records = {record("a", "cup", Subset::train)};
  m.records[0].label_kind = LabelKind::binary_mask;
  CHECK_THROWS_AS(validate_manifest(m), ValidationError);
}

TEST_CASE("manifest round trip and strict fields") {
  Manifest m;
  m.records = {record("a", "cup", Subset::train), record("b", "knife", Subset::test)};
  m.records[1].source = "padv2";
  m.update_header();
  const Manifest back = parse_manifest(serialize_manifest(m));
  CHECK(back.records == m.records);
  CHECK(back.header["part_counts"]["3"] == 2);
  CHECK(back.header["reference_counts"]["part1"] == 39159);

  CHECK_THROWS_AS(record_from_json({{"id", "x"}, {"colour", "red"}}), ValidationError);
  CHECK_THROWS_AS(parse_manifest("{not json}\n"), ValidationError);

  Manifest dup;
  dup.records = {record("a", "cup", Subset::train), record("a", "cup", Subset::train)};
  CHECK_THROWS_AS(validate_manifest(dup), ValidationError);
}

TEST_CASE("hard split hygiene") {
  Manifest ok;
  ok.records = {record("a", "cup", Subset::train), record("b", "knife", Subset::test)};
  CHECK(validate_hard_split(ok).passed());

  Manifest bad;
  bad.records = {record("a", "cup", Subset::train), record("b", "knife", Subset::train),
                 record("c", "knife", Subset::test)};
  const SplitReport r = validate_hard_split(bad);
  CHECK(r.overlap == std::set<std::string>{"knife"});
  CHECK_THROWS_AS(r.require_passed(), ValidationError);

  // random partitions against a brute-force intersection
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    Manifest m;
    std::set<std::string> train, test;
    for (int i = 0; i < 20; ++i) {
      const std::string obj = object_name(static_cast<int>(rng.below(10)));
      const Subset s = rng.uniform() < 0.5 ? Subset::train : Subset::test;
      (s == Subset::train ? train : test).insert(obj);
      m.records.push_back(record("r" + std::to_string(i), obj, s));
    }
    std::set<std::string> expect;
    for (const auto& o : train) {
      if (test.count(o)) expect.insert(o);
    }
    CHECK(validate_hard_split(m).overlap == expect);
  }
}

TEST_CASE("pseudo labels equal the post-processed raw maps") {
  test::TempDir dir("pseudo");
  Rng rng(2);
  Manifest m;
  for (int i = 0; i < 3; ++i) {
    SampleRecord r = record("p" + std::to_string(i), "cup", Subset::train, Split::easy);
    r.part = 2;
    r.label_kind = LabelKind::pseudo_map;
    write_map_pgm(dir.path() / "raw" / (r.id + ".pgm"), test::random_map(8, 8, rng));
    m.records.push_back(r);
  }
  m.records.push_back(record("p_missing", "cup", Subset::train, Split::easy));
  const PostprocConfig cfg;
  const auto result = generate_pseudo_labels(dir.path() / "raw", cfg, m, dir.path());
  CHECK(result.skipped == std::vector<std::string>{"p_missing"});
  CHECK(result.manifest.records.size() == 3);
  CHECK(result.manifest.header["provenance"]["gamma"] == 0.45);
  CHECK(result.manifest.header["provenance"]["num_filtrations"] == 3);
  for (const auto& r : result.manifest.records) {
    const auto raw = read_map_pgm(dir.path() / "raw" / (r.id + ".pgm"));
    const auto label = read_map_pgm(dir.path() / r.label_path);
    CHECK(label.values == quantized(postprocess(raw, cfg)).values);
    for (std::size_t i = 0; i < raw.size(); ++i) CHECK(label.values[i] <= raw.values[i]);
  }

  fs::create_directories(dir.path() / "empty");
  const auto none = generate_pseudo_labels(dir.path() / "empty", cfg, m, dir.path());
  CHECK(none.manifest.records.empty());
  CHECK_FALSE(none.warnings.empty());
}

TEST_CASE("region geometry is a pure function of the pair") {
  for (int o = 0; o < 6; ++o) {
    for (int a = 0; a < 4; ++a) CHECK(region_geometry(o, a, 4) == region_geometry(o, a, 4));
  }
  CHECK_FALSE(region_geometry(0, 0, 4) == region_geometry(0, 1, 4));
  const auto s1 = render_scene(2, 1, 10, 4, 32, 7);
  const auto s2 = render_scene(2, 1, 10, 4, 32, 7);
  CHECK(s1.mask.values == s2.mask.values);
  CHECK(s1.image.values == s2.image.values);
  CHECK(s1.raw.values == s2.raw.values);
}

TEST_CASE("synthetic dataset: deterministic, valid and split-clean") {
  test::TempDir a("synth_a"), b("synth_b");
  const SynthConfig cfg = small_synth();
  const auto summary = generate_synthetic_dataset(cfg, a.path());
  generate_synthetic_dataset(cfg, b.path());
  CHECK(tree_hash(a.path()) == tree_hash(b.path()));

  for (const char* name : {"part1", "part2_easy_train", "part2_hard_train", "part3_easy_train", "part3_hard_train",
                           "part3_easy_test", "part3_hard_test"}) {
    INFO(name);
    REQUIRE(summary.manifests.count(name));
  }
  std::vector<Manifest> all;
  for (const auto& [name, path] : summary.manifests) all.push_back(read_manifest(path));
  const Manifest merged = concat_manifests(all);
  CHECK_NOTHROW(validate_manifest(merged, a.path()));
  CHECK(validate_hard_split(merged).passed());

  const Manifest p3 = read_manifest(summary.manifests.at("part3_easy_test"));
  for (const auto& r : p3.records) {
    const auto gt = read_map_pgm(a.path() / r.label_path);
    CHECK(sim(gt, gt) == doctest::Approx(1.0).epsilon(1e-12));
  }

  const Manifest p2 = read_manifest(summary.manifests.at("part2_hard_train"));
  CHECK(p2.header["provenance"]["gamma"] == 0.45);
  for (const auto& r : p2.records) {
    const auto raw = read_map_pgm(a.path() / "raw" / "part2_hard" / (r.id + ".pgm"));
    CHECK(read_map_pgm(a.path() / r.label_path).values == quantized(postprocess(raw, cfg.postproc)).values);
  }

  SynthConfig other = cfg;
  other.seed = 43;
  test::TempDir c("synth_c");
  generate_synthetic_dataset(other, c.path());
  CHECK(tree_hash(c.path()) != tree_hash(a.path()));
}

}  // TEST_SUITE
