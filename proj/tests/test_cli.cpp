#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "affsam/config.hpp"
#include "affsam/dataset.hpp"
#include "affsam/image_io.hpp"
#include "affsam/postproc.hpp"
#include "support.hpp"

using namespace affsam;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int status = -1;
  std::string output;
};

Run cli(const std::string& args, const fs::path& scratch) {
  const fs::path log = scratch / "cli.log";
  const std::string cmd = std::string("AFFSAM_VERBOSITY=0 \"") + AFFSAM_CLI_PATH + "\" " + args + " > \"" +
                          log.string() + "\" 2>&1";
  const int raw = std::system(cmd.c_str());
  Run r;
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  return r;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

// Tiny model, one short epoch per stage.
fs::path write_tiny_config(const fs::path& dir) {
  RunConfig c = RunConfig::defaults("desk");
  c.model.backbone = test::tiny_backbone();
  c.model.adaption.heads = 2;
  for (auto& s : c.stages) {
    s.epochs = 1;
    s.warmup_epochs = 0;
    s.batch_size = 8;
  }
  const fs::path path = dir / "tiny.json";
  std::ofstream(path) << to_json(c).dump(2);
  return path;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("synth, curate, postprocess, train, infer, eval end to end") {
  test::TempDir dir("cli");
  const fs::path data = dir.path() / "data";
  const std::string synth_flags = " --objects 4 --actions 2 --size 16 --seed 42 --out ";

  REQUIRE(cli("synth" + synth_flags + q(data), dir.path()).status == 0);
  CHECK(fs::exists(data / "synth.provenance.json"));
  CHECK(fs::exists(data / "manifests" / "part3_hard_test.jsonl"));
  CHECK(cli("synth" + synth_flags + q(data), dir.path()).status != 0);  // refuses a non-empty directory
  const auto label = read_file_bytes(data / "labels" / "part1" / "p1_o0_a0_0.pgm");
  REQUIRE(cli("synth --force" + synth_flags + q(data), dir.path()).status == 0);
  CHECK(read_file_bytes(data / "labels" / "part1" / "p1_o0_a0_0.pgm") == label);

  SUBCASE("curate validates the synthetic manifests and rebuilds pseudo labels") {
    std::string all;
    for (const auto& e : fs::directory_iterator(data / "manifests")) all += " --manifest " + q(e.path());
    const Run ok = cli("curate" + all, dir.path());
    CHECK(ok.status == 0);
    const fs::path out = dir.path() / "curated" / "p2.jsonl";
    const Run p2 = cli("curate --manifest " + q(data / "manifests" / "part2_easy_train.jsonl") + " --raw-dir " +
                           q(data / "raw" / "part2_easy") + " --data-root " + q(dir.path() / "relabel") +
                           " --out-manifest " + q(out),
                       dir.path());
    CHECK(p2.status == 0);
    const Manifest m = read_manifest(out);
    REQUIRE_FALSE(m.records.empty());
    CHECK(read_file_bytes(dir.path() / "relabel" / m.records[0].label_path) ==
          read_file_bytes(data / m.records[0].label_path));
  }

  SUBCASE("postprocess: gamma 0 is byte-identical, defaults hit the quantized hand vector") {
    const fs::path in = dir.path() / "maps";
    fs::create_directories(in);
    fs::copy_file(data / "labels" / "part3_easy" / "p3e_o0_a0_0.pgm", in / "a.pgm");
    write_map_pgm(in / "hand.pgm", AffordanceMap::from(1, 4, {1.0, 0.4, 0.2, 0.05}));
    std::ofstream(in / "broken.pgm") << "P5 garbage";
    const Run zero = cli("postprocess --gamma 0 --in " + q(in) + " --out " + q(dir.path() / "g0"), dir.path());
    CHECK(zero.status == 1);  // the broken file is listed
    CHECK(zero.output.find("broken.pgm") != std::string::npos);
    CHECK(read_file_bytes(dir.path() / "g0" / "a.pgm") == read_file_bytes(in / "a.pgm"));
    fs::remove(in / "broken.pgm");

    REQUIRE(cli("postprocess --in " + q(in) + " --out " + q(dir.path() / "pp"), dir.path()).status == 0);
    const auto hand = read_map_pgm(dir.path() / "pp" / "hand.pgm");
    // oracle on the quantized input, then quantized again
    const auto qin = read_map_pgm(in / "hand.pgm");
    const double a = qin.values[2] * qin.values[2] / (0.45 * qin.values[0]);
    const std::vector<double> expect = {qin.values[0], qin.values[1] * qin.values[1] / (0.45 * qin.values[0]),
                                        a * a / (0.18 * qin.values[0]), 0.0};
    for (std::size_t i = 0; i < 4; ++i) CHECK(hand.values[i] == quantize_unit(expect[i]) / 255.0);
    CHECK(hand.values[1] == doctest::Approx(0.35556).epsilon(0.01));
    const json prov = read_json(dir.path() / "pp" / "postprocess.provenance.json");
    CHECK(prov["flags"]["gamma"] == 0.45);
    CHECK(prov["flags"]["filtrations"] == 3);
  }

  SUBCASE("train is deterministic, infer and eval close the loop") {
    const fs::path cfg = write_tiny_config(dir.path());
    const std::string base = "train --config " + q(cfg) + " --data-root " + q(data);
    REQUIRE(cli(base + " --stages 1 --out " + q(dir.path() / "s1"), dir.path()).status == 0);
    CHECK(fs::exists(dir.path() / "s1" / "stage1_loss.csv"));
    REQUIRE(cli(base + " --stages 1,2,3 --out " + q(dir.path() / "r1"), dir.path()).status == 0);
    REQUIRE(cli(base + " --stages 1,2,3 --out " + q(dir.path() / "r2"), dir.path()).status == 0);
    for (const char* ck : {"stage1.ckpt", "stage2.ckpt", "stage3.ckpt"}) {
      CHECK(read_file_bytes(dir.path() / "r1" / ck) == read_file_bytes(dir.path() / "r2" / ck));
    }
    CHECK(read_file_bytes(dir.path() / "s1" / "stage1.ckpt") == read_file_bytes(dir.path() / "r1" / "stage1.ckpt"));
    const json prov = read_json(dir.path() / "r1" / "train.provenance.json");
    CHECK(prov["config_hash"].get<std::string>().size() == 16);
    CHECK(cli(base + " --stages 2,3 --out " + q(dir.path() / "bad"), dir.path()).status == 2);  // needs --init
    REQUIRE(cli(base + " --stages all --out " + q(dir.path() / "comb"), dir.path()).status == 0);
    CHECK(fs::exists(dir.path() / "comb" / "combined.ckpt"));

    const fs::path ck = dir.path() / "r1" / "stage3.ckpt";
    const fs::path img = data / "images" / "p3ht_o0_a0_0.ppm";
    const fs::path img_any = fs::exists(img) ? img : data / "images" / "p1_o0_a0_0.ppm";
    const std::string infer = "infer --checkpoint " + q(ck) + " --image " + q(img_any);
    REQUIRE(cli(infer + " --prompt \"hold cup\" --out " + q(dir.path() / "i1" / "m.pgm"), dir.path()).status == 0);
    REQUIRE(cli(infer + " --prompt \"hold cup\" --out " + q(dir.path() / "i2" / "m.pgm"), dir.path()).status == 0);
    CHECK(read_file_bytes(dir.path() / "i1" / "m.pgm") == read_file_bytes(dir.path() / "i2" / "m.pgm"));
    const auto f64 = read_map_f64(dir.path() / "i1" / "m.f64");
    for (double v : f64.values) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK(cli(infer + " --prompt \"\" --out " + q(dir.path() / "i3" / "m.pgm"), dir.path()).status != 0);

    // self-evaluation: copy the ground truth in as predictions
    const fs::path test_manifest = data / "manifests" / "part3_hard_test.jsonl";
    const Manifest tm = read_manifest(test_manifest);
    const fs::path gt_pred = dir.path() / "gt_pred";
    fs::create_directories(gt_pred);
    for (const auto& r : tm.records) fs::copy_file(data / r.label_path, gt_pred / (r.id + ".pgm"));
    const fs::path report = dir.path() / "eval" / "self.json";
    REQUIRE(cli("eval --pred-dir " + q(gt_pred) + " --manifest " + q(test_manifest) + " --report " + q(report),
                dir.path())
                .status == 0);
    const json rep = read_json(report);
    for (const char* key : {"kld", "sim", "nss", "n_samples"}) CHECK(rep.contains(key));
    CHECK(std::abs(rep["kld"].get<double>()) <= 1e-8);
    CHECK(rep["sim"].get<double>() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(fs::exists(dir.path() / "eval" / "self.csv"));

    fs::remove(gt_pred / (tm.records[0].id + ".pgm"));
    CHECK(cli("eval --pred-dir " + q(gt_pred) + " --manifest " + q(test_manifest) + " --report " +
                  q(dir.path() / "eval" / "partial.json"),
              dir.path())
              .status == 1);

    const fs::path preds = dir.path() / "preds";
    REQUIRE(cli("infer --checkpoint " + q(ck) + " --manifest " + q(test_manifest) + " --out-dir " + q(preds), dir.path())
                .status == 0);
    REQUIRE(cli("eval --pred-dir " + q(preds) + " --manifest " + q(test_manifest) + " --report " +
                    q(dir.path() / "eval" / "model.json"),
                dir.path())
                .status == 0);
    CHECK(read_json(dir.path() / "eval" / "model.json")["n_samples"] == tm.records.size());
  }
}

TEST_CASE("verify: oracle suite passes, an injected backward fault names the op") {
  test::TempDir dir("cli_verify");
  const Run ok = cli("verify --suite oracle", dir.path());
  CHECK(ok.status == 0);
  const Run bad = cli("verify --suite grad --seeds 1 --fault-op softmax", dir.path());
  CHECK(bad.status == 1);
  CHECK(bad.output.find("failing op: softmax") != std::string::npos);
}

TEST_CASE("config errors exit with status 2") {
  test::TempDir dir("cli_cfg");
  std::ofstream(dir.path() / "bad.json") << R"({"colour": 1})";
  CHECK(cli("train --config " + q(dir.path() / "bad.json") + " --data-root . --out " + q(dir.path() / "o"), dir.path())
            .status == 2);
}

}  // TEST_SUITE
