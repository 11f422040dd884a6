#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "affsam/checkpoint.hpp"
#include "affsam/config.hpp"
#include "affsam/dataset.hpp"
#include "affsam/errors.hpp"
#include "affsam/image_io.hpp"
#include "affsam/metrics.hpp"
#include "affsam/ops.hpp"
#include "affsam/postproc.hpp"
#include "affsam/synth.hpp"
#include "affsam/tensor.hpp"
#include "affsam/trainer.hpp"
#include "affsam/verify.hpp"
#include "affsam/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace affsam;

namespace {

int verbosity() {
  const char* v = std::getenv("AFFSAM_VERBOSITY");
  return v ? std::atoi(v) : 1;
}

void log(const std::string& line) {
  if (verbosity() > 0) std::cerr << line << "\n";
}

void write_text(const fs::path& path, const std::string& text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void write_provenance(const fs::path& dir, const std::string& command, const json& flags, const std::string& hash,
                      json extra = json::object()) {
  json p = {{"command", command}, {"version", kVersion}, {"flags", flags}, {"config_hash", hash}};
  for (auto& [k, v] : extra.items()) p[k] = v;
  write_text(dir / (command + ".provenance.json"), p.dump(2) + "\n");
}

std::vector<int> parse_stage_list(const std::string& text) {
  std::vector<int> stages;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item != "1" && item != "2" && item != "3") throw ConfigError("--stages: expected 'all' or a list like 1,2,3");
    stages.push_back(item[0] - '0');
  }
  if (stages.empty()) throw ConfigError("--stages: empty list");
  return stages;
}

// synth

struct SynthArgs {
  std::uint64_t seed = 42;
  int objects = 10;
  int actions = 4;
  int size = 64;
  std::string out;
  bool force = false;
};

int cmd_synth(const SynthArgs& a) {
  const fs::path out(a.out);
  if (fs::exists(out) && !fs::is_empty(out)) {
    if (!a.force) throw IoError("output directory " + out.string() + " is not empty; pass --force to regenerate");
    for (const char* sub : {"images", "labels", "raw", "manifests"}) fs::remove_all(out / sub);
    fs::remove(out / "synth.provenance.json");
  }
  SynthConfig cfg;
  cfg.seed = a.seed;
  cfg.n_objects = a.objects;
  cfg.n_actions = a.actions;
  cfg.size = a.size;
  const SynthSummary summary = generate_synthetic_dataset(cfg, out);
  Manifest all;
  for (const auto& [name, path] : summary.manifests) {
    const Manifest m = read_manifest(path);
    all.records.insert(all.records.end(), m.records.begin(), m.records.end());
  }
  const SplitReport split = validate_hard_split(all);
  json manifests = json::object();
  for (const auto& [name, path] : summary.manifests) manifests[name] = fs::relative(path, out).generic_string();
  write_provenance(out, "synth",
                   {{"seed", a.seed}, {"objects", a.objects}, {"actions", a.actions}, {"size", a.size}},
                   config_hash(cfg.to_json()),
                   {{"generator", cfg.to_json()},
                    {"manifests", manifests},
                    {"records", summary.n_records},
                    {"hard_test_objects", summary.hard_test_objects},
                    {"hard_split_overlap", split.overlap}});
  std::cout << "wrote " << summary.n_records << " records under " << out.string() << "\n";
  for (const auto& [name, path] : summary.manifests) std::cout << "  " << name << ": " << path.string() << "\n";
  split.require_passed();
  return 0;
}

// curate

struct CurateArgs {
  std::vector<std::string> manifests;
  std::string data_root;
  std::string raw_dir;
  std::string out_manifest;
  double gamma = 0.45;
  int filtrations = 3;
};

// Validates manifests (ids, label kinds, files, hard-split hygiene) and, with
// --raw-dir, turns raw weak-supervision maps into a part-2 manifest.
int cmd_curate(const CurateArgs& a) {
  std::vector<Manifest> parts;
  for (const auto& path : a.manifests) parts.push_back(read_manifest(path));
  const Manifest all = concat_manifests(parts);
  const fs::path root = a.data_root.empty() && !a.manifests.empty()
                            ? fs::path(a.manifests.front()).parent_path().parent_path()
                            : fs::path(a.data_root);
  json extra = json::object();
  int status = 0;
  if (!a.raw_dir.empty()) {
    if (a.out_manifest.empty()) throw ConfigError("--raw-dir needs --out-manifest");
    const PostprocConfig cfg{a.gamma, a.filtrations};
    const PseudoLabelResult result = generate_pseudo_labels(a.raw_dir, cfg, all, root);
    write_manifest(a.out_manifest, result.manifest);
    for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
    std::cout << "pseudo labels: " << result.manifest.records.size() << " written, " << result.skipped.size()
              << " skipped\n";
    extra["pseudo_labels"] = {{"written", result.manifest.records.size()}, {"skipped", result.skipped}};
    if (!result.skipped.empty() || result.manifest.records.empty()) status = 1;
  } else {
    validate_manifest(all, root);
    const SplitReport split = validate_hard_split(all);
    std::cout << all.records.size() << " records valid";
    for (const auto& [part, n] : all.part_counts()) std::cout << ", part " << part << ": " << n;
    std::cout << "\n";
    extra["part_counts"] = all.part_counts();
    extra["hard_split_overlap"] = split.overlap;
    split.require_passed();
  }
  const fs::path out_dir = !a.out_manifest.empty() && fs::path(a.out_manifest).has_parent_path()
                               ? fs::path(a.out_manifest).parent_path()
                               : (root.empty() ? fs::path(".") : root);
  write_provenance(out_dir, "curate",
                   {{"manifests", a.manifests}, {"data_root", a.data_root}, {"raw_dir", a.raw_dir},
                    {"out_manifest", a.out_manifest}, {"gamma", a.gamma}, {"filtrations", a.filtrations}},
                   config_hash(json{{"gamma", a.gamma}, {"filtrations", a.filtrations}}), extra);
  return status;
}

// postprocess

struct PostprocessArgs {
  std::string in;
  std::string out;
  double gamma = 0.45;
  int filtrations = 3;
};

int cmd_postprocess(const PostprocessArgs& a) {
  const PostprocConfig cfg{a.gamma, a.filtrations};
  cfg.validate();
  const fs::path in(a.in), out(a.out);
  if (!fs::is_directory(in)) throw IoError("input directory " + in.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(in)) {
    if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  fs::create_directories(out);
  std::vector<std::string> processed, failed;
  for (const auto& f : files) {
    try {
      write_map_pgm(out / f.filename(), postprocess(read_map_pgm(f), cfg));
      processed.push_back(f.filename().string());
    } catch (const std::exception& e) {
      failed.push_back(f.filename().string());
      std::cerr << "failed: " << f.string() << ": " << e.what() << "\n";
    }
  }
  const json jcfg = to_json(cfg);
  write_provenance(out, "postprocess", {{"in", a.in}, {"out", a.out}, {"gamma", a.gamma}, {"filtrations", a.filtrations}},
                   config_hash(jcfg), {{"postproc", jcfg}, {"processed", processed}, {"failed", failed}});
  std::cout << "post-processed " << processed.size() << " maps";
  if (!failed.empty()) std::cout << ", " << failed.size() << " failed";
  std::cout << "\n";
  return failed.empty() ? 0 : 1;
}

// train

struct TrainArgs {
  std::string config;
  std::string preset = "desk";
  std::string stages = "1,2,3";
  std::string data_root;
  std::string out;
  std::string init;
  std::string split;
};

int cmd_train(const TrainArgs& a) {
  RunConfig rc = a.config.empty() ? RunConfig::defaults(a.preset) : load_run_config(a.config);
  if (!a.split.empty()) rc.split = parse_split(a.split);
  std::vector<int> stages = {1, 2, 3};
  if (a.stages == "all") {
    rc.mode = PipelineMode::combined;
  } else {
    stages = parse_stage_list(a.stages);
  }
  rc.validate();
  const std::string hash = config_hash(rc);
  const fs::path root(a.data_root), out(a.out);
  const auto& bb = rc.model.backbone;

  PipelineData data;
  auto load = [&](const std::string& rel) {
    const Manifest m = read_manifest(root / rel);
    validate_manifest(m, root);
    return load_samples(m, root, bb);
  };
  const bool combined = rc.mode == PipelineMode::combined;
  auto wanted = [&](int stage) { return combined || std::find(stages.begin(), stages.end(), stage) != stages.end(); };
  if (wanted(1)) data.part1 = load(rc.part1_manifest());
  if (wanted(2)) {
    const Manifest m2 = read_manifest(root / rc.part2_manifest());
    if (fs::exists(root / rc.test_manifest())) {
      validate_hard_split(concat_manifests({m2, read_manifest(root / rc.test_manifest())})).require_passed();
    }
    data.part2 = load(rc.part2_manifest());
  }
  if (wanted(3)) data.part3 = load(rc.part3_manifest());

  AffordanceModel model = a.init.empty() ? AffordanceModel(rc.model, rc.seed) : restore_model(load_checkpoint(a.init));
  if (!combined && stages.front() > 1 && a.init.empty()) {
    throw ConfigError("--stages starting after stage 1 needs --init <checkpoint of the previous stage>");
  }
  fs::create_directories(out);
  write_text(out / "config.json", to_json(rc).dump(2) + "\n");

  PipelineConfig pc;
  pc.stages = rc.stages;
  pc.run_stages = stages;
  pc.mode = rc.mode;
  pc.loss = rc.loss;
  pc.seed = rc.seed;
  json written = json::array();
  run_pipeline(model, data, pc, [&](const StageResult& r, const AffordanceModel& m) {
    const std::string name = combined ? "combined" : "stage" + std::to_string(r.stage);
    const int epochs = r.curve.empty() ? 0 : r.curve.back().epoch;
    save_checkpoint(out / (name + ".ckpt"),
                    capture_checkpoint(m, hash, static_cast<std::uint32_t>(r.stage), static_cast<std::uint32_t>(epochs),
                                       &r.optimizer));
    write_text(out / (name + "_loss.csv"), loss_curve_csv(r.curve));
    written.push_back(name + ".ckpt");
    log(name + ": " + std::to_string(r.steps) + " steps, final epoch loss " +
        (r.curve.empty() ? std::string("n/a") : std::to_string(r.curve.back().mean_loss)));
  });
  write_provenance(out, "train",
                   {{"config", a.config}, {"preset", a.preset}, {"stages", a.stages}, {"data_root", a.data_root},
                    {"init", a.init}, {"split", a.split}},
                   hash, {{"checkpoints", written}});
  std::cout << "trained " << written.size() << " stage(s); checkpoints in " << out.string() << "\n";
  return 0;
}

// infer

struct InferArgs {
  std::string checkpoint;
  std::string image;
  std::string prompt;
  std::string out;
  std::string manifest;
  std::string data_root;
  std::string out_dir;
};

int cmd_infer(const InferArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const AffordanceModel model = restore_model(ckpt);
  const auto& bb = model.config().backbone;
  const json flags = {{"checkpoint", a.checkpoint}, {"image", a.image},         {"prompt", a.prompt}, {"out", a.out},
                      {"manifest", a.manifest},     {"data_root", a.data_root}, {"out_dir", a.out_dir}};

  if (!a.manifest.empty()) {
    if (a.out_dir.empty()) throw ConfigError("--manifest needs --out-dir");
    const fs::path root = a.data_root.empty() ? fs::path(a.manifest).parent_path().parent_path() : fs::path(a.data_root);
    const auto samples = load_samples(read_manifest(a.manifest), root, bb);
    const auto maps = predict(model, samples);
    const fs::path dir(a.out_dir);
    fs::create_directories(dir);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      write_map_pgm(dir / (samples[i].id + ".pgm"), maps[i]);
      write_map_f64(dir / (samples[i].id + ".f64"), maps[i]);
    }
    write_provenance(dir, "infer", flags, ckpt.config_hash, {{"predictions", samples.size()}});
    std::cout << "wrote " << samples.size() << " predictions to " << dir.string() << "\n";
    return 0;
  }

  if (a.image.empty() || a.out.empty()) throw ConfigError("infer needs --image and --out (or --manifest and --out-dir)");
  tokenize(a.prompt, bb);
  TrainingSample sample;
  sample.id = fs::path(a.image).stem().string();
  sample.prompt = a.prompt;
  const Image img = read_image(a.image);
  if (img.channels != bb.channels || img.height != bb.image_size || img.width != bb.image_size) {
    throw DimensionError("image " + a.image + " must be " + std::to_string(bb.image_size) + "x" +
                         std::to_string(bb.image_size) + " with " + std::to_string(bb.channels) + " channels");
  }
  sample.image = img.values;
  const AffordanceMap map = predict(model, {sample}).front();
  const fs::path out(a.out);
  write_map_pgm(out, map);
  fs::path sidecar = out;
  sidecar.replace_extension(".f64");
  write_map_f64(sidecar, map);
  write_provenance(out.has_parent_path() ? out.parent_path() : fs::path("."), "infer", flags, ckpt.config_hash);
  std::cout << "wrote " << out.string() << " and " << sidecar.string() << "\n";
  return 0;
}

// eval

struct EvalArgs {
  std::string pred_dir;
  std::string manifest;
  std::string data_root;
  std::string report;
  double epsilon = 1e-10;
};

int cmd_eval(const EvalArgs& a) {
  const fs::path root = a.data_root.empty() ? fs::path(a.manifest).parent_path().parent_path() : fs::path(a.data_root);
  const Manifest manifest = read_manifest(a.manifest);
  MetricsConfig cfg;
  cfg.epsilon = a.epsilon;
  const MetricsReport report = evaluate_split(a.pred_dir, manifest, root, cfg);
  const fs::path json_path(a.report);
  fs::path csv_path = json_path;
  csv_path.replace_extension(".csv");
  json j = report.to_json();
  j["manifest"] = a.manifest;
  write_text(json_path, j.dump(2) + "\n");
  write_text(csv_path, report.to_csv());
  write_provenance(json_path.has_parent_path() ? json_path.parent_path() : fs::path("."), "eval",
                   {{"pred_dir", a.pred_dir}, {"manifest", a.manifest}, {"data_root", a.data_root}, {"report", a.report},
                    {"epsilon", a.epsilon}},
                   config_hash(json{{"epsilon", a.epsilon}}));
  std::printf("n=%zu  KLD %.4f  SIM %.4f  NSS %.4f\n", report.n_samples, report.kld, report.sim, report.nss);
  if (!report.missing.empty()) {
    std::cerr << report.missing.size() << " prediction(s) missing, e.g. " << report.missing.front() << "\n";
    return 1;
  }
  return 0;
}

// verify

struct VerifyArgs {
  std::string suite = "all";
  std::size_t seeds = 20;
  std::string fault_op;
  double fault_factor = 1.5;
};

int cmd_verify(const VerifyArgs& a) {
  VerifyOptions opts;
  opts.seeds = a.seeds;
  std::vector<CheckOutcome> outcomes;
  std::optional<BackwardFaultScope> fault;
  if (!a.fault_op.empty()) fault.emplace(a.fault_op, a.fault_factor);
  if (a.suite == "all" || a.suite == "grad") {
    const auto g = run_grad_suite(opts);
    outcomes.insert(outcomes.end(), g.begin(), g.end());
  }
  if (a.suite == "all" || a.suite == "oracle") {
    const auto o = run_oracle_suite(opts);
    outcomes.insert(outcomes.end(), o.begin(), o.end());
  }
  std::cout << format_outcomes(outcomes);
  const auto failed = std::count_if(outcomes.begin(), outcomes.end(), [](const auto& c) { return !c.passed; });
  std::cout << outcomes.size() - failed << "/" << outcomes.size() << " checks passed\n";
  for (const auto& c : outcomes) {
    if (!c.passed && c.suite == "grad") std::cout << "failing op: " << c.op << " (" << c.name << ")\n";
  }
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Affordance-map toolkit: dataset synthesis, post-processing, training, inference, evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate the synthetic three-part dataset");
  s->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
  s->add_option("--objects", synth.objects, "Number of object categories")->capture_default_str();
  s->add_option("--actions", synth.actions, "Number of actions")->capture_default_str();
  s->add_option("--size", synth.size, "Image side in pixels")->capture_default_str();
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_flag("--force", synth.force, "Regenerate into a non-empty directory");

  CurateArgs curate;
  auto* c = app.add_subcommand("curate", "Validate manifests or build pseudo-labeled part-2 manifests");
  c->add_option("--manifest", curate.manifests, "Manifest(s) to validate or label")->required();
  c->add_option("--data-root", curate.data_root, "Dataset root (default: parent of the first manifest directory)");
  c->add_option("--raw-dir", curate.raw_dir, "Directory of raw <id>.pgm maps to post-process into labels");
  c->add_option("--out-manifest", curate.out_manifest, "Part-2 manifest written with --raw-dir");
  c->add_option("--gamma", curate.gamma, "Post-processing threshold")->capture_default_str();
  c->add_option("--filtrations", curate.filtrations, "Post-processing filtration steps")->capture_default_str();

  PostprocessArgs post;
  auto* p = app.add_subcommand("postprocess", "Filter a directory of PGM heatmaps");
  p->add_option("--in", post.in, "Input directory of .pgm maps")->required();
  p->add_option("--out", post.out, "Output directory")->required();
  p->add_option("--gamma", post.gamma, "First threshold as a fraction of the map maximum")->capture_default_str();
  p->add_option("--filtrations", post.filtrations, "Number of filtration steps (1-3)")->capture_default_str();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Run the staged training pipeline");
  t->add_option("--config", train.config, "Run configuration JSON");
  t->add_option("--preset", train.preset, "Stage defaults when no config is given: desk or reference")->capture_default_str();
  t->add_option("--stages", train.stages, "Stages to run (e.g. 1 or 1,2,3) or 'all' for one combined stage")
      ->capture_default_str();
  t->add_option("--data-root", train.data_root, "Dataset root")->required();
  t->add_option("--out", train.out, "Output directory")->required();
  t->add_option("--init", train.init, "Checkpoint to start from");
  t->add_option("--split", train.split, "Override the configured split (easy or hard)");

  InferArgs infer;
  auto* i = app.add_subcommand("infer", "Predict affordance heatmaps");
  i->add_option("--checkpoint", infer.checkpoint, "Model checkpoint")->required();
  i->add_option("--image", infer.image, "Input PPM/PGM image");
  i->add_option("--prompt", infer.prompt, "\"<action> <object>\" prompt");
  i->add_option("--out", infer.out, "Output PGM path (a .f64 sidecar is written next to it)");
  i->add_option("--manifest", infer.manifest, "Predict every record of a manifest");
  i->add_option("--data-root", infer.data_root, "Dataset root for --manifest");
  i->add_option("--out-dir", infer.out_dir, "Output directory for --manifest");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Score predictions with KLD, SIM and NSS");
  e->add_option("--pred-dir", eval.pred_dir, "Directory of <id>.pgm or <id>.f64 predictions")->required();
  e->add_option("--manifest", eval.manifest, "Ground-truth manifest")->required();
  e->add_option("--data-root", eval.data_root, "Dataset root (default: parent of the manifest directory)");
  e->add_option("--report", eval.report, "JSON report path; a CSV is written alongside")->required();
  e->add_option("--epsilon", eval.epsilon, "KLD regularizer")->capture_default_str();

  VerifyArgs verify;
  auto* v = app.add_subcommand("verify", "Run gradient and oracle self-checks");
  v->add_option("--suite", verify.suite, "all, grad or oracle")
      ->check(CLI::IsMember({"all", "grad", "oracle"}))
      ->capture_default_str();
  v->add_option("--seeds", verify.seeds, "Random seeds per gradient check")->capture_default_str();
  v->add_option("--fault-op", verify.fault_op, "Scale the backward input of this op (mutation check)");
  v->add_option("--fault-factor", verify.fault_factor, "Scale factor for --fault-op")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (s->parsed()) return cmd_synth(synth);
    if (c->parsed()) return cmd_curate(curate);
    if (p->parsed()) return cmd_postprocess(post);
    if (t->parsed()) return cmd_train(train);
    if (i->parsed()) return cmd_infer(infer);
    if (e->parsed()) return cmd_eval(eval);
    if (v->parsed()) return cmd_verify(verify);
  } catch (const ConfigError& ex) {
    std::cerr << "config error: " << ex.what() << "\n";
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
