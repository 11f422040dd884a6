#include "affsam/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "affsam/detail/hash.hpp"
#include "affsam/errors.hpp"
#include "affsam/nn.hpp"

namespace affsam {

namespace fs = std::filesystem;

namespace {

const char* const kObjects[] = {"cup",  "knife",   "hat",   "bottle",  "scissors", "bowl",
                                "racket", "chair", "bicycle", "umbrella", "spoon",   "book"};
const char* const kActions[] = {"hold", "drink", "cut", "pour", "open", "wear", "sit", "ride"};

struct Hsv {
  double r, g, b;
};

Hsv hue_to_rgb(double h) {
  const double x = h * 6.0;
  const int i = static_cast<int>(x) % 6;
  const double f = x - std::floor(x);
  switch (i) {
    case 0: return {1, f, 0};
    case 1: return {1 - f, 1, 0};
    case 2: return {0, 1, f};
    case 3: return {0, 1 - f, 1};
    case 4: return {f, 0, 1};
    default: return {1, 0, 1 - f};
  }
}

}  // namespace

void SynthConfig::validate() const {
  if (n_objects < 1 || n_actions < 1 || size < 8) throw ConfigError("synth: n_objects, n_actions >= 1 and size >= 8");
  if (part1_per_pair < 1 || part2_per_pair < 1 || part3_train_per_pair < 1 || part3_test_per_pair < 1) {
    throw ConfigError("synth: per-pair counts must be >= 1");
  }
  if (!(hard_test_fraction > 0.0 && hard_test_fraction < 1.0)) throw ConfigError("synth: hard_test_fraction must lie in (0, 1)");
  if (n_objects < 2) throw ConfigError("synth: the hard split needs at least 2 objects");
  postproc.validate();
}

nlohmann::json SynthConfig::to_json() const {
  return {{"seed", seed},
          {"n_objects", n_objects},
          {"n_actions", n_actions},
          {"size", size},
          {"part1_per_pair", part1_per_pair},
          {"part2_per_pair", part2_per_pair},
          {"part3_train_per_pair", part3_train_per_pair},
          {"part3_test_per_pair", part3_test_per_pair},
          {"hard_test_fraction", hard_test_fraction},
          {"postproc", {{"gamma", postproc.gamma}, {"num_filtrations", postproc.num_filtrations}}}};
}

std::string object_name(int object) {
  if (object >= 0 && object < static_cast<int>(std::size(kObjects))) return kObjects[object];
  return "object" + std::to_string(object);
}

std::string action_name(int action) {
  if (action >= 0 && action < static_cast<int>(std::size(kActions))) return kActions[action];
  return "action" + std::to_string(action);
}

RegionGeometry region_geometry(int object, int action, int n_actions) {
  RegionGeometry g;
  g.angle = 2.0 * std::numbers::pi * action / n_actions;
  g.offset = 0.5 + 0.05 * (object % 3);
  g.radius_scale = 0.45 + 0.05 * (object % 2);
  return g;
}

SyntheticScene render_scene(int object, int action, int n_objects, int n_actions, int size, std::uint64_t seed) {
  Rng rng(seed);
  const double s = size;
  const double aspect = 0.8 + 0.4 * (object % 5) / 4.0;
  const double base = s * rng.uniform(0.2, 0.25);
  const double rx = base * aspect;
  const double ry = base / aspect;
  const double cx = s * rng.uniform(0.38, 0.62);
  const double cy = s * rng.uniform(0.38, 0.62);
  const RegionGeometry g = region_geometry(object, action, n_actions);
  const double qx = cx + g.offset * rx * std::cos(g.angle);
  const double qy = cy + g.offset * ry * std::sin(g.angle);
  const double qrx = g.radius_scale * rx;
  const double qry = g.radius_scale * ry;
  const Hsv colour = hue_to_rgb(static_cast<double>(object) / n_objects);
  const double background = rng.uniform(0.1, 0.25);
  const double shade = rng.uniform(0.75, 0.95);

  const auto n = static_cast<std::size_t>(size);
  SyntheticScene scene;
  scene.image = Image{3, n, n, std::vector<double>(3 * n * n)};
  scene.mask = AffordanceMap::zeros(n, n);
  scene.heatmap = AffordanceMap::zeros(n, n);
  scene.raw = AffordanceMap::zeros(n, n);
  const std::size_t plane = n * n;
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double bd = std::hypot((px - cx) / rx, (py - cy) / ry);
      const double rd = std::hypot((px - qx) / qrx, (py - qy) / qry);
      const bool inside = bd <= 1.0;
      const std::size_t i = y * n + x;
      const double texture = 0.06 * rng.uniform(-1.0, 1.0);
      const double rgb[3] = {colour.r, colour.g, colour.b};
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = inside ? shade * (0.2 + 0.8 * rgb[c]) : background;
        scene.image.values[c * plane + i] = std::clamp(v + texture, 0.0, 1.0);
      }
      scene.mask.values[i] = (inside && rd <= 1.0) ? 1.0 : 0.0;
      scene.heatmap.values[i] = std::exp(-0.5 * (rd / 0.7) * (rd / 0.7));
      scene.raw.values[i] = 0.7 * scene.heatmap.values[i] + 0.3 * std::exp(-0.5 * bd * bd) + 0.1 * rng.uniform();
    }
  }
  const double peak = scene.raw.max();
  for (auto& v : scene.raw.values) v /= peak;
  return scene;
}

namespace {

struct Writer {
  const SynthConfig& config;
  fs::path root;

  SampleRecord emit(const std::string& id, int object, int action, int part, Split split, Subset subset,
                    const std::string& label_dir, const std::string& raw_dir = {}) const {
    const std::uint64_t seed = detail::splitmix64(detail::fnv1a(id, detail::splitmix64(config.seed)));
    const SyntheticScene scene = render_scene(object, action, config.n_objects, config.n_actions, config.size, seed);
    SampleRecord r;
    r.id = id;
    r.image_path = "images/" + id + ".ppm";
    r.label_path = "labels/" + label_dir + "/" + id + ".pgm";
    r.part = part;
    r.label_kind = label_kind_for_part(part);
    r.action = action_name(action);
    r.object = object_name(object);
    r.split = split;
    r.subset = subset;
    r.source = "synthetic";
    write_image_ppm(root / r.image_path, scene.image);
    if (part == 1) write_map_pgm(root / r.label_path, scene.mask);
    if (part == 2) write_map_pgm(root / "raw" / raw_dir / (id + ".pgm"), scene.raw);
    if (part == 3) write_map_pgm(root / r.label_path, scene.heatmap);
    return r;
  }
};

std::string make_id(const std::string& prefix, int object, int action, int k) {
  return prefix + "_o" + std::to_string(object) + "_a" + std::to_string(action) + "_" + std::to_string(k);
}

}  // namespace

SynthSummary generate_synthetic_dataset(const SynthConfig& config, const fs::path& out_dir) {
  config.validate();
  SynthSummary summary;
  summary.root = out_dir;
  const Writer writer{config, out_dir};

  std::vector<int> order(config.n_objects);
  for (int o = 0; o < config.n_objects; ++o) order[o] = o;
  Rng split_rng(detail::splitmix64(config.seed ^ 0x68617264ULL));
  deterministic_shuffle(order, split_rng);
  const int n_test = std::clamp(static_cast<int>(std::ceil(config.hard_test_fraction * config.n_objects)), 1,
                                config.n_objects - 1);
  std::vector<bool> hard_test(config.n_objects, false);
  for (int k = 0; k < n_test; ++k) hard_test[order[k]] = true;
  for (int o = 0; o < config.n_objects; ++o) {
    if (hard_test[o]) summary.hard_test_objects.push_back(object_name(o));
  }

  std::map<std::string, Manifest> manifests;
  auto add = [&](const std::string& name, SampleRecord r) { manifests[name].records.push_back(std::move(r)); };

  for (int o = 0; o < config.n_objects; ++o) {
    for (int a = 0; a < config.n_actions; ++a) {
      for (int k = 0; k < config.part1_per_pair; ++k) {
        add("part1", writer.emit(make_id("p1", o, a, k), o, a, 1, Split::easy, Subset::train, "part1"));
      }
      for (int k = 0; k < config.part2_per_pair; ++k) {
        add("part2_easy_train",
            writer.emit(make_id("p2e", o, a, k), o, a, 2, Split::easy, Subset::train, "part2_easy", "part2_easy"));
        if (!hard_test[o]) {
          add("part2_hard_train",
              writer.emit(make_id("p2h", o, a, k), o, a, 2, Split::hard, Subset::train, "part2_hard", "part2_hard"));
        }
      }
      for (int k = 0; k < config.part3_train_per_pair; ++k) {
        add("part3_easy_train", writer.emit(make_id("p3e", o, a, k), o, a, 3, Split::easy, Subset::train, "part3_easy"));
        if (!hard_test[o]) {
          add("part3_hard_train", writer.emit(make_id("p3h", o, a, k), o, a, 3, Split::hard, Subset::train, "part3_hard"));
        }
      }
      for (int k = 0; k < config.part3_test_per_pair; ++k) {
        add("part3_easy_test", writer.emit(make_id("p3et", o, a, k), o, a, 3, Split::easy, Subset::test, "part3_easy"));
        if (hard_test[o]) {
          add("part3_hard_test", writer.emit(make_id("p3ht", o, a, k), o, a, 3, Split::hard, Subset::test, "part3_hard"));
        }
      }
    }
  }

  for (const char* split : {"easy", "hard"}) {
    const std::string name = std::string("part2_") + split + "_train";
    const auto result = generate_pseudo_labels(out_dir / "raw" / (std::string("part2_") + split), config.postproc,
                                               manifests[name], out_dir);
    if (!result.skipped.empty()) throw IoError("synth: pseudo-label generation skipped " + result.skipped.front());
    manifests[name] = result.manifest;
  }

  for (auto& [name, manifest] : manifests) {
    manifest.header["name"] = name;
    manifest.header["generator"] = config.to_json();
    manifest.update_header();
    const fs::path path = out_dir / "manifests" / (name + ".jsonl");
    write_manifest(path, manifest);
    summary.manifests[name] = path;
    summary.n_records += manifest.records.size();
  }
  return summary;
}

}  // namespace affsam
