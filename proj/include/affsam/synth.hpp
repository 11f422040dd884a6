#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "affsam/dataset.hpp"
#include "affsam/image_io.hpp"
#include "affsam/postproc.hpp"

namespace affsam {

struct SynthConfig {
  std::uint64_t seed = 42;
  int n_objects = 10;
  int n_actions = 4;
  int size = 64;
  int part1_per_pair = 4;
  int part2_per_pair = 3;
  int part3_train_per_pair = 1;
  int part3_test_per_pair = 2;
  double hard_test_fraction = 0.3;
  PostprocConfig postproc;

  void validate() const;
  nlohmann::json to_json() const;
};

std::string object_name(int object);
std::string action_name(int action);

/// Affordance region relative to the object blob: an ellipse centred at
/// `offset` blob radii along `angle`, with radii `radius_scale` times the blob's.
struct RegionGeometry {
  double angle = 0.0;
  double offset = 0.0;
  double radius_scale = 0.0;

  bool operator==(const RegionGeometry&) const = default;
};

RegionGeometry region_geometry(int object, int action, int n_actions);

struct SyntheticScene {
  Image image;
  AffordanceMap mask;     // binary region mask inside the blob
  AffordanceMap heatmap;  // smooth map around the region, peak 1
  AffordanceMap raw;      // noisy weak-supervision stand-in, peak 1
};

SyntheticScene render_scene(int object, int action, int n_objects, int n_actions, int size, std::uint64_t seed);

struct SynthSummary {
  std::filesystem::path root;
  std::map<std::string, std::filesystem::path> manifests;  // name -> path
  std::vector<std::string> hard_test_objects;
  std::size_t n_records = 0;
};

/// Writes images/, labels/, raw/ and manifests/ under `out_dir`. Manifests:
/// part1, part2_{easy,hard}_train, part3_{easy,hard}_{train,test}.
SynthSummary generate_synthetic_dataset(const SynthConfig& config, const std::filesystem::path& out_dir);

}  // namespace affsam
