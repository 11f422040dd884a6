#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "affsam/losses.hpp"
#include "affsam/metrics.hpp"
#include "affsam/model.hpp"
#include "affsam/postproc.hpp"
#include "affsam/trainer.hpp"

namespace affsam {

/// Manifest paths relative to the data root. Empty entries are derived from
/// the split: manifests/part1.jsonl, manifests/part2_<split>_train.jsonl, ...
struct DataPaths {
  std::string part1;
  std::string part2;
  std::string part3;
  std::string test;
};

struct RunConfig {
  std::string preset = "desk";  // "desk" or "reference" stage defaults
  ModelConfig model;
  LossConfig loss;
  PostprocConfig postproc;
  MetricsConfig metrics;
  std::vector<StageConfig> stages;
  PipelineMode mode = PipelineMode::staged;
  Split split = Split::hard;
  std::uint64_t seed = 42;
  DataPaths data;

  static RunConfig defaults(const std::string& preset = "desk");

  std::string part1_manifest() const;
  std::string part2_manifest() const;
  std::string part3_manifest() const;
  std::string test_manifest() const;

  void validate() const;
};

nlohmann::json to_json(const BackboneConfig& c);
nlohmann::json to_json(const AdaptionConfig& c);
nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const LossConfig& c);
nlohmann::json to_json(const PostprocConfig& c);
nlohmann::json to_json(const StageConfig& c);
nlohmann::json to_json(const RunConfig& c);

/// Strict readers: unknown keys raise ConfigError; missing keys keep the
/// values already in `base`.
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// 16 hex digits of FNV-1a over the canonical JSON dump.
std::string config_hash(const nlohmann::json& j);
std::string config_hash(const RunConfig& c);

}  // namespace affsam
