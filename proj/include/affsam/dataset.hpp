#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "affsam/postproc.hpp"

namespace affsam {

enum class LabelKind { binary_mask, pseudo_map, human_map };
enum class Split { easy, hard };
enum class Subset { train, test };

std::string to_string(LabelKind kind);
std::string to_string(Split split);
std::string to_string(Subset subset);
LabelKind parse_label_kind(const std::string& text);
Split parse_split(const std::string& text);
Subset parse_subset(const std::string& text);

/// Label kind implied by a dataset part (1: binary masks, 2: pseudo maps, 3: human maps).
LabelKind label_kind_for_part(int part);

struct SampleRecord {
  std::string id;
  std::string image_path;  // relative to the data root
  std::string label_path;  // relative to the data root
  LabelKind label_kind = LabelKind::binary_mask;
  std::string action;
  std::string object;
  int part = 1;
  Split split = Split::easy;
  Subset subset = Subset::train;
  std::string source;  // free-form provenance; optional

  bool operator==(const SampleRecord&) const = default;
};

/// Reference training-set sizes of the full-scale three-part dataset; kept
/// as manifest metadata only.
struct ReferenceCounts {
  static constexpr int part1 = 39159;
  static constexpr int part2_easy = 13323;
  static constexpr int part2_hard = 11889;
  static constexpr int part3_easy = 1135;
  static constexpr int part3_hard = 868;
};

/// JSON-lines manifest: a header object (id "__header__") followed by one
/// record per line.
struct Manifest {
  nlohmann::json header = nlohmann::json::object();
  std::vector<SampleRecord> records;

  std::map<int, std::size_t> part_counts() const;
  /// Refreshes header.part_counts and header.reference_counts.
  void update_header();
};

inline constexpr const char* kHeaderId = "__header__";

nlohmann::json to_json(const SampleRecord& record);
SampleRecord record_from_json(const nlohmann::json& j);

std::string serialize_manifest(const Manifest& manifest);
Manifest parse_manifest(const std::string& text);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);
/// Records of several manifests, in order; the header of the first.
Manifest concat_manifests(const std::vector<Manifest>& parts);

/// "<action> <object>", lowercased, single-spaced.
std::string build_prompt(const std::string& action, const std::string& object);
std::string build_prompt(const SampleRecord& record);

/// Unique ids, part/label-kind consistency, non-empty prompt fields, and
/// (when `data_root` is non-empty) that referenced files exist.
void validate_manifest(const Manifest& manifest, const std::filesystem::path& data_root = {});

struct SplitReport {
  std::set<std::string> train_objects;
  std::set<std::string> test_objects;
  std::set<std::string> overlap;

  bool passed() const { return overlap.empty(); }
  /// Throws ValidationError listing the overlapping objects.
  void require_passed() const;
};

/// Object-category overlap between hard-split train and test records.
SplitReport validate_hard_split(const Manifest& manifest);

struct PseudoLabelResult {
  Manifest manifest;
  std::vector<std::string> skipped;  // ids without a raw map
  std::vector<std::string> warnings;
};

/// Post-processes `<raw_map_dir>/<id>.pgm` for every record of `records` and
/// writes the result to `<data_root>/<label_path>` as a pseudo_map label.
/// The post-processing settings are recorded in the manifest header.
PseudoLabelResult generate_pseudo_labels(const std::filesystem::path& raw_map_dir, const PostprocConfig& config,
                                         const Manifest& records, const std::filesystem::path& data_root);

}  // namespace affsam
