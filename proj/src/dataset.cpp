#include "affsam/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "affsam/errors.hpp"
#include "affsam/image_io.hpp"

namespace affsam {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(LabelKind kind) {
  switch (kind) {
    case LabelKind::binary_mask: return "binary_mask";
    case LabelKind::pseudo_map: return "pseudo_map";
    case LabelKind::human_map: return "human_map";
  }
  return "?";
}

std::string to_string(Split split) { return split == Split::easy ? "easy" : "hard"; }
std::string to_string(Subset subset) { return subset == Subset::train ? "train" : "test"; }

LabelKind parse_label_kind(const std::string& text) {
  if (text == "binary_mask") return LabelKind::binary_mask;
  if (text == "pseudo_map") return LabelKind::pseudo_map;
  if (text == "human_map") return LabelKind::human_map;
  throw ValidationError("unknown label_kind '" + text + "'");
}

Split parse_split(const std::string& text) {
  if (text == "easy") return Split::easy;
  if (text == "hard") return Split::hard;
  throw ValidationError("unknown split '" + text + "'");
}

Subset parse_subset(const std::string& text) {
  if (text == "train") return Subset::train;
  if (text == "test") return Subset::test;
  throw ValidationError("unknown subset '" + text + "'");
}

LabelKind label_kind_for_part(int part) {
  switch (part) {
    case 1: return LabelKind::binary_mask;
    case 2: return LabelKind::pseudo_map;
    case 3: return LabelKind::human_map;
    default: throw ValidationError("dataset part must be 1, 2 or 3, got " + std::to_string(part));
  }
}

std::map<int, std::size_t> Manifest::part_counts() const {
  std::map<int, std::size_t> counts;
  for (const auto& r : records) ++counts[r.part];
  return counts;
}

void Manifest::update_header() {
  if (!header.is_object()) header = json::object();
  json counts = json::object();
  for (const auto& [part, n] : part_counts()) counts[std::to_string(part)] = n;
  header["part_counts"] = counts;
  header["reference_counts"] = {{"part1", ReferenceCounts::part1},
                                {"part2_easy", ReferenceCounts::part2_easy},
                                {"part2_hard", ReferenceCounts::part2_hard},
                                {"part3_easy", ReferenceCounts::part3_easy},
                                {"part3_hard", ReferenceCounts::part3_hard}};
}

json to_json(const SampleRecord& r) {
  json j = {{"id", r.id},
            {"image_path", r.image_path},
            {"label_path", r.label_path},
            {"label_kind", to_string(r.label_kind)},
            {"action", r.action},
            {"object", r.object},
            {"part", r.part},
            {"split", to_string(r.split)},
            {"subset", to_string(r.subset)}};
  if (!r.source.empty()) j["source"] = r.source;
  return j;
}

SampleRecord record_from_json(const json& j) {
  static const std::set<std::string> allowed = {"id",     "image_path", "label_path", "label_kind", "action",
                                                "object", "part",       "split",      "subset",     "source"};
  if (!j.is_object()) throw ValidationError("manifest record is not a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ValidationError("manifest record has unknown field '" + key + "'");
  }
  try {
    SampleRecord r;
    r.id = j.at("id").get<std::string>();
    r.image_path = j.at("image_path").get<std::string>();
    r.label_path = j.at("label_path").get<std::string>();
    r.label_kind = parse_label_kind(j.at("label_kind").get<std::string>());
    r.action = j.at("action").get<std::string>();
    r.object = j.at("object").get<std::string>();
    r.part = j.at("part").get<int>();
    r.split = parse_split(j.at("split").get<std::string>());
    r.subset = parse_subset(j.at("subset").get<std::string>());
    if (j.contains("source")) r.source = j.at("source").get<std::string>();
    return r;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed manifest record: ") + e.what());
  }
}

std::string serialize_manifest(const Manifest& manifest) {
  json header = manifest.header.is_object() ? manifest.header : json::object();
  header["id"] = kHeaderId;
  std::string out = header.dump() + "\n";
  for (const auto& r : manifest.records) out += to_json(r).dump() + "\n";
  return out;
}

Manifest parse_manifest(const std::string& text) {
  Manifest m;
  std::istringstream lines(text);
  std::string line;
  std::size_t line_no = 0;
  bool first = true;
  while (std::getline(lines, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ValidationError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    if (first && j.is_object() && j.value("id", "") == kHeaderId) {
      m.header = j;
      m.header.erase("id");
    } else {
      m.records.push_back(record_from_json(j));
    }
    first = false;
  }
  return m;
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
  const std::string text = serialize_manifest(manifest);
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Manifest read_manifest(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse_manifest(std::string(bytes.begin(), bytes.end()));
}

Manifest concat_manifests(const std::vector<Manifest>& parts) {
  Manifest out;
  if (!parts.empty()) out.header = parts.front().header;
  for (const auto& p : parts) out.records.insert(out.records.end(), p.records.begin(), p.records.end());
  out.update_header();
  return out;
}

namespace {

std::string normalize_word(const std::string& text) {
  std::istringstream words(text);
  std::string word, out;
  while (words >> word) {
    if (!out.empty()) out += ' ';
    out += word;
  }
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

std::string build_prompt(const std::string& action, const std::string& object) {
  const std::string a = normalize_word(action);
  const std::string o = normalize_word(object);
  if (a.empty() || o.empty()) throw ValidationError("prompt needs a non-empty action and object");
  return a + " " + o;
}

std::string build_prompt(const SampleRecord& record) { return build_prompt(record.action, record.object); }

void validate_manifest(const Manifest& manifest, const fs::path& data_root) {
  std::set<std::string> ids;
  for (const auto& r : manifest.records) {
    if (r.id.empty() || r.id == kHeaderId) throw ValidationError("record with empty or reserved id");
    if (!ids.insert(r.id).second) throw ValidationError("duplicate record id '" + r.id + "'");
    if (label_kind_for_part(r.part) != r.label_kind) {
      throw ValidationError("record '" + r.id + "': part " + std::to_string(r.part) + " requires label_kind " +
                            to_string(label_kind_for_part(r.part)) + ", got " + to_string(r.label_kind));
    }
    build_prompt(r);
    if (!data_root.empty()) {
      for (const auto* rel : {&r.image_path, &r.label_path}) {
        if (!fs::exists(data_root / *rel)) {
          throw ValidationError("record '" + r.id + "': missing file " + (data_root / *rel).string());
        }
      }
    }
  }
}

void SplitReport::require_passed() const {
  if (passed()) return;
  std::string names;
  for (const auto& o : overlap) names += (names.empty() ? "" : ", ") + o;
  throw ValidationError("hard split shares object categories between train and test: {" + names + "}");
}

SplitReport validate_hard_split(const Manifest& manifest) {
  SplitReport report;
  for (const auto& r : manifest.records) {
    if (r.split != Split::hard) continue;
    const std::string object = normalize_word(r.object);
    (r.subset == Subset::train ? report.train_objects : report.test_objects).insert(object);
  }
  std::set_intersection(report.train_objects.begin(), report.train_objects.end(), report.test_objects.begin(),
                        report.test_objects.end(), std::inserter(report.overlap, report.overlap.begin()));
  return report;
}

PseudoLabelResult generate_pseudo_labels(const fs::path& raw_map_dir, const PostprocConfig& config,
                                         const Manifest& records, const fs::path& data_root) {
  config.validate();
  PseudoLabelResult result;
  result.manifest.header = records.header.is_object() ? records.header : json::object();
  for (const auto& r : records.records) {
    const fs::path raw = raw_map_dir / (r.id + ".pgm");
    if (!fs::exists(raw)) {
      result.skipped.push_back(r.id);
      continue;
    }
    write_map_pgm(data_root / r.label_path, postprocess(read_map_pgm(raw), config));
    SampleRecord out = r;
    out.part = 2;
    out.label_kind = LabelKind::pseudo_map;
    result.manifest.records.push_back(std::move(out));
  }
  if (result.manifest.records.empty()) result.warnings.push_back("no pseudo labels generated from " + raw_map_dir.string());
  if (!result.skipped.empty()) {
    result.warnings.push_back(std::to_string(result.skipped.size()) + " records skipped for missing raw maps");
  }
  result.manifest.header["provenance"] = {{"gamma", config.gamma}, {"num_filtrations", config.num_filtrations}};
  result.manifest.header["skipped"] = result.skipped;
  result.manifest.update_header();
  return result;
}

}  // namespace affsam
