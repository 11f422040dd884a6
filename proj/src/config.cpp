#include "affsam/config.hpp"

#include <cstdio>
#include <set>

#include "affsam/detail/hash.hpp"
#include "affsam/errors.hpp"
#include "affsam/image_io.hpp"

namespace affsam {

using nlohmann::json;

namespace {

/// Reads keys of one JSON object and rejects the ones nobody asked for.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected a JSON object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

std::string visual_name(VisualSource v) { return v == VisualSource::fused ? "fused" : "last_layer"; }
std::string text_name(TextSource t) { return t == TextSource::text ? "text" : "text_image"; }

VisualSource parse_visual(const std::string& s) {
  if (s == "fused") return VisualSource::fused;
  if (s == "last_layer") return VisualSource::last_layer;
  throw ConfigError("adaption.visual: unknown source '" + s + "'");
}

TextSource parse_text(const std::string& s) {
  if (s == "text") return TextSource::text;
  if (s == "text_image") return TextSource::text_image;
  throw ConfigError("adaption.text: unknown source '" + s + "'");
}

BackboneConfig backbone_from_json(const json& j, BackboneConfig c) {
  Reader r(j, "model.backbone");
  r.get("sam_dim", c.sam_dim);
  r.get("mm_dim", c.mm_dim);
  r.get("image_size", c.image_size);
  r.get("channels", c.channels);
  r.get("patch", c.patch);
  r.get("text_tokens", c.text_tokens);
  r.get("taps", c.taps);
  r.get("depth", c.depth);
  r.get("mm_depth", c.mm_depth);
  r.get("heads", c.heads);
  r.get("vocab", c.vocab);
  r.get("mask_channels", c.mask_channels);
  r.get("decoder_rounds", c.decoder_rounds);
  r.finish();
  return c;
}

AdaptionConfig adaption_from_json(const json& j, AdaptionConfig c) {
  Reader r(j, "model.adaption");
  r.get("heads", c.heads);
  std::string visual = visual_name(c.visual), text = text_name(c.text);
  r.get("visual", visual);
  r.get("text", text);
  c.visual = parse_visual(visual);
  c.text = parse_text(text);
  r.get("zero_attention_output", c.zero_attention_output);
  r.get("zero_injection", c.zero_injection);
  r.finish();
  return c;
}

LossConfig loss_from_json(const json& j, LossConfig c) {
  Reader r(j, "loss");
  r.get("lambda_dice", c.lambda_dice);
  r.get("lambda_bce", c.lambda_bce);
  r.get("focal_pos_weight", c.focal_pos_weight);
  r.get("focal_neg_weight", c.focal_neg_weight);
  r.get("focal_gamma", c.focal_gamma);
  r.get("dice_smooth", c.dice_smooth);
  r.finish();
  return c;
}

PostprocConfig postproc_from_json(const json& j, PostprocConfig c) {
  Reader r(j, "postproc");
  r.get("gamma", c.gamma);
  r.get("num_filtrations", c.num_filtrations);
  r.finish();
  return c;
}

StageConfig stage_from_json(const json& j, StageConfig c) {
  Reader r(j, "stages[" + std::to_string(c.stage) + "]");
  r.get("stage", c.stage);
  r.get("base_lr", c.base_lr);
  r.get("epochs", c.epochs);
  r.get("warmup_epochs", c.warmup_epochs);
  r.get("batch_size", c.batch_size);
  r.get("beta1", c.beta1);
  r.get("beta2", c.beta2);
  r.get("weight_decay", c.weight_decay);
  r.get("grad_clip", c.grad_clip);
  r.get("drop_path", c.drop_path);
  std::string loss = to_string(c.loss);
  r.get("loss", loss);
  c.loss = parse_loss_kind(loss);
  r.get("trainable", c.trainable);
  r.get("parts", c.parts);
  r.get("seed", c.seed);
  r.finish();
  return c;
}

}  // namespace

RunConfig RunConfig::defaults(const std::string& preset) {
  if (preset != "desk" && preset != "reference") throw ConfigError("unknown preset '" + preset + "' (desk or reference)");
  RunConfig c;
  c.preset = preset;
  for (int s = 1; s <= 3; ++s) c.stages.push_back(preset == "desk" ? StageConfig::desk(s) : StageConfig::reference(s));
  return c;
}

std::string RunConfig::part1_manifest() const { return data.part1.empty() ? "manifests/part1.jsonl" : data.part1; }
std::string RunConfig::part2_manifest() const {
  return data.part2.empty() ? "manifests/part2_" + to_string(split) + "_train.jsonl" : data.part2;
}
std::string RunConfig::part3_manifest() const {
  return data.part3.empty() ? "manifests/part3_" + to_string(split) + "_train.jsonl" : data.part3;
}
std::string RunConfig::test_manifest() const {
  return data.test.empty() ? "manifests/part3_" + to_string(split) + "_test.jsonl" : data.test;
}

void RunConfig::validate() const {
  model.backbone.validate();
  if (model.adaption.heads == 0 || model.backbone.mm_dim % model.adaption.heads != 0) {
    throw ConfigError("adaption.heads must divide mm_dim");
  }
  loss.validate();
  postproc.validate();
  if (stages.size() != 3) throw ConfigError("expected exactly three stage configs");
  for (int s = 0; s < 3; ++s) {
    if (stages[s].stage != s + 1) throw ConfigError("stage configs must be ordered 1, 2, 3");
    stages[s].validate();
  }
  if (!(metrics.epsilon > 0.0)) throw ConfigError("metrics.epsilon must be > 0");
}

json to_json(const BackboneConfig& c) {
  return {{"sam_dim", c.sam_dim},       {"mm_dim", c.mm_dim},   {"image_size", c.image_size},
          {"channels", c.channels},     {"patch", c.patch},     {"text_tokens", c.text_tokens},
          {"taps", c.taps},             {"depth", c.depth},     {"mm_depth", c.mm_depth},
          {"heads", c.heads},           {"vocab", c.vocab},     {"mask_channels", c.mask_channels},
          {"decoder_rounds", c.decoder_rounds}};
}

json to_json(const AdaptionConfig& c) {
  return {{"heads", c.heads},
          {"visual", visual_name(c.visual)},
          {"text", text_name(c.text)},
          {"zero_attention_output", c.zero_attention_output},
          {"zero_injection", c.zero_injection}};
}

json to_json(const ModelConfig& c) { return {{"backbone", to_json(c.backbone)}, {"adaption", to_json(c.adaption)}}; }

json to_json(const LossConfig& c) {
  return {{"lambda_dice", c.lambda_dice},           {"lambda_bce", c.lambda_bce},
          {"focal_pos_weight", c.focal_pos_weight}, {"focal_neg_weight", c.focal_neg_weight},
          {"focal_gamma", c.focal_gamma},           {"dice_smooth", c.dice_smooth}};
}

json to_json(const PostprocConfig& c) { return {{"gamma", c.gamma}, {"num_filtrations", c.num_filtrations}}; }

json to_json(const StageConfig& c) {
  return {{"stage", c.stage},       {"base_lr", c.base_lr},     {"epochs", c.epochs},
          {"warmup_epochs", c.warmup_epochs}, {"batch_size", c.batch_size}, {"beta1", c.beta1},
          {"beta2", c.beta2},       {"weight_decay", c.weight_decay}, {"grad_clip", c.grad_clip},
          {"drop_path", c.drop_path}, {"loss", to_string(c.loss)}, {"trainable", c.trainable},
          {"parts", c.parts},       {"seed", c.seed}};
}

json to_json(const RunConfig& c) {
  json stages = json::array();
  for (const auto& s : c.stages) stages.push_back(to_json(s));
  return {{"preset", c.preset},
          {"model", to_json(c.model)},
          {"loss", to_json(c.loss)},
          {"postproc", to_json(c.postproc)},
          {"metrics", {{"epsilon", c.metrics.epsilon}}},
          {"stages", stages},
          {"mode", c.mode == PipelineMode::staged ? "staged" : "combined"},
          {"split", to_string(c.split)},
          {"seed", c.seed},
          {"data", {{"part1", c.data.part1}, {"part2", c.data.part2}, {"part3", c.data.part3}, {"test", c.data.test}}}};
}

ModelConfig model_config_from_json(const json& j, ModelConfig base) {
  Reader r(j, "model");
  if (const json* b = r.child("backbone")) base.backbone = backbone_from_json(*b, base.backbone);
  if (const json* a = r.child("adaption")) base.adaption = adaption_from_json(*a, base.adaption);
  r.finish();
  return base;
}

RunConfig run_config_from_json(const json& j) {
  std::string preset = "desk";
  if (j.is_object() && j.contains("preset")) {
    if (!j.at("preset").is_string()) throw ConfigError("preset must be a string");
    preset = j.at("preset").get<std::string>();
  }
  RunConfig c = RunConfig::defaults(preset);
  Reader r(j, "config");
  r.get("preset", c.preset);
  if (const json* m = r.child("model")) c.model = model_config_from_json(*m, c.model);
  if (const json* l = r.child("loss")) c.loss = loss_from_json(*l, c.loss);
  if (const json* p = r.child("postproc")) c.postproc = postproc_from_json(*p, c.postproc);
  if (const json* m = r.child("metrics")) {
    Reader mr(*m, "metrics");
    mr.get("epsilon", c.metrics.epsilon);
    mr.finish();
  }
  if (const json* s = r.child("stages")) {
    if (!s->is_array() || s->size() != 3) throw ConfigError("stages must be an array of three objects");
    for (std::size_t i = 0; i < 3; ++i) c.stages[i] = stage_from_json((*s)[i], c.stages[i]);
  }
  std::string mode = c.mode == PipelineMode::staged ? "staged" : "combined";
  r.get("mode", mode);
  if (mode == "staged") {
    c.mode = PipelineMode::staged;
  } else if (mode == "combined") {
    c.mode = PipelineMode::combined;
  } else {
    throw ConfigError("mode must be 'staged' or 'combined'");
  }
  std::string split = to_string(c.split);
  r.get("split", split);
  try {
    c.split = parse_split(split);
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  r.get("seed", c.seed);
  if (const json* d = r.child("data")) {
    Reader dr(*d, "data");
    dr.get("part1", c.data.part1);
    dr.get("part2", c.data.part2);
    dr.get("part3", c.data.part3);
    dr.get("test", c.data.test);
    dr.finish();
  }
  r.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

std::string config_hash(const json& j) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(detail::fnv1a(j.dump())));
  return buf;
}

std::string config_hash(const RunConfig& c) { return config_hash(to_json(c)); }

}  // namespace affsam
