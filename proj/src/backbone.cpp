#include "affsam/backbone.hpp"

#include <cctype>
#include <sstream>

#include "affsam/detail/hash.hpp"
#include "affsam/errors.hpp"
#include "affsam/ops.hpp"

namespace affsam {

std::vector<std::size_t> BackboneConfig::tap_blocks() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < taps; ++i) out.push_back((i + 1) * depth / taps - 1);
  return out;
}

void BackboneConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("backbone config: " + what); };
  if (patch == 0 || image_size == 0 || image_size % patch != 0) fail("image_size must be a positive multiple of patch");
  if (channels == 0) fail("channels must be positive");
  if (taps < 1 || taps > depth) fail("taps must satisfy 1 <= taps <= depth");
  if (heads == 0 || sam_dim % heads != 0 || mm_dim % heads != 0) fail("sam_dim and mm_dim must be divisible by heads");
  if (sam_dim % 4 != 0) fail("sam_dim must be divisible by 4 (decoder upsampling widths)");
  if (mm_dim % 2 != 0) fail("mm_dim must be even (adaption upsampling width)");
  if (text_tokens == 0 || vocab < 2) fail("text_tokens must be positive and vocab at least 2");
  if (mask_channels == 0 || mm_depth == 0) fail("mask_channels and mm_depth must be positive");
}

std::vector<int> tokenize(std::string_view text, const BackboneConfig& config) {
  std::vector<int> ids;
  std::istringstream words{std::string(text)};
  std::string word;
  while (words >> word) {
    for (auto& c : word) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (ids.size() < config.text_tokens) ids.push_back(1 + static_cast<int>(detail::fnv1a(word) % (config.vocab - 1)));
  }
  if (ids.empty()) throw InputError("tokenize: prompt text is empty");
  ids.resize(config.text_tokens, 0);
  return ids;
}

MultimodalEncoder::MultimodalEncoder(ParameterStore& store, const BackboneConfig& config, Rng& rng)
    : config_(config) {
  const std::string p = "multimodal_encoder";
  const std::size_t patch_dim = config.channels * config.patch * config.patch;
  patch_embed_ = nn::Linear(store, p + ".patch_embed", patch_dim, config.mm_dim, rng);
  cls_ = store.create_uniform(p + ".cls", {1, config.mm_dim}, config.mm_dim, rng);
  text_table_ = store.create_uniform(p + ".text_embed", {config.vocab, config.mm_dim}, config.mm_dim, rng);
  position_ = store.create_uniform(p + ".position", {config.mm_sequence(), config.mm_dim}, config.mm_dim, rng);
  for (std::size_t i = 0; i < config.mm_depth; ++i) {
    blocks_.emplace_back(store, p + ".block" + std::to_string(i), config.mm_dim, config.heads, rng);
  }
  norm_ = nn::LayerNorm(store, p + ".norm", config.mm_dim);
}

MultimodalOutput MultimodalEncoder::encode(const Tensor& image, const std::vector<std::vector<int>>& text_ids,
                                           const nn::DropPath& drop) const {
  if (image.rank() != 4 || image.dim(0) != text_ids.size()) {
    throw DimensionError("encode_multimodal: image " + shape_str(image.shape()) + " with " +
                         std::to_string(text_ids.size()) + " prompts");
  }
  for (const auto& ids : text_ids) {
    if (ids.size() != config_.text_tokens) {
      throw DimensionError("encode_multimodal: expected " + std::to_string(config_.text_tokens) + " text ids, got " +
                           std::to_string(ids.size()));
    }
  }
  const std::size_t batch = image.dim(0);
  const Tensor image_tokens = patch_embed_(ops::patchify(image, config_.patch));
  if (image_tokens.dim(1) != config_.mm_tokens()) {
    throw DimensionError("encode_multimodal: image yields " + std::to_string(image_tokens.dim(1)) + " tokens, expected " +
                         std::to_string(config_.mm_tokens()));
  }
  const Tensor parts[] = {ops::repeat_batch(cls_, batch), image_tokens, ops::embedding(text_table_, text_ids)};
  Tensor x = ops::add_batch(ops::concat(parts, 1), position_);
  for (const auto& block : blocks_) x = block(x, drop);
  x = norm_(x);

  MultimodalOutput out;
  out.sequence = x;
  out.cls = ops::slice(x, 1, 0, 1);
  out.text = ops::slice(x, 1, 1 + config_.mm_tokens(), config_.text_tokens);
  out.image_text = ops::slice(x, 1, 1, config_.mm_tokens() + config_.text_tokens);
  return out;
}

ImageEncoder::ImageEncoder(ParameterStore& store, const BackboneConfig& config, Rng& rng)
    : config_(config), tap_blocks_(config.tap_blocks()) {
  const std::string p = "image_encoder";
  const std::size_t patch_dim = config.channels * config.patch * config.patch;
  patch_embed_ = nn::Linear(store, p + ".patch_embed", patch_dim, config.sam_dim, rng);
  position_ = store.create_uniform(p + ".position", {config.sam_tokens(), config.sam_dim}, config.sam_dim, rng);
  for (std::size_t i = 0; i < config.depth; ++i) {
    blocks_.emplace_back(store, p + ".block" + std::to_string(i), config.sam_dim, config.heads, rng);
  }
  norm_ = nn::LayerNorm(store, p + ".norm", config.sam_dim);
}

VisualTaps ImageEncoder::encode(const Tensor& image) const {
  if (image.rank() != 4 || image.dim(1) != config_.channels || image.dim(2) != config_.image_size ||
      image.dim(3) != config_.image_size) {
    throw DimensionError("encode_image: expected [B," + std::to_string(config_.channels) + "," +
                         std::to_string(config_.image_size) + "," + std::to_string(config_.image_size) + "], got " +
                         shape_str(image.shape()));
  }
  Tensor x = ops::add_batch(patch_embed_(ops::patchify(image, config_.patch)), position_);
  VisualTaps out;
  std::size_t next_tap = 0;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    x = blocks_[i](x);
    if (next_tap < tap_blocks_.size() && tap_blocks_[next_tap] == i) {
      out.taps.push_back(x);
      ++next_tap;
    }
  }
  out.final_features = norm_(x);
  return out;
}

PromptEncoder::PromptEncoder(ParameterStore& store, const BackboneConfig& config, Rng& rng)
    : mlp_(store, "prompt_encoder.mlp", config.mm_dim, config.sam_dim, config.sam_dim, rng) {}

Tensor PromptEncoder::encode(const Tensor& cls) const { return mlp_(cls); }

MaskDecoder::MaskDecoder(ParameterStore& store, const BackboneConfig& config, Rng& rng) : config_(config) {
  const std::string p = "mask_decoder";
  const std::size_t d = config.sam_dim;
  mask_token_ = store.create_uniform(p + ".mask_token", {1, d}, d, rng);
  image_position_ = store.create_uniform(p + ".image_position", {config.sam_tokens(), d}, d, rng);
  for (std::size_t r = 0; r < config.decoder_rounds; ++r) {
    const std::string q = p + ".round" + std::to_string(r);
    Round round;
    round.self_attn = nn::Attention(store, q + ".self_attn", d, d, config.heads, rng);
    round.norm1 = nn::LayerNorm(store, q + ".norm1", d);
    round.token_to_image = nn::Attention(store, q + ".token_to_image", d, d, config.heads, rng);
    round.norm2 = nn::LayerNorm(store, q + ".norm2", d);
    round.mlp = nn::Mlp(store, q + ".mlp", d, 2 * d, d, rng);
    round.norm3 = nn::LayerNorm(store, q + ".norm3", d);
    round.image_to_token = nn::Attention(store, q + ".image_to_token", d, d, config.heads, rng);
    round.norm4 = nn::LayerNorm(store, q + ".norm4", d);
    rounds_.push_back(std::move(round));
  }
  final_attn_ = nn::Attention(store, p + ".final_attn", d, d, config.heads, rng);
  final_norm_ = nn::LayerNorm(store, p + ".final_norm", d);
  up1_kernel_ = store.create_uniform(p + ".up1.kernel", {d, d / 4, 2, 2}, d, rng);
  up1_bias_ = store.create(p + ".up1.bias", {d / 4});
  up2_kernel_ = store.create_uniform(p + ".up2.kernel", {d / 4, config.mask_channels, 2, 2}, d / 4, rng);
  up2_bias_ = store.create(p + ".up2.bias", {config.mask_channels});
  hyper_ = nn::Mlp(store, p + ".hyper", d, d, config.mask_channels, rng);
}

Tensor MaskDecoder::decode(const Tensor& visual, const Tensor& prompt, const Tensor* extra_mask_features) const {
  const std::size_t d = config_.sam_dim;
  if (visual.rank() != 3 || visual.dim(1) != config_.sam_tokens() || visual.dim(2) != d) {
    throw DimensionError("decode_mask: visual tokens " + shape_str(visual.shape()) + ", expected [B," +
                         std::to_string(config_.sam_tokens()) + "," + std::to_string(d) + "]");
  }
  const std::size_t batch = visual.dim(0);
  if (prompt.rank() != 3 || prompt.dim(0) != batch || prompt.dim(2) != d) {
    throw DimensionError("decode_mask: prompt embedding " + shape_str(prompt.shape()) + " incompatible with visual " +
                         shape_str(visual.shape()));
  }
  const Tensor token_parts[] = {ops::repeat_batch(mask_token_, batch), prompt};
  Tensor tokens = ops::concat(token_parts, 1);
  Tensor image = visual;
  for (const auto& r : rounds_) {
    tokens = r.norm1(ops::add(tokens, r.self_attn(tokens, tokens)));
    tokens = r.norm2(ops::add(tokens, r.token_to_image(tokens, ops::add_batch(image, image_position_), image)));
    tokens = r.norm3(ops::add(tokens, r.mlp(tokens)));
    image = r.norm4(ops::add(image, r.image_to_token(ops::add_batch(image, image_position_), tokens, tokens)));
  }
  tokens = final_norm_(ops::add(tokens, final_attn_(tokens, ops::add_batch(image, image_position_), image)));

  const Tensor grid = ops::tokens_to_grid(image);
  const Tensor up1 = ops::gelu(ops::add_channel_bias(ops::transposed_conv2x2(grid, up1_kernel_), up1_bias_));
  Tensor mask_features = ops::gelu(ops::add_channel_bias(ops::transposed_conv2x2(up1, up2_kernel_), up2_bias_));
  if (extra_mask_features != nullptr) {
    if (extra_mask_features->shape() != mask_features.shape()) {
      throw DimensionError("decode_mask: extra mask features " + shape_str(extra_mask_features->shape()) +
                           " do not match the mask-feature grid " + shape_str(mask_features.shape()));
    }
    mask_features = ops::add(mask_features, *extra_mask_features);
  }

  const Tensor hyper = hyper_(ops::slice(tokens, 1, 0, 1));  // [B, 1, C']
  const std::size_t side = config_.mask_grid_side();
  const Tensor scores = ops::matmul(ops::grid_to_tokens(mask_features), ops::transpose_last(hyper));
  const Tensor low_res = ops::reshape(scores, {batch, side, side});
  return ops::upsample_bilinear(low_res, config_.image_size, config_.image_size);
}

}  // namespace affsam
