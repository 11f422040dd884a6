#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "affsam/nn.hpp"
#include "affsam/tensor.hpp"

namespace affsam {

/// Dimensions of the toy stand-ins for the text-promptable segmentation
/// backbone (multimodal encoder, prompt encoder, image encoder, mask decoder).
/// Defaults keep the structural ratios of the full-size model: several tapped
/// encoder blocks, a [CLS]+image+text multimodal sequence, and a 4x upsampling
/// decoder.
struct BackboneConfig {
  std::size_t sam_dim = 64;       // image-encoder / decoder width
  std::size_t mm_dim = 48;        // multimodal-encoder width
  std::size_t image_size = 64;    // square input side
  std::size_t channels = 3;
  std::size_t patch = 16;
  std::size_t text_tokens = 8;    // max prompt length after padding
  std::size_t taps = 4;           // tapped global-attention blocks
  std::size_t depth = 4;          // image-encoder blocks
  std::size_t mm_depth = 2;       // multimodal-encoder blocks
  std::size_t heads = 4;
  std::size_t vocab = 128;
  std::size_t mask_channels = 8;  // decoder mask-feature channels
  std::size_t decoder_rounds = 2;

  std::size_t grid_side() const { return image_size / patch; }
  std::size_t sam_tokens() const { return grid_side() * grid_side(); }
  std::size_t mm_tokens() const { return grid_side() * grid_side(); }
  std::size_t mm_sequence() const { return 1 + mm_tokens() + text_tokens; }
  std::size_t mask_grid_side() const { return 4 * grid_side(); }
  /// Evenly spaced tap indices ending at the last block (e.g. 7,15,23,31 of 32).
  std::vector<std::size_t> tap_blocks() const;

  /// Throws ConfigError when the configuration breaks a structural invariant.
  void validate() const;
};

/// Whitespace tokenizer hashing lowercase words into [1, vocab); 0 pads to
/// `text_tokens`, longer prompts are truncated.
std::vector<int> tokenize(std::string_view text, const BackboneConfig& config);

struct MultimodalOutput {
  Tensor sequence;  // F_m: [B, 1 + N_m + N_t, D_m]
  Tensor cls;       // F_c: [B, 1, D_m]
  Tensor text;      // [B, N_t, D_m]
  Tensor image_text;  // [B, N_m + N_t, D_m]
};

struct VisualTaps {
  std::vector<Tensor> taps;  // each [B, N_s, D_s]
  Tensor final_features;     // [B, N_s, D_s]
};

class MultimodalEncoder {
 public:
  MultimodalEncoder() = default;
  MultimodalEncoder(ParameterStore& store, const BackboneConfig& config, Rng& rng);

  MultimodalOutput encode(const Tensor& image, const std::vector<std::vector<int>>& text_ids,
                          const nn::DropPath& drop = {}) const;

 private:
  BackboneConfig config_;
  nn::Linear patch_embed_;
  Tensor cls_;
  Tensor text_table_;
  Tensor position_;
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm norm_;
};

class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(ParameterStore& store, const BackboneConfig& config, Rng& rng);

  VisualTaps encode(const Tensor& image) const;

 private:
  BackboneConfig config_;
  nn::Linear patch_embed_;
  Tensor position_;
  std::vector<nn::TransformerBlock> blocks_;
  std::vector<std::size_t> tap_blocks_;
  nn::LayerNorm norm_;
};

/// Turns the multimodal [CLS] output into one sparse prompt token of width D_s.
class PromptEncoder {
 public:
  PromptEncoder() = default;
  PromptEncoder(ParameterStore& store, const BackboneConfig& config, Rng& rng);

  Tensor encode(const Tensor& cls) const;

 private:
  nn::Mlp mlp_;
};

/// Two-way attention decoder: prompt tokens and visual tokens attend to each
/// other, the visual grid is upsampled 4x by two transposed convolutions into
/// mask features, and each pixel is scored against the mask-token output.
class MaskDecoder {
 public:
  MaskDecoder() = default;
  MaskDecoder(ParameterStore& store, const BackboneConfig& config, Rng& rng);

  /// visual [B, N_s, D_s], prompt [B, 1, D_s]; `extra_mask_features`, when
  /// given, is [B, C', 4s, 4s] and is added to the internal mask features.
  /// Returns logits [B, image_size, image_size].
  Tensor decode(const Tensor& visual, const Tensor& prompt, const Tensor* extra_mask_features = nullptr) const;

 private:
  struct Round {
    nn::Attention self_attn;
    nn::LayerNorm norm1;
    nn::Attention token_to_image;
    nn::LayerNorm norm2;
    nn::Mlp mlp;
    nn::LayerNorm norm3;
    nn::Attention image_to_token;
    nn::LayerNorm norm4;
  };

  BackboneConfig config_;
  Tensor mask_token_;
  Tensor image_position_;
  std::vector<Round> rounds_;
  nn::Attention final_attn_;
  nn::LayerNorm final_norm_;
  Tensor up1_kernel_;
  Tensor up1_bias_;
  Tensor up2_kernel_;
  Tensor up2_bias_;
  nn::Mlp hyper_;
};

}  // namespace affsam
