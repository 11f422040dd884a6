#pragma once

#include <span>
#include <vector>

#include "affsam/backbone.hpp"
#include "affsam/nn.hpp"

namespace affsam {

enum class VisualSource {
  fused,       // softmax-weighted sum of projected taps
  last_layer,  // projection of the last tap only
};

enum class TextSource {
  text,        // text slice of the multimodal output
  text_image,  // image + text slices
};

struct AdaptionConfig {
  std::size_t heads = 4;
  VisualSource visual = VisualSource::fused;
  TextSource text = TextSource::text;
  /// Zero the output projection of every attention sublayer, so the queries
  /// pass through unchanged at initialization.
  bool zero_attention_output = true;
  /// Zero the last transposed-convolution kernel, so the injected mask
  /// features start at exactly zero and the model reproduces the baseline.
  bool zero_injection = true;
};

/// Learnable fusion ratios over tapped visual features: alpha = softmax(logits).
struct FusionWeights {
  Tensor logits;                        // [j]
  std::vector<nn::Linear> projections;  // one D_s -> D_s projection per tap

  Tensor alpha() const;
};

/// F_v = sum_i alpha_i * Linear_i(G_i).
Tensor fuse_visual(std::span<const Tensor> taps, const FusionWeights& weights);

/// Learnable affordance queries refined by text cross-attention and fused
/// visual cross-attention (each followed by one self-attention sublayer), then
/// upsampled into residual mask features for the decoder.
class AdaptionModule {
 public:
  AdaptionModule() = default;
  AdaptionModule(ParameterStore& store, const BackboneConfig& backbone, const AdaptionConfig& config, Rng& rng);

  const Tensor& queries() const { return queries_; }
  const FusionWeights& fusion() const { return fusion_; }
  const AdaptionConfig& config() const { return config_; }

  /// Visual context for the second cross-attention, per the configured source.
  Tensor visual_context(const VisualTaps& taps) const;
  /// Q_a -> Q_af. text_features [B, N, D_m], fused_visual [B, N_s, D_s].
  Tensor run(const Tensor& text_features, const Tensor& fused_visual) const;
  /// [B, N_s, D_m] -> [B, C', 4*sqrt(N_s), 4*sqrt(N_s)]
  Tensor project_to_mask_features(const Tensor& adapted_queries) const;

  void zero_attention_outputs();
  void zero_injection();

 private:
  struct Sublayer {
    nn::LayerNorm norm;
    nn::Attention attn;
  };

  BackboneConfig backbone_;
  AdaptionConfig config_;
  Tensor queries_;  // [N_s, D_m]
  FusionWeights fusion_;
  Sublayer text_cross_;
  Sublayer text_self_;
  Sublayer visual_cross_;
  Sublayer visual_self_;
  Tensor up1_kernel_;  // [D_m, D_m/2, 2, 2]
  Tensor up2_kernel_;  // [D_m/2, C', 2, 2]
};

}  // namespace affsam
