#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "affsam/adaption.hpp"
#include "affsam/backbone.hpp"
#include "affsam/nn.hpp"

namespace affsam {

struct ModelConfig {
  BackboneConfig backbone;
  AdaptionConfig adaption;
};

struct ForwardOptions {
  /// Stochastic depth on multimodal-encoder blocks; training only.
  double drop_path = 0.0;
  Rng* rng = nullptr;
  /// Skip the adaption module even when attached (baseline path).
  bool baseline = false;
};

/// Text-promptable segmentation backbone plus an optional affordance-adaption
/// module. All parameters live in one ParameterStore, grouped by component:
/// image_encoder, multimodal_encoder, prompt_encoder, mask_decoder, adaption.
class AffordanceModel {
 public:
  AffordanceModel(const ModelConfig& config, std::uint64_t seed);

  AffordanceModel(const AffordanceModel&) = delete;
  AffordanceModel& operator=(const AffordanceModel&) = delete;
  AffordanceModel(AffordanceModel&&) = default;
  AffordanceModel& operator=(AffordanceModel&&) = default;

  const ModelConfig& config() const { return config_; }
  ParameterStore& params() { return *params_; }
  const ParameterStore& params() const { return *params_; }

  void attach_adaption(std::uint64_t seed);
  void attach_adaption(std::uint64_t seed, const AdaptionConfig& config);
  void detach_adaption();
  bool has_adaption() const { return adaption_.has_value(); }

  const MultimodalEncoder& multimodal_encoder() const { return multimodal_; }
  const ImageEncoder& image_encoder() const { return image_; }
  const PromptEncoder& prompt_encoder() const { return prompt_; }
  const MaskDecoder& mask_decoder() const { return decoder_; }
  const AdaptionModule& adaption() const { return *adaption_; }

  std::vector<std::vector<int>> tokenize_batch(const std::vector<std::string>& prompts) const;

  /// images [B, C, S, S] in [0,1], one prompt per image -> logits [B, S, S].
  Tensor forward(const Tensor& images, const std::vector<std::string>& prompts,
                 const ForwardOptions& options = {}) const;

 private:
  ModelConfig config_;
  std::unique_ptr<ParameterStore> params_;
  MultimodalEncoder multimodal_;
  ImageEncoder image_;
  PromptEncoder prompt_;
  MaskDecoder decoder_;
  std::optional<AdaptionModule> adaption_;
};

}  // namespace affsam
