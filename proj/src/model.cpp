#include "affsam/model.hpp"

#include "affsam/errors.hpp"
#include "affsam/ops.hpp"

namespace affsam {

namespace {

// Component seeds are derived so that adding or removing one component never
// shifts the initialization of another.
constexpr std::uint64_t kImageSalt = 0x1111;
constexpr std::uint64_t kMultimodalSalt = 0x2222;
constexpr std::uint64_t kPromptSalt = 0x3333;
constexpr std::uint64_t kDecoderSalt = 0x4444;
constexpr std::uint64_t kAdaptionSalt = 0x5555;

}  // namespace

AffordanceModel::AffordanceModel(const ModelConfig& config, std::uint64_t seed)
    : config_(config), params_(std::make_unique<ParameterStore>()) {
  config_.backbone.validate();
  Rng image_rng(seed ^ kImageSalt);
  Rng mm_rng(seed ^ kMultimodalSalt);
  Rng prompt_rng(seed ^ kPromptSalt);
  Rng decoder_rng(seed ^ kDecoderSalt);
  image_ = ImageEncoder(*params_, config_.backbone, image_rng);
  multimodal_ = MultimodalEncoder(*params_, config_.backbone, mm_rng);
  prompt_ = PromptEncoder(*params_, config_.backbone, prompt_rng);
  decoder_ = MaskDecoder(*params_, config_.backbone, decoder_rng);
}

void AffordanceModel::attach_adaption(std::uint64_t seed) { attach_adaption(seed, config_.adaption); }

void AffordanceModel::attach_adaption(std::uint64_t seed, const AdaptionConfig& config) {
  detach_adaption();
  config_.adaption = config;
  Rng rng(seed ^ kAdaptionSalt);
  adaption_.emplace(*params_, config_.backbone, config, rng);
}

void AffordanceModel::detach_adaption() {
  adaption_.reset();
  params_->erase_group("adaption");
}

std::vector<std::vector<int>> AffordanceModel::tokenize_batch(const std::vector<std::string>& prompts) const {
  std::vector<std::vector<int>> ids;
  ids.reserve(prompts.size());
  for (const auto& p : prompts) ids.push_back(tokenize(p, config_.backbone));
  return ids;
}

Tensor AffordanceModel::forward(const Tensor& images, const std::vector<std::string>& prompts,
                                const ForwardOptions& options) const {
  if (images.rank() != 4 || images.dim(0) != prompts.size()) {
    throw DimensionError("forward: images " + shape_str(images.shape()) + " with " + std::to_string(prompts.size()) +
                         " prompts");
  }
  const nn::DropPath drop{options.drop_path, options.rng};
  const MultimodalOutput mm = multimodal_.encode(images, tokenize_batch(prompts), drop);
  const VisualTaps visual = image_.encode(images);
  const Tensor prompt = prompt_.encode(mm.cls);
  if (!adaption_ || options.baseline) return decoder_.decode(visual.final_features, prompt);

  const Tensor& text = adaption_->config().text == TextSource::text ? mm.text : mm.image_text;
  const Tensor adapted = adaption_->run(text, adaption_->visual_context(visual));
  const Tensor extra = adaption_->project_to_mask_features(adapted);
  return decoder_.decode(visual.final_features, prompt, &extra);
}

}  // namespace affsam
