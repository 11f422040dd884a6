#include "affsam/adaption.hpp"

#include "affsam/errors.hpp"
#include "affsam/ops.hpp"

namespace affsam {

Tensor FusionWeights::alpha() const { return ops::softmax(logits, 0); }

Tensor fuse_visual(std::span<const Tensor> taps, const FusionWeights& weights) {
  if (taps.size() != weights.projections.size() || taps.size() != weights.logits.numel()) {
    throw ConfigError("fuse_visual: " + std::to_string(taps.size()) + " taps for " +
                      std::to_string(weights.projections.size()) + " projections and " +
                      std::to_string(weights.logits.numel()) + " fusion logits");
  }
  std::vector<Tensor> projected;
  projected.reserve(taps.size());
  for (std::size_t i = 0; i < taps.size(); ++i) projected.push_back(weights.projections[i](taps[i]));
  return ops::weighted_sum(projected, weights.alpha());
}

AdaptionModule::AdaptionModule(ParameterStore& store, const BackboneConfig& backbone, const AdaptionConfig& config,
                               Rng& rng)
    : backbone_(backbone), config_(config) {
  const std::string p = "adaption";
  const std::size_t dm = backbone.mm_dim;
  const std::size_t ds = backbone.sam_dim;
  if (config.heads == 0 || dm % config.heads != 0) {
    throw ConfigError("adaption: mm_dim " + std::to_string(dm) + " not divisible by " +
                      std::to_string(config.heads) + " heads");
  }
  queries_ = store.create_uniform(p + ".queries", {backbone.sam_tokens(), dm}, dm, rng);

  const std::size_t n_proj = config.visual == VisualSource::fused ? backbone.taps : 1;
  fusion_.logits = store.create(p + ".fusion.logits", {n_proj});
  for (std::size_t i = 0; i < n_proj; ++i) {
    fusion_.projections.emplace_back(store, p + ".fusion.proj" + std::to_string(i), ds, ds, rng);
  }

  const std::size_t text_kv = dm;
  text_cross_ = {nn::LayerNorm(store, p + ".text_cross.norm", dm),
                 nn::Attention(store, p + ".text_cross.attn", dm, text_kv, config.heads, rng)};
  text_self_ = {nn::LayerNorm(store, p + ".text_self.norm", dm),
                nn::Attention(store, p + ".text_self.attn", dm, dm, config.heads, rng)};
  visual_cross_ = {nn::LayerNorm(store, p + ".visual_cross.norm", dm),
                   nn::Attention(store, p + ".visual_cross.attn", dm, ds, config.heads, rng)};
  visual_self_ = {nn::LayerNorm(store, p + ".visual_self.norm", dm),
                  nn::Attention(store, p + ".visual_self.attn", dm, dm, config.heads, rng)};

  up1_kernel_ = store.create_uniform(p + ".up1.kernel", {dm, dm / 2, 2, 2}, dm, rng);
  up2_kernel_ = store.create_uniform(p + ".up2.kernel", {dm / 2, backbone.mask_channels, 2, 2}, dm / 2, rng);

  if (config.zero_attention_output) zero_attention_outputs();
  if (config.zero_injection) zero_injection();
}

Tensor AdaptionModule::visual_context(const VisualTaps& taps) const {
  if (taps.taps.empty()) throw ConfigError("adaption: no visual taps");
  if (config_.visual == VisualSource::fused) return fuse_visual(taps.taps, fusion_);
  const Tensor last[] = {taps.taps.back()};
  return fuse_visual(last, fusion_);
}

Tensor AdaptionModule::run(const Tensor& text_features, const Tensor& fused_visual) const {
  const std::size_t dm = backbone_.mm_dim;
  if (text_features.rank() != 3 || text_features.dim(2) != dm) {
    throw DimensionError("run_adaption: text features " + shape_str(text_features.shape()) + ", expected [B,N," +
                         std::to_string(dm) + "]");
  }
  const std::size_t batch = text_features.dim(0);
  if (fused_visual.rank() != 3 || fused_visual.dim(0) != batch || fused_visual.dim(1) != backbone_.sam_tokens() ||
      fused_visual.dim(2) != backbone_.sam_dim) {
    throw DimensionError("run_adaption: fused visual " + shape_str(fused_visual.shape()) + ", expected [" +
                         std::to_string(batch) + "," + std::to_string(backbone_.sam_tokens()) + "," +
                         std::to_string(backbone_.sam_dim) + "]");
  }
  Tensor q = ops::repeat_batch(queries_, batch);
  q = ops::add(q, text_cross_.attn(text_cross_.norm(q), text_features));
  Tensor h = text_self_.norm(q);
  q = ops::add(q, text_self_.attn(h, h));
  q = ops::add(q, visual_cross_.attn(visual_cross_.norm(q), fused_visual));
  h = visual_self_.norm(q);
  q = ops::add(q, visual_self_.attn(h, h));
  return q;
}

Tensor AdaptionModule::project_to_mask_features(const Tensor& adapted_queries) const {
  if (adapted_queries.rank() != 3 || adapted_queries.dim(1) != backbone_.sam_tokens() ||
      adapted_queries.dim(2) != backbone_.mm_dim) {
    throw DimensionError("project_to_mask_features: " + shape_str(adapted_queries.shape()));
  }
  const Tensor grid = ops::tokens_to_grid(adapted_queries);
  return ops::transposed_conv2x2(ops::gelu(ops::transposed_conv2x2(grid, up1_kernel_)), up2_kernel_);
}

void AdaptionModule::zero_attention_outputs() {
  text_cross_.attn.zero_output();
  text_self_.attn.zero_output();
  visual_cross_.attn.zero_output();
  visual_self_.attn.zero_output();
}

void AdaptionModule::zero_injection() {
  for (auto& v : up2_kernel_.mutable_data()) v = 0.0;
}

}  // namespace affsam
