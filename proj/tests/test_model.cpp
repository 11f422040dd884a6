#include <doctest.h>

#include <cmath>

#include "affsam/adaption.hpp"
#include "affsam/backbone.hpp"
#include "affsam/errors.hpp"
#include "affsam/model.hpp"
#include "affsam/ops.hpp"
#include "affsam/trainer.hpp"
#include "support.hpp"

using namespace affsam;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

FusionWeights identity_fusion(std::size_t taps, std::size_t dim, std::vector<double> logits) {
  ParameterStore store;
  Rng rng(1);
  FusionWeights w;
  w.logits = Tensor::from({taps}, std::move(logits));
  for (std::size_t i = 0; i < taps; ++i) {
    nn::Linear lin(store, "p" + std::to_string(i), dim, dim, rng);
    std::vector<double> eye(dim * dim, 0.0);
    for (std::size_t d = 0; d < dim; ++d) eye[d * dim + d] = 1.0;
    lin.weight.assign(eye);
    lin.bias.assign(std::vector<double>(dim, 0.0));
    w.projections.push_back(lin);
  }
  return w;
}

}  // namespace

TEST_SUITE("backbone") {

TEST_CASE("tokenize pads, is deterministic and truncates") {
  const BackboneConfig c;
  const auto ids = tokenize("wear hat", c);
  REQUIRE(ids.size() == c.text_tokens);
  CHECK(ids[0] > 0);
  CHECK(ids[1] > 0);
  for (std::size_t i = 2; i < ids.size(); ++i) CHECK(ids[i] == 0);
  CHECK(tokenize("Wear  HAT", c) == ids);
  CHECK(tokenize("a b c d e f g h i j k", c).size() == c.text_tokens);
  CHECK_THROWS_AS(tokenize("   ", c), InputError);
}

TEST_CASE("default tap blocks are evenly spaced and end at the last block") {
  BackboneConfig c;
  c.depth = 32;
  c.taps = 4;
  CHECK(c.tap_blocks() == std::vector<std::size_t>{7, 15, 23, 31});
  c.taps = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("multimodal sequence shape and text sensitivity of the class token") {
  const BackboneConfig c = test::tiny_backbone();
  ParameterStore store;
  Rng rng(5);
  const MultimodalEncoder enc(store, c, rng);
  const Tensor img = test::random_tensor({2, 3, 16, 16}, rng, 0, 1);
  const auto out = enc.encode(img, {tokenize("hold cup", c), tokenize("drink cup", c)});
  CHECK(out.sequence.shape() == Shape{2, 1 + c.mm_tokens() + c.text_tokens, c.mm_dim});
  CHECK(out.cls.shape() == Shape{2, 1, c.mm_dim});
  CHECK(out.text.shape() == Shape{2, c.text_tokens, c.mm_dim});

  const Tensor same = ops::concat(std::vector<Tensor>{ops::slice(img, 0, 0, 1), ops::slice(img, 0, 0, 1)}, 0);
  const auto two = enc.encode(same, {tokenize("hold cup", c), tokenize("drink cup", c)});
  CHECK(test::max_abs_diff(ops::slice(two.cls, 0, 0, 1).data(), ops::slice(two.cls, 0, 1, 1).data()) > 1e-9);
}

TEST_CASE("image encoder exposes one tap per configured block") {
  const BackboneConfig c = test::tiny_backbone();
  ParameterStore store;
  Rng rng(6);
  const ImageEncoder enc(store, c, rng);
  const auto taps = enc.encode(test::random_tensor({1, 3, 16, 16}, rng, 0, 1));
  REQUIRE(taps.taps.size() == c.taps);
  for (const auto& t : taps.taps) CHECK(t.shape() == Shape{1, c.sam_tokens(), c.sam_dim});
  CHECK(taps.final_features.shape() == Shape{1, c.sam_tokens(), c.sam_dim});
  CHECK_THROWS_AS(enc.encode(Tensor::zeros({1, 3, 8, 8})), DimensionError);
}

TEST_CASE("decoder: zero extra mask features change nothing, wrong grid is rejected") {
  const BackboneConfig c = test::tiny_backbone();
  ParameterStore store;
  Rng rng(8);
  const MaskDecoder dec(store, c, rng);
  const Tensor visual = test::random_tensor({2, c.sam_tokens(), c.sam_dim}, rng);
  const Tensor prompt = test::random_tensor({2, 1, c.sam_dim}, rng);
  const Tensor base = dec.decode(visual, prompt);
  CHECK(base.shape() == Shape{2, c.image_size, c.image_size});
  const std::size_t side = c.mask_grid_side();
  CHECK(side == 4 * c.grid_side());
  const Tensor zero = Tensor::zeros({2, c.mask_channels, side, side});
  CHECK(values(dec.decode(visual, prompt, &zero)) == values(base));
  const Tensor bad = Tensor::zeros({2, c.mask_channels, side / 2, side / 2});
  CHECK_THROWS_AS(dec.decode(visual, prompt, &bad), DimensionError);
}

}  // TEST_SUITE

TEST_SUITE("adaption") {

TEST_CASE("fuse_visual closed forms") {
  const Tensor x = Tensor::from({1, 1, 2}, {1.0, 4.0});
  const Tensor y = Tensor::from({1, 1, 2}, {3.0, -2.0});
  const std::vector<Tensor> taps = {x, y};

  const Tensor avg = fuse_visual(taps, identity_fusion(2, 2, {0.0, 0.0}));
  CHECK(avg.at(0) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(avg.at(1) == doctest::Approx(1.0).epsilon(1e-15));

  const Tensor w = fuse_visual(taps, identity_fusion(2, 2, {std::log(2.0), 0.0}));
  CHECK(w.at(0) == doctest::Approx((2.0 * 1.0 + 3.0) / 3.0).epsilon(1e-14));
  CHECK(w.at(1) == doctest::Approx((2.0 * 4.0 - 2.0) / 3.0).epsilon(1e-14));

  const std::vector<Tensor> one = {x};
  CHECK(values(fuse_visual(one, identity_fusion(1, 2, {0.3}))) == values(x));
  CHECK_THROWS_AS(fuse_visual(one, identity_fusion(2, 2, {0.0, 0.0})), ConfigError);
}

TEST_CASE("permuting taps with their logits and projections leaves the fusion unchanged") {
  const BackboneConfig c = test::tiny_backbone();
  ParameterStore store;
  Rng rng(9);
  AdaptionModule m(store, c, AdaptionConfig{.heads = 2}, rng);
  Tensor logits = m.fusion().logits;
  logits.assign(std::vector<double>{0.7, -0.4});
  const std::vector<Tensor> taps = {test::random_tensor({1, c.sam_tokens(), c.sam_dim}, rng),
                                    test::random_tensor({1, c.sam_tokens(), c.sam_dim}, rng)};
  FusionWeights swapped;
  swapped.logits = Tensor::from({2}, {-0.4, 0.7});
  swapped.projections = {m.fusion().projections[1], m.fusion().projections[0]};
  const std::vector<Tensor> rev = {taps[1], taps[0]};
  CHECK(test::max_abs_diff(fuse_visual(taps, m.fusion()).data(), fuse_visual(rev, swapped).data()) < 1e-14);
}

TEST_CASE("zero-initialized module returns the broadcast queries and a zero injection") {
  const BackboneConfig c = test::tiny_backbone();
  ParameterStore store;
  Rng rng(10);
  AdaptionConfig ac;
  ac.heads = 2;
  AdaptionModule m(store, c, ac, rng);
  const Tensor text = test::random_tensor({3, c.text_tokens, c.mm_dim}, rng);
  const Tensor visual = test::random_tensor({3, c.sam_tokens(), c.sam_dim}, rng);
  const Tensor q = m.run(text, visual);
  REQUIRE(q.shape() == Shape{3, c.sam_tokens(), c.mm_dim});
  const auto qa = m.queries().data();
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t i = 0; i < qa.size(); ++i) CHECK(q.at(b * qa.size() + i) == qa[i]);
  }
  const Tensor f = m.project_to_mask_features(q);
  CHECK(f.shape() == Shape{3, c.mask_channels, c.mask_grid_side(), c.mask_grid_side()});
  for (double v : f.data()) CHECK(v == 0.0);
  CHECK_THROWS_AS(m.run(Tensor::zeros({3, c.text_tokens, c.mm_dim + 1}), visual), DimensionError);
}

TEST_CASE("mask-feature projection: 4x side, zero in gives zero out") {
  const BackboneConfig c = test::tiny_backbone();
  ParameterStore store;
  Rng rng(12);
  AdaptionConfig ac;
  ac.heads = 2;
  ac.zero_injection = false;
  AdaptionModule m(store, c, ac, rng);
  const Tensor held = m.project_to_mask_features(Tensor::zeros({1, c.sam_tokens(), c.mm_dim}));
  for (double v : held.data()) CHECK(v == 0.0);
  const Tensor f = m.project_to_mask_features(test::random_tensor({1, c.sam_tokens(), c.mm_dim}, rng));
  CHECK(f.dim(2) == 4 * c.grid_side());
}

TEST_CASE("zero-initialized adaption reproduces the baseline model bit-exactly") {
  ModelConfig mc;
  mc.backbone = test::tiny_backbone();
  mc.adaption.heads = 2;
  AffordanceModel model(mc, 21);
  Rng rng(13);
  const Tensor images = test::random_tensor({2, 3, 16, 16}, rng, 0, 1);
  const std::vector<std::string> prompts = {"hold cup", "cut knife"};
  const auto before = values(model.forward(images, prompts));
  model.attach_adaption(99);
  CHECK(model.params().has_group("adaption"));
  CHECK(values(model.forward(images, prompts)) == before);
  ForwardOptions base;
  base.baseline = true;
  CHECK(values(model.forward(images, prompts, base)) == before);
}

TEST_CASE("fusion weights stay on the simplex through optimizer steps") {
  ModelConfig mc;
  mc.backbone = test::tiny_backbone();
  mc.adaption.heads = 2;
  AffordanceModel model(mc, 3);
  model.attach_adaption(4);
  model.params().set_trainable_groups({"adaption"});
  Rng rng(14);
  const Tensor images = test::random_tensor({2, 3, 16, 16}, rng, 0, 1);
  const Tensor target = test::random_tensor({2, 16, 16}, rng, 0, 1);
  auto alpha_sum = [&] {
    double s = 0.0;
    const Tensor held = model.adaption().fusion().alpha();
    for (double a : held.data()) s += a;
    return s;
  };
  CHECK(std::abs(alpha_sum() - 1.0) <= 1e-12);
  const std::vector<double> logits0 = values(model.adaption().fusion().logits);
  AdamW opt;
  for (int step = 0; step < 100; ++step) {
    model.params().zero_grads();
    Tape tape;
    {
      TapeScope scope(tape);
      tape.backward(weighted_focal_loss(model.forward(images, {"hold cup", "cut knife"}), target, LossConfig{}));
    }
    opt.step(model.params(), 1e-2);
    CHECK(std::abs(alpha_sum() - 1.0) <= 1e-12);
  }
  CHECK(values(model.adaption().fusion().logits) != logits0);
}

TEST_CASE("the loss reaches the queries, fusion logits and every projection") {
  ModelConfig mc;
  mc.backbone = test::tiny_backbone();
  mc.adaption.heads = 2;
  mc.adaption.zero_attention_output = false;
  mc.adaption.zero_injection = false;
  AffordanceModel model(mc, 31);
  model.attach_adaption(32);
  Tensor logits = model.adaption().fusion().logits;
  logits.assign(std::vector<double>{0.3, -0.2});
  model.params().set_trainable_groups({"adaption"});
  Rng rng(15);
  model.params().zero_grads();
  Tape tape;
  {
    TapeScope scope(tape);
    const Tensor out = model.forward(test::random_tensor({2, 3, 16, 16}, rng, 0, 1), {"hold cup", "pour cup"});
    tape.backward(weighted_focal_loss(out, test::random_tensor({2, 16, 16}, rng, 0, 1), LossConfig{}));
  }
  for (const auto& name : {std::string("adaption.queries"), std::string("adaption.fusion.logits"),
                           std::string("adaption.fusion.proj0.weight"), std::string("adaption.fusion.proj1.weight")}) {
    INFO(name);
    const Tensor p = model.params().get(name);
    REQUIRE(p.has_grad());
    double norm = 0.0;
    for (double g : p.grad()) norm += g * g;
    CHECK(norm > 0.0);
  }
}

}  // TEST_SUITE
