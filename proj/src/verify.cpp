#include "affsam/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>

#include "affsam/adaption.hpp"
#include "affsam/errors.hpp"
#include "affsam/grad_check.hpp"
#include "affsam/image_io.hpp"
#include "affsam/losses.hpp"
#include "affsam/metrics.hpp"
#include "affsam/model.hpp"
#include "affsam/nn.hpp"
#include "affsam/ops.hpp"
#include "affsam/postproc.hpp"
#include "affsam/trainer.hpp"

namespace affsam {

namespace {

struct GradCase {
  GradCase(std::function<Tensor()> fn, std::vector<Tensor> in) : f(std::move(fn)), inputs(std::move(in)) {}

  std::function<Tensor()> f;
  std::vector<Tensor> inputs;
  std::size_t max_coords = 0;
  std::shared_ptr<void> keep;  // owns module parameters
};

struct GradSpec {
  std::string op;
  std::function<GradCase(Rng&)> build;
  std::size_t seeds = 0;  // 0: use the suite default
};

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v));
}

/// Scalar probe sum(out * R) with a fixed random R.
std::function<Tensor()> probe(std::function<Tensor()> out, const Shape& shape, Rng& rng) {
  const Tensor weights = random_tensor(shape, rng);
  return [out = std::move(out), weights] { return ops::sum(ops::mul(out(), weights)); };
}

GradCase unary(Shape shape, Rng& rng, std::function<Tensor(const Tensor&)> op, Shape out_shape, double lo = -1.0,
               double hi = 1.0) {
  Tensor x = random_tensor(shape, rng, lo, hi);
  return {probe([x, op] { return op(x); }, out_shape, rng), {x}};
}

GradCase binary(Shape a_shape, Shape b_shape, Rng& rng, std::function<Tensor(const Tensor&, const Tensor&)> op,
                Shape out_shape) {
  Tensor a = random_tensor(a_shape, rng);
  Tensor b = random_tensor(b_shape, rng);
  return {probe([a, b, op] { return op(a, b); }, out_shape, rng), {a, b}};
}

BackboneConfig tiny_backbone() {
  BackboneConfig c;
  c.sam_dim = 8;
  c.mm_dim = 8;
  c.image_size = 16;
  c.patch = 8;
  c.text_tokens = 3;
  c.taps = 2;
  c.depth = 2;
  c.mm_depth = 1;
  c.heads = 2;
  c.vocab = 16;
  c.mask_channels = 2;
  c.decoder_rounds = 1;
  return c;
}

std::vector<Tensor> params_of(const ParameterStore& store) {
  std::vector<Tensor> out;
  for (const auto& [_, p] : store.all()) out.push_back(p);
  return out;
}

const std::map<std::string, GradSpec>& grad_specs() {
  static const std::map<std::string, GradSpec> specs = [] {
    std::map<std::string, GradSpec> s;
    s["add"] = {"add", [](Rng& r) { return binary({3, 4}, {3, 4}, r, ops::add, {3, 4}); }};
    s["sub"] = {"sub", [](Rng& r) { return binary({3, 4}, {3, 4}, r, ops::sub, {3, 4}); }};
    s["mul"] = {"mul", [](Rng& r) { return binary({3, 4}, {3, 4}, r, ops::mul, {3, 4}); }};
    s["scale"] = {"scale", [](Rng& r) { return unary({3, 4}, r, [](const Tensor& x) { return ops::scale(x, -1.7); }, {3, 4}); }};
    s["add_bias"] = {"add_bias", [](Rng& r) { return binary({2, 3, 4}, {4}, r, ops::add_bias, {2, 3, 4}); }};
    s["add_batch"] = {"add_batch", [](Rng& r) { return binary({2, 3, 4}, {3, 4}, r, ops::add_batch, {2, 3, 4}); }};
    s["add_channel_bias"] = {"add_channel_bias",
                             [](Rng& r) { return binary({2, 3, 2, 2}, {3}, r, ops::add_channel_bias, {2, 3, 2, 2}); }};
    s["matmul_2d"] = {"matmul", [](Rng& r) { return binary({3, 4}, {4, 5}, r, ops::matmul, {3, 5}); }};
    s["matmul_shared"] = {"matmul", [](Rng& r) { return binary({2, 3, 4}, {4, 5}, r, ops::matmul, {2, 3, 5}); }};
    s["matmul_batched"] = {"matmul", [](Rng& r) { return binary({2, 3, 4}, {2, 4, 5}, r, ops::matmul, {2, 3, 5}); }};
    s["transpose_last"] = {"transpose_last", [](Rng& r) { return unary({2, 3, 4}, r, ops::transpose_last, {2, 4, 3}); }};
    s["softmax_last"] = {"softmax", [](Rng& r) {
                           return unary({2, 3, 4}, r, [](const Tensor& x) { return ops::softmax(x, 2); }, {2, 3, 4}, -2, 2);
                         }};
    s["softmax_inner"] = {"softmax", [](Rng& r) {
                            return unary({2, 3, 4}, r, [](const Tensor& x) { return ops::softmax(x, 1); }, {2, 3, 4}, -2, 2);
                          }};
    s["layer_norm"] = {"layer_norm", [](Rng& r) {
                         Tensor x = random_tensor({2, 3, 5}, r, -2, 2);
                         Tensor g = random_tensor({5}, r, 0.5, 1.5);
                         Tensor b = random_tensor({5}, r);
                         return GradCase{probe([=] { return ops::layer_norm(x, g, b); }, {2, 3, 5}, r), {x, g, b}};
                       }};
    s["gelu"] = {"gelu", [](Rng& r) { return unary({3, 5}, r, ops::gelu, {3, 5}, -3, 3); }};
    s["sigmoid"] = {"sigmoid", [](Rng& r) { return unary({3, 5}, r, ops::sigmoid, {3, 5}, -4, 4); }};
    s["reshape"] = {"reshape",
                    [](Rng& r) { return unary({2, 6}, r, [](const Tensor& x) { return ops::reshape(x, {3, 4}); }, {3, 4}); }};
    s["slice"] = {"slice", [](Rng& r) {
                    return unary({2, 5, 3}, r, [](const Tensor& x) { return ops::slice(x, 1, 1, 3); }, {2, 3, 3});
                  }};
    s["concat"] = {"concat", [](Rng& r) {
                     return binary({2, 2, 3}, {2, 4, 3}, r,
                                   [](const Tensor& a, const Tensor& b) {
                                     const Tensor parts[] = {a, b};
                                     return ops::concat(parts, 1);
                                   },
                                   {2, 6, 3});
                   }};
    s["repeat_batch"] = {"repeat_batch", [](Rng& r) {
                           return unary({3, 4}, r, [](const Tensor& x) { return ops::repeat_batch(x, 3); }, {3, 3, 4});
                         }};
    s["split_heads"] = {"split_heads", [](Rng& r) {
                          return unary({2, 3, 4}, r, [](const Tensor& x) { return ops::split_heads(x, 2); }, {4, 3, 2});
                        }};
    s["merge_heads"] = {"merge_heads", [](Rng& r) {
                          return unary({4, 3, 2}, r, [](const Tensor& x) { return ops::merge_heads(x, 2); }, {2, 3, 4});
                        }};
    s["tokens_to_grid"] = {"tokens_to_grid", [](Rng& r) { return unary({2, 4, 3}, r, ops::tokens_to_grid, {2, 3, 2, 2}); }};
    s["grid_to_tokens"] = {"grid_to_tokens", [](Rng& r) { return unary({2, 3, 2, 2}, r, ops::grid_to_tokens, {2, 4, 3}); }};
    s["transposed_conv2x2"] = {"transposed_conv2x2", [](Rng& r) {
                                 return binary({2, 3, 2, 3}, {3, 2, 2, 2}, r, ops::transposed_conv2x2, {2, 2, 4, 6});
                               }};
    s["transposed_conv2x2_single"] = {"transposed_conv2x2", [](Rng& r) {
                                        return binary({3, 2, 2}, {3, 2, 2, 2}, r, ops::transposed_conv2x2, {2, 4, 4});
                                      }};
    s["upsample_bilinear"] = {"upsample_bilinear", [](Rng& r) {
                                return unary({2, 3, 4}, r, [](const Tensor& x) { return ops::upsample_bilinear(x, 5, 7); },
                                             {2, 5, 7});
                              }};
    s["embedding"] = {"embedding", [](Rng& r) {
                        std::vector<std::vector<int>> ids = {{1, 0, 4}, {4, 4, 2}};
                        return unary({6, 3}, r, [ids](const Tensor& t) { return ops::embedding(t, ids); }, {2, 3, 3});
                      }};
    s["patchify"] = {"patchify", [](Rng& r) {
                       return unary({2, 2, 4, 4}, r, [](const Tensor& x) { return ops::patchify(x, 2); }, {2, 4, 8});
                     }};
    s["weighted_sum"] = {"weighted_sum", [](Rng& r) {
                           Tensor a = random_tensor({2, 3}, r), b = random_tensor({2, 3}, r), c = random_tensor({2, 3}, r);
                           Tensor w = random_tensor({3}, r);
                           auto f = [=] {
                             const Tensor parts[] = {a, b, c};
                             return ops::weighted_sum(parts, w);
                           };
                           return GradCase{probe(f, {2, 3}, r), {a, b, c, w}};
                         }};
    s["scale_per_sample"] = {"scale_per_sample", [](Rng& r) {
                               const std::vector<double> factors = {0.0, 1.25, 2.0};
                               return unary({3, 2, 2}, r,
                                            [factors](const Tensor& x) { return ops::scale_per_sample(x, factors); },
                                            {3, 2, 2});
                             }};
    s["sum"] = {"sum", [](Rng& r) {
                  Tensor x = random_tensor({3, 4}, r);
                  return GradCase{[x] { return ops::scale(ops::sum(x), 0.7); }, {x}};
                }};
    s["mean"] = {"sum", [](Rng& r) {
                   Tensor x = random_tensor({3, 4}, r);
                   return GradCase{[x] { return ops::mean(x); }, {x}};
                 }};
    s["dice_loss"] = {"dice_loss", [](Rng& r) {
                        Tensor p = random_tensor({2, 4, 4}, r, 0.05, 0.95);
                        Tensor t = random_tensor({2, 4, 4}, r, 0.0, 1.0);
                        return GradCase{[p, t] { return dice_loss(p, t, 1.0); }, {p}};
                      }};
    s["bce_loss"] = {"bce_loss", [](Rng& r) {
                       Tensor x = random_tensor({2, 4, 4}, r, -4, 4);
                       Tensor t = random_tensor({2, 4, 4}, r, 0.0, 1.0);
                       return GradCase{[x, t] { return bce_loss(x, t); }, {x}};
                     }};
    s["combined_mask_loss"] = {"dice_loss", [](Rng& r) {
                                 Tensor x = random_tensor({2, 4, 4}, r, -4, 4);
                                 Tensor t = random_tensor({2, 4, 4}, r, 0.0, 1.0);
                                 return GradCase{[x, t] { return combined_mask_loss(x, t, LossConfig{}); }, {x}};
                               }};
    s["weighted_focal_loss"] = {"weighted_focal_loss", [](Rng& r) {
                                  Tensor x = random_tensor({2, 4, 4}, r, -4, 4);
                                  Tensor t = random_tensor({2, 4, 4}, r, 0.0, 1.0);
                                  return GradCase{[x, t] { return weighted_focal_loss(x, t, LossConfig{}); }, {x}};
                                }};
    s["attention"] = {"matmul", [](Rng& r) {
                        auto store = std::make_shared<ParameterStore>();
                        auto attn = std::make_shared<nn::Attention>(*store, "attn", 4, 6, 2, r);
                        Tensor q = random_tensor({2, 3, 4}, r), ctx = random_tensor({2, 5, 6}, r);
                        GradCase c{probe([attn, q, ctx] { return (*attn)(q, ctx); }, {2, 3, 4}, r), params_of(*store)};
                        c.inputs.push_back(q);
                        c.inputs.push_back(ctx);
                        c.keep = store;
                        return c;
                      }};
    s["transformer_block"] = {"layer_norm", [](Rng& r) {
                                auto store = std::make_shared<ParameterStore>();
                                auto block = std::make_shared<nn::TransformerBlock>(*store, "blk", 4, 2, r);
                                Tensor x = random_tensor({2, 3, 4}, r);
                                GradCase c{probe([block, x] { return (*block)(x); }, {2, 3, 4}, r), params_of(*store)};
                                c.inputs.push_back(x);
                                c.keep = store;
                                c.max_coords = 6;
                                return c;
                              }};
    s["fuse_visual"] = {"weighted_sum", [](Rng& r) {
                          auto store = std::make_shared<ParameterStore>();
                          const BackboneConfig bb = tiny_backbone();
                          auto module = std::make_shared<AdaptionModule>(*store, bb, AdaptionConfig{}, r);
                          Tensor logits = module->fusion().logits;
                          logits.assign(random_tensor({bb.taps}, r).data());
                          std::vector<Tensor> taps;
                          for (std::size_t i = 0; i < bb.taps; ++i) taps.push_back(random_tensor({2, bb.sam_tokens(), bb.sam_dim}, r));
                          GradCase c{probe([module, taps] { return fuse_visual(taps, module->fusion()); },
                                           {2, bb.sam_tokens(), bb.sam_dim}, r),
                                     taps};
                          c.inputs.push_back(logits);
                          for (const auto& p : module->fusion().projections) {
                            c.inputs.push_back(p.weight);
                            c.inputs.push_back(p.bias);
                          }
                          c.keep = store;
                          c.max_coords = 8;
                          return c;
                        }};
    s["adaption_module"] = {"transposed_conv2x2", [](Rng& r) {
                              auto store = std::make_shared<ParameterStore>();
                              const BackboneConfig bb = tiny_backbone();
                              AdaptionConfig ac;
                              ac.heads = 2;
                              ac.zero_attention_output = false;
                              ac.zero_injection = false;
                              auto module = std::make_shared<AdaptionModule>(*store, bb, ac, r);
                              Tensor logits = module->fusion().logits;
                              logits.assign(random_tensor({bb.taps}, r).data());
                              VisualTaps visual;
                              for (std::size_t i = 0; i < bb.taps; ++i) {
                                visual.taps.push_back(random_tensor({2, bb.sam_tokens(), bb.sam_dim}, r));
                              }
                              visual.final_features = visual.taps.back();
                              Tensor text = random_tensor({2, bb.text_tokens, bb.mm_dim}, r);
                              const std::size_t side = bb.mask_grid_side();
                              GradCase c{probe(
                                             [module, visual, text] {
                                               const Tensor q = module->run(text, module->visual_context(visual));
                                               return module->project_to_mask_features(q);
                                             },
                                             {2, bb.mask_channels, side, side}, r),
                                         params_of(*store)};
                              c.inputs.push_back(text);
                              for (const auto& t : visual.taps) c.inputs.push_back(t);
                              c.keep = store;
                              c.max_coords = 4;
                              return c;
                            }};
    s["model_forward"] = {"upsample_bilinear",
                          [](Rng& r) {
                            ModelConfig mc;
                            mc.backbone = tiny_backbone();
                            mc.adaption.heads = 2;
                            mc.adaption.zero_attention_output = false;
                            mc.adaption.zero_injection = false;
                            auto model = std::make_shared<AffordanceModel>(mc, r.next());
                            model->attach_adaption(r.next());
                            Tensor images = random_tensor({2, 3, 16, 16}, r, 0.0, 1.0);
                            const std::vector<std::string> prompts = {"hold cup", "cut knife"};
                            GradCase c{probe([model, images, prompts] { return model->forward(images, prompts); },
                                             {2, 16, 16}, r),
                                       params_of(model->params())};
                            c.keep = model;
                            c.max_coords = 2;
                            return c;
                          }};
    return s;
  }();
  return specs;
}

std::string fmt(const char* pattern, double v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

// Independent reference formulas for the oracle suite.
std::vector<double> naive_normalize(const std::vector<double>& m) {
  const double total = std::accumulate(m.begin(), m.end(), 0.0);
  std::vector<double> out;
  for (double v : m) out.push_back(v / total);
  return out;
}

double naive_kld(const std::vector<double>& pred, const std::vector<double>& gt) {
  const auto p = naive_normalize(pred), g = naive_normalize(gt);
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += g[i] * std::log(1e-10 + g[i] / (1e-10 + p[i]));
  return total;
}

double naive_sim(const std::vector<double>& pred, const std::vector<double>& gt) {
  const auto p = naive_normalize(pred), g = naive_normalize(gt);
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += p[i] < g[i] ? p[i] : g[i];
  return total;
}

double naive_nss(const std::vector<double>& pred, const std::vector<double>& gt) {
  const double n = static_cast<double>(pred.size());
  const double mu = std::accumulate(pred.begin(), pred.end(), 0.0) / n;
  const double sq = std::inner_product(pred.begin(), pred.end(), pred.begin(), 0.0) / n - mu * mu;
  const double sigma = std::sqrt(std::max(0.0, sq));
  if (sigma == 0.0) return 0.0;
  double num = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) num += gt[i] * (pred[i] - mu) / sigma;
  return num / std::accumulate(gt.begin(), gt.end(), 0.0);
}

AffordanceMap as_map(const std::vector<double>& v) { return AffordanceMap::from(1, v.size(), v); }

std::vector<double> random_map(Rng& rng, std::size_t n, double zero_fraction) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform() < zero_fraction ? 0.0 : rng.uniform();
  v[rng.below(n)] = 0.5 + rng.uniform();
  return v;
}

struct Collector {
  std::vector<CheckOutcome> out;

  void add(std::string name, bool passed, double worst, double tol, std::size_t trials, std::string detail = {}) {
    CheckOutcome c;
    c.suite = "oracle";
    c.name = std::move(name);
    c.passed = passed;
    c.worst = worst;
    c.tolerance = tol;
    c.trials = trials;
    c.detail = std::move(detail);
    out.push_back(std::move(c));
  }

  template <class F>
  void guarded(const std::string& name, F&& body) {
    try {
      body();
    } catch (const std::exception& e) {
      add(name, false, 0.0, 0.0, 0, std::string("exception: ") + e.what());
    }
  }
};

}  // namespace

std::vector<std::string> grad_check_names() {
  std::vector<std::string> names;
  for (const auto& [name, _] : grad_specs()) names.push_back(name);
  return names;
}

CheckOutcome run_grad_check(const std::string& name, const VerifyOptions& options) {
  const auto it = grad_specs().find(name);
  if (it == grad_specs().end()) throw ConfigError("unknown gradient check '" + name + "'");
  const GradSpec& spec = it->second;
  CheckOutcome outcome;
  outcome.suite = "grad";
  outcome.name = name;
  outcome.op = spec.op;
  outcome.tolerance = options.grad_tolerance;
  outcome.passed = true;
  const std::size_t seeds = spec.seeds ? std::min(spec.seeds, options.seeds) : options.seeds;
  try {
    for (std::size_t k = 0; k < seeds; ++k) {
      Rng rng(options.base_seed * 1000003 + k);
      GradCase c = spec.build(rng);
      GradCheckOptions gco;
      gco.step = options.step;
      gco.max_coords_per_input = c.max_coords;
      gco.sample_seed = options.base_seed + k;
      const GradCheckResult r = grad_check(c.f, c.inputs, gco);
      ++outcome.trials;
      outcome.worst = std::max(outcome.worst, r.finite ? r.max_rel_error : INFINITY);
      if (!r.passed(options.grad_tolerance)) {
        outcome.passed = false;
        outcome.detail = "seed " + std::to_string(k) + ": input " + std::to_string(r.worst_input) + " coord " +
                         std::to_string(r.worst_coord) + (r.message.empty() ? "" : " (" + r.message + ")");
      }
    }
  } catch (const std::exception& e) {
    outcome.passed = false;
    outcome.detail = std::string("exception: ") + e.what();
  }
  return outcome;
}

std::vector<CheckOutcome> run_grad_suite(const VerifyOptions& options) {
  std::vector<CheckOutcome> out;
  for (const auto& name : grad_check_names()) out.push_back(run_grad_check(name, options));
  return out;
}

std::vector<CheckOutcome> run_oracle_suite(const VerifyOptions& options) {
  Collector col;
  Rng rng(options.base_seed ^ 0x6f7261636c65ULL);
  const PostprocConfig pp;

  col.guarded("postprocess_hand_vector", [&] {
    const std::vector<double> in = {1.0, 0.4, 0.2, 0.05};
    const auto out = postprocess(in, pp);
    const double b = 0.04 / 0.45;
    const std::vector<double> exact = {1.0, 0.16 / 0.45, b * b / 0.18, 0.0};
    const std::vector<double> printed = {1.0, 0.35556, 0.043896, 0.0};
    double err = 0.0, printed_err = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      err = std::max(err, std::abs(out[i] - exact[i]));
      printed_err = std::max(printed_err, std::abs(out[i] - printed[i]));
    }
    col.add("postprocess_hand_vector", err <= 1e-12 && printed_err <= 5e-6, err, 1e-12, 1,
            "vs 5-digit trace " + fmt("%.2e", printed_err));
  });

  col.guarded("postprocess_gamma_zero_identity", [&] {
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
      const auto m = random_map(rng, 64, 0.2);
      const auto out = postprocess(m, PostprocConfig{0.0, 3});
      for (std::size_t i = 0; i < m.size(); ++i) worst = std::max(worst, std::abs(out[i] - m[i]));
    }
    col.add("postprocess_gamma_zero_identity", worst == 0.0, worst, 0.0, 100);
  });

  col.guarded("postprocess_contraction_max_argmax", [&] {
    std::size_t failures = 0;
    for (int k = 0; k < 1000; ++k) {
      const auto m = random_map(rng, 16 + rng.below(49), 0.1);
      const PostprocConfig cfg{rng.uniform(), 1 + static_cast<int>(rng.below(3))};
      const auto out = postprocess(m, cfg);
      const auto in_max = std::max_element(m.begin(), m.end());
      const auto out_max = std::max_element(out.begin(), out.end());
      bool ok = *out_max == *in_max && (out_max - out.begin()) == (in_max - m.begin());
      for (std::size_t i = 0; i < m.size(); ++i) ok = ok && out[i] <= m[i] && out[i] >= 0.0;
      failures += ok ? 0 : 1;
    }
    col.add("postprocess_contraction_max_argmax", failures == 0, static_cast<double>(failures), 0.0, 1000);
  });

  col.guarded("metrics_vs_naive_oracles", [&] {
    double worst = 0.0;
    const std::size_t n = options.oracle_pairs;
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t cells = 4 + rng.below(97);
      const auto p = random_map(rng, cells, 0.15);
      const auto g = random_map(rng, cells, 0.3);
      const AffordanceMap pm = as_map(p), gm = as_map(g);
      worst = std::max({worst, std::abs(kld(pm, gm) - naive_kld(p, g)), std::abs(sim(pm, gm) - naive_sim(p, g)),
                        std::abs(nss(pm, gm) - naive_nss(p, g))});
    }
    col.add("metrics_vs_naive_oracles", worst <= 1e-9, worst, 1e-9, n);
  });

  col.guarded("kld_closed_forms", [&] {
    const double two_point = kld(as_map({0.25, 0.25, 0.25, 0.25}), as_map({0.5, 0.5, 0.0, 0.0}));
    const double self = kld(as_map({0.1, 0.7, 0.2}), as_map({0.1, 0.7, 0.2}));
    const double err = std::max(std::abs(two_point - std::log(2.0)), std::abs(self));
    col.add("kld_closed_forms", std::abs(two_point - std::log(2.0)) <= 1e-9 && std::abs(self) <= 1e-8, err, 1e-8, 2);
  });

  col.guarded("sim_symmetry_range", [&] {
    double worst = 0.0;
    bool in_range = true;
    for (int k = 0; k < 1000; ++k) {
      const auto a = random_map(rng, 32, 0.2), b = random_map(rng, 32, 0.2);
      const double ab = sim(as_map(a), as_map(b)), ba = sim(as_map(b), as_map(a));
      worst = std::max(worst, std::abs(ab - ba));
      in_range = in_range && ab >= 0.0 && ab <= 1.0 + 1e-12;
    }
    const double hand = sim(as_map({0.5, 0.5}), as_map({1.0, 0.0}));
    const double disjoint = sim(as_map({1.0, 0.0}), as_map({0.0, 1.0}));
    worst = std::max({worst, std::abs(hand - 0.5), std::abs(disjoint)});
    col.add("sim_symmetry_range", in_range && worst <= 1e-12, worst, 1e-12, 1002);
  });

  col.guarded("nss_closed_forms", [&] {
    const double one_hot = nss(as_map({1, 0, 0, 0}), as_map({1, 0, 0, 0}));
    const double constant = nss(as_map({0.3, 0.3, 0.3, 0.3}), as_map({1, 0, 0, 0}));
    double affine = 0.0;
    for (int k = 0; k < 200; ++k) {
      const auto p = random_map(rng, 32, 0.1), g = random_map(rng, 32, 0.3);
      const double a = rng.uniform(0.1, 10.0), b = rng.uniform(-5.0, 5.0);
      std::vector<double> q = p;
      for (auto& v : q) v = a * v + b;
      affine = std::max(affine, std::abs(nss(as_map(q), as_map(g)) - nss(as_map(p), as_map(g))));
    }
    const double err = std::max({std::abs(one_hot - std::sqrt(3.0)), std::abs(constant), affine});
    col.add("nss_closed_forms", err <= 1e-9 && std::abs(one_hot - 1.7321) < 1e-4, err, 1e-9, 202,
            "one-hot " + fmt("%.6f", one_hot));
  });

  col.guarded("lr_schedule_probes", [&] {
    const double base = 2e-5;
    const std::size_t warmup = 10, total = 31;
    const double a = lr_at(5, total, base, warmup);
    const double b = lr_at(10, total, base, warmup);
    const double c = lr_at(20, total, base, warmup);
    const double d = lr_at(30, total, base, warmup);
    const double err = std::max({std::abs(a - base / 2), std::abs(b - base), std::abs(c - base / 2), std::abs(d)});
    col.add("lr_schedule_probes", err <= 1e-12, err, 1e-12, 4);
  });

  col.guarded("adamw_vs_naive", [&] {
    const AdamWConfig cfg{0.9, 0.999, 1e-8, 0.01};
    const std::size_t n = 7;
    std::vector<double> p(n), m(n, 0.0), v(n, 0.0);
    for (auto& x : p) x = rng.uniform(-1, 1);
    std::vector<double> rp = p, rm = m, rv = v;
    double worst = 0.0;
    for (std::uint64_t t = 1; t <= 100; ++t) {
      std::vector<double> g(n);
      for (auto& x : g) x = rng.uniform(-2, 2);
      const double lr = rng.uniform(1e-4, 1e-2);
      adamw_update(p, g, m, v, t, lr, cfg);
      for (std::size_t i = 0; i < n; ++i) {
        rp[i] = rp[i] * (1.0 - lr * cfg.weight_decay);
        rm[i] = 0.9 * rm[i] + 0.1 * g[i];
        rv[i] = 0.999 * rv[i] + 0.001 * g[i] * g[i];
        const double mh = rm[i] / (1.0 - std::pow(0.9, t));
        const double vh = rv[i] / (1.0 - std::pow(0.999, t));
        rp[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
        worst = std::max(worst, std::abs(rp[i] - p[i]));
      }
    }
    std::vector<double> one = {0.5}, g1 = {1.0}, m1 = {0.0}, v1 = {0.0};
    adamw_update(one, g1, m1, v1, 1, 1e-3, AdamWConfig{});
    const double first = std::abs((0.5 - one[0]) - 1e-3);
    col.add("adamw_vs_naive", worst <= 1e-12 && first <= 1e-10, worst, 1e-12, 101,
            "first step " + fmt("%.2e", first));
  });

  col.guarded("clip_gradients_bound", [&] {
    double worst_norm = 0.0;
    for (int k = 0; k < 1000; ++k) {
      std::vector<std::vector<double>> bufs(1 + rng.below(4));
      for (auto& b : bufs) {
        b.resize(1 + rng.below(10));
        const double mag = std::pow(10.0, rng.uniform(-2, 2));
        for (auto& x : b) x = mag * rng.uniform(-1, 1);
      }
      std::vector<std::span<double>> spans(bufs.begin(), bufs.end());
      clip_gradients(std::span<const std::span<double>>(spans), 3.0);
      double sq = 0.0;
      for (const auto& b : bufs) {
        for (double x : b) sq += x * x;
      }
      worst_norm = std::max(worst_norm, std::sqrt(sq));
    }
    std::vector<double> six = {6.0, 0.0};
    std::vector<std::span<double>> one = {six};
    clip_gradients(std::span<const std::span<double>>(one), 3.0);
    const bool hand = six[0] == 3.0 && six[1] == 0.0;
    col.add("clip_gradients_bound", hand && worst_norm <= 3.0 + 1e-12, worst_norm, 3.0 + 1e-12, 1001);
  });

  col.guarded("pgm_roundtrip", [&] {
    PnmRaster r;
    r.channels = 1;
    r.width = 7;
    r.height = 5;
    for (int i = 0; i < 35; ++i) r.samples.push_back(static_cast<std::uint16_t>(rng.below(256)));
    const auto bytes = encode_pnm(r);
    const auto again = encode_pnm(parse_pnm(bytes));
    col.add("pgm_roundtrip", bytes == again, 0.0, 0.0, 1);
  });

  return col.out;
}

std::string format_outcomes(const std::vector<CheckOutcome>& outcomes) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-7s %-36s %-6s %12s %12s %7s  %s\n", "suite", "check", "result", "worst", "tol",
                "trials", "detail");
  out += line;
  for (const auto& c : outcomes) {
    std::snprintf(line, sizeof line, "%-7s %-36s %-6s %12.3e %12.3e %7zu  %s\n", c.suite.c_str(), c.name.c_str(),
                  c.passed ? "PASS" : "FAIL", c.worst, c.tolerance, c.trials, c.detail.c_str());
    out += line;
  }
  return out;
}

bool all_passed(const std::vector<CheckOutcome>& outcomes) {
  return std::all_of(outcomes.begin(), outcomes.end(), [](const CheckOutcome& c) { return c.passed; });
}

}  // namespace affsam
