#include "affsam/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

#include "affsam/detail/hash.hpp"
#include "affsam/errors.hpp"
#include "affsam/image_io.hpp"
#include "affsam/ops.hpp"
#include "affsam/resample.hpp"

namespace affsam {

std::string to_string(LossKind kind) {
  return kind == LossKind::combined_mask ? "combined_mask" : "weighted_focal";
}

LossKind parse_loss_kind(const std::string& text) {
  if (text == "combined_mask") return LossKind::combined_mask;
  if (text == "weighted_focal") return LossKind::weighted_focal;
  throw ConfigError("unknown loss '" + text + "'");
}

StageConfig StageConfig::reference(int stage) {
  StageConfig c;
  c.stage = stage;
  switch (stage) {
    case 1:
      c.base_lr = 2e-5;
      c.epochs = 13;
      c.warmup_epochs = 1;
      c.loss = LossKind::combined_mask;
      c.trainable = {"multimodal_encoder", "prompt_encoder"};
      break;
    case 2:
      c.base_lr = 2e-5;
      c.epochs = 13;
      c.warmup_epochs = 2;
      c.loss = LossKind::weighted_focal;
      c.trainable = {"multimodal_encoder", "prompt_encoder", "mask_decoder", "adaption"};
      break;
    case 3:
      c.base_lr = 4e-5;
      c.epochs = 26;
      c.warmup_epochs = 0;
      c.loss = LossKind::weighted_focal;
      c.trainable = {"multimodal_encoder", "prompt_encoder", "mask_decoder", "adaption"};
      break;
    default:
      throw ConfigError("stage must be 1, 2 or 3, got " + std::to_string(stage));
  }
  c.parts = {stage};
  return c;
}

StageConfig StageConfig::desk(int stage) {
  StageConfig c = reference(stage);
  c.batch_size = 8;
  switch (stage) {
    case 1: c.base_lr = 1e-3; c.epochs = 6; break;
    case 2: c.base_lr = 5e-3; c.epochs = 30; break;
    case 3: c.base_lr = 5e-3; c.epochs = 40; break;
  }
  return c;
}

StageConfig StageConfig::combined(const StageConfig& base) {
  StageConfig c = base;
  c.stage = 2;
  c.loss = LossKind::weighted_focal;
  c.trainable = reference(2).trainable;
  c.parts = {1, 2, 3};
  return c;
}

void StageConfig::validate() const {
  auto fail = [this](const std::string& what) {
    throw ConfigError("stage " + std::to_string(stage) + " config: " + what);
  };
  if (stage < 1 || stage > 3) fail("stage must be 1, 2 or 3");
  if (!(base_lr >= 0.0) || !std::isfinite(base_lr)) fail("base_lr must be finite and >= 0");
  if (epochs < 0 || warmup_epochs < 0) fail("epochs and warmup_epochs must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (!(grad_clip > 0.0)) fail("grad_clip must be > 0");
  if (!(drop_path >= 0.0 && drop_path < 1.0)) fail("drop_path must lie in [0, 1)");
  if (parts.empty()) fail("parts must not be empty");
  for (int p : parts) {
    if (p < 1 || p > 3) fail("parts must be drawn from {1, 2, 3}");
  }
  static const std::vector<std::string> groups = {"image_encoder", "multimodal_encoder", "prompt_encoder",
                                                  "mask_decoder", "adaption"};
  for (const auto& g : trainable) {
    if (std::find(groups.begin(), groups.end(), g) == groups.end()) fail("unknown parameter group '" + g + "'");
  }
}

double lr_at(std::size_t step, std::size_t total_steps, double base_lr, std::size_t warmup_steps) {
  if (step >= total_steps) {
    throw std::out_of_range("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + ")");
  }
  if (step < warmup_steps) return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const std::size_t decay_steps = total_steps - warmup_steps;
  if (decay_steps <= 1) return base_lr;
  const double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(decay_steps - 1);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void adamw_update(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
                  std::uint64_t t, double lr, const AdamWConfig& config) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
    throw DimensionError("adamw: parameter, gradient and moment sizes differ");
  }
  if (t == 0) throw std::invalid_argument("adamw: step count starts at 1");
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
    v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
    param[i] -= lr * config.weight_decay * param[i];
    param[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config.eps);
  }
}

double clip_gradients(std::span<const std::span<double>> grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double x : g) sq += x * x;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (const auto& g : grads) {
      for (auto& x : g) x *= scale;
    }
  }
  return norm;
}

double clip_gradients(ParameterStore& store, double max_norm) {
  std::vector<std::span<double>> grads;
  for (const auto& [name, p] : store.all()) {
    if (!p.requires_grad() || !p.has_grad()) continue;
    Tensor handle = p;
    grads.push_back(handle.mutable_grad());
  }
  return clip_gradients(std::span<const std::span<double>>(grads), max_norm);
}

void AdamW::step(ParameterStore& store, double lr) {
  for (const auto& [name, p] : store.all()) {
    if (!p.requires_grad() || !p.has_grad()) continue;
    for (double g : p.grad()) {
      if (!std::isfinite(g)) throw NumericError("adamw: non-finite gradient in parameter '" + name + "'");
    }
  }
  ++t_;
  std::vector<double> zeros;
  for (const auto& [name, p] : store.all()) {
    if (!p.requires_grad()) continue;
    Tensor handle = p;
    auto& mom = moments_[name];
    if (mom.m.empty()) {
      mom.m.assign(p.numel(), 0.0);
      mom.v.assign(p.numel(), 0.0);
    }
    std::span<const double> grad;
    if (p.has_grad()) {
      grad = p.grad();
    } else {
      zeros.assign(p.numel(), 0.0);
      grad = zeros;
    }
    adamw_update(handle.mutable_data(), grad, mom.m, mom.v, t_, lr, config_);
  }
}

std::vector<TrainingSample> load_samples(const Manifest& manifest, const std::filesystem::path& data_root,
                                         const BackboneConfig& backbone) {
  const std::size_t s = backbone.image_size;
  std::vector<TrainingSample> out;
  out.reserve(manifest.records.size());
  for (const auto& r : manifest.records) {
    TrainingSample sample;
    sample.id = r.id;
    sample.part = r.part;
    sample.prompt = build_prompt(r);
    const Image img = read_image(data_root / r.image_path);
    if (img.channels != backbone.channels) {
      throw DimensionError("record '" + r.id + "': image has " + std::to_string(img.channels) + " channels, model expects " +
                           std::to_string(backbone.channels));
    }
    const std::size_t plane = img.height * img.width;
    for (std::size_t c = 0; c < img.channels; ++c) {
      const std::span<const double> src(img.values.data() + c * plane, plane);
      const auto resized = (img.height == s && img.width == s) ? std::vector<double>(src.begin(), src.end())
                                                                : resize_bilinear(src, img.height, img.width, s, s);
      sample.image.insert(sample.image.end(), resized.begin(), resized.end());
    }
    const AffordanceMap label = read_map_pgm(data_root / r.label_path);
    sample.target = (label.height == s && label.width == s)
                        ? label.values
                        : resize_bilinear(label.values, label.height, label.width, s, s);
    out.push_back(std::move(sample));
  }
  return out;
}

std::string loss_curve_csv(const std::vector<EpochStats>& curve) {
  std::string out = "epoch,mean_loss,lr\n";
  char buf[128];
  for (const auto& e : curve) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", e.epoch, e.mean_loss, e.lr);
    out += buf;
  }
  return out;
}

StageResult run_stage(AffordanceModel& model, const std::vector<TrainingSample>& samples, const StageConfig& config,
                      const LossConfig& loss) {
  config.validate();
  loss.validate();
  if (config.stage > 1 && !model.has_adaption()) {
    throw ConfigError("stage " + std::to_string(config.stage) + " needs a model with the adaption module attached");
  }
  for (const auto& s : samples) {
    if (std::find(config.parts.begin(), config.parts.end(), s.part) == config.parts.end()) {
      throw ConfigError("stage " + std::to_string(config.stage) + " does not accept part-" + std::to_string(s.part) +
                        " sample '" + s.id + "'");
    }
  }

  StageResult result;
  result.stage = config.stage;
  result.optimizer = AdamW({config.beta1, config.beta2, 1e-8, config.weight_decay});
  ParameterStore& params = model.params();
  params.set_trainable_groups(config.trainable);
  if (config.epochs == 0 || samples.empty()) return result;

  const auto& bb = model.config().backbone;
  const std::size_t s = bb.image_size;
  const std::size_t image_numel = bb.channels * s * s;
  const std::size_t batch = static_cast<std::size_t>(config.batch_size);
  const std::size_t steps_per_epoch = (samples.size() + batch - 1) / batch;
  const std::size_t total = steps_per_epoch * static_cast<std::size_t>(config.epochs);
  const std::size_t warmup = std::min(total, steps_per_epoch * static_cast<std::size_t>(config.warmup_epochs));

  Rng rng(detail::splitmix64(config.seed * 16 + static_cast<std::uint64_t>(config.stage)));
  std::vector<std::size_t> order(samples.size());
  std::size_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    deterministic_shuffle(order, rng);
    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t b = std::min(batch, order.size() - start);
      std::vector<double> images(b * image_numel), targets(b * s * s);
      std::vector<std::string> prompts(b);
      for (std::size_t k = 0; k < b; ++k) {
        const auto& sample = samples[order[start + k]];
        std::copy(sample.image.begin(), sample.image.end(), images.begin() + k * image_numel);
        std::copy(sample.target.begin(), sample.target.end(), targets.begin() + k * s * s);
        prompts[k] = sample.prompt;
      }
      const Tensor x = Tensor::from({b, bb.channels, s, s}, std::move(images));
      const Tensor t = Tensor::from({b, s, s}, std::move(targets));

      params.zero_grads();
      Tape tape;
      Tensor value;
      {
        TapeScope scope(tape);
        const Tensor logits = model.forward(x, prompts, {config.drop_path, &rng, false});
        value = config.loss == LossKind::combined_mask ? combined_mask_loss(logits, t, loss)
                                                       : weighted_focal_loss(logits, t, loss);
      }
      if (!std::isfinite(value.item())) {
        throw NumericError("stage " + std::to_string(config.stage) + ": non-finite loss at step " + std::to_string(step));
      }
      tape.backward(value);
      clip_gradients(params, config.grad_clip);
      lr = lr_at(step, total, config.base_lr, warmup);
      result.optimizer.step(params, lr);
      loss_sum += value.item() * static_cast<double>(b);
      ++step;
    }
    result.curve.push_back({epoch + 1, loss_sum / static_cast<double>(samples.size()), lr});
  }
  params.zero_grads();
  result.steps = step;
  return result;
}

std::vector<AffordanceMap> predict(const AffordanceModel& model, const std::vector<TrainingSample>& samples,
                                   std::size_t batch_size) {
  const auto& bb = model.config().backbone;
  const std::size_t s = bb.image_size;
  const std::size_t image_numel = bb.channels * s * s;
  std::vector<AffordanceMap> out;
  NoTapeScope no_tape;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t b = std::min(batch_size, samples.size() - start);
    std::vector<double> images(b * image_numel);
    std::vector<std::string> prompts(b);
    for (std::size_t k = 0; k < b; ++k) {
      std::copy(samples[start + k].image.begin(), samples[start + k].image.end(), images.begin() + k * image_numel);
      prompts[k] = samples[start + k].prompt;
    }
    const Tensor probs = ops::sigmoid(model.forward(Tensor::from({b, bb.channels, s, s}, std::move(images)), prompts));
    const auto data = probs.data();
    for (std::size_t k = 0; k < b; ++k) {
      out.push_back(AffordanceMap::from(s, s, std::vector<double>(data.begin() + k * s * s, data.begin() + (k + 1) * s * s)));
    }
  }
  return out;
}

MetricsReport evaluate_model(const AffordanceModel& model, const std::vector<TrainingSample>& samples,
                             const MetricsConfig& config) {
  const auto preds = predict(model, samples);
  const std::size_t s = model.config().backbone.image_size;
  MetricsReport report;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const AffordanceMap gt = AffordanceMap::from(s, s, samples[i].target);
    report.samples.push_back({samples[i].id, kld(preds[i], gt, config), sim(preds[i], gt), nss(preds[i], gt), false});
  }
  std::sort(report.samples.begin(), report.samples.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  report.aggregate();
  return report;
}

std::vector<StageResult> run_pipeline(AffordanceModel& model, const PipelineData& data, const PipelineConfig& config,
                                      const StageCallback& on_stage) {
  if (config.stages.size() != 3) throw ConfigError("pipeline: expected configs for stages 1, 2 and 3");
  std::vector<StageResult> results;
  if (config.mode == PipelineMode::combined) {
    std::vector<TrainingSample> all = data.part1;
    all.insert(all.end(), data.part2.begin(), data.part2.end());
    all.insert(all.end(), data.part3.begin(), data.part3.end());
    if (!model.has_adaption()) model.attach_adaption(config.seed);
    results.push_back(run_stage(model, all, StageConfig::combined(config.stages[1]), config.loss));
    if (on_stage) on_stage(results.back(), model);
    return results;
  }

  const auto& run = config.run_stages;
  if (run.empty()) throw ConfigError("pipeline: no stages selected");
  for (std::size_t i = 0; i < run.size(); ++i) {
    if (run[i] < 1 || run[i] > 3 || (i > 0 && run[i] != run[i - 1] + 1)) {
      throw ConfigError("pipeline: stages must be consecutive values from {1, 2, 3}");
    }
  }
  if (run.front() > 1 && !model.has_adaption() && run.front() != 2) {
    throw ConfigError("pipeline: stage 3 needs a model carrying a trained adaption module");
  }
  for (int stage : run) {
    const StageConfig& cfg = config.stages[stage - 1];
    if (cfg.stage != stage) throw ConfigError("pipeline: config for stage " + std::to_string(stage) + " is tagged " + std::to_string(cfg.stage));
    if (stage == 1 && model.has_adaption()) throw ConfigError("pipeline: stage 1 runs without the adaption module");
    if (stage == 2 && !model.has_adaption()) model.attach_adaption(config.seed);
    const auto& samples = stage == 1 ? data.part1 : stage == 2 ? data.part2 : data.part3;
    results.push_back(run_stage(model, samples, cfg, config.loss));
    if (on_stage) on_stage(results.back(), model);
  }
  return results;
}

}  // namespace affsam
