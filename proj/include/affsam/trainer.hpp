#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "affsam/dataset.hpp"
#include "affsam/losses.hpp"
#include "affsam/metrics.hpp"
#include "affsam/model.hpp"

namespace affsam {

enum class LossKind { combined_mask, weighted_focal };

std::string to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& text);

struct StageConfig {
  int stage = 1;
  double base_lr = 2e-5;
  int epochs = 13;
  int warmup_epochs = 1;
  int batch_size = 32;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  double grad_clip = 3.0;
  double drop_path = 0.1;
  LossKind loss = LossKind::combined_mask;
  std::vector<std::string> trainable;
  std::vector<int> parts;  // dataset parts this stage accepts
  std::uint64_t seed = 42;

  /// Hyperparameters of the full-scale recipe.
  static StageConfig reference(int stage);
  /// Toy-scale variant: batch 8 and learning rates raised for training from
  /// random initialization.
  static StageConfig desk(int stage);
  /// One stage over parts 1+2+3 with the stage-2 trainables and loss.
  static StageConfig combined(const StageConfig& base);

  void validate() const;
};

/// Linear warmup from 0 over `warmup_steps`, then cosine decay from base_lr
/// reaching 0 at the last step. Throws std::out_of_range outside [0, total).
double lr_at(std::size_t step, std::size_t total_steps, double base_lr, std::size_t warmup_steps);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// One bias-corrected AdamW update of a single parameter at step t >= 1.
void adamw_update(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
                  std::uint64_t t, double lr, const AdamWConfig& config);

/// Scales all gradients by max_norm / norm when their global L2 norm exceeds
/// max_norm. Returns the norm before clipping.
double clip_gradients(std::span<const std::span<double>> grads, double max_norm);

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;

  bool operator==(const AdamMoments&) const = default;
};

/// AdamW over the trainable parameters of a store, moments keyed by name.
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  /// Aborts with NumericError naming the parameter if any gradient is non-finite.
  void step(ParameterStore& store, double lr);

  std::uint64_t steps() const { return t_; }
  void set_steps(std::uint64_t t) { t_ = t; }
  const std::map<std::string, AdamMoments>& moments() const { return moments_; }
  std::map<std::string, AdamMoments>& moments() { return moments_; }

 private:
  AdamWConfig config_;
  std::uint64_t t_ = 0;
  std::map<std::string, AdamMoments> moments_;
};

/// Global-norm clipping over the trainable gradients of a store.
double clip_gradients(ParameterStore& store, double max_norm);

struct TrainingSample {
  std::string id;
  std::vector<double> image;   // C x S x S
  std::vector<double> target;  // S x S in [0,1]
  std::string prompt;
  int part = 1;
};

/// Loads images and labels, resizing both to the model input size when needed.
std::vector<TrainingSample> load_samples(const Manifest& manifest, const std::filesystem::path& data_root,
                                         const BackboneConfig& backbone);

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double lr = 0.0;  // at the epoch's last step
};

struct StageResult {
  int stage = 0;
  std::vector<EpochStats> curve;
  std::uint64_t steps = 0;
  AdamW optimizer;
};

std::string loss_curve_csv(const std::vector<EpochStats>& curve);

/// Trains `model` in place for one stage. Stage > 1 requires the adaption
/// module to be attached.
StageResult run_stage(AffordanceModel& model, const std::vector<TrainingSample>& samples, const StageConfig& config,
                      const LossConfig& loss);

/// Sigmoid heatmaps for each sample, in input order.
std::vector<AffordanceMap> predict(const AffordanceModel& model, const std::vector<TrainingSample>& samples,
                                   std::size_t batch_size = 16);

/// Scores in-memory predictions against the sample targets (ids sorted).
MetricsReport evaluate_model(const AffordanceModel& model, const std::vector<TrainingSample>& samples,
                             const MetricsConfig& config = {});

enum class PipelineMode { staged, combined };

struct PipelineData {
  std::vector<TrainingSample> part1;
  std::vector<TrainingSample> part2;
  std::vector<TrainingSample> part3;
};

struct PipelineConfig {
  std::vector<StageConfig> stages;  // configs for stages 1, 2, 3
  std::vector<int> run_stages = {1, 2, 3};
  PipelineMode mode = PipelineMode::staged;
  LossConfig loss;
  std::uint64_t seed = 42;
};

/// Called after each finished stage with the trained model.
using StageCallback = std::function<void(const StageResult&, const AffordanceModel&)>;

/// Stage 1 on part 1 without the adaption module, then a freshly initialized
/// adaption module for stage 2 on part 2 and stage 3 on part 3. `run_stages`
/// must be a prefix of {1, 2, 3} unless `model` already carries an adaption
/// module. Combined mode runs one stage over all parts.
std::vector<StageResult> run_pipeline(AffordanceModel& model, const PipelineData& data, const PipelineConfig& config,
                                      const StageCallback& on_stage = {});

}  // namespace affsam
