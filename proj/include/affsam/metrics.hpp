#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "affsam/dataset.hpp"
#include "affsam/image_io.hpp"

namespace affsam {

struct MetricsConfig {
  double epsilon = 1e-10;  // KLD regularizer
};

/// KL divergence of the sum-normalized prediction from the sum-normalized
/// ground truth: sum_i g_i * log(eps + g_i / (eps + p_i)).
double kld(const AffordanceMap& pred, const AffordanceMap& gt, const MetricsConfig& config = {});
/// Histogram intersection of the two sum-normalized maps.
double sim(const AffordanceMap& pred, const AffordanceMap& gt);
/// Mean of the standardized prediction (population std) weighted by the
/// ground truth; 0 when the prediction is constant.
double nss(const AffordanceMap& pred, const AffordanceMap& gt);

struct SampleMetrics {
  std::string id;
  double kld = 0.0;
  double sim = 0.0;
  double nss = 0.0;
  bool resized = false;
};

struct MetricsReport {
  double kld = 0.0;
  double sim = 0.0;
  double nss = 0.0;
  std::size_t n_samples = 0;
  std::vector<SampleMetrics> samples;  // ordered by id
  std::vector<std::string> missing;
  std::vector<std::string> resized;

  bool complete() const { return missing.empty(); }
  /// Recomputes the aggregates as arithmetic means of `samples`.
  void aggregate();
  nlohmann::json to_json() const;
  std::string to_csv() const;
};

/// Scores `<pred_dir>/<id>.f64` (preferred) or `<pred_dir>/<id>.pgm` against
/// the label of every record. Predictions whose shape differs from the label
/// are bilinearly resized to it.
MetricsReport evaluate_split(const std::filesystem::path& pred_dir, const Manifest& manifest,
                             const std::filesystem::path& data_root, const MetricsConfig& config = {});

}  // namespace affsam
