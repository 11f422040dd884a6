#include "affsam/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "affsam/errors.hpp"
#include "affsam/resample.hpp"

namespace affsam {

namespace {

void check_pair(const AffordanceMap& pred, const AffordanceMap& gt, const char* name) {
  if (pred.height != gt.height || pred.width != gt.width || pred.values.size() != gt.values.size()) {
    throw DimensionError(std::string(name) + ": prediction " + std::to_string(pred.height) + "x" +
                         std::to_string(pred.width) + " vs ground truth " + std::to_string(gt.height) + "x" +
                         std::to_string(gt.width));
  }
  if (gt.values.empty()) throw InputError(std::string(name) + ": empty maps");
}

double checked_sum(const AffordanceMap& map, const char* name, const char* which) {
  double total = 0.0;
  for (double v : map.values) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw InputError(std::string(name) + ": " + which + " map has a negative or non-finite value");
    total += v;
  }
  if (total <= 0.0) throw InputError(std::string(name) + ": " + which + " map is all zero");
  return total;
}

}  // namespace

double kld(const AffordanceMap& pred, const AffordanceMap& gt, const MetricsConfig& config) {
  check_pair(pred, gt, "kld");
  const double sp = checked_sum(pred, "kld", "predicted");
  const double sg = checked_sum(gt, "kld", "ground-truth");
  const double eps = config.epsilon;
  double total = 0.0;
  for (std::size_t i = 0; i < gt.values.size(); ++i) {
    const double g = gt.values[i] / sg;
    const double p = pred.values[i] / sp;
    total += g * std::log(eps + g / (eps + p));
  }
  return total;
}

double sim(const AffordanceMap& pred, const AffordanceMap& gt) {
  check_pair(pred, gt, "sim");
  const double sp = checked_sum(pred, "sim", "predicted");
  const double sg = checked_sum(gt, "sim", "ground-truth");
  double total = 0.0;
  for (std::size_t i = 0; i < gt.values.size(); ++i) total += std::min(pred.values[i] / sp, gt.values[i] / sg);
  return total;
}

double nss(const AffordanceMap& pred, const AffordanceMap& gt) {
  check_pair(pred, gt, "nss");
  const double n = checked_sum(gt, "nss", "ground-truth");
  const double count = static_cast<double>(pred.values.size());
  double mean = 0.0;
  for (double v : pred.values) {
    if (!std::isfinite(v)) throw InputError("nss: predicted map has a non-finite value");
    mean += v;
  }
  mean /= count;
  double var = 0.0;
  for (double v : pred.values) var += (v - mean) * (v - mean);
  const double std_dev = std::sqrt(var / count);
  if (std_dev == 0.0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < gt.values.size(); ++i) total += (pred.values[i] - mean) / std_dev * gt.values[i];
  return total / n;
}

void MetricsReport::aggregate() {
  n_samples = samples.size();
  kld = sim = nss = 0.0;
  if (samples.empty()) return;
  for (const auto& s : samples) {
    kld += s.kld;
    sim += s.sim;
    nss += s.nss;
  }
  const double n = static_cast<double>(samples.size());
  kld /= n;
  sim /= n;
  nss /= n;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : samples) {
    rows.push_back({{"id", s.id}, {"kld", s.kld}, {"sim", s.sim}, {"nss", s.nss}, {"resized", s.resized}});
  }
  return {{"kld", kld}, {"sim", sim},         {"nss", nss},         {"n_samples", n_samples},
          {"missing", missing}, {"resized", resized}, {"samples", rows}};
}

std::string MetricsReport::to_csv() const {
  auto fmt = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  std::string out = "id,kld,sim,nss,resized\n";
  for (const auto& s : samples) {
    out += s.id + "," + fmt(s.kld) + "," + fmt(s.sim) + "," + fmt(s.nss) + "," + (s.resized ? "1" : "0") + "\n";
  }
  out += "mean," + fmt(kld) + "," + fmt(sim) + "," + fmt(nss) + ",\n";
  return out;
}

MetricsReport evaluate_split(const std::filesystem::path& pred_dir, const Manifest& manifest,
                             const std::filesystem::path& data_root, const MetricsConfig& config) {
  std::vector<const SampleRecord*> records;
  for (const auto& r : manifest.records) records.push_back(&r);
  std::sort(records.begin(), records.end(), [](const auto* a, const auto* b) { return a->id < b->id; });

  MetricsReport report;
  for (const auto* r : records) {
    const auto f64 = pred_dir / (r->id + ".f64");
    const auto pgm = pred_dir / (r->id + ".pgm");
    AffordanceMap pred;
    if (std::filesystem::exists(f64)) {
      pred = read_map_f64(f64);
    } else if (std::filesystem::exists(pgm)) {
      pred = read_map_pgm(pgm);
    } else {
      report.missing.push_back(r->id);
      continue;
    }
    const AffordanceMap gt = read_map_pgm(data_root / r->label_path);
    SampleMetrics row;
    row.id = r->id;
    if (pred.height != gt.height || pred.width != gt.width) {
      pred = AffordanceMap::from(gt.height, gt.width,
                                 resize_bilinear(pred.values, pred.height, pred.width, gt.height, gt.width));
      row.resized = true;
      report.resized.push_back(r->id);
    }
    row.kld = kld(pred, gt, config);
    row.sim = sim(pred, gt);
    row.nss = nss(pred, gt);
    report.samples.push_back(std::move(row));
  }
  report.aggregate();
  return report;
}

}  // namespace affsam
