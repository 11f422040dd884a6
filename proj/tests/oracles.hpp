#pragma once

// Naive reference implementations written straight from the formulas,
// independent of the library code they check.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace oracle {

inline double kld(const std::vector<double>& p, const std::vector<double>& g, double eps = 1e-10) {
  double sp = 0, sg = 0;
  for (double v : p) sp += v;
  for (double v : g) sg += v;
  double out = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double gi = g[i] / sg, pi = p[i] / sp;
    out += gi * std::log(eps + gi / (eps + pi));
  }
  return out;
}

inline double sim(const std::vector<double>& p, const std::vector<double>& g) {
  double sp = 0, sg = 0;
  for (double v : p) sp += v;
  for (double v : g) sg += v;
  double out = 0;
  for (std::size_t i = 0; i < p.size(); ++i) out += std::min(p[i] / sp, g[i] / sg);
  return out;
}

inline double nss(const std::vector<double>& p, const std::vector<double>& g) {
  const double n = static_cast<double>(p.size());
  double mean = 0;
  for (double v : p) mean += v;
  mean /= n;
  double var = 0;
  for (double v : p) var += (v - mean) * (v - mean);
  var /= n;
  if (var == 0) return 0;
  double num = 0, den = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    num += (p[i] - mean) / std::sqrt(var) * g[i];
    den += g[i];
  }
  return num / den;
}

struct AdamW {
  double b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 0.0;
  std::vector<double> m, v;
  int t = 0;

  void step(std::vector<double>& p, const std::vector<double>& g, double lr) {
    if (m.empty()) m.assign(p.size(), 0.0), v.assign(p.size(), 0.0);
    ++t;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(b1, t));
      const double vh = v[i] / (1 - std::pow(b2, t));
      p[i] -= lr * (mh / (std::sqrt(vh) + eps) + wd * p[i]);
    }
  }
};

// Warmup then cosine, reaching zero at the final step.
inline double lr(std::size_t step, std::size_t total, double base, std::size_t warmup) {
  if (step < warmup) return base * static_cast<double>(step) / static_cast<double>(warmup);
  const double span = static_cast<double>(total - warmup - 1);
  const double progress = span > 0 ? static_cast<double>(step - warmup) / span : 0.0;
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace oracle
