#include "affsam/losses.hpp"

#include <algorithm>
#include <cmath>

#include "affsam/errors.hpp"
#include "affsam/ops.hpp"

namespace affsam {

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void require_match(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": prediction " + shape_str(a.shape()) + " vs target " +
                         shape_str(b.shape()));
  }
}

void accumulate(Tensor t, std::span<const double> d) {
  if (t.requires_grad()) t.accumulate_grad(d);
}

}  // namespace

void LossConfig::validate() const {
  if (lambda_dice < 0 || lambda_bce < 0 || focal_pos_weight < 0 || focal_neg_weight < 0 || focal_gamma < 0 ||
      dice_smooth < 0) {
    throw ConfigError("loss config: weights, gamma and smoothing must be non-negative");
  }
}

Tensor dice_loss(const Tensor& probs, const Tensor& target, double smooth) {
  require_match("dice_loss", probs, target);
  if (probs.numel() == 0) throw DimensionError("dice_loss: empty input");
  const std::size_t maps = probs.rank() == 3 ? probs.dim(0) : 1;
  const std::size_t per = probs.numel() / maps;
  const auto p = probs.data();
  const auto t = target.data();
  std::vector<double> inter(maps, 0.0), denom(maps, 0.0);
  double loss = 0.0;
  for (std::size_t m = 0; m < maps; ++m) {
    double sp = 0.0, st = 0.0, spt = 0.0;
    for (std::size_t i = m * per; i < (m + 1) * per; ++i) {
      sp += p[i];
      st += t[i];
      spt += p[i] * t[i];
    }
    inter[m] = 2.0 * spt + smooth;
    denom[m] = sp + st + smooth;
    loss += 1.0 - inter[m] / denom[m];
  }
  Tensor result = Tensor::scalar(loss / static_cast<double>(maps));
  if (detail::should_record({&probs, &target})) {
    detail::record_op("dice_loss", result, [probs, target, maps, per, inter, denom](std::span<const double> g) {
      const double scale = g[0] / static_cast<double>(maps);
      const auto p = probs.data();
      const auto t = target.data();
      std::vector<double> dp(probs.requires_grad() ? probs.numel() : 0);
      std::vector<double> dt(target.requires_grad() ? target.numel() : 0);
      for (std::size_t m = 0; m < maps; ++m) {
        const double d2 = denom[m] * denom[m];
        for (std::size_t i = m * per; i < (m + 1) * per; ++i) {
          if (!dp.empty()) dp[i] = -scale * (2.0 * t[i] * denom[m] - inter[m]) / d2;
          if (!dt.empty()) dt[i] = -scale * (2.0 * p[i] * denom[m] - inter[m]) / d2;
        }
      }
      if (!dp.empty()) accumulate(probs, dp);
      if (!dt.empty()) accumulate(target, dt);
    });
  }
  return result;
}

Tensor bce_loss(const Tensor& logits, const Tensor& target) {
  require_match("bce_loss", logits, target);
  if (logits.numel() == 0) throw DimensionError("bce_loss: empty input");
  const auto x = logits.data();
  const auto t = target.data();
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) total += softplus(x[i]) - x[i] * t[i];
  const double n = static_cast<double>(x.size());
  Tensor result = Tensor::scalar(total / n);
  if (detail::should_record({&logits})) {
    detail::record_op("bce_loss", result, [logits, target, n](std::span<const double> g) {
      const auto x = logits.data();
      const auto t = target.data();
      std::vector<double> d(x.size());
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[0] * (stable_sigmoid(x[i]) - t[i]) / n;
      accumulate(logits, d);
    });
  }
  return result;
}

Tensor combined_mask_loss(const Tensor& logits, const Tensor& target, const LossConfig& config) {
  const Tensor dice = dice_loss(ops::sigmoid(logits), target, config.dice_smooth);
  const Tensor bce = bce_loss(logits, target);
  return ops::add(ops::scale(dice, config.lambda_dice), ops::scale(bce, config.lambda_bce));
}

Tensor weighted_focal_loss(const Tensor& logits, const Tensor& target, const LossConfig& config) {
  require_match("weighted_focal_loss", logits, target);
  if (logits.numel() == 0) throw DimensionError("weighted_focal_loss: empty input");
  const double gamma = config.focal_gamma;
  const double pos = config.focal_pos_weight;
  const double neg = config.focal_neg_weight;
  const auto x = logits.data();
  const auto t = target.data();
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double p = stable_sigmoid(x[i]);
    const double q = stable_sigmoid(-x[i]);
    const double w = pos * t[i] + neg * (1.0 - t[i]);
    total += w * (t[i] * std::pow(q, gamma) * softplus(-x[i]) + (1.0 - t[i]) * std::pow(p, gamma) * softplus(x[i]));
  }
  const double n = static_cast<double>(x.size());
  Tensor result = Tensor::scalar(total / n);
  if (detail::should_record({&logits})) {
    detail::record_op("weighted_focal_loss", result, [logits, target, n, gamma, pos, neg](std::span<const double> g) {
      const auto x = logits.data();
      const auto t = target.data();
      std::vector<double> d(x.size());
      for (std::size_t i = 0; i < d.size(); ++i) {
        const double p = stable_sigmoid(x[i]);
        const double q = stable_sigmoid(-x[i]);
        const double w = pos * t[i] + neg * (1.0 - t[i]);
        // d/dx of t q^g softplus(-x) and (1-t) p^g softplus(x), using dp/dx = p q.
        const double positive = t[i] * std::pow(q, gamma) * (-gamma * p * softplus(-x[i]) - q);
        const double negative = (1.0 - t[i]) * std::pow(p, gamma) * (gamma * q * softplus(x[i]) + p);
        d[i] = g[0] * w * (positive + negative) / n;
      }
      accumulate(logits, d);
    });
  }
  return result;
}

}  // namespace affsam
