#include "affsam/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "affsam/errors.hpp"

namespace affsam {

namespace {

double eval_scalar(const std::function<Tensor()>& f) {
  NoTapeScope no_tape;
  const Tensor y = f();
  if (y.numel() != 1) throw DimensionError("grad_check: function must return a scalar, got " + shape_str(y.shape()));
  return y.item();
}

std::vector<std::size_t> pick_coords(std::size_t n, const GradCheckOptions& options, std::size_t input) {
  std::vector<std::size_t> coords(n);
  std::iota(coords.begin(), coords.end(), 0);
  if (options.max_coords_per_input == 0 || n <= options.max_coords_per_input) return coords;
  std::mt19937_64 rng(options.sample_seed * 7919 + input);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(coords[i], coords[rng() % (i + 1)]);
  coords.resize(options.max_coords_per_input);
  std::sort(coords.begin(), coords.end());
  return coords;
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& options) {
  std::vector<bool> saved_flags;
  for (auto& t : inputs) {
    saved_flags.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }

  GradCheckResult result;
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor y = f();
    if (y.numel() != 1) throw DimensionError("grad_check: function must return a scalar, got " + shape_str(y.shape()));
    if (!std::isfinite(y.item())) {
      result.finite = false;
      result.message = "non-finite function value";
    } else if (y.requires_grad()) {
      tape.backward(y);
    }
  }

  for (std::size_t k = 0; k < inputs.size() && result.finite; ++k) {
    Tensor& t = inputs[k];
    const std::vector<double> analytic =
        t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end()) : std::vector<double>(t.numel(), 0.0);
    for (std::size_t c : pick_coords(t.numel(), options, k)) {
      const double original = t.data()[c];
      t.mutable_data()[c] = original + options.step;
      const double up = eval_scalar(f);
      t.mutable_data()[c] = original - options.step;
      const double down = eval_scalar(f);
      t.mutable_data()[c] = original;
      const double numeric = (up - down) / (2.0 * options.step);
      ++result.coords_checked;
      if (!std::isfinite(numeric) || !std::isfinite(analytic[c])) {
        result.finite = false;
        result.worst_input = k;
        result.worst_coord = c;
        result.message = "non-finite gradient at input " + std::to_string(k) + " coordinate " + std::to_string(c);
        break;
      }
      const double denom = std::max({1.0, std::abs(analytic[c]), std::abs(numeric)});
      const double err = std::abs(analytic[c] - numeric) / denom;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_input = k;
        result.worst_coord = c;
      }
    }
  }

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    inputs[k].zero_grad();
    inputs[k].set_requires_grad(saved_flags[k]);
  }
  return result;
}

}  // namespace affsam
