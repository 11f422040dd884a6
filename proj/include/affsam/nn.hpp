#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "affsam/tensor.hpp"

namespace affsam {

/// Seeded generator with platform-independent real sampling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  /// Uniform in [0, 1) from the top 53 bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t next() { return engine_(); }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }
  /// Standard normal via Box-Muller.
  double normal();

 private:
  std::mt19937_64 engine_;
};

template <class T>
void deterministic_shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[rng.below(i)]);
}

/// Name-indexed parameter tensors. Names are dotted; the first component is
/// the parameter group used for stage-wise trainable masks.
class ParameterStore {
 public:
  Tensor create(const std::string& name, Shape shape);
  Tensor create_uniform(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng);
  Tensor create_filled(const std::string& name, Shape shape, double value);

  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  Tensor get(const std::string& name) const;
  const std::map<std::string, Tensor>& all() const { return params_; }
  std::vector<std::string> names() const;
  std::size_t count() const { return params_.size(); }
  std::size_t scalar_count() const;

  static std::string group_of(const std::string& name);
  bool has_group(const std::string& group) const;
  void erase_group(const std::string& group);

  /// Marks parameters trainable iff their group is listed.
  void set_trainable_groups(const std::vector<std::string>& groups);
  void zero_grads();

 private:
  std::map<std::string, Tensor> params_;
};

namespace nn {

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng);
  Tensor operator()(const Tensor& x) const;
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;

  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, std::size_t dim);
  Tensor operator()(const Tensor& x) const;
};

/// Multi-head attention; queries of width `dim`, keys/values of width
/// `kv_dim` projected to `dim` before the heads are split.
struct Attention {
  Linear q;
  Linear k;
  Linear v;
  Linear out;
  std::size_t heads = 1;

  Attention() = default;
  Attention(ParameterStore& store, const std::string& name, std::size_t dim, std::size_t kv_dim,
            std::size_t heads, Rng& rng);
  Tensor operator()(const Tensor& queries, const Tensor& keys, const Tensor& values) const;
  Tensor operator()(const Tensor& queries, const Tensor& context) const { return (*this)(queries, context, context); }
  void zero_output();
};

struct Mlp {
  Linear fc1;
  Linear fc2;

  Mlp() = default;
  Mlp(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out, Rng& rng);
  Tensor operator()(const Tensor& x) const;
};

/// Per-call stochastic depth state. A null rng or zero rate disables it.
struct DropPath {
  double rate = 0.0;
  Rng* rng = nullptr;

  Tensor operator()(const Tensor& branch) const;
};

/// Pre-norm transformer block: x + attn(ln(x)); x + mlp(ln(x)).
struct TransformerBlock {
  LayerNorm norm1;
  Attention attn;
  LayerNorm norm2;
  Mlp mlp;

  TransformerBlock() = default;
  TransformerBlock(ParameterStore& store, const std::string& name, std::size_t dim, std::size_t heads, Rng& rng);
  Tensor operator()(const Tensor& x, const DropPath& drop = {}) const;
};

}  // namespace nn

}  // namespace affsam
