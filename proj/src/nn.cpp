#include "affsam/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "affsam/errors.hpp"
#include "affsam/ops.hpp"

namespace affsam {

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Tensor ParameterStore::create(const std::string& name, Shape shape) {
  return create_filled(name, std::move(shape), 0.0);
}

Tensor ParameterStore::create_filled(const std::string& name, Shape shape, double value) {
  if (params_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  Tensor t = Tensor::full(std::move(shape), value);
  params_.emplace(name, t);
  return t;
}

Tensor ParameterStore::create_uniform(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t = create(name, std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.mutable_data()) v = rng.uniform(-bound, bound);
  return t;
}

Tensor ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

std::string ParameterStore::group_of(const std::string& name) { return name.substr(0, name.find('.')); }

bool ParameterStore::has_group(const std::string& group) const {
  for (const auto& [name, _] : params_) {
    if (group_of(name) == group) return true;
  }
  return false;
}

void ParameterStore::erase_group(const std::string& group) {
  std::erase_if(params_, [&](const auto& kv) { return group_of(kv.first) == group; });
}

void ParameterStore::set_trainable_groups(const std::vector<std::string>& groups) {
  for (auto& [name, t] : params_) {
    const auto g = group_of(name);
    t.set_requires_grad(std::find(groups.begin(), groups.end(), g) != groups.end());
  }
}

void ParameterStore::zero_grads() {
  for (auto& [_, t] : params_) t.zero_grad();
}

namespace nn {

Linear::Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng)
    : weight(store.create_uniform(name + ".weight", {in, out}, in, rng)),
      bias(store.create(name + ".bias", {out})) {}

Tensor Linear::operator()(const Tensor& x) const { return ops::add_bias(ops::matmul(x, weight), bias); }

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, std::size_t dim)
    : gain(store.create_filled(name + ".gain", {dim}, 1.0)), bias(store.create(name + ".bias", {dim})) {}

Tensor LayerNorm::operator()(const Tensor& x) const { return ops::layer_norm(x, gain, bias); }

Attention::Attention(ParameterStore& store, const std::string& name, std::size_t dim, std::size_t kv_dim,
                     std::size_t heads, Rng& rng)
    : q(store, name + ".q", dim, dim, rng),
      k(store, name + ".k", kv_dim, dim, rng),
      v(store, name + ".v", kv_dim, dim, rng),
      out(store, name + ".out", dim, dim, rng),
      heads(heads) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError(name + ": width " + std::to_string(dim) + " not divisible by " + std::to_string(heads) +
                      " heads");
  }
}

Tensor Attention::operator()(const Tensor& queries, const Tensor& keys, const Tensor& values) const {
  const Tensor qh = ops::split_heads(q(queries), heads);
  const Tensor kh = ops::split_heads(k(keys), heads);
  const Tensor vh = ops::split_heads(v(values), heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(qh.dim(2)));
  const Tensor scores = ops::scale(ops::matmul(qh, ops::transpose_last(kh)), inv_sqrt);
  const Tensor weights = ops::softmax(scores, 2);
  return out(ops::merge_heads(ops::matmul(weights, vh), heads));
}

void Attention::zero_output() {
  for (auto& v : out.weight.mutable_data()) v = 0.0;
  for (auto& v : out.bias.mutable_data()) v = 0.0;
}

Mlp::Mlp(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
         Rng& rng)
    : fc1(store, name + ".fc1", in, hidden, rng), fc2(store, name + ".fc2", hidden, out, rng) {}

Tensor Mlp::operator()(const Tensor& x) const { return fc2(ops::gelu(fc1(x))); }

Tensor DropPath::operator()(const Tensor& branch) const {
  if (rng == nullptr || rate <= 0.0) return branch;
  const double keep = 1.0 - rate;
  std::vector<double> factors(branch.dim(0));
  for (auto& f : factors) f = rng->uniform() < keep ? 1.0 / keep : 0.0;
  return ops::scale_per_sample(branch, factors);
}

TransformerBlock::TransformerBlock(ParameterStore& store, const std::string& name, std::size_t dim,
                                   std::size_t heads, Rng& rng)
    : norm1(store, name + ".norm1", dim),
      attn(store, name + ".attn", dim, dim, heads, rng),
      norm2(store, name + ".norm2", dim),
      mlp(store, name + ".mlp", dim, 2 * dim, dim, rng) {}

Tensor TransformerBlock::operator()(const Tensor& x, const DropPath& drop) const {
  const Tensor h = norm1(x);
  const Tensor y = ops::add(x, drop(attn(h, h)));
  return ops::add(y, drop(mlp(norm2(y))));
}

}  // namespace nn

}  // namespace affsam
