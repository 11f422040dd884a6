#include "affsam/tensor.hpp"

#include <sstream>

#include "affsam/errors.hpp"

namespace affsam {

namespace {

thread_local Tape* g_active_tape = nullptr;

struct Fault {
  std::string op;
  double factor = 1.0;
};
thread_local Fault g_fault;

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(data.size()));
  }
  Tensor t;
  t.impl_ = std::make_shared<Storage>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(data);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(impl_->shape));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_->data.size(); }

std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
void Tensor::set_requires_grad(bool on) { impl_->requires_grad = on; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }

std::span<double> Tensor::mutable_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

void Tensor::accumulate_grad(std::span<const double> delta) {
  auto g = mutable_grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

Tensor Tensor::clone() const { return from(impl_->shape, impl_->data, false); }

void Tensor::assign(std::span<const double> src) {
  if (src.size() != impl_->data.size()) {
    throw DimensionError("assign: " + std::to_string(src.size()) + " values into tensor of shape " +
                         shape_str(impl_->shape));
  }
  std::copy(src.begin(), src.end(), impl_->data.begin());
}

void Tape::record(std::string_view op, std::function<void()> backward) {
  entries_.push_back({std::string(op), std::move(backward)});
}

void Tape::backward(const Tensor& root) {
  if (root.numel() != 1) {
    throw DimensionError("backward requires a scalar root, got shape " + shape_str(root.shape()));
  }
  Tensor r = root;
  r.mutable_grad()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward();
}

void Tape::clear() { entries_.clear(); }

std::vector<std::string> Tape::op_names() const {
  std::vector<std::string> names;
  names.reserve(entries_.size());
  for (const auto& e : entries_) names.push_back(e.op);
  return names;
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoTapeScope::NoTapeScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoTapeScope::~NoTapeScope() { g_active_tape = previous_; }

BackwardFaultScope::BackwardFaultScope(std::string op, double factor) {
  g_fault = {std::move(op), factor};
}
BackwardFaultScope::~BackwardFaultScope() { g_fault = {}; }

namespace detail {

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!g_active_tape) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

bool should_record(std::span<const Tensor> inputs) {
  if (!g_active_tape) return false;
  for (const Tensor& t : inputs) {
    if (t.requires_grad()) return true;
  }
  return false;
}

void record_op(std::string_view op, Tensor& out,
               std::function<void(std::span<const double>)> backward) {
  out.set_requires_grad(true);
  const double factor = (g_fault.op == op) ? g_fault.factor : 1.0;
  // Captures `out` by handle; the tape keeps the graph alive until clear().
  g_active_tape->record(op, [out, factor, backward = std::move(backward)]() {
    if (!out.has_grad()) return;
    if (factor == 1.0) {
      backward(out.grad());
      return;
    }
    std::vector<double> scaled(out.grad().begin(), out.grad().end());
    for (auto& g : scaled) g *= factor;
    backward(scaled);
  });
}

}  // namespace detail

}  // namespace affsam
