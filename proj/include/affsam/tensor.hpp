#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace affsam {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major float64 array with optional participation in a gradient tape.
///
/// A Tensor is a shared handle: copies alias the same storage, the way
/// parameters are shared between a module and the tape that differentiates
/// through it. Use clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);

  bool has_grad() const;
  std::span<const double> grad() const;
  /// Gradient buffer, allocated (zero-filled) on first access.
  std::span<double> mutable_grad();
  void zero_grad();
  void accumulate_grad(std::span<const double> delta);

  /// Independent copy of the values; never tracked.
  Tensor clone() const;
  /// Overwrite values from `src` (same element count); does not touch the tape.
  void assign(std::span<const double> src);

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Storage {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> impl_;
};

/// Ordered record of differentiable operations. Replaying it in reverse
/// propagates gradients from a scalar root to every tracked input.
class Tape {
 public:
  void record(std::string_view op, std::function<void()> backward);
  /// Seeds d(root)/d(root) = 1 and replays the tape in reverse.
  void backward(const Tensor& root);
  void clear();
  std::size_t size() const { return entries_.size(); }
  std::vector<std::string> op_names() const;

 private:
  struct Entry {
    std::string op;
    std::function<void()> backward;
  };
  std::vector<Entry> entries_;
};

/// The tape that operations on this thread record into, or nullptr.
Tape* active_tape();

/// Makes `tape` the active tape for the current thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording on the current thread.
class NoTapeScope {
 public:
  NoTapeScope();
  ~NoTapeScope();
  NoTapeScope(const NoTapeScope&) = delete;
  NoTapeScope& operator=(const NoTapeScope&) = delete;

 private:
  Tape* previous_;
};

namespace detail {

/// True when an output computed from `inputs` must be recorded.
bool should_record(std::initializer_list<const Tensor*> inputs);
bool should_record(std::span<const Tensor> inputs);

/// Records `backward(upstream_grad)` for `out` on the active tape.
void record_op(std::string_view op, Tensor& out,
               std::function<void(std::span<const double>)> backward);

}  // namespace detail

/// Fault injection for mutation-checking the gradient suites: while active,
/// the upstream gradient of every recorded `op` is multiplied by `factor`
/// before its backward rule runs.
class BackwardFaultScope {
 public:
  BackwardFaultScope(std::string op, double factor);
  ~BackwardFaultScope();
  BackwardFaultScope(const BackwardFaultScope&) = delete;
  BackwardFaultScope& operator=(const BackwardFaultScope&) = delete;
};

}  // namespace affsam
