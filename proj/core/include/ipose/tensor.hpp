#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ipose {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tensor;
struct TensorImpl;

/// Backward rule of a recorded operation. Receives the gradient of the loss
/// with respect to the operation's output (and the output values) and
/// accumulates into the inputs' grad buffers.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<const double> out)>;

/// Dense row-major array of doubles with optional reverse-mode gradient
/// tracking.
///
/// A Tensor is a cheap shared handle: copies alias the same storage. Values
/// produced by an op are not modified afterwards, except for gradient
/// accumulation during backward(). Every op whose inputs require gradients
/// records a node that references its operands, so the recorded graph is a
/// DAG whose topological order is the order of execution. backward() visits
/// each reachable node exactly once in reverse topological order and then
/// releases the graph; a second backward() through the same graph throws.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  /// Creates the result of a differentiable op. The node is recorded only if
  /// gradient recording is enabled and at least one input requires grad.
  static Tensor from_op(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                        BackwardFn backward, const char* op_name);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Mutable access for leaf tensors (parameter init, optimizer updates).
  /// Throws GraphError on tensors produced by a recorded op.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  /// Gradient storage, zero-initialised on first access.
  std::span<double> grad_buffer() const;
  void zero_grad();

  /// Reverse-mode sweep from this scalar. Populates grad() of every
  /// requires_grad leaf reachable from it.
  void backward() const;

  /// Same values, no history, no gradient requirement.
  Tensor detach() const;
  Tensor clone() const;

  const char* op_name() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_recording_enabled();

}  // namespace ipose
