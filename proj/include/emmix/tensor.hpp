#pragma once

// Minimal dense-tensor engine with reverse-mode differentiation.
//
// A Tensor is a value-semantic handle onto a graph node holding
// double-precision values in row-major order. Primitive operations
// (ops.hpp) record closures that propagate gradients from a scalar
// loss back to every tensor marked requires_grad. Tensors are
// immutable after construction except for gradient accumulation; a
// computation graph must be driven by one thread at a time, but
// independent graphs may run concurrently.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

namespace emmix {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;   // persistent accumulator, only if requires_grad
  std::vector<double> flow;   // transient buffer used during backward()
  bool requires_grad = false; // set explicitly on leaves
  bool needs_flow = false;    // some ancestor requires grad
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  bool wants_grad() const { return requires_grad || needs_flow; }
  void ensure_flow() {
    if (flow.empty()) flow.assign(values.size(), 0.0);
  }
};

}  // namespace detail

// Thread-local switch: while disabled, ops compute values only and record
// no graph structure. Used for inference passes.
bool autograd_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  // 2-D convenience: row-major nested initializer.
  static Tensor matrix(std::vector<std::vector<double>> rows,
                       bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->values.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape[axis]; }

  const std::vector<double>& values() const { return node_->values; }
  // Mutable access to leaf storage (parameter init, optimizer updates).
  std::vector<double>& mutable_values() { return node_->values; }

  double at(std::size_t flat) const { return node_->values[flat]; }
  double at2(std::size_t i, std::size_t j) const {
    return node_->values[i * node_->shape[1] + j];
  }
  double scalar() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v);
  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<double>& grad() const;
  std::vector<double>& mutable_grad();
  void zero_grad();

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& handle() const { return node_; }

  static Tensor wrap(std::shared_ptr<detail::Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Keep large freed buffers in the heap instead of returning them to
// the kernel; training allocates and frees hundreds of megabytes of
// activations per step and page-fault churn dominates otherwise.
void tune_allocator();

// Reverse-mode sweep from a scalar loss. Every tensor with
// requires_grad reachable from `loss` receives its accumulated
// d(loss)/d(tensor); repeated calls keep accumulating until
// zero_grad() is invoked on the leaves.
void backward(const Tensor& loss);

// Paired real/imaginary tensors of identical shape.
struct ComplexTensor {
  Tensor re;
  Tensor im;
};

}  // namespace emmix
