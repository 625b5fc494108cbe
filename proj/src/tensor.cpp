#include "emmix/tensor.hpp"

#include <sstream>
#include <unordered_set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "emmix/errors.hpp"

namespace emmix {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

namespace {
thread_local bool g_autograd_enabled = true;
}

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

bool autograd_enabled() { return g_autograd_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_autograd_enabled) {
  g_autograd_enabled = false;
}
NoGradGuard::~NoGradGuard() { g_autograd_enabled = prev_; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->values.assign(shape_numel(n->shape), value);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values,
                           bool requires_grad) {
  if (shape_numel(shape) != values.size())
    throw ShapeError("from_values: shape " + shape_str(shape) +
                     " does not match " + std::to_string(values.size()) +
                     " values");
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::matrix(std::vector<std::vector<double>> rows,
                      bool requires_grad) {
  std::size_t r = rows.size();
  std::size_t c = r ? rows[0].size() : 0;
  std::vector<double> v;
  v.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("matrix: ragged rows");
    v.insert(v.end(), row.begin(), row.end());
  }
  return from_values({r, c}, std::move(v), requires_grad);
}

double Tensor::scalar() const {
  if (numel() != 1)
    throw ShapeError("scalar() on tensor of shape " + shape_str(shape()));
  return node_->values[0];
}

void Tensor::set_requires_grad(bool v) { node_->requires_grad = v; }

const std::vector<double>& Tensor::grad() const {
  if (node_->grad.empty())
    throw NumericError("grad() requested but no gradient has been computed");
  return node_->grad;
}

std::vector<double>& Tensor::mutable_grad() {
  if (node_->grad.empty()) node_->grad.assign(node_->values.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.assign(node_->values.size(), 0.0); }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ShapeError("backward: loss must be a defined scalar tensor");
  detail::Node* root = loss.node();
  if (!root->wants_grad()) return;  // nothing differentiable upstream

  // Reverse DFS post-order: children come before their parents, so
  // each node's flow is complete before its backprop closure runs.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  struct Frame {
    detail::Node* n;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({root, 0});
  seen.insert(root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.n->parents.size()) {
      detail::Node* p = f.n->parents[f.next_parent++].get();
      if (p->wants_grad() && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  root->ensure_flow();
  root->flow[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->requires_grad && n->grad.empty())
      n->grad.assign(n->values.size(), 0.0);  // reachable => zero counts
    if (n->flow.empty()) continue;  // no gradient reached this node
    if (n->backprop) n->backprop(*n);
    if (n->requires_grad)
      for (std::size_t i = 0; i < n->flow.size(); ++i) n->grad[i] += n->flow[i];
    n->flow.clear();
    n->flow.shrink_to_fit();
  }
}

}  // namespace emmix
