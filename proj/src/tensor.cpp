#include "paraformer/tensor.hpp"

#include <algorithm>
#include <unordered_set>
#include <utility>

#include "paraformer/errors.hpp"

namespace paraformer {

std::string shape_to_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  out += "]";
  return out;
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_to_string(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

namespace detail {

void TensorNode::accumulate(const double* g, std::size_t n) {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) grad[i] += g[i];
}

}  // namespace detail

namespace {
thread_local bool g_autograd_enabled = true;
}

bool autograd_enabled() { return g_autograd_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_autograd_enabled) { g_autograd_enabled = false; }
NoGradGuard::~NoGradGuard() { g_autograd_enabled = previous_; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto node = std::make_shared<detail::TensorNode>();
  node->data.assign(shape_numel(shape), 0.0);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::full(Shape shape, double value) {
  auto node = std::make_shared<detail::TensorNode>();
  node->data.assign(shape_numel(shape), value);
  node->shape = std::move(shape);
  return Tensor(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_to_string(shape));
  }
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_to_string(shape()));
  return node_->data[0];
}

void Tensor::set_requires_grad(bool v) {
  if (!node_->leaf && v) throw ShapeError("requires_grad can only be toggled on leaf tensors");
  node_->requires_grad = v;
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.assign(numel(), 0.0); }

double* Tensor::grad_data() {
  if (node_->grad.empty()) node_->grad.assign(numel(), 0.0);
  return node_->grad.data();
}

Tensor Tensor::detach_copy() const {
  return Tensor::from_data(shape(), node_->data, false);
}

void Tensor::backward() const {
  if (!defined()) throw ShapeError("backward() on undefined tensor");
  if (numel() != 1) {
    throw ShapeError("backward() requires a scalar loss, got shape " + shape_to_string(shape()));
  }

  // Iterative post-order DFS; parent order fixes the traversal, so repeated
  // runs accumulate in the same order.
  std::vector<detail::TensorNode*> topo;
  std::unordered_set<detail::TensorNode*> visited;
  struct Frame {
    detail::TensorNode* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  if (node_->requires_grad) {
    stack.push_back({node_.get(), 0});
    visited.insert(node_.get());
  }
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      detail::TensorNode* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      topo.push_back(f.node);
      stack.pop_back();
    }
  }

  node_->grad.assign(1, 1.0);
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    detail::TensorNode* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
  // Clear the graph: drop closures, parent links and interior grads.
  for (detail::TensorNode* n : topo) {
    if (!n->leaf) {
      n->backward_fn = nullptr;
      n->parents.clear();
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

namespace detail {

Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                   std::vector<Tensor> inputs,
                   std::function<void(TensorNode&)> backward_fn) {
  Tensor out = Tensor::from_data(std::move(shape), std::move(data));
  TensorNode& node = *out.node();
  node.leaf = false;
  node.op = op;
  if (autograd_enabled()) {
    bool track = false;
    for (const Tensor& t : inputs) {
      if (t.requires_grad()) {
        track = true;
        break;
      }
    }
    if (track) {
      node.requires_grad = true;
      node.parents.reserve(inputs.size());
      for (Tensor& t : inputs) node.parents.push_back(t.node());
      node.backward_fn = std::move(backward_fn);
    }
  }
  return out;
}

}  // namespace detail

}  // namespace paraformer
