#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace paraformer {

using Shape = std::vector<int>;

std::string shape_to_string(const Shape& s);
std::size_t shape_numel(const Shape& s);

namespace detail {

// One node of the reverse-mode graph. Leaves are parameters/inputs; interior
// nodes record the op, the parent tensors and a closure that pushes this
// node's cotangent into the parents. Parent links and closures are severed
// after backward() so each graph is single-use.
struct TensorNode {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<double> grad;  // sized on first accumulation
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  std::size_t numel() const { return data.size(); }
  void accumulate(const double* g, std::size_t n);
};

}  // namespace detail

// Dense row-major tensor of doubles with optional gradient tracking.
// Copying a Tensor copies the handle, not the storage; values are treated
// as immutable once produced by an op (gradients are the only mutable field).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  std::size_t numel() const { return node_->data.size(); }

  double* data() { return node_->data.data(); }
  const double* data() const { return node_->data.data(); }
  const std::vector<double>& values() const { return node_->data; }

  // 2-D convenience accessors (row-major).
  double& at(int r, int c) { return node_->data[static_cast<std::size_t>(r) * dim(1) + c]; }
  double at(int r, int c) const { return node_->data[static_cast<std::size_t>(r) * dim(1) + c]; }
  double item() const;  // scalar only

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v);

  // Gradient of the same shape; zeros if backward never reached this tensor.
  std::vector<double> grad() const;
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad();
  double* grad_data();  // allocates zeros on first use

  // Reverse-mode accumulation from a scalar loss. Visits each reachable node
  // exactly once in reverse topological order, then clears the graph.
  void backward() const;

  // Detached copy of the values (fresh leaf, no graph link).
  Tensor detach_copy() const;

  std::shared_ptr<detail::TensorNode> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// Thread-local autograd switch. Ops record graph structure only when enabled
// and some input requires grad.
bool autograd_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {
// Shared helper for op implementations: wires parents/closure when tracking.
Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                   std::vector<Tensor> inputs,
                   std::function<void(TensorNode&)> backward_fn);
}  // namespace detail

}  // namespace paraformer
