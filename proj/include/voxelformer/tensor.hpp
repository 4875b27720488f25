#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "voxelformer/common.hpp"

namespace vxf {

using Shape = std::vector<int64_t>;

int64_t numel_of(const Shape& s);
std::string shape_str(const Shape& s);

// One record in the computation graph. Nodes are created in topological
// order (inputs before outputs) and carry a monotonically increasing
// sequence number, so walking reachable nodes by descending seq is an exact
// reverse topological order.
struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first touched; same length as value
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backprop;  // set only on grad-requiring non-leaves
  const char* op = "leaf";
  uint64_t seq = 0;
  bool requires_grad = false;
  bool backward_done = false;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

// Value handle over a graph node. Cheap to copy; immutable after forward
// creation except for grad accumulation and explicit leaf updates
// (optimizer steps between graphs).
class Tensor {
 public:
  Tensor() = default;

  static Tensor leaf(Shape shape, std::vector<double> value,
                     bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor wrap(std::shared_ptr<TensorNode> n) {
    return Tensor(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return check().shape; }
  int rank() const { return static_cast<int>(check().shape.size()); }
  int64_t dim(int axis) const;  // negative axis counts from the back
  int64_t numel() const { return static_cast<int64_t>(check().value.size()); }
  double item() const;

  const std::vector<double>& data() const { return check().value; }
  // Leaf value access for optimizer updates and test harnesses. Mutating a
  // non-leaf between forward and backward corrupts gradients; don't.
  std::vector<double>& mutable_data() { return check().value; }

  // Gradient accumulated by backward(); zeros if never touched.
  std::vector<double>& grad() {
    check().ensure_grad();
    return node_->grad;
  }
  const std::vector<double>& grad() const {
    check().ensure_grad();
    return node_->grad;
  }
  void zero_grad();

  bool requires_grad() const { return check().requires_grad; }
  const char* op() const { return check().op; }
  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}
  TensorNode& check() const {
    require(node_ != nullptr, "Tensor: used before initialization");
    return *node_;
  }
  std::shared_ptr<TensorNode> node_;
};

// Reverse-mode sweep from a scalar loss. Every grad-requiring leaf reachable
// from `loss` accumulates dLoss/dLeaf (additive; callers zero grads between
// steps). A second backward on the same loss is rejected.
void backward(const Tensor& loss);

bool all_finite(const Tensor& t);

// Walks the graph under `t` and describes the earliest-created node holding
// a non-finite value; empty string when everything is finite.
std::string first_nonfinite_description(const Tensor& t);

}  // namespace vxf
