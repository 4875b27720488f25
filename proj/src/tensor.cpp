#include "voxelformer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace vxf {

namespace {
uint64_t g_seq = 0;  // graph construction is single-threaded by contract
}

uint64_t next_seq() { return ++g_seq; }

int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Tensor Tensor::leaf(Shape shape, std::vector<double> value,
                    bool requires_grad) {
  for (int64_t d : shape)
    require(d > 0, "Tensor: shape dimensions must be positive, got " +
                       shape_str(shape));
  require(numel_of(shape) == static_cast<int64_t>(value.size()),
          "Tensor: shape " + shape_str(shape) + " wants " +
              std::to_string(numel_of(shape)) + " values, got " +
              std::to_string(value.size()));
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->seq = next_seq();
  return Tensor::wrap(std::move(n));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> v(static_cast<size_t>(numel_of(shape)), 0.0);
  return leaf(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::full(Shape shape, double fill, bool requires_grad) {
  std::vector<double> v(static_cast<size_t>(numel_of(shape)), fill);
  return leaf(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return leaf({1}, {v}, requires_grad);
}

int64_t Tensor::dim(int axis) const {
  const auto& s = shape();
  int r = rank();
  if (axis < 0) axis += r;
  require(axis >= 0 && axis < r, "Tensor::dim: axis out of range for shape " +
                                     shape_str(s));
  return s[static_cast<size_t>(axis)];
}

double Tensor::item() const {
  require(numel() == 1, "Tensor::item: tensor has shape " +
                            shape_str(shape()) + ", expected a scalar");
  return data()[0];
}

void Tensor::zero_grad() {
  auto& n = check();
  std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

void backward(const Tensor& loss) {
  require(loss.defined(), "backward: undefined loss tensor");
  auto root = loss.node();
  require(root->value.size() == 1,
          "backward: loss must be scalar, got shape " + shape_str(root->shape));
  require(!root->backward_done,
          "backward: second backward pass without reset is rejected");
  root->backward_done = true;
  if (!root->requires_grad) return;  // constant loss: all leaf grads stay zero

  // Collect grad-requiring nodes reachable from the root, then sweep them in
  // descending creation order — exact reverse topological order.
  std::vector<std::shared_ptr<TensorNode>> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::shared_ptr<TensorNode>> stack{root};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p);
    }
  }
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return a->seq > b->seq; });

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (const auto& n : order) {
    if (n->backprop) {
      n->ensure_grad();
      n->backprop();
    }
  }
}

bool all_finite(const Tensor& t) {
  for (double v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

std::string first_nonfinite_description(const Tensor& t) {
  require(t.defined(), "first_nonfinite_description: undefined tensor");
  std::vector<std::shared_ptr<TensorNode>> all;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::shared_ptr<TensorNode>> stack{t.node()};
  seen.insert(t.node().get());
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    all.push_back(n);
    for (const auto& p : n->parents)
      if (seen.insert(p.get()).second) stack.push_back(p);
  }
  TensorNode* worst = nullptr;
  for (const auto& n : all) {
    bool bad = false;
    for (double v : n->value)
      if (!std::isfinite(v)) {
        bad = true;
        break;
      }
    if (bad && (worst == nullptr || n->seq < worst->seq)) worst = n.get();
  }
  if (!worst) return "";
  return std::string("op=") + worst->op + " shape=" + shape_str(worst->shape) +
         " seq=" + std::to_string(worst->seq);
}

}  // namespace vxf
