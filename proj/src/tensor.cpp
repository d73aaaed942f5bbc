#include "missmod/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "missmod/errors.hpp"

namespace missmod::nn {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<double>& detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

namespace {

std::shared_ptr<detail::Node> make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + to_string(shape));
  }
  if (numel(shape) != values.size()) {
    throw DimensionError("shape " + to_string(shape) + " does not match " + std::to_string(values.size()) +
                         " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

}  // namespace

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  std::vector<double> values(nn::numel(shape), value);
  return Tensor(make_leaf(std::move(shape), std::move(values), false));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  return Tensor(make_leaf(std::move(shape), std::move(values), false));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  return Tensor(make_leaf(std::move(shape), std::move(values), true));
}

const Shape& Tensor::shape() const {
  if (!node_) throw UsageError("use of an undefined tensor");
  return node_->shape;
}

std::size_t Tensor::numel() const { return data().size(); }

std::size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("expected a matrix, got shape " + to_string(shape()));
  return shape()[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw DimensionError("expected a matrix, got shape " + to_string(shape()));
  return shape()[1];
}

std::span<const double> Tensor::data() const {
  if (!node_) throw UsageError("use of an undefined tensor");
  return node_->value;
}

std::vector<double> Tensor::to_vector() const {
  auto d = data();
  return {d.begin(), d.end()};
}

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on a tensor of shape " + to_string(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t row, std::size_t col) const { return data()[row * cols() + col]; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::is_leaf() const { return node_ && node_->leaf; }

void Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) throw UsageError("requires_grad can only be toggled on leaf tensors");
  node_->requires_grad = flag;
  if (!flag) node_->grad.clear();
}

std::vector<double> Tensor::grad() const {
  if (!node_) throw UsageError("use of an undefined tensor");
  if (node_->grad.empty()) return std::vector<double>(node_->value.size(), 0.0);
  return node_->grad;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

std::span<double> Tensor::mutable_data() {
  if (!is_leaf()) throw UsageError("only leaf tensors can be modified in place");
  return node_->value;
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw UsageError("backward() on an undefined tensor");
  if (loss.numel() != 1) {
    throw UsageError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  auto* root = loss.node().get();
  if (root->consumed) throw UsageError("backward() already ran on this graph; run a new forward pass first");
  if (!root->requires_grad) {
    root->consumed = true;
    return;
  }

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }

  for (auto* node : order) {
    if (node->leaf) continue;
    node->backward_fn = nullptr;
    node->parents.clear();
    node->grad.clear();
    node->consumed = true;
  }
  root->consumed = true;
}

}  // namespace missmod::nn
