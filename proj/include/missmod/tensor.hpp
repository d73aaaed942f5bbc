#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace missmod::nn {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

// One vertex of the recorded computation. Non-leaf nodes keep their parents
// alive and know how to push their gradient into them; together the nodes
// reachable from a loss form the gradient tape that backward() replays.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something flows in
  bool requires_grad = false;
  bool leaf = true;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& grad_buffer();
};

}  // namespace detail

// Dense fp64 row-major tensor handle. Copies share the underlying node, so a
// Tensor behaves like a reference to an immutable value; only leaves (model
// parameters) may be written in place, and only outside a forward pass.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  std::vector<double> to_vector() const;
  double item() const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  bool is_leaf() const;
  void set_requires_grad(bool flag);

  // Accumulated gradient; all zeros if nothing reached this tensor.
  std::vector<double> grad() const;
  bool has_grad() const;
  void zero_grad();

  std::span<double> mutable_data();

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Reverse-mode sweep from a scalar loss. Releases the recorded graph once
// done; calling it again on the same loss is a UsageError.
void backward(const Tensor& loss);

}  // namespace missmod::nn
