#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fedrecon::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  bool has_grad = false;
  std::vector<double> grad;
  // Tape linkage; empty for leaves and after backward() has run.
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";

  double* grad_buffer();
};

}  // namespace detail

// Dense row-major float64 array with optional reverse-mode tape linkage.
//
// Tensor is a handle: copies share the same storage and gradient, as with
// parameters referenced from several places in a graph. Use clone() for an
// independent copy. Values produced by ops are never mutated afterwards; only
// leaves are written to, and only by optimizers.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Write access for leaves (initializers, optimizers). Throws on op outputs.
  std::span<double> mutable_data();
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool is_leaf() const;
  bool has_grad() const;
  // Gradient, or an empty span if none was accumulated.
  std::span<const double> grad() const;
  void accumulate_grad(std::span<const double> values);
  void zero_grad();

  // Deep copy; the copy is a leaf with the same requires_grad flag and no grad.
  Tensor clone() const;
  // Copy of the values as a constant leaf.
  Tensor detach() const;

  // True iff both handles refer to the same storage.
  bool same_storage(const Tensor& other) const noexcept { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }

  static Tensor from_op(Shape shape, std::vector<double> data, const char* op,
                        std::vector<Tensor> inputs,
                        std::function<void(detail::Node&)> backward_fn);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node> node_;
};

// Populates grad on every requires_grad leaf reachable from `loss`.
// Gradients accumulate across calls until zero_grad(); the tape of interior
// nodes is released afterwards, so a second backward through the same graph
// reaches nothing.
void backward(const Tensor& loss);

// True iff every element of `a` and `b` has identical bits and shapes match.
bool bit_equal(const Tensor& a, const Tensor& b);

}  // namespace fedrecon::ad
