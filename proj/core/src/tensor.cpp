#include "fedrecon/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <unordered_set>

#include "fedrecon/error.hpp"

namespace fedrecon {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShapeMismatch: return "shape mismatch";
    case ErrorKind::kDomain: return "domain error";
    case ErrorKind::kInvalidArgument: return "invalid argument";
    case ErrorKind::kMissingGradient: return "missing gradient";
    case ErrorKind::kFormat: return "format error";
    case ErrorKind::kIo: return "i/o error";
    case ErrorKind::kPrivacyViolation: return "privacy violation";
    case ErrorKind::kProtocol: return "protocol error";
  }
  return "error";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

FormatError::FormatError(std::size_t offset, const std::string& message)
    : Error(ErrorKind::kFormat, message + " (at byte " + std::to_string(offset) + ")"),
      offset_(offset) {}

}  // namespace fedrecon

namespace fedrecon::ad {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

double* detail::Node::grad_buffer() {
  if (!has_grad) {
    grad.assign(data.size(), 0.0);
    has_grad = true;
  }
  return grad.data();
}

namespace {

std::shared_ptr<detail::Node> make_node(Shape shape, std::vector<double> data, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw Error(ErrorKind::kInvalidArgument, "tensor dimensions must be positive, got " + shape_to_string(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw Error(ErrorKind::kShapeMismatch, "shape " + shape_to_string(shape) + " does not hold " +
                                               std::to_string(data.size()) + " elements");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return node;
}

const detail::Node& checked(const std::shared_ptr<detail::Node>& node) {
  if (!node) throw Error(ErrorKind::kInvalidArgument, "use of an undefined tensor");
  return *node;
}

}  // namespace

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : node_(make_node(std::move(shape), std::move(data), requires_grad)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw Error(ErrorKind::kInvalidArgument, "axis " + std::to_string(axis) + " out of range for " + shape_to_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(node_).data.size(); }

std::span<const double> Tensor::data() const { return checked(node_).data; }

std::span<double> Tensor::mutable_data() {
  checked(node_);
  if (node_->backward_fn) throw Error(ErrorKind::kInvalidArgument, "cannot write to the output of an op");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw Error(ErrorKind::kShapeMismatch, "item() on tensor of shape " + shape_to_string(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

void Tensor::set_requires_grad(bool value) {
  checked(node_);
  if (!is_leaf()) throw Error(ErrorKind::kInvalidArgument, "requires_grad can only be set on leaves");
  node_->requires_grad = value;
}

bool Tensor::is_leaf() const { return !checked(node_).backward_fn; }

bool Tensor::has_grad() const { return checked(node_).has_grad; }

std::span<const double> Tensor::grad() const {
  const auto& n = checked(node_);
  if (!n.has_grad) return {};
  return n.grad;
}

void Tensor::accumulate_grad(std::span<const double> values) {
  checked(node_);
  if (values.size() != node_->data.size()) {
    throw Error(ErrorKind::kShapeMismatch, "gradient of " + std::to_string(values.size()) +
                                               " elements for tensor " + shape_to_string(node_->shape));
  }
  double* g = node_->grad_buffer();
  for (std::size_t i = 0; i < values.size(); ++i) g[i] += values[i];
}

void Tensor::zero_grad() {
  checked(node_);
  node_->grad.clear();
  node_->grad.shrink_to_fit();
  node_->has_grad = false;
}

Tensor Tensor::clone() const {
  const auto& n = checked(node_);
  return Tensor(n.shape, n.data, n.requires_grad);
}

Tensor Tensor::detach() const {
  const auto& n = checked(node_);
  return Tensor(n.shape, n.data, false);
}

Tensor Tensor::from_op(Shape shape, std::vector<double> data, const char* op, std::vector<Tensor> inputs,
                       std::function<void(detail::Node&)> backward_fn) {
  bool needs_grad = false;
  for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  auto node = make_node(std::move(shape), std::move(data), needs_grad);
  node->op = op;
#ifndef NDEBUG
  bool inputs_finite = true;
  for (const auto& in : inputs) {
    for (double v : in.data()) inputs_finite = inputs_finite && std::isfinite(v);
  }
  if (inputs_finite) {
    for (double v : node->data) {
      if (!std::isfinite(v)) throw Error(ErrorKind::kDomain, std::string(op) + " produced a non-finite value");
    }
  }
#endif
  if (needs_grad) {
    node->parents.reserve(inputs.size());
    for (auto& in : inputs) node->parents.push_back(in.node_);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw Error(ErrorKind::kInvalidArgument, "backward on undefined tensor");
  if (loss.numel() != 1) {
    throw Error(ErrorKind::kShapeMismatch, "backward requires a scalar loss, got " + shape_to_string(loss.shape()));
  }
  if (!loss.requires_grad()) throw Error(ErrorKind::kInvalidArgument, "loss does not depend on any parameter");

  // Iterative post-order DFS gives a topological order without recursion limits.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward_fn && node->has_grad) node->backward_fn(*node);
  }
  for (detail::Node* node : order) {
    if (!node->backward_fn) continue;
    node->parents.clear();
    node->backward_fn = nullptr;
    node->grad.clear();
    node->grad.shrink_to_fit();
    node->has_grad = false;
  }
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  auto da = a.data();
  auto db = b.data();
  return std::memcmp(da.data(), db.data(), da.size() * sizeof(double)) == 0;
}

}  // namespace fedrecon::ad
