// SPDX-License-Identifier: Apache-2.0
#include "iga/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

namespace iga {

namespace {

std::atomic<std::uint64_t> g_next_seq{1};

std::shared_ptr<detail::Node> make_node(Shape shape, std::vector<real> value) {
  if (value.size() != numel(shape)) {
    throw ShapeError("tensor data length " + std::to_string(value.size()) +
                     " does not match shape " + to_string(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
  return node;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::span<real> detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), real(0));
  return grad;
}

Tensor::Tensor() : Tensor(Shape{}, real(0)) {}

Tensor::Tensor(Shape shape, real fill) {
  const auto n = numel(shape);
  node_ = make_node(std::move(shape), std::vector<real>(n, fill));
}

Tensor::Tensor(Shape shape, std::vector<real> data)
    : node_(make_node(std::move(shape), std::move(data))) {}

Tensor Tensor::scalar(real value) { return Tensor(Shape{}, value); }

Tensor Tensor::variable(Shape shape, std::vector<real> data) {
  Tensor t(std::move(shape), std::move(data));
  t.node_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     to_string(node_->shape));
  }
  return node_->shape[axis];
}

std::size_t Tensor::size() const { return node_->value.size(); }

std::span<const real> Tensor::data() const { return node_->value; }

std::span<real> Tensor::mutable_data() { return node_->value; }

real Tensor::item() const {
  if (size() != 1) {
    throw ShapeError("item() on tensor of shape " + to_string(shape()));
  }
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

bool Tensor::is_leaf() const { return !node_->backward; }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) throw GradError("set_requires_grad on a non-leaf tensor");
  node_->requires_grad = flag;
  return *this;
}

Tensor Tensor::clone(bool requires_grad) const {
  Tensor t(node_->shape, node_->value);
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::from_op(Shape shape, std::vector<real> value,
                       std::vector<Tensor> inputs,
                       std::function<void(detail::Node&)> backward) {
  auto node = make_node(std::move(shape), std::move(value));
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
  if (any) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node_);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

Tensor detach(const Tensor& t) { return Tensor(t.shape(), std::vector<real>(t.data().begin(), t.data().end())); }

std::vector<Tensor> grad(const Tensor& objective, std::span<const Tensor> wrt) {
  if (objective.size() != 1) {
    throw GradError("objective must be scalar, got shape " +
                    to_string(objective.shape()));
  }
  for (const auto& w : wrt) {
    if (!w.requires_grad()) throw GradError("detached input");
  }

  std::vector<Tensor> out;
  out.reserve(wrt.size());

  // Collect the recorded subgraph below the objective.
  std::vector<detail::Node*> nodes;
  if (objective.requires_grad()) {
    std::unordered_set<detail::Node*> seen;
    std::vector<detail::Node*> stack{objective.node().get()};
    while (!stack.empty()) {
      auto* n = stack.back();
      stack.pop_back();
      if (!seen.insert(n).second) continue;
      nodes.push_back(n);
      for (auto& in : n->inputs) {
        if (in->requires_grad) stack.push_back(in.get());
      }
    }
  }
  // Creation order is a topological order.
  std::sort(nodes.begin(), nodes.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->seq < b->seq; });

  std::unordered_set<const detail::Node*> targets;
  for (const auto& w : wrt) targets.insert(w.node().get());
  for (auto* n : nodes) {
    n->active = targets.count(n) > 0;
    for (auto& in : n->inputs) n->active = n->active || in->active;
  }

  if (!nodes.empty() && nodes.back()->active) {
    nodes.back()->grad_buffer()[0] = real(1);
    for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
      auto* n = *it;
      if (n->active && n->backward && !n->grad.empty()) n->backward(*n);
    }
  }

  for (const auto& w : wrt) {
    const auto* n = w.node().get();
    if (n->grad.empty()) {
      out.emplace_back(w.shape(), real(0));
    } else {
      out.emplace_back(w.shape(), n->grad);
    }
  }
  for (auto* n : nodes) {
    n->active = false;
    std::vector<real>().swap(n->grad);
  }
  return out;
}

Tensor grad(const Tensor& objective, const Tensor& wrt) {
  return std::move(grad(objective, std::span<const Tensor>(&wrt, 1)).front());
}

}  // namespace iga
