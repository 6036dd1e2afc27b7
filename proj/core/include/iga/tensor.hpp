// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over dense real tensors.
//
// A Tensor is a cheap handle to a node in a dynamically recorded graph. Every
// op in ops.hpp produces a new node that remembers its inputs and how to
// push gradients back into them; the recorded graph is the tape. Gradients of
// a scalar objective are obtained with grad(), which only walks the part of
// the graph that connects the objective to the requested inputs.
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#ifndef IGA_REAL
#define IGA_REAL float
#endif

namespace iga {

/// Scalar type of the build. The training library uses float; the
/// gradient-check build compiles the same sources with double.
using real = IGA_REAL;

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class GradError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<real> value;
  std::vector<real> grad;  // allocated lazily during a backward sweep
  bool requires_grad = false;
  bool active = false;  // lies on a path to a requested input
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  // Gradient buffer for accumulation, zero-initialised on first use.
  std::span<real> grad_buffer();
};

}  // namespace detail

class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, real fill = 0);
  Tensor(Shape shape, std::vector<real> data);

  static Tensor scalar(real value);
  /// Leaf tensor that participates in differentiation.
  static Tensor variable(Shape shape, std::vector<real> data);

  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;

  std::span<const real> data() const;
  /// Mutable view of the values. Intended for leaves (parameter updates,
  /// data filling); mutating an interior node does not re-run the graph.
  std::span<real> mutable_data();

  real item() const;
  real operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  bool is_leaf() const;
  /// Only valid on leaves.
  Tensor& set_requires_grad(bool flag);

  /// Deep copy of the values into a fresh leaf.
  Tensor clone(bool requires_grad = false) const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

  /// Builds an op result. `inputs` are recorded only if any requires grad.
  static Tensor from_op(Shape shape, std::vector<real> value,
                        std::vector<Tensor> inputs,
                        std::function<void(detail::Node&)> backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Same values, excluded from gradient flow.
Tensor detach(const Tensor& t);

/// Gradients of a scalar objective with respect to each tensor in `wrt`.
/// A requested tensor that requires grad but does not influence the
/// objective gets a zero gradient; one that does not require grad at all
/// raises GradError("detached input").
std::vector<Tensor> grad(const Tensor& objective, std::span<const Tensor> wrt);
Tensor grad(const Tensor& objective, const Tensor& wrt);

}  // namespace iga
