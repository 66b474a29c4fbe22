/* Copyright 2026 The anchordistill Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace ad {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using Vector = Eigen::VectorXd;

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

struct Node;
using BackwardFn = std::function<void(Node&)>;

struct Node {
  Shape shape;
  Vector values;
  Vector grad;  // empty until first accumulation
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;

  bool is_leaf() const { return !backward; }
  void accumulate(const Vector& delta);
  Vector& grad_buffer();
};

}  // namespace detail

/// Dense row-major float64 array with an optional link into a reverse-mode
/// computation graph. Copies are shallow: they share values and grad.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, Vector values, bool requires_grad = false);
  static Tensor from(Shape shape, std::initializer_list<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  Index dim() const { return static_cast<Index>(shape().size()); }
  Index extent(Index axis) const;
  Index size() const { return values().size(); }

  const Vector& values() const;
  // Leaf-only mutable access, used by optimizers and finite-difference probes.
  Vector& mutable_values();
  double item() const;
  double operator[](Index flat) const { return values()[flat]; }

  bool requires_grad() const;
  bool has_grad() const;
  // Zero vector when no gradient was accumulated.
  Vector grad() const;
  void zero_grad();

  // Reverse sweep from this scalar; consumes the graph behind it.
  void backward() const;

  // Graph-free copy sharing no state with this tensor.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_result(Shape, Vector, std::vector<Tensor>, detail::BackwardFn);
};

/// Builds an operation result. If no operand requires grad the result is a
/// plain constant and `backward` is dropped, so teacher-side graphs cost nothing.
Tensor make_result(Shape shape, Vector values, std::vector<Tensor> parents,
                   detail::BackwardFn backward);

/// Ordered record of the operations reachable from a root: every node appears
/// after all nodes that produce its operands.
struct GraphTape {
  std::vector<detail::Node*> order;
};

GraphTape record_tape(const Tensor& root);

}  // namespace ad
