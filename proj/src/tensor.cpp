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

#include "anchordistill/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "anchordistill/errors.hpp"

namespace ad {

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) {
    if (e < 0) throw DimensionError("negative extent in shape " + to_string(shape));
    n *= e;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

Vector& Node::grad_buffer() {
  if (grad.size() != values.size()) grad = Vector::Zero(values.size());
  return grad;
}

void Node::accumulate(const Vector& delta) {
  if (!requires_grad) return;
  grad_buffer() += delta;
}

}  // namespace detail

namespace {

std::shared_ptr<detail::Node> new_node(Shape shape, Vector values, bool requires_grad) {
  if (numel(shape) != values.size()) {
    throw DimensionError("shape " + to_string(shape) + " holds " +
                         std::to_string(numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

const detail::Node& checked(const std::shared_ptr<detail::Node>& node) {
  if (!node) throw StateError("use of an undefined tensor");
  return *node;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const Index n = numel(shape);
  return Tensor(new_node(std::move(shape), Vector::Zero(n), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const Index n = numel(shape);
  return Tensor(new_node(std::move(shape), Vector::Constant(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, Vector values, bool requires_grad) {
  return Tensor(new_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values, bool requires_grad) {
  Vector v(static_cast<Index>(values.size()));
  Index i = 0;
  for (double x : values) v[i++] = x;
  return from(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from(Shape{}, Vector::Constant(1, value), requires_grad);
}

const Shape& Tensor::shape() const { return checked(node_).shape; }

Index Tensor::extent(Index axis) const {
  const Shape& s = shape();
  if (axis < 0) axis += static_cast<Index>(s.size());
  if (axis < 0 || axis >= static_cast<Index>(s.size())) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + to_string(s));
  }
  return s[static_cast<std::size_t>(axis)];
}

const Vector& Tensor::values() const { return checked(node_).values; }

Vector& Tensor::mutable_values() {
  checked(node_);
  if (!node_->is_leaf()) throw StateError("mutable_values on a non-leaf tensor");
  return node_->values;
}

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + to_string(shape()));
  return values()[0];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

bool Tensor::has_grad() const { return checked(node_).grad.size() == size(); }

Vector Tensor::grad() const {
  const auto& n = checked(node_);
  if (n.grad.size() == n.values.size()) return n.grad;
  return Vector::Zero(n.values.size());
}

void Tensor::zero_grad() {
  checked(node_);
  node_->grad.resize(0);
}

Tensor Tensor::detach() const {
  return Tensor(new_node(shape(), values(), false));
}

Tensor make_result(Shape shape, Vector values, std::vector<Tensor> parents,
                   detail::BackwardFn backward) {
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  auto node = new_node(std::move(shape), std::move(values), any);
  if (any) {
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

GraphTape record_tape(const Tensor& root) {
  GraphTape tape;
  if (!root.defined()) return tape;
  // Iterative post-order DFS: a node is emitted once all parents are emitted.
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      tape.order.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

void Tensor::backward() const {
  const auto& root = checked(node_);
  if (root.values.size() != 1) {
    throw DimensionError("backward() needs a scalar, got " + to_string(root.shape));
  }
  if (root.consumed) throw StateError("backward() on a consumed graph");
  if (!root.requires_grad) return;

  GraphTape tape = record_tape(*this);
  node_->grad_buffer()[0] += 1.0;
  for (auto it = tape.order.rbegin(); it != tape.order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->is_leaf()) continue;
    if (n->grad.size() == n->values.size()) n->backward(*n);
  }
  // Interior nodes release their operands and gradients; leaves keep grads.
  for (detail::Node* n : tape.order) {
    if (n->is_leaf()) continue;
    n->backward = nullptr;
    n->parents.clear();
    n->grad.resize(0);
    n->consumed = true;
  }
}

}  // namespace ad
