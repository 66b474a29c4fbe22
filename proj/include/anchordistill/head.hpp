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

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "anchordistill/tensor.hpp"

namespace ad {

struct HeadConfig {
  int num_levels = 3;      // strides 4, 8, 16, ...
  int channels = 8;        // branch width, shared by student and teacher
  int num_convs = 2;       // conv blocks per branch
  int num_categories = 3;
  int kernel_size = 3;
  int backbone_width = 8;  // internal width of the backbone stub

  int stride(int level) const { return 4 << level; }
  int largest_stride() const { return stride(num_levels - 1); }
  void validate() const;
  friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

/// Named trainable tensors, iterated in name order.
class ParamStore {
 public:
  /// He-normal weights drawn from a stream keyed by (seed, parameter name).
  static ParamStore initialize(const HeadConfig& config, std::uint64_t seed);
  static ParamStore zeros(const HeadConfig& config);

  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  void insert(const std::string& name, Tensor t) { params_[name] = std::move(t); }

  std::map<std::string, Tensor>& items() { return params_; }
  const std::map<std::string, Tensor>& items() const { return params_; }

  // Fresh leaves with copied values; `requires_grad` applies to all.
  ParamStore clone(bool requires_grad) const;
  void zero_grad();

 private:
  std::map<std::string, Tensor> params_;
};

/// Shapes of every parameter a config needs, keyed by name.
std::map<std::string, Shape> parameter_shapes(const HeadConfig& config);

enum class Branch { cls, box };

struct HeadOutputs {
  std::vector<int> strides;
  // features[m - 1][k] for conv m in 1..num_convs and level k; each [B,C,H_k,W_k].
  std::vector<std::vector<Tensor>> cls_features;
  std::vector<std::vector<Tensor>> box_features;
  std::vector<Tensor> cls_logits;  // [B,num_categories,H_k,W_k]
  std::vector<Tensor> box_deltas;  // [B,4,H_k,W_k], (l,t,r,b) in stride units
  Index image_height = 0;
  Index image_width = 0;

  int num_convs() const { return static_cast<int>(cls_features.size()); }
  int num_levels() const { return static_cast<int>(strides.size()); }
  Index batch() const { return cls_logits.empty() ? 0 : cls_logits.front().extent(0); }
  const Tensor& feature(Branch branch, int conv, int level) const;
};

/// Runs the backbone stub and both head branches on [3,H,W] or [B,3,H,W].
/// Outputs are always batched.
HeadOutputs forward(const Tensor& images, const HeadConfig& config, const ParamStore& params);

}  // namespace ad
