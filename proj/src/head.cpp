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

#include "anchordistill/head.hpp"

#include <cmath>

#include "anchordistill/errors.hpp"
#include "anchordistill/ops.hpp"
#include "anchordistill/random.hpp"

namespace ad {

namespace {

constexpr double kPriorProbability = 0.01;
// softplus^-1(2): initial box distances of two strides.
const double kBoxBiasInit = std::log(std::exp(2.0) - 1.0);

std::uint64_t name_hash(const std::string& name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : name) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

std::string level_name(const char* base, int k) { return std::string(base) + std::to_string(k); }

Tensor conv_block(const Tensor& x, const ParamStore& p, const std::string& name, int stride,
                  int pad) {
  return conv2d(x, p.at(name + ".w"), p.at(name + ".b"), stride, pad);
}

}  // namespace

void HeadConfig::validate() const {
  if (num_levels < 1 || channels < 1 || num_convs < 1 || num_categories < 1 ||
      backbone_width < 1) {
    throw ConfigError("HeadConfig: all sizes must be positive");
  }
  if (kernel_size != 3) throw ConfigError("HeadConfig: kernel_size must be 3");
}

std::map<std::string, Shape> parameter_shapes(const HeadConfig& c) {
  c.validate();
  const Index k = c.kernel_size, bw = c.backbone_width, ch = c.channels;
  std::map<std::string, Shape> s;
  auto conv = [&](const std::string& name, Index out, Index in) {
    s[name + ".w"] = Shape{out, in, k, k};
    s[name + ".b"] = Shape{out};
  };
  conv("backbone.stem", bw, 3);
  for (int l = 0; l < c.num_levels; ++l) {
    conv(level_name("backbone.down", l), bw, bw);
    conv(level_name("backbone.proj", l), ch, bw);
  }
  for (int m = 1; m <= c.num_convs; ++m) {
    conv(level_name("head.cls", m), ch, ch);
    conv(level_name("head.box", m), ch, ch);
  }
  conv("head.cls_pred", c.num_categories, ch);
  conv("head.box_pred", 4, ch);
  return s;
}

ParamStore ParamStore::initialize(const HeadConfig& config, std::uint64_t seed) {
  ParamStore store;
  for (const auto& [name, shape] : parameter_shapes(config)) {
    Vector v = Vector::Zero(numel(shape));
    if (shape.size() == 4) {
      const double fan_in = static_cast<double>(shape[1] * shape[2] * shape[3]);
      double std_dev = std::sqrt(2.0 / fan_in);
      if (name.starts_with("head.cls_pred") || name.starts_with("head.box_pred")) std_dev = 0.01;
      CounterRng rng(stream_key({seed, name_hash(name)}));
      for (Index i = 0; i < v.size(); ++i) v[i] = std_dev * rng.normal();
    } else if (name == "head.cls_pred.b") {
      v.setConstant(-std::log((1.0 - kPriorProbability) / kPriorProbability));
    } else if (name == "head.box_pred.b") {
      v.setConstant(kBoxBiasInit);
    }
    store.insert(name, Tensor::from(shape, std::move(v), true));
  }
  return store;
}

ParamStore ParamStore::zeros(const HeadConfig& config) {
  ParamStore store;
  for (const auto& [name, shape] : parameter_shapes(config)) {
    store.insert(name, Tensor::zeros(shape, true));
  }
  return store;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("missing parameter '" + name + "'");
  return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("missing parameter '" + name + "'");
  return it->second;
}

ParamStore ParamStore::clone(bool requires_grad) const {
  ParamStore out;
  for (const auto& [name, t] : params_) {
    out.insert(name, Tensor::from(t.shape(), t.values(), requires_grad));
  }
  return out;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

const Tensor& HeadOutputs::feature(Branch branch, int conv, int level) const {
  const auto& maps = branch == Branch::cls ? cls_features : box_features;
  if (conv < 1 || conv > static_cast<int>(maps.size()) || level < 0 ||
      level >= num_levels()) {
    throw DimensionError("feature index (m=" + std::to_string(conv) +
                         ", k=" + std::to_string(level) + ") out of range");
  }
  return maps[static_cast<std::size_t>(conv - 1)][static_cast<std::size_t>(level)];
}

HeadOutputs forward(const Tensor& images, const HeadConfig& config, const ParamStore& params) {
  config.validate();
  Tensor x = images;
  if (x.dim() == 3) x = reshape(x, Shape{1, x.extent(0), x.extent(1), x.extent(2)});
  if (x.dim() != 4 || x.extent(1) != 3) {
    throw DimensionError("forward: expected [3,H,W] or [B,3,H,W], got " + to_string(x.shape()));
  }
  const Index h = x.extent(2), w = x.extent(3);
  const int largest = config.largest_stride();
  if (h % largest != 0 || w % largest != 0) {
    throw DimensionError("forward: image " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible by stride " + std::to_string(largest));
  }

  HeadOutputs out;
  out.image_height = h;
  out.image_width = w;
  out.cls_features.assign(static_cast<std::size_t>(config.num_convs), {});
  out.box_features.assign(static_cast<std::size_t>(config.num_convs), {});

  Tensor trunk = relu(conv_block(x, params, "backbone.stem", 2, 1));
  for (int k = 0; k < config.num_levels; ++k) {
    trunk = relu(conv_block(trunk, params, level_name("backbone.down", k), 2, 1));
    const Tensor level = relu(conv_block(trunk, params, level_name("backbone.proj", k), 1, 1));
    out.strides.push_back(config.stride(k));

    Tensor cls = level, box = level;
    for (int m = 1; m <= config.num_convs; ++m) {
      cls = relu(conv_block(cls, params, level_name("head.cls", m), 1, 1));
      box = relu(conv_block(box, params, level_name("head.box", m), 1, 1));
      out.cls_features[static_cast<std::size_t>(m - 1)].push_back(cls);
      out.box_features[static_cast<std::size_t>(m - 1)].push_back(box);
    }
    out.cls_logits.push_back(conv_block(cls, params, "head.cls_pred", 1, 1));
    out.box_deltas.push_back(softplus(conv_block(box, params, "head.box_pred", 1, 1)));
  }
  return out;
}

}  // namespace ad
