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

#include <span>

#include "anchordistill/tensor.hpp"

namespace ad {

// Elementwise arithmetic on equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor relu(const Tensor& a);
Tensor softplus(const Tensor& a);

/// Cross-correlation of [C_in,H,W] or [N,C_in,H,W] with weight [C_out,C_in,k,k].
/// Output keeps the rank of `input`.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int padding);

enum class PoolMode { masked_mean, full_area };

struct PoolResult {
  Tensor value;
  bool present = false;
};

/// Average of `feature` ([C,H,W] or [N,C,H,W]) over cells where `mask`
/// ([H,W] or [N,H,W]) is 1. With masked_mean the divisor is the mask area,
/// with full_area it is the number of cells. An empty mask yields zeros and
/// present == false.
PoolResult masked_average_pool(const Tensor& feature, const Tensor& mask,
                               PoolMode mode = PoolMode::masked_mean);

/// Stacks equally shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> parts);

/// a.b / (max(|a|,eps) * max(|b|,eps)) for two vectors of equal length.
Tensor cosine_similarity(const Tensor& a, const Tensor& b, double eps = 1e-8);

/// Cosine between every pixel vector of `feature` ([C,H,W] or [N,C,H,W]) and
/// every row of `anchors` ([P,C]). Result is [P,H,W] or [N,P,H,W]; pixels are
/// never compared with each other.
Tensor channel_cosine(const Tensor& feature, const Tensor& anchors, double eps = 1e-8);

/// softmax(logits / tau) along `axis`, max-subtracted.
Tensor softmax_temperature(const Tensor& logits, double tau, Index axis);

inline constexpr double kKlSmoothing = 1e-12;

/// Mean over slices along `axis` of sum_n p log((p+eps)/(q+eps)).
/// Both inputs must be distributions along `axis` (tolerance 1e-6).
Tensor kl_divergence(const Tensor& p, const Tensor& q, Index axis);

/// Summed sigmoid focal loss against 0/1 targets of the same shape.
Tensor sigmoid_focal_loss(const Tensor& logits, const Tensor& targets, double alpha,
                          double gamma);

/// sum(weight * |pred - target|); target and weight are constants.
Tensor weighted_l1(const Tensor& pred, const Tensor& target, const Tensor& weight);

}  // namespace ad
