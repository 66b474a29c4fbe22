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

#include <functional>
#include <span>

#include "anchordistill/tensor.hpp"

namespace ad {

struct GradCheckReport {
  double rel_error = 0.0;     // the figure finite_difference_check returns
  double max_abs_error = 0.0; // largest |analytic - numeric|, undiscounted
  double max_gradient = 0.0;  // largest |analytic|
  Index entries = 0;
};

/// Central-difference gradient check. Runs `loss` once with backward, then
/// perturbs every entry of every leaf by +-h. Returns the largest relative
/// error over all entries: the part of |analytic - numeric| above the
/// rounding resolution of the quotient (32 ulp of the loss, over h), divided
/// by max(|analytic|, |numeric|, 1e-8).
/// Leaves must be requires_grad leaf tensors; their grads are reset first.
double finite_difference_check(const std::function<Tensor()>& loss, std::span<Tensor> leaves,
                               double h = 1e-5);

GradCheckReport gradient_check_report(const std::function<Tensor()>& loss, std::span<Tensor> leaves,
                                      double h = 1e-5);

/// Single-input form: f(x) must be a scalar tensor.
double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                               double h = 1e-5);

}  // namespace ad
