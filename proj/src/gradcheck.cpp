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

#include "anchordistill/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "anchordistill/errors.hpp"

namespace ad {

namespace {
constexpr double kRoundingUlps = 32.0;
}  // namespace

GradCheckReport gradient_check_report(const std::function<Tensor()>& loss, std::span<Tensor> leaves,
                                      double h) {
  if (!(h > 0.0 && h <= 1e-2)) throw ParameterError("finite_difference_check: h in (0, 1e-2]");
  for (Tensor& leaf : leaves) {
    if (!leaf.requires_grad()) throw StateError("finite_difference_check: leaf without grad");
    leaf.zero_grad();
  }
  loss().backward();

  GradCheckReport report;
  for (Tensor& leaf : leaves) {
    const Vector analytic = leaf.grad();
    Vector& x = leaf.mutable_values();
    for (Index i = 0; i < x.size(); ++i) {
      const double saved = x[i];
      x[i] = saved + h;
      const double up = loss().item();
      x[i] = saved - h;
      const double down = loss().item();
      x[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      // Rounding in up and down bounds what the quotient can resolve.
      const double resolution =
          kRoundingUlps * std::numeric_limits<double>::epsilon() * std::max({std::abs(up), std::abs(down), 1.0}) / h;
      const double excess = std::max(0.0, std::abs(analytic[i] - numeric) - resolution);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      report.rel_error = std::max(report.rel_error, excess / denom);
      report.max_abs_error = std::max(report.max_abs_error, std::abs(analytic[i] - numeric));
      report.max_gradient = std::max(report.max_gradient, std::abs(analytic[i]));
      ++report.entries;
    }
  }
  return report;
}

double finite_difference_check(const std::function<Tensor()>& loss, std::span<Tensor> leaves,
                               double h) {
  return gradient_check_report(loss, leaves, h).rel_error;
}

double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                               double h) {
  Tensor leaves[] = {x};
  return finite_difference_check([&] { return f(x); }, leaves, h);
}

}  // namespace ad
