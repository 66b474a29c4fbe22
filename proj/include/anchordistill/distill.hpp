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

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "anchordistill/head.hpp"
#include "anchordistill/masks.hpp"
#include "anchordistill/ops.hpp"

namespace ad {

struct BranchSet {
  bool cls = true;
  bool box = true;

  bool contains(Branch b) const { return b == Branch::cls ? cls : box; }
  friend bool operator==(const BranchSet&, const BranchSet&) = default;
};

// Softmax domain of the pixel-anchor distance term.
enum class DistanceAxis { anchors, pixels };
// Softmax domain of the box-branch alignment term.
enum class LocDomain { spatial, channels };

struct DistillConfig {
  double lambda_a = 10.0;
  double lambda_d = 1000.0;
  double lambda_l = 1.0;
  double tau_d = 0.1;
  double tau_l = 0.1;
  BranchSet anchor_branches;
  BranchSet distance_branches;
  PoolMode pool_mode = PoolMode::masked_mean;
  DistanceAxis distance_axis = DistanceAxis::anchors;
  LocDomain loc_domain = LocDomain::spatial;

  void validate() const;
};

/// Category anchors of one (conv, level) feature map. Absent slots have no entry.
struct AnchorSet {
  int level = 0;
  int conv = 0;
  std::map<int, Tensor> anchors;

  bool present(int slot) const { return anchors.count(slot) > 0; }
  std::vector<int> present_slots() const;
  Index channels() const;
};

AnchorSet compute_category_anchors(const Tensor& feature, const CategoryMaskSet& masks,
                                   PoolMode mode = PoolMode::masked_mean, int conv = 0);

/// Mean over pairs of the slot-mean of (1 - cos(student, teacher)).
/// Teacher anchors are detached.
Tensor anchor_loss(std::span<const AnchorSet> student, std::span<const AnchorSet> teacher);

/// Cosine of every pixel against each present anchor, in slot order:
/// [P,H,W] for an unbatched feature, [B,P,H,W] for a batched one.
Tensor pixel_anchor_similarity(const Tensor& feature, const AnchorSet& anchors);

/// KL(student || teacher) between temperature softmaxes of the pixel-anchor
/// similarities, averaged over pixels and then over (conv, level) pairs.
/// `degenerate` (optional) counts pairs with a single present anchor.
Tensor distance_loss(std::span<const Tensor> student_features,
                     std::span<const AnchorSet> student_anchors,
                     std::span<const Tensor> teacher_features,
                     std::span<const AnchorSet> teacher_anchors, double tau_d,
                     DistanceAxis axis = DistanceAxis::anchors, int* degenerate = nullptr);

/// KL between per-channel spatial softmaxes of box-branch features, averaged
/// over channels and then over pairs.
Tensor loc_loss(std::span<const Tensor> student_box_features,
                std::span<const Tensor> teacher_box_features, double tau_l,
                LocDomain domain = LocDomain::spatial);

struct LossBreakdown {
  Tensor total;
  double det = 0, anchor = 0, distance = 0, loc = 0, total_value = 0;
};

/// det + lambda_a anchor + lambda_d distance + lambda_l loc. Terms with a
/// zero coefficient are left out of the graph. Throws NumericAbort naming
/// the first non-finite component.
LossBreakdown total_distill_loss(const Tensor& det, const Tensor& anchor, const Tensor& distance,
                                 const Tensor& loc, const DistillConfig& config);

/// Teacher conv index paired with each student conv (1-based): student conv m
/// maps to the teacher conv at the same relative depth.
std::vector<std::pair<int, int>> conv_pairing(int student_convs, int teacher_convs);

struct DistillTerms {
  Tensor anchor;
  Tensor distance;
  Tensor loc;
  int degenerate_pairs = 0;
};

/// All three terms for one batch. `masks[k]` is the mask set of level k and
/// feeds both networks. Terms whose coefficient is zero come back as constant 0.
DistillTerms distill_terms(const HeadOutputs& student, const HeadOutputs& teacher,
                           std::span<const CategoryMaskSet> masks, const DistillConfig& config);

}  // namespace ad
