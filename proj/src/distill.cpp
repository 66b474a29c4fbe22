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

#include "anchordistill/distill.hpp"

#include <cmath>

#include "anchordistill/errors.hpp"

namespace ad {

namespace {

Tensor zero() { return Tensor::scalar(0.0); }

Tensor accumulate(const Tensor& acc, const Tensor& term) { return acc.defined() ? acc + term : term; }

void require_pairs(std::size_t a, std::size_t b, std::size_t c, std::size_t d, const char* op) {
  if (a != b || a != c || a != d) throw ConfigError(std::string(op) + ": unmatched (m,k) pairs");
}

// [B?,P,H,W] -> distribution along the chosen domain; returns (tensor, axis).
std::pair<Tensor, Index> distance_distribution(const Tensor& sims, double tau, DistanceAxis axis) {
  const bool batched = sims.dim() == 4;
  const Index lead = batched ? sims.extent(0) : 1;
  const Index p = sims.extent(-3), hw = sims.extent(-2) * sims.extent(-1);
  if (axis == DistanceAxis::anchors) {
    return {softmax_temperature(sims, tau, batched ? 1 : 0), batched ? 1 : 0};
  }
  return {softmax_temperature(reshape(sims, Shape{lead, p, hw}), tau, 2), 2};
}

}  // namespace

void DistillConfig::validate() const {
  if (lambda_a < 0 || lambda_d < 0 || lambda_l < 0) {
    throw ConfigError("distill: loss coefficients must be non-negative");
  }
  if (!(tau_d > 0) || !(tau_l > 0)) throw ConfigError("distill: temperatures must be positive");
}

std::vector<int> AnchorSet::present_slots() const {
  std::vector<int> slots;
  for (const auto& [slot, t] : anchors) slots.push_back(slot);
  return slots;
}

Index AnchorSet::channels() const {
  return anchors.empty() ? 0 : anchors.begin()->second.extent(0);
}

AnchorSet compute_category_anchors(const Tensor& feature, const CategoryMaskSet& masks,
                                   PoolMode mode, int conv) {
  const GridSize g = masks.grid();
  if (feature.extent(-2) != g.height || feature.extent(-1) != g.width) {
    throw DimensionError("compute_category_anchors: feature grid " + to_string(feature.shape()) +
                         " does not match mask grid");
  }
  AnchorSet set;
  set.level = masks.level();
  set.conv = conv;
  for (int slot = 1; slot <= masks.slot_count(); ++slot) {
    if (!masks.present(slot)) continue;
    Tensor mask = masks.mask(slot);
    if (feature.dim() == 3) {
      if (masks.batch() != 1) throw DimensionError("compute_category_anchors: batch mismatch");
      mask = reshape(mask, Shape{g.height, g.width});
    }
    PoolResult pooled = masked_average_pool(feature, mask, mode);
    if (pooled.present) set.anchors.emplace(slot, pooled.value);
  }
  return set;
}

Tensor anchor_loss(std::span<const AnchorSet> student, std::span<const AnchorSet> teacher) {
  if (student.size() != teacher.size()) throw ConfigError("anchor_loss: unmatched (m,k) pairs");
  if (student.empty()) return zero();
  Tensor total;
  for (std::size_t i = 0; i < student.size(); ++i) {
    const AnchorSet& s = student[i];
    const AnchorSet& t = teacher[i];
    if (s.present_slots() != t.present_slots()) {
      throw ConfigError("anchor_loss: student and teacher present slots differ");
    }
    if (s.anchors.empty()) continue;
    if (s.channels() != t.channels()) {
      throw ConfigError("anchor_loss: student has " + std::to_string(s.channels()) +
                        " channels, teacher " + std::to_string(t.channels()));
    }
    Tensor pair;
    for (const auto& [slot, a] : s.anchors) {
      Tensor c = cosine_similarity(a, t.anchors.at(slot).detach());
      pair = accumulate(pair, add_scalar(scale(c, -1.0), 1.0));
    }
    total = accumulate(total, scale(pair, 1.0 / static_cast<double>(s.anchors.size())));
  }
  if (!total.defined()) return zero();
  return scale(total, 1.0 / static_cast<double>(student.size()));
}

Tensor pixel_anchor_similarity(const Tensor& feature, const AnchorSet& anchors) {
  if (anchors.anchors.empty()) throw DimensionError("pixel_anchor_similarity: no present anchors");
  std::vector<Tensor> rows;
  for (const auto& [slot, a] : anchors.anchors) rows.push_back(a);
  return channel_cosine(feature, stack(rows));
}

Tensor distance_loss(std::span<const Tensor> student_features,
                     std::span<const AnchorSet> student_anchors,
                     std::span<const Tensor> teacher_features,
                     std::span<const AnchorSet> teacher_anchors, double tau_d, DistanceAxis axis,
                     int* degenerate) {
  require_pairs(student_features.size(), student_anchors.size(), teacher_features.size(),
                teacher_anchors.size(), "distance_loss");
  if (!(tau_d > 0)) throw ParameterError("distance_loss: tau_d must be positive");
  if (student_features.empty()) return zero();
  Tensor total;
  for (std::size_t i = 0; i < student_features.size(); ++i) {
    const AnchorSet& sa = student_anchors[i];
    const AnchorSet& ta = teacher_anchors[i];
    if (sa.present_slots() != ta.present_slots()) {
      throw ConfigError("distance_loss: student and teacher present slots differ");
    }
    if (student_features[i].shape() != teacher_features[i].shape()) {
      throw ConfigError("distance_loss: feature shapes differ");
    }
    if (sa.anchors.size() <= 1 && axis == DistanceAxis::anchors) {
      if (degenerate) ++*degenerate;
      continue;  // softmax over one anchor is constant 1
    }
    const Tensor s_sim = pixel_anchor_similarity(student_features[i], sa);
    AnchorSet detached = ta;
    for (auto& [slot, a] : detached.anchors) a = a.detach();
    const Tensor t_sim = pixel_anchor_similarity(teacher_features[i].detach(), detached);
    auto [s_dist, ax] = distance_distribution(s_sim, tau_d, axis);
    auto [t_dist, ax_t] = distance_distribution(t_sim, tau_d, axis);
    total = accumulate(total, kl_divergence(s_dist, t_dist.detach(), ax));
  }
  if (!total.defined()) return zero();
  return scale(total, 1.0 / static_cast<double>(student_features.size()));
}

Tensor loc_loss(std::span<const Tensor> student_box_features,
                std::span<const Tensor> teacher_box_features, double tau_l, LocDomain domain) {
  if (student_box_features.size() != teacher_box_features.size()) {
    throw ConfigError("loc_loss: unmatched (m,k) pairs");
  }
  if (!(tau_l > 0)) throw ParameterError("loc_loss: tau_l must be positive");
  if (student_box_features.empty()) return zero();
  Tensor total;
  for (std::size_t i = 0; i < student_box_features.size(); ++i) {
    const Tensor& s = student_box_features[i];
    const Tensor t = teacher_box_features[i].detach();
    if (s.shape() != t.shape()) {
      throw ConfigError("loc_loss: feature shapes differ: " + to_string(s.shape()) + " vs " +
                        to_string(t.shape()));
    }
    Tensor term;
    if (domain == LocDomain::spatial) {
      const Index lead = s.dim() == 4 ? s.extent(0) : 1;
      const Shape flat{lead, s.extent(-3), s.extent(-2) * s.extent(-1)};
      term = kl_divergence(softmax_temperature(reshape(s, flat), tau_l, 2),
                           softmax_temperature(reshape(t, flat), tau_l, 2), 2);
    } else {
      const Index axis = s.dim() == 4 ? 1 : 0;
      term = kl_divergence(softmax_temperature(s, tau_l, axis),
                           softmax_temperature(t, tau_l, axis), axis);
    }
    total = accumulate(total, term);
  }
  return scale(total, 1.0 / static_cast<double>(student_box_features.size()));
}

LossBreakdown total_distill_loss(const Tensor& det, const Tensor& anchor, const Tensor& distance,
                                 const Tensor& loc, const DistillConfig& config) {
  config.validate();
  const std::pair<const char*, const Tensor*> parts[] = {
      {"L_det", &det}, {"L_anchor", &anchor}, {"L_distance", &distance}, {"L_loc", &loc}};
  for (const auto& [name, t] : parts) {
    if (!t->defined() || t->size() != 1) {
      throw DimensionError(std::string("total_distill_loss: ") + name + " is not a scalar");
    }
    if (!std::isfinite(t->item())) {
      throw NumericAbort(name, std::string("non-finite ") + name + " (" +
                                   std::to_string(t->item()) + ")");
    }
  }
  LossBreakdown out;
  out.det = det.item();
  out.anchor = anchor.item();
  out.distance = distance.item();
  out.loc = loc.item();
  out.total = det;
  if (config.lambda_a != 0) out.total = out.total + anchor * config.lambda_a;
  if (config.lambda_d != 0) out.total = out.total + distance * config.lambda_d;
  if (config.lambda_l != 0) out.total = out.total + loc * config.lambda_l;
  out.total_value = out.total.item();
  if (!std::isfinite(out.total_value)) throw NumericAbort("total", "non-finite total loss");
  return out;
}

std::vector<std::pair<int, int>> conv_pairing(int student_convs, int teacher_convs) {
  if (student_convs < 1 || teacher_convs < student_convs) {
    throw ConfigError("conv_pairing: teacher needs at least as many convs as the student");
  }
  std::vector<std::pair<int, int>> pairs;
  for (int m = 1; m <= student_convs; ++m) {
    pairs.emplace_back(m, (m * teacher_convs + student_convs - 1) / student_convs);
  }
  return pairs;
}

DistillTerms distill_terms(const HeadOutputs& student, const HeadOutputs& teacher,
                           std::span<const CategoryMaskSet> masks, const DistillConfig& config) {
  config.validate();
  if (student.num_levels() != teacher.num_levels() ||
      static_cast<int>(masks.size()) != student.num_levels()) {
    throw ConfigError("distill_terms: level count mismatch");
  }
  const auto pairs = conv_pairing(student.num_convs(), teacher.num_convs());
  const Index sc = student.feature(Branch::cls, 1, 0).extent(1);
  const Index tc = teacher.feature(Branch::cls, pairs.front().second, 0).extent(1);
  if (sc != tc) {
    throw ConfigError("distill_terms: student head has " + std::to_string(sc) +
                      " channels, teacher " + std::to_string(tc));
  }

  DistillTerms terms;
  terms.anchor = zero();
  terms.distance = zero();
  terms.loc = zero();
  const bool want_anchor = config.lambda_a != 0;
  const bool want_distance = config.lambda_d != 0;
  Tensor anchor_sum, distance_sum;
  for (Branch branch : {Branch::cls, Branch::box}) {
    const bool anchor_on = want_anchor && config.anchor_branches.contains(branch);
    const bool distance_on = want_distance && config.distance_branches.contains(branch);
    if (!anchor_on && !distance_on) continue;
    std::vector<AnchorSet> s_anchors, t_anchors;
    std::vector<Tensor> s_feats, t_feats;
    for (const auto& [sm, tm] : pairs) {
      for (int k = 0; k < student.num_levels(); ++k) {
        const Tensor& sf = student.feature(branch, sm, k);
        const Tensor tf = teacher.feature(branch, tm, k).detach();
        const auto& mk = masks[static_cast<std::size_t>(k)];
        s_anchors.push_back(compute_category_anchors(sf, mk, config.pool_mode, sm));
        t_anchors.push_back(compute_category_anchors(tf, mk, config.pool_mode, tm));
        s_feats.push_back(sf);
        t_feats.push_back(tf);
      }
    }
    if (anchor_on) anchor_sum = accumulate(anchor_sum, anchor_loss(s_anchors, t_anchors));
    if (distance_on) {
      distance_sum = accumulate(
          distance_sum, distance_loss(s_feats, s_anchors, t_feats, t_anchors, config.tau_d,
                                      config.distance_axis, &terms.degenerate_pairs));
    }
  }
  if (anchor_sum.defined()) terms.anchor = anchor_sum;
  if (distance_sum.defined()) terms.distance = distance_sum;

  if (config.lambda_l != 0) {
    std::vector<Tensor> s_box, t_box;
    for (const auto& [sm, tm] : pairs) {
      for (int k = 0; k < student.num_levels(); ++k) {
        s_box.push_back(student.feature(Branch::box, sm, k));
        t_box.push_back(teacher.feature(Branch::box, tm, k));
      }
    }
    terms.loc = loc_loss(s_box, t_box, config.tau_l, config.loc_domain);
  }
  return terms;
}

}  // namespace ad
