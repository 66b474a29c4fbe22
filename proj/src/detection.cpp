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

#include "anchordistill/detection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "anchordistill/errors.hpp"
#include "anchordistill/ops.hpp"

namespace ad {

int assign_level(const BoundingBox& box, int num_levels) {
  const double longer = std::max(box.width(), box.height());
  int level = 0;
  double upper = 32.0;
  while (level < num_levels - 1 && longer >= upper) {
    ++level;
    upper *= 2.0;
  }
  return level;
}

std::vector<LevelTargets> build_targets(const HeadOutputs& outputs,
                                        std::span<const SceneSample* const> samples,
                                        int num_categories) {
  const Index batch = outputs.batch();
  if (static_cast<Index>(samples.size()) != batch) {
    throw DimensionError("build_targets: " + std::to_string(samples.size()) +
                         " samples for a batch of " + std::to_string(batch));
  }
  std::vector<LevelTargets> targets;
  for (int k = 0; k < outputs.num_levels(); ++k) {
    const int stride = outputs.strides[static_cast<std::size_t>(k)];
    const Index h = outputs.cls_logits[static_cast<std::size_t>(k)].extent(2);
    const Index w = outputs.cls_logits[static_cast<std::size_t>(k)].extent(3);
    const Index hw = h * w;
    Vector cls = Vector::Zero(batch * num_categories * hw);
    Vector box = Vector::Zero(batch * 4 * hw);
    Vector weight = Vector::Zero(batch * 4 * hw);
    Index positives = 0;
    for (Index b = 0; b < batch; ++b) {
      const auto& boxes = samples[static_cast<std::size_t>(b)]->boxes;
      for (Index y = 0; y < h; ++y) {
        for (Index x = 0; x < w; ++x) {
          const double cx = cell_center(x, stride), cy = cell_center(y, stride);
          const BoundingBox* best = nullptr;
          for (const auto& bb : boxes) {
            if (bb.category < 1 || bb.category > num_categories) {
              throw ValidationError("label outside [1, num_categories]");
            }
            if (assign_level(bb, outputs.num_levels()) != k) continue;
            if (!(cx > bb.x1 && cx < bb.x2 && cy > bb.y1 && cy < bb.y2)) continue;
            if (!best || bb.area() < best->area()) best = &bb;
          }
          if (!best) continue;
          ++positives;
          const Index cell = y * w + x;
          cls[(b * num_categories + best->category - 1) * hw + cell] = 1.0;
          const double ltrb[4] = {cx - best->x1, cy - best->y1, best->x2 - cx, best->y2 - cy};
          for (Index c = 0; c < 4; ++c) {
            box[(b * 4 + c) * hw + cell] = ltrb[c] / stride;
            weight[(b * 4 + c) * hw + cell] = 0.25;
          }
        }
      }
    }
    LevelTargets t;
    t.cls = Tensor::from(Shape{batch, num_categories, h, w}, std::move(cls));
    t.box = Tensor::from(Shape{batch, 4, h, w}, std::move(box));
    t.weight = Tensor::from(Shape{batch, 4, h, w}, std::move(weight));
    t.positives = positives;
    targets.push_back(std::move(t));
  }
  return targets;
}

DetectionLoss detection_loss(const HeadOutputs& outputs,
                             std::span<const SceneSample* const> samples) {
  if (outputs.cls_logits.empty()) throw DimensionError("detection_loss: empty outputs");
  const int num_categories = static_cast<int>(outputs.cls_logits.front().extent(1));
  const auto targets = build_targets(outputs, samples, num_categories);
  Index positives = 0;
  for (const auto& t : targets) positives += t.positives;
  const double norm = 1.0 / static_cast<double>(std::max<Index>(1, positives));

  Tensor cls, reg;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    Tensor c = sigmoid_focal_loss(outputs.cls_logits[k], targets[k].cls, kFocalAlpha, kFocalGamma);
    Tensor r = weighted_l1(outputs.box_deltas[k], targets[k].box, targets[k].weight);
    cls = cls.defined() ? cls + c : c;
    reg = reg.defined() ? reg + r : r;
  }
  DetectionLoss loss;
  loss.classification = cls * norm;
  loss.regression = reg * norm;
  loss.total = loss.classification + loss.regression;
  loss.positives = positives;
  return loss;
}

std::vector<Detection> non_maximum_suppression(std::vector<Detection> detections, double iou_thr) {
  std::stable_sort(detections.begin(), detections.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> kept;
  for (const auto& d : detections) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.box.category == d.box.category && iou(k.box, d.box) > iou_thr;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

std::vector<Detection> decode_predictions(const HeadOutputs& outputs, Index image,
                                          double score_threshold, double nms_iou,
                                          std::size_t max_detections) {
  if (!(score_threshold > 0 && score_threshold < 1) || !(nms_iou > 0 && nms_iou < 1)) {
    throw ParameterError("decode_predictions: thresholds must lie in (0,1)");
  }
  if (image < 0 || image >= outputs.batch()) throw DimensionError("decode_predictions: image index");
  std::vector<Detection> candidates;
  for (int k = 0; k < outputs.num_levels(); ++k) {
    const Tensor& logits = outputs.cls_logits[static_cast<std::size_t>(k)];
    const Tensor& deltas = outputs.box_deltas[static_cast<std::size_t>(k)];
    const int stride = outputs.strides[static_cast<std::size_t>(k)];
    const Index nc = logits.extent(1), h = logits.extent(2), w = logits.extent(3), hw = h * w;
    const double* lv = logits.values().data() + image * nc * hw;
    const double* dv = deltas.values().data() + image * 4 * hw;
    for (Index c = 0; c < nc; ++c) {
      for (Index cell = 0; cell < hw; ++cell) {
        const double score = 1.0 / (1.0 + std::exp(-lv[c * hw + cell]));
        if (score < score_threshold) continue;
        const double cx = cell_center(cell % w, stride), cy = cell_center(cell / w, stride);
        Detection d;
        d.score = score;
        d.box = {cx - dv[cell] * stride, cy - dv[hw + cell] * stride,
                 cx + dv[2 * hw + cell] * stride, cy + dv[3 * hw + cell] * stride,
                 static_cast<int>(c) + 1};
        candidates.push_back(d);
      }
    }
  }
  auto kept = non_maximum_suppression(std::move(candidates), nms_iou);
  if (kept.size() > max_detections) kept.resize(max_detections);
  return kept;
}

ApReport evaluate_toy_ap(std::span<const std::vector<Detection>> predictions,
                         std::span<const std::vector<BoundingBox>> ground_truth,
                         double iou_threshold) {
  if (predictions.size() != ground_truth.size()) {
    throw DimensionError("evaluate_toy_ap: predictions and ground truth differ in image count");
  }
  std::map<int, Index> gt_count;
  for (const auto& boxes : ground_truth) {
    for (const auto& b : boxes) ++gt_count[b.category];
  }
  ApReport report;
  for (const auto& [category, total] : gt_count) {
    struct Scored {
      double score;
      std::size_t image;
      const BoundingBox* box;
    };
    std::vector<Scored> scored;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
      for (const auto& d : predictions[i]) {
        if (d.box.category == category) scored.push_back({d.score, i, &d.box});
      }
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const Scored& a, const Scored& b) { return a.score > b.score; });
    std::vector<std::vector<bool>> used(ground_truth.size());
    for (std::size_t i = 0; i < ground_truth.size(); ++i) used[i].assign(ground_truth[i].size(), false);

    std::vector<double> precision, recall;
    Index tp = 0, fp = 0;
    for (const auto& s : scored) {
      const auto& gts = ground_truth[s.image];
      double best = iou_threshold;
      std::ptrdiff_t match = -1;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (gts[g].category != category || used[s.image][g]) continue;
        const double o = iou(*s.box, gts[g]);
        if (o >= best) {
          best = o;
          match = static_cast<std::ptrdiff_t>(g);
        }
      }
      if (match >= 0) {
        used[s.image][static_cast<std::size_t>(match)] = true;
        ++tp;
      } else {
        ++fp;
      }
      precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
      recall.push_back(static_cast<double>(tp) / static_cast<double>(total));
    }
    double ap = 0.0;
    for (int r = 0; r <= 10; ++r) {
      const double level = r / 10.0;
      double best = 0.0;
      for (std::size_t i = 0; i < precision.size(); ++i) {
        if (recall[i] >= level - 1e-12) best = std::max(best, precision[i]);
      }
      ap += best;
    }
    report.per_category[category] = ap / 11.0;
  }
  if (!report.per_category.empty()) {
    double total = 0.0;
    for (const auto& [c, ap] : report.per_category) total += ap;
    report.mean_ap = total / static_cast<double>(report.per_category.size());
  }
  return report;
}

}  // namespace ad
