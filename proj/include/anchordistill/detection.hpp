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
#include <vector>

#include "anchordistill/box.hpp"
#include "anchordistill/head.hpp"
#include "anchordistill/scenes.hpp"

namespace ad {

inline constexpr double kFocalAlpha = 0.25;
inline constexpr double kFocalGamma = 2.0;

/// Level responsible for a box in the detection loss: longer side in
/// [0,32) -> 0, [32,64) -> 1, ... with the last level taking the rest.
int assign_level(const BoundingBox& box, int num_levels);

/// Pixel center of cell index i on a grid of the given stride.
inline double cell_center(Index i, int stride) { return (static_cast<double>(i) + 0.5) * stride; }

struct LevelTargets {
  Tensor cls;     // [B,K,H,W] one-hot at positive cells
  Tensor box;     // [B,4,H,W] (l,t,r,b) in stride units
  Tensor weight;  // [B,4,H,W] 1/4 at positive cells, 0 elsewhere
  Index positives = 0;
};

/// FCOS-style assignment: a cell is positive when its center lies strictly
/// inside a box assigned to that level; ties go to the smallest box.
std::vector<LevelTargets> build_targets(const HeadOutputs& outputs,
                                        std::span<const SceneSample* const> samples,
                                        int num_categories);

struct DetectionLoss {
  Tensor total;
  Tensor classification;
  Tensor regression;
  Index positives = 0;
};

DetectionLoss detection_loss(const HeadOutputs& outputs,
                             std::span<const SceneSample* const> samples);

struct Detection {
  BoundingBox box;  // box.category holds the predicted category
  double score = 0;
};

std::vector<Detection> decode_predictions(const HeadOutputs& outputs, Index image,
                                          double score_threshold, double nms_iou,
                                          std::size_t max_detections = 100);

/// Greedy per-category NMS, highest score first.
std::vector<Detection> non_maximum_suppression(std::vector<Detection> detections, double iou);

struct ApReport {
  double mean_ap = 0;
  std::map<int, double> per_category;
};

/// 11-point interpolated AP at the IoU threshold, averaged over categories
/// that occur in the ground truth. Predictions and truth are per image.
ApReport evaluate_toy_ap(std::span<const std::vector<Detection>> predictions,
                         std::span<const std::vector<BoundingBox>> ground_truth,
                         double iou_threshold = 0.5);

}  // namespace ad
