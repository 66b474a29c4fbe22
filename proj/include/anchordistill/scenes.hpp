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

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "anchordistill/box.hpp"
#include "anchordistill/tensor.hpp"

namespace ad {

struct SceneSpec {
  int height = 64;
  int width = 64;
  int num_categories = 3;
  int min_objects = 1;
  int max_objects = 3;
  int min_box = 12;  // pixels per side
  int max_box = 28;
  double noise_std = 0.05;
  std::uint64_t seed = 0;

  // Throws ParameterError when ranges are inverted or boxes cannot fit.
  void validate() const;
};

struct SceneSample {
  Tensor image;  // [3,H,W], values in [0,1]
  std::vector<BoundingBox> boxes;
  std::vector<int> labels;  // 1..num_categories, parallel to boxes
  int placement_warnings = 0;
};

inline constexpr double kBackgroundLevel = 0.5;

// RGB fill of a category before noise.
std::array<double, 3> category_color(int category, int num_categories);

SceneSample generate_scene(const SceneSpec& spec, std::int64_t index);

/// Samples first .. first + n - 1.
std::vector<SceneSample> generate_dataset(const SceneSpec& spec, std::int64_t n,
                                          std::int64_t first = 0);

/// Packs images into a [N,3,H,W] tensor.
Tensor batch_images(std::span<const SceneSample* const> samples);

// Binary dump: 16-byte header (magic "ADSCENES", u16 version, u16 channels,
// u16 height, u16 width), then per record the image as little-endian float32
// planes, u32 box count, float32 (x1,y1,x2,y2) per box and u16 labels.
void write_scene_dump(const std::filesystem::path& path, std::span<const SceneSample> samples);
std::vector<SceneSample> read_scene_dump(const std::filesystem::path& path);

}  // namespace ad
