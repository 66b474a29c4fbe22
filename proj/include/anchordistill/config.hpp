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
#include <filesystem>
#include <string>
#include <vector>

#include "anchordistill/distill.hpp"
#include "anchordistill/head.hpp"
#include "anchordistill/scenes.hpp"

namespace ad {

enum class ClipScope { global, tensor };

struct OptimConfig {
  double lr = 0.01;
  double momentum = 0.9;
  int steps = 2000;
  int batch_size = 8;
  double clip_norm = 0.0;  // gradient-norm clip, 0 disables
  ClipScope clip_scope = ClipScope::global;  // whole store, or each tensor on its own
  double weight_decay = 0.0;  // L2 coefficient, added to the clipped gradient
};

struct EvalConfig {
  double score_threshold = 0.05;
  double nms_iou = 0.5;
};

enum class RunMode { teacher, baseline, distill, ablation };
enum class MaskLevels { all, assigned };

struct RunConfig {
  SceneSpec scene;
  int train_count = 400;
  int val_count = 100;
  HeadConfig student;
  HeadConfig teacher;
  OptimConfig optim;
  OptimConfig teacher_optim;
  DistillConfig distill;
  MaskLevels mask_levels = MaskLevels::all;
  EvalConfig eval;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<double> tau_grid{0.01, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0};
  int jobs = 1;
  int log_every = 50;
  RunMode mode = RunMode::distill;
  std::filesystem::path out_dir = "runs";

  RunConfig();
  // Throws ConfigError.
  void validate() const;
};

/// Sets one `section.key` field from text; throws ConfigError on unknown
/// keys or malformed values.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

/// Reads `key = value` lines ('#' starts a comment) on top of the defaults.
RunConfig load_run_config(const std::filesystem::path& path);
void apply_config_text(RunConfig& config, const std::string& text, const std::string& origin);

/// Every field as `key = value` lines in a fixed order; round-trips through
/// apply_config_text.
std::string to_config_text(const RunConfig& config);
std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& config);

/// Shortest text that reads back as the same double.
std::string format_number(double value);

std::string to_string(RunMode mode);

}  // namespace ad
