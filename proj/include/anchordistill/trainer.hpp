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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "anchordistill/config.hpp"
#include "anchordistill/detection.hpp"

namespace ad {

struct MetricsRecord {
  int step = 0;
  double det = 0, anchor = 0, distance = 0, loc = 0, total = 0;
  double wall_time = 0;  // seconds since the run started; kept out of metrics.jsonl
};

struct EvalRecord {
  std::string split;
  std::int64_t first = 0;
  std::int64_t count = 0;
  ApReport ap;
};

struct DataSplits {
  std::vector<SceneSample> train;  // indices [0, train_count)
  std::vector<SceneSample> val;    // indices [train_count, train_count + val_count)
};

DataSplits make_splits(const RunConfig& config);

struct TrainOptions {
  std::optional<std::filesystem::path> teacher;     // required for distill mode
  std::optional<std::filesystem::path> init_from;   // start from these weights
  std::optional<double> divergence_limit;           // default 1e6
};

struct TrainOutcome {
  std::filesystem::path checkpoint;
  std::vector<MetricsRecord> history;
  EvalRecord val;
};

/// Detection-loss-only training of the teacher head; writes teacher.ckpt,
/// metrics.jsonl, timing.jsonl, run.json and summary.json into `dir`.
TrainOutcome train_teacher(const RunConfig& config, std::uint64_t seed,
                           const std::filesystem::path& dir, const DataSplits* data = nullptr);

/// Baseline (config.mode == baseline) or distilled (mode == distill) student.
TrainOutcome train_student(const RunConfig& config, std::uint64_t seed,
                           const std::filesystem::path& dir, const TrainOptions& options = {},
                           const DataSplits* data = nullptr);

EvalRecord evaluate(const HeadConfig& head, const ParamStore& params,
                    std::span<const SceneSample> samples, const EvalConfig& eval,
                    std::string split = "custom", std::int64_t first = 0);

/// Scores a checkpoint on scene indices [first, first + count).
EvalRecord evaluate_checkpoint(const std::filesystem::path& checkpoint, const RunConfig& config,
                               std::int64_t first, std::int64_t count,
                               std::string split = "custom");

struct AblationCell {
  std::string group;  // "component", "tau_d" or "tau_l"
  std::string label;
  bool baseline = false;
  DistillConfig distill;
  std::vector<double> ap;  // one entry per seed
  bool finite = true;

  double mean_ap() const;
};

struct AblationReport {
  std::filesystem::path teacher;
  std::vector<std::uint64_t> seeds;
  std::vector<AblationCell> cells;

  const AblationCell& cell(const std::string& label) const;
};

/// Component grid {baseline, +anchor, +distance, +anchor+distance, +all} and
/// one-at-a-time temperature sweeps over config.tau_grid, every cell over
/// config.seeds. Trains a teacher first when none is given. Writes
/// report.txt and report.json into config.out_dir.
AblationReport ablation_run(const RunConfig& config,
                            const std::optional<std::filesystem::path>& teacher = std::nullopt);

std::string format_report(const AblationReport& report);

}  // namespace ad
