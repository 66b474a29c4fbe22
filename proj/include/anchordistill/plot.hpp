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

#include <filesystem>
#include <string>
#include <vector>

namespace ad {

struct LossSeries {
  std::string label;
  std::vector<double> steps;
  std::vector<double> values;
};

struct ApBar {
  std::string label;
  double value = 0.0;
};

// Reads `key` (e.g. "total") from every row of a metrics.jsonl file.
LossSeries read_loss_series(const std::filesystem::path& metrics, const std::string& key,
                            std::string label = {});

// One bar per cell of a report.json written by ablation_run.
std::vector<ApBar> read_report_bars(const std::filesystem::path& report);

// Log-scale y axis when every value is positive.
std::string render_loss_svg(const std::vector<LossSeries>& series, const std::string& title);
std::string render_ap_svg(const std::vector<ApBar>& bars, const std::string& title);

}  // namespace ad
