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

// anchordistill command-line harness.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "anchordistill/config.hpp"
#include "anchordistill/errors.hpp"
#include "anchordistill/plot.hpp"
#include "anchordistill/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitOther = 1;

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> settings;
  std::optional<double> lambda_a, lambda_d, lambda_l, tau_d, tau_l;
};

void add_common(CLI::App* cmd, CommonArgs& a, bool coefficients) {
  cmd->add_option("--config", a.config, "key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", a.seed, "run seed (default: first of run.seeds)");
  cmd->add_option("--out", a.out, "output directory");
  cmd->add_option("--set", a.settings, "override a config key, key=value (repeatable)");
  if (coefficients) {
    cmd->add_option("--lambda-a", a.lambda_a, "anchor loss weight");
    cmd->add_option("--lambda-d", a.lambda_d, "distance loss weight");
    cmd->add_option("--lambda-l", a.lambda_l, "localization loss weight");
    cmd->add_option("--tau-d", a.tau_d, "distance softmax temperature");
    cmd->add_option("--tau-l", a.tau_l, "localization softmax temperature");
  }
}

// File, then --set overrides, then coefficient flags, then --seed.
ad::RunConfig layered_config(const CommonArgs& a) {
  ad::RunConfig c = a.config.empty() ? ad::RunConfig{} : ad::load_run_config(a.config);
  for (const auto& s : a.settings) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ad::ConfigError("--set expects key=value, got '" + s + "'");
    ad::apply_setting(c, s.substr(0, eq), s.substr(eq + 1));
  }
  if (a.lambda_a) c.distill.lambda_a = *a.lambda_a;
  if (a.lambda_d) c.distill.lambda_d = *a.lambda_d;
  if (a.lambda_l) c.distill.lambda_l = *a.lambda_l;
  if (a.tau_d) c.distill.tau_d = *a.tau_d;
  if (a.tau_l) c.distill.tau_l = *a.tau_l;
  if (a.seed) c.seeds = {*a.seed};
  return c;
}

ad::RunConfig build_config(const CommonArgs& a, ad::RunMode mode, const std::string& default_out) {
  ad::RunConfig c = layered_config(a);
  c.mode = mode;
  if (!a.out.empty()) {
    c.out_dir = a.out;
  } else if (a.config.empty() || c.out_dir == "runs") {
    c.out_dir = std::filesystem::path("runs") / default_out;
  }
  c.validate();
  return c;
}

void print_eval(const ad::EvalRecord& e) {
  std::cout << e.split << " [" << e.first << ", " << e.first + e.count << ") toy_ap "
            << e.ap.mean_ap;
  for (const auto& [cat, ap] : e.ap.per_category) std::cout << "  c" << cat << '=' << ap;
  std::cout << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Category-anchor distillation for dense detection heads on synthetic scenes"};
  app.require_subcommand(1);

  CommonArgs teacher_args, student_args, distill_args, ablate_args, eval_args, config_args;
  std::string distill_teacher, ablate_teacher;

  auto* teacher_cmd = app.add_subcommand("train-teacher", "train the deep teacher head");
  add_common(teacher_cmd, teacher_args, false);

  auto* student_cmd = app.add_subcommand("train-student", "train the baseline student");
  add_common(student_cmd, student_args, false);

  auto* distill_cmd = app.add_subcommand("distill", "train the student with distillation");
  add_common(distill_cmd, distill_args, true);
  distill_cmd->add_option("--teacher", distill_teacher, "teacher checkpoint")
      ->required()
      ->check(CLI::ExistingFile);

  auto* ablate_cmd = app.add_subcommand("ablate", "run the component and temperature grids");
  add_common(ablate_cmd, ablate_args, true);
  ablate_cmd->add_option("--teacher", ablate_teacher, "reuse this teacher checkpoint")
      ->check(CLI::ExistingFile);
  int jobs = 0;
  ablate_cmd->add_option("--jobs", jobs, "parallel workers");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval_cmd, eval_args, false);
  std::string checkpoint, split = "val";
  std::optional<std::int64_t> first, count;
  eval_cmd->add_option("checkpoint", checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--split", split, "train, val or custom")
      ->check(CLI::IsMember({"train", "val", "custom"}));
  eval_cmd->add_option("--first", first, "first scene index (custom split)");
  eval_cmd->add_option("--count", count, "number of scenes (custom split)");

  auto* plot_cmd = app.add_subcommand("plot", "render loss curves or AP bars to SVG");
  std::vector<std::string> plot_inputs;
  std::string plot_out, plot_key = "total", plot_title;
  plot_cmd->add_option("inputs", plot_inputs, "metrics.jsonl files or one report.json")
      ->required()
      ->check(CLI::ExistingFile);
  plot_cmd->add_option("-o,--out", plot_out, "SVG output path")->required();
  plot_cmd->add_option("--key", plot_key, "metrics column for loss curves");
  plot_cmd->add_option("--title", plot_title, "chart title");

  auto* config_cmd = app.add_subcommand("config", "print the effective configuration");
  config_cmd->add_option("--config", config_args.config, "key = value config file")
      ->check(CLI::ExistingFile);
  config_cmd->add_option("--set", config_args.settings, "override a config key, key=value (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*teacher_cmd) {
      auto c = build_config(teacher_args, ad::RunMode::teacher, "teacher");
      const auto r = ad::train_teacher(c, c.seeds.front(), c.out_dir);
      std::cout << "checkpoint " << r.checkpoint.string() << '\n';
      print_eval(r.val);
    } else if (*student_cmd || *distill_cmd) {
      const bool distill = distill_cmd->parsed();
      auto c = build_config(distill ? distill_args : student_args,
                            distill ? ad::RunMode::distill : ad::RunMode::baseline,
                            distill ? "distill" : "baseline");
      ad::TrainOptions opts;
      if (distill) opts.teacher = distill_teacher;
      const auto r = ad::train_student(c, c.seeds.front(), c.out_dir, opts);
      std::cout << "checkpoint " << r.checkpoint.string() << '\n';
      print_eval(r.val);
    } else if (*ablate_cmd) {
      auto c = build_config(ablate_args, ad::RunMode::ablation, "ablation");
      if (jobs > 0) c.jobs = jobs;
      std::optional<std::filesystem::path> teacher;
      if (!ablate_teacher.empty()) teacher = ablate_teacher;
      const auto report = ad::ablation_run(c, teacher);
      std::cout << ad::format_report(report);
    } else if (*eval_cmd) {
      auto c = build_config(eval_args, ad::RunMode::baseline, "eval");
      std::int64_t f = 0, n = 0;
      if (split == "train") {
        f = 0;
        n = c.train_count;
      } else if (split == "val") {
        f = c.train_count;
        n = c.val_count;
      } else {
        if (!first || !count) throw ad::ConfigError("custom split needs --first and --count");
      }
      if (first) f = *first;
      if (count) n = *count;
      print_eval(ad::evaluate_checkpoint(checkpoint, c, f, n, split));
    } else if (*config_cmd) {
      const auto c = layered_config(config_args);
      c.validate();
      std::cout << ad::to_config_text(c);
    } else if (*plot_cmd) {
      std::string svg;
      if (plot_inputs.size() == 1 && std::filesystem::path(plot_inputs[0]).extension() == ".json") {
        svg = ad::render_ap_svg(ad::read_report_bars(plot_inputs[0]),
                                plot_title.empty() ? "toy AP per cell" : plot_title);
      } else {
        std::vector<ad::LossSeries> series;
        for (const auto& p : plot_inputs) series.push_back(ad::read_loss_series(p, plot_key));
        svg = ad::render_loss_svg(series, plot_title.empty() ? plot_key : plot_title);
      }
      std::ofstream os(plot_out);
      if (!os) throw ad::FormatError("cannot write " + plot_out);
      os << svg;
    }
  } catch (const ad::NumericAbort& e) {
    std::cerr << "numeric abort in " << e.component() << ": " << e.what() << '\n';
    return kExitNumeric;
  } catch (const ad::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ad::FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ad::ParameterError& e) {
    std::cerr << "parameter error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitOther;
  }
  return kExitOk;
}
