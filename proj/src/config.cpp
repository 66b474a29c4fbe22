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

#include "anchordistill/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "anchordistill/errors.hpp"

namespace ad {

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
  }
  return out;
}

std::string branches_text(const BranchSet& b) {
  if (b.cls && b.box) return "cls,box";
  if (b.cls) return "cls";
  if (b.box) return "box";
  return "none";
}

BranchSet parse_branches(const std::string& key, const std::string& v) {
  BranchSet b{false, false};
  for (const auto& item : split_list(v)) {
    if (item == "cls") b.cls = true;
    else if (item == "box") b.box = true;
    else if (item != "none") throw ConfigError("config: '" + key + "' accepts cls, box or none");
  }
  return b;
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

template <typename Get, typename Set>
Field field(Get g, Set s) {
  return Field{g, s};
}

#define AD_INT_FIELD(expr)                                                           \
  field([](const RunConfig& c) { return std::to_string(c.expr); },                   \
        [](RunConfig& c, const std::string& k, const std::string& v) {               \
          c.expr = static_cast<decltype(c.expr)>(parse_int(k, v));                   \
        })
#define AD_REAL_FIELD(expr)                                                          \
  field([](const RunConfig& c) { return format_number(c.expr); },                    \
        [](RunConfig& c, const std::string& k, const std::string& v) {               \
          c.expr = parse_double(k, v);                                               \
        })

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"mode", field([](const RunConfig& c) { return to_string(c.mode); },
                     [](RunConfig& c, const std::string& k, const std::string& v) {
                       if (v == "teacher") c.mode = RunMode::teacher;
                       else if (v == "baseline") c.mode = RunMode::baseline;
                       else if (v == "distill") c.mode = RunMode::distill;
                       else if (v == "ablation") c.mode = RunMode::ablation;
                       else throw ConfigError("config: unknown " + k + " '" + v + "'");
                     })},
      {"scene.height", AD_INT_FIELD(scene.height)},
      {"scene.width", AD_INT_FIELD(scene.width)},
      {"scene.num_categories", AD_INT_FIELD(scene.num_categories)},
      {"scene.min_objects", AD_INT_FIELD(scene.min_objects)},
      {"scene.max_objects", AD_INT_FIELD(scene.max_objects)},
      {"scene.min_box", AD_INT_FIELD(scene.min_box)},
      {"scene.max_box", AD_INT_FIELD(scene.max_box)},
      {"scene.noise_std", AD_REAL_FIELD(scene.noise_std)},
      {"scene.seed", AD_INT_FIELD(scene.seed)},
      {"data.train_count", AD_INT_FIELD(train_count)},
      {"data.val_count", AD_INT_FIELD(val_count)},
      {"student.num_levels", AD_INT_FIELD(student.num_levels)},
      {"student.channels", AD_INT_FIELD(student.channels)},
      {"student.num_convs", AD_INT_FIELD(student.num_convs)},
      {"student.backbone_width", AD_INT_FIELD(student.backbone_width)},
      {"teacher.num_levels", AD_INT_FIELD(teacher.num_levels)},
      {"teacher.channels", AD_INT_FIELD(teacher.channels)},
      {"teacher.num_convs", AD_INT_FIELD(teacher.num_convs)},
      {"teacher.backbone_width", AD_INT_FIELD(teacher.backbone_width)},
      {"optim.lr", AD_REAL_FIELD(optim.lr)},
      {"optim.momentum", AD_REAL_FIELD(optim.momentum)},
      {"optim.steps", AD_INT_FIELD(optim.steps)},
      {"optim.batch_size", AD_INT_FIELD(optim.batch_size)},
      {"optim.clip_norm", AD_REAL_FIELD(optim.clip_norm)},
      {"optim.clip_scope",
       field([](const RunConfig& c) {
               return std::string(c.optim.clip_scope == ClipScope::global ? "global" : "tensor");
             },
             [](RunConfig& c, const std::string& k, const std::string& v) {
               if (v == "global") c.optim.clip_scope = ClipScope::global;
               else if (v == "tensor") c.optim.clip_scope = ClipScope::tensor;
               else throw ConfigError("config: " + k + " is global or tensor");
             })},
      {"optim.weight_decay", AD_REAL_FIELD(optim.weight_decay)},
      {"teacher_optim.lr", AD_REAL_FIELD(teacher_optim.lr)},
      {"teacher_optim.momentum", AD_REAL_FIELD(teacher_optim.momentum)},
      {"teacher_optim.steps", AD_INT_FIELD(teacher_optim.steps)},
      {"teacher_optim.batch_size", AD_INT_FIELD(teacher_optim.batch_size)},
      {"teacher_optim.clip_norm", AD_REAL_FIELD(teacher_optim.clip_norm)},
      {"teacher_optim.clip_scope",
       field([](const RunConfig& c) {
               return std::string(c.teacher_optim.clip_scope == ClipScope::global ? "global" : "tensor");
             },
             [](RunConfig& c, const std::string& k, const std::string& v) {
               if (v == "global") c.teacher_optim.clip_scope = ClipScope::global;
               else if (v == "tensor") c.teacher_optim.clip_scope = ClipScope::tensor;
               else throw ConfigError("config: " + k + " is global or tensor");
             })},
      {"teacher_optim.weight_decay", AD_REAL_FIELD(teacher_optim.weight_decay)},
      {"distill.lambda_a", AD_REAL_FIELD(distill.lambda_a)},
      {"distill.lambda_d", AD_REAL_FIELD(distill.lambda_d)},
      {"distill.lambda_l", AD_REAL_FIELD(distill.lambda_l)},
      {"distill.tau_d", AD_REAL_FIELD(distill.tau_d)},
      {"distill.tau_l", AD_REAL_FIELD(distill.tau_l)},
      {"distill.anchor_branches",
       field([](const RunConfig& c) { return branches_text(c.distill.anchor_branches); },
             [](RunConfig& c, const std::string& k, const std::string& v) {
               c.distill.anchor_branches = parse_branches(k, v);
             })},
      {"distill.distance_branches",
       field([](const RunConfig& c) { return branches_text(c.distill.distance_branches); },
             [](RunConfig& c, const std::string& k, const std::string& v) {
               c.distill.distance_branches = parse_branches(k, v);
             })},
      {"distill.pool_mode",
       field([](const RunConfig& c) {
               return std::string(c.distill.pool_mode == PoolMode::masked_mean ? "masked_mean"
                                                                               : "full_area");
             },
             [](RunConfig& c, const std::string& k, const std::string& v) {
               if (v == "masked_mean") c.distill.pool_mode = PoolMode::masked_mean;
               else if (v == "full_area") c.distill.pool_mode = PoolMode::full_area;
               else throw ConfigError("config: " + k + " is masked_mean or full_area");
             })},
      {"distill.distance_axis",
       field([](const RunConfig& c) {
               return std::string(c.distill.distance_axis == DistanceAxis::anchors ? "anchors"
                                                                                   : "pixels");
             },
             [](RunConfig& c, const std::string& k, const std::string& v) {
               if (v == "anchors") c.distill.distance_axis = DistanceAxis::anchors;
               else if (v == "pixels") c.distill.distance_axis = DistanceAxis::pixels;
               else throw ConfigError("config: " + k + " is anchors or pixels");
             })},
      {"distill.loc_domain",
       field([](const RunConfig& c) {
               return std::string(c.distill.loc_domain == LocDomain::spatial ? "spatial"
                                                                             : "channels");
             },
             [](RunConfig& c, const std::string& k, const std::string& v) {
               if (v == "spatial") c.distill.loc_domain = LocDomain::spatial;
               else if (v == "channels") c.distill.loc_domain = LocDomain::channels;
               else throw ConfigError("config: " + k + " is spatial or channels");
             })},
      {"distill.mask_levels",
       field([](const RunConfig& c) {
               return std::string(c.mask_levels == MaskLevels::all ? "all" : "assigned");
             },
             [](RunConfig& c, const std::string& k, const std::string& v) {
               if (v == "all") c.mask_levels = MaskLevels::all;
               else if (v == "assigned") c.mask_levels = MaskLevels::assigned;
               else throw ConfigError("config: " + k + " is all or assigned");
             })},
      {"eval.score_threshold", AD_REAL_FIELD(eval.score_threshold)},
      {"eval.nms_iou", AD_REAL_FIELD(eval.nms_iou)},
      {"run.seeds",
       field([](const RunConfig& c) {
               std::string s;
               for (auto v : c.seeds) s += (s.empty() ? "" : ",") + std::to_string(v);
               return s;
             },
             [](RunConfig& c, const std::string& k, const std::string& v) {
               c.seeds.clear();
               for (const auto& item : split_list(v)) {
                 const auto n = parse_int(k, item);
                 if (n < 0) throw ConfigError("config: seeds must be non-negative");
                 c.seeds.push_back(static_cast<std::uint64_t>(n));
               }
             })},
      {"run.log_every", AD_INT_FIELD(log_every)},
      {"run.jobs", AD_INT_FIELD(jobs)},
      {"run.out_dir",
       field([](const RunConfig& c) { return c.out_dir.string(); },
             [](RunConfig& c, const std::string&, const std::string& v) { c.out_dir = v; })},
      {"ablation.tau_grid",
       field([](const RunConfig& c) {
               std::string s;
               for (double v : c.tau_grid) s += (s.empty() ? "" : ",") + format_number(v);
               return s;
             },
             [](RunConfig& c, const std::string& k, const std::string& v) {
               c.tau_grid.clear();
               for (const auto& item : split_list(v)) c.tau_grid.push_back(parse_double(k, item));
             })},
  };
  return table;
}

#undef AD_INT_FIELD
#undef AD_REAL_FIELD

}  // namespace

RunConfig::RunConfig() {
  student.num_convs = 2;
  student.backbone_width = 4;
  teacher.num_convs = 4;
  teacher.backbone_width = 16;
  // Desk-scale tuning. DistillConfig on its own keeps both distance branches.
  optim.lr = 0.005;
  optim.clip_norm = 1.0;
  optim.clip_scope = ClipScope::tensor;
  teacher_optim.steps = 3000;
  distill.distance_branches = BranchSet{true, false};
}

std::string format_number(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

std::string to_string(RunMode mode) {
  switch (mode) {
    case RunMode::teacher: return "teacher";
    case RunMode::baseline: return "baseline";
    case RunMode::distill: return "distill";
    case RunMode::ablation: return "ablation";
  }
  return "unknown";
}

void RunConfig::validate() const {
  try {
    scene.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  student.validate();
  teacher.validate();
  distill.validate();
  if (train_count < 1 || val_count < 1) throw ConfigError("config: data counts must be >= 1");
  for (const OptimConfig* o : {&optim, &teacher_optim}) {
    if (o->steps < 1) throw ConfigError("config: steps must be >= 1");
    if (o->batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
    if (!(o->lr > 0)) throw ConfigError("config: lr must be positive");
    if (o->momentum < 0 || o->momentum >= 1) throw ConfigError("config: momentum in [0,1)");
    if (o->clip_norm < 0) throw ConfigError("config: clip_norm must be >= 0");
    if (o->weight_decay < 0) throw ConfigError("config: weight_decay must be >= 0");
  }
  if (seeds.empty()) throw ConfigError("config: at least one seed is required");
  if (log_every < 1) throw ConfigError("config: log_every must be >= 1");
  if (jobs < 1) throw ConfigError("config: jobs must be >= 1");
  if (student.num_categories != scene.num_categories ||
      teacher.num_categories != scene.num_categories) {
    throw ConfigError("config: head categories must match the scene");
  }
  for (const HeadConfig* h : {&student, &teacher}) {
    if (scene.height % h->largest_stride() != 0 || scene.width % h->largest_stride() != 0) {
      throw ConfigError("config: image size not divisible by the largest stride");
    }
  }
  for (double t : tau_grid) {
    if (!(t > 0)) throw ConfigError("config: tau_grid entries must be positive");
  }
}

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
  for (const auto& [name, f] : fields()) {
    if (name == key) {
      f.set(config, key, trim(value));
      config.student.num_categories = config.scene.num_categories;
      config.teacher.num_categories = config.scene.num_categories;
      return;
    }
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

void apply_config_text(RunConfig& config, const std::string& text, const std::string& origin) {
  std::istringstream is(text);
  std::string line;
  int number = 0;
  while (std::getline(is, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": expected key = value");
    }
    apply_setting(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  RunConfig config;
  apply_config_text(config, ss.str(), path.string());
  return config;
}

std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& config) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [name, f] : fields()) out.emplace_back(name, f.get(config));
  return out;
}

std::string to_config_text(const RunConfig& config) {
  std::string out;
  for (const auto& [k, v] : config_entries(config)) out += k + " = " + v + "\n";
  return out;
}

}  // namespace ad
