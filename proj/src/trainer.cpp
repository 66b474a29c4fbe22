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

#include "anchordistill/trainer.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "anchordistill/checkpoint.hpp"
#include "anchordistill/errors.hpp"
#include "anchordistill/masks.hpp"
#include "anchordistill/random.hpp"

namespace ad {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr double kDefaultDivergenceLimit = 1e6;
constexpr std::uint64_t kOrderStream = 0x0bd3ULL;
constexpr std::uint64_t kStudentInitStream = 1;
constexpr std::uint64_t kTeacherInitStream = 2;
constexpr Index kEvalChunk = 16;

// Reshuffles [0, n) every epoch; the permutation depends only on (seed, epoch).
class EpochSampler {
 public:
  EpochSampler(std::uint64_t seed, std::size_t n) : seed_(seed), order_(n) { reshuffle(); }

  std::vector<std::size_t> next(std::size_t count) {
    std::vector<std::size_t> out;
    while (out.size() < count) {
      if (pos_ == order_.size()) {
        ++epoch_;
        reshuffle();
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    CounterRng rng(stream_key({seed_, kOrderStream, epoch_}));
    for (std::size_t i = order_.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(order_[i - 1], order_[j]);
    }
    pos_ = 0;
  }

  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

// Teacher head features for every training image, computed once without
// gradients. Only the conv depths paired with the student are stored.
class TeacherFeatureCache {
 public:
  TeacherFeatureCache(const HeadConfig& teacher, const ParamStore& params,
                      std::span<const SceneSample> train, int student_convs, int batch)
      : num_convs_(teacher.num_convs), num_levels_(teacher.num_levels) {
    for (const auto& [sm, tm] : conv_pairing(student_convs, teacher.num_convs)) convs_.push_back(tm);
    const ParamStore frozen = params.clone(false);
    for (std::size_t first = 0; first < train.size(); first += static_cast<std::size_t>(batch)) {
      const std::size_t last = std::min(train.size(), first + static_cast<std::size_t>(batch));
      std::vector<const SceneSample*> ptrs;
      for (std::size_t i = first; i < last; ++i) ptrs.push_back(&train[i]);
      const HeadOutputs out = forward(batch_images(ptrs), teacher, frozen);
      if (strides_.empty()) {
        strides_ = out.strides;
        image_h_ = out.image_height;
        image_w_ = out.image_width;
      }
      for (Branch br : {Branch::cls, Branch::box}) {
        for (int m : convs_) {
          for (int k = 0; k < num_levels_; ++k) {
            const Tensor& f = out.feature(br, m, k);
            auto& slot = store_[key(br, m, k)];
            if (slot.shape.empty()) {
              slot.shape = {f.extent(1), f.extent(2), f.extent(3)};
              slot.values.resize(static_cast<Index>(train.size()) * numel(slot.shape));
            }
            const Index len = numel(slot.shape);
            slot.values.segment(static_cast<Index>(first) * len, f.size()) = f.values();
          }
        }
      }
    }
  }

  HeadOutputs gather(std::span<const std::size_t> indices) const {
    HeadOutputs out;
    out.strides = strides_;
    out.image_height = image_h_;
    out.image_width = image_w_;
    out.cls_features.assign(static_cast<std::size_t>(num_convs_),
                            std::vector<Tensor>(static_cast<std::size_t>(num_levels_)));
    out.box_features = out.cls_features;
    const auto b = static_cast<Index>(indices.size());
    for (Branch br : {Branch::cls, Branch::box}) {
      auto& maps = br == Branch::cls ? out.cls_features : out.box_features;
      for (int m : convs_) {
        for (int k = 0; k < num_levels_; ++k) {
          const auto& slot = store_.at(key(br, m, k));
          const Index len = numel(slot.shape);
          Vector v(b * len);
          for (Index i = 0; i < b; ++i) {
            v.segment(i * len, len) =
                slot.values.segment(static_cast<Index>(indices[static_cast<std::size_t>(i)]) * len, len);
          }
          maps[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(k)] =
              Tensor::from(Shape{b, slot.shape[0], slot.shape[1], slot.shape[2]}, std::move(v));
        }
      }
    }
    // Prediction maps are not distilled; placeholders keep batch() meaningful.
    for (int k = 0; k < num_levels_; ++k) {
      const auto& f = out.cls_features[static_cast<std::size_t>(convs_.front() - 1)][static_cast<std::size_t>(k)];
      out.cls_logits.push_back(f);
      out.box_deltas.push_back(f);
    }
    return out;
  }

 private:
  struct Slot {
    Shape shape;
    Vector values;
  };
  static int key(Branch b, int m, int k) { return ((b == Branch::cls ? 0 : 1) * 64 + m) * 64 + k; }

  int num_convs_, num_levels_;
  std::vector<int> convs_;
  std::vector<int> strides_;
  Index image_h_ = 0, image_w_ = 0;
  std::map<int, Slot> store_;
};

json record_json(const MetricsRecord& r) {
  json j;
  j["step"] = r.step;
  j["L_det"] = r.det;
  j["L_anchor"] = r.anchor;
  j["L_distance"] = r.distance;
  j["L_loc"] = r.loc;
  j["total"] = r.total;
  return j;
}

json eval_json(const EvalRecord& e) {
  json j;
  j["split"] = e.split;
  j["first"] = e.first;
  j["count"] = e.count;
  j["toy_ap"] = e.ap.mean_ap;
  json per = json::object();
  for (const auto& [c, ap] : e.ap.per_category) per[std::to_string(c)] = ap;
  j["per_category_ap"] = per;
  return j;
}

// Config echo; numbers are written as JSON numbers so defaults read back verbatim.
json config_json(const RunConfig& config) {
  json j;
  for (const auto& [k, v] : config_entries(config)) j[k] = v;
  json d;
  d["lambda_a"] = config.distill.lambda_a;
  d["lambda_d"] = config.distill.lambda_d;
  d["lambda_l"] = config.distill.lambda_l;
  d["tau_d"] = config.distill.tau_d;
  d["tau_l"] = config.distill.tau_l;
  json out;
  out["distill"] = d;
  out["settings"] = j;
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write " + path.string());
  os << text;
}

double grad_norm(const ParamStore& params) {
  double sq = 0.0;
  for (const auto& [name, t] : params.items()) sq += t.grad().squaredNorm();
  return std::sqrt(sq);
}

struct LoopSetup {
  const RunConfig* config = nullptr;
  const HeadConfig* head = nullptr;
  const OptimConfig* optim = nullptr;
  std::uint64_t seed = 0;
  fs::path dir;
  std::string checkpoint_name;
  RunMode mode = RunMode::baseline;
  const TeacherFeatureCache* teacher = nullptr;
  double divergence_limit = kDefaultDivergenceLimit;
};

TrainOutcome run_training(const LoopSetup& s, ParamStore params, const DataSplits& data) {
  const RunConfig& cfg = *s.config;
  fs::create_directories(s.dir);
  {
    json meta;
    meta["mode"] = to_string(s.mode);
    meta["seed"] = s.seed;
    meta["config"] = config_json(cfg);
    write_text(s.dir / "run.json", meta.dump(2) + "\n");
  }
  std::ofstream metrics(s.dir / "metrics.jsonl", std::ios::binary);
  std::ofstream timing(s.dir / "timing.jsonl", std::ios::binary);
  if (!metrics || !timing) throw FormatError("cannot write metrics in " + s.dir.string());

  const DistillConfig& dc = cfg.distill;
  const bool distill = s.mode == RunMode::distill;
  std::map<std::string, Vector> velocity;
  for (const auto& [name, t] : params.items()) velocity[name] = Vector::Zero(t.size());

  EpochSampler sampler(s.seed, data.train.size());
  TrainOutcome outcome;
  const auto start = std::chrono::steady_clock::now();
  const auto batch = static_cast<std::size_t>(std::min<std::size_t>(
      static_cast<std::size_t>(s.optim->batch_size), data.train.size()));
  for (int step = 1; step <= s.optim->steps; ++step) {
    const auto idx = sampler.next(batch);
    std::vector<const SceneSample*> ptrs;
    for (auto i : idx) ptrs.push_back(&data.train[i]);

    const HeadOutputs out = forward(batch_images(ptrs), *s.head, params);
    const DetectionLoss det = detection_loss(out, ptrs);
    Tensor anchor = Tensor::scalar(0.0), distance = Tensor::scalar(0.0), loc = Tensor::scalar(0.0);
    DistillConfig weights = dc;
    if (distill) {
      const HeadOutputs t_out = s.teacher->gather(idx);
      std::vector<CategoryMaskSet> masks;
      for (int k = 0; k < s.head->num_levels; ++k) {
        const Tensor& grid = out.cls_logits[static_cast<std::size_t>(k)];
        LevelFilter keep;
        if (cfg.mask_levels == MaskLevels::assigned) {
          const int levels = s.head->num_levels;
          keep = [k, levels](const BoundingBox& b) { return assign_level(b, levels) == k; };
        }
        masks.push_back(build_category_masks(ptrs, s.head->stride(k),
                                             GridSize{grid.extent(2), grid.extent(3)},
                                             s.head->num_categories, k, keep));
      }
      const DistillTerms terms = distill_terms(out, t_out, masks, dc);
      anchor = terms.anchor;
      distance = terms.distance;
      loc = terms.loc;
    } else {
      weights.lambda_a = weights.lambda_d = weights.lambda_l = 0.0;
    }
    const LossBreakdown loss = total_distill_loss(det.total, anchor, distance, loc, weights);
    if (loss.total_value > s.divergence_limit) {
      throw NumericAbort("total", "training diverged at step " + std::to_string(step) +
                                      " (loss " + std::to_string(loss.total_value) + ")");
    }

    params.zero_grad();
    loss.total.backward();
    const bool clip = s.optim->clip_norm > 0;
    const bool per_tensor = s.optim->clip_scope == ClipScope::tensor;
    double factor = 1.0;
    if (clip && !per_tensor) {
      const double norm = grad_norm(params);
      if (norm > s.optim->clip_norm) factor = s.optim->clip_norm / norm;
    }
    for (auto& [name, t] : params.items()) {
      Vector& v = velocity[name];
      if (clip && per_tensor) {
        const double norm = t.grad().norm();
        factor = norm > s.optim->clip_norm ? s.optim->clip_norm / norm : 1.0;
      }
      if (s.optim->weight_decay > 0) {
        v = s.optim->momentum * v + factor * t.grad() + s.optim->weight_decay * t.values();
      } else {
        v = s.optim->momentum * v + factor * t.grad();
      }
      t.mutable_values() -= s.optim->lr * v;
    }

    if (step == 1 || step % cfg.log_every == 0 || step == s.optim->steps) {
      MetricsRecord r;
      r.step = step;
      r.det = loss.det;
      r.anchor = loss.anchor;
      r.distance = loss.distance;
      r.loc = loss.loc;
      r.total = loss.total_value;
      r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      metrics << record_json(r).dump() << '\n';
      json t;
      t["step"] = step;
      t["wall_time"] = r.wall_time;
      timing << t.dump() << '\n';
      outcome.history.push_back(r);
    }
  }

  outcome.checkpoint = s.dir / s.checkpoint_name;
  save_checkpoint(outcome.checkpoint, *s.head, params);
  outcome.val = evaluate(*s.head, params, data.val, cfg.eval, "val",
                         static_cast<std::int64_t>(cfg.train_count));
  json summary;
  summary["mode"] = to_string(s.mode);
  summary["seed"] = s.seed;
  summary["eval"] = eval_json(outcome.val);
  write_text(s.dir / "summary.json", summary.dump(2) + "\n");
  return outcome;
}

}  // namespace

DataSplits make_splits(const RunConfig& config) {
  DataSplits d;
  d.train = generate_dataset(config.scene, config.train_count, 0);
  d.val = generate_dataset(config.scene, config.val_count, config.train_count);
  return d;
}

TrainOutcome train_teacher(const RunConfig& config, std::uint64_t seed, const fs::path& dir,
                           const DataSplits* data) {
  config.validate();
  std::optional<DataSplits> own;
  if (!data) data = &own.emplace(make_splits(config));
  LoopSetup s;
  s.config = &config;
  s.head = &config.teacher;
  s.optim = &config.teacher_optim;
  s.seed = seed;
  s.dir = dir;
  s.checkpoint_name = "teacher.ckpt";
  s.mode = RunMode::teacher;
  return run_training(s, ParamStore::initialize(config.teacher, stream_key({seed, kTeacherInitStream})),
                      *data);
}

TrainOutcome train_student(const RunConfig& config, std::uint64_t seed, const fs::path& dir,
                           const TrainOptions& options, const DataSplits* data) {
  config.validate();
  if (config.mode != RunMode::baseline && config.mode != RunMode::distill) {
    throw ConfigError("train_student: mode must be baseline or distill");
  }
  std::optional<DataSplits> own;
  if (!data) data = &own.emplace(make_splits(config));

  LoopSetup s;
  s.config = &config;
  s.head = &config.student;
  s.optim = &config.optim;
  s.seed = seed;
  s.dir = dir;
  s.checkpoint_name = "student.ckpt";
  s.mode = config.mode;
  if (options.divergence_limit) s.divergence_limit = *options.divergence_limit;

  ParamStore params;
  if (options.init_from) {
    Checkpoint init = load_checkpoint(*options.init_from);
    if (!(init.config == config.student)) {
      throw ConfigError("train_student: init checkpoint does not match the student config");
    }
    params = std::move(init.params);
  } else {
    params = ParamStore::initialize(config.student, stream_key({seed, kStudentInitStream}));
  }

  std::optional<TeacherFeatureCache> cache;
  if (config.mode == RunMode::distill) {
    if (!options.teacher) throw ConfigError("distill mode requires a teacher checkpoint");
    const Checkpoint teacher = load_checkpoint(*options.teacher);
    if (teacher.config.channels != config.student.channels) {
      throw ConfigError("teacher head has " + std::to_string(teacher.config.channels) +
                        " channels, student " + std::to_string(config.student.channels));
    }
    if (teacher.config.num_levels != config.student.num_levels ||
        teacher.config.num_categories != config.student.num_categories) {
      throw ConfigError("teacher and student disagree on levels or categories");
    }
    cache.emplace(teacher.config, teacher.params, data->train, config.student.num_convs,
                  config.optim.batch_size);
    s.teacher = &*cache;
  }
  return run_training(s, std::move(params), *data);
}

EvalRecord evaluate(const HeadConfig& head, const ParamStore& params,
                    std::span<const SceneSample> samples, const EvalConfig& eval,
                    std::string split, std::int64_t first) {
  if (samples.empty()) throw ParameterError("evaluate: empty split");
  const ParamStore frozen = params.clone(false);
  std::vector<std::vector<Detection>> predictions;
  std::vector<std::vector<BoundingBox>> truth;
  for (std::size_t start = 0; start < samples.size(); start += kEvalChunk) {
    const std::size_t stop = std::min(samples.size(), start + kEvalChunk);
    std::vector<const SceneSample*> ptrs;
    for (std::size_t i = start; i < stop; ++i) ptrs.push_back(&samples[i]);
    const HeadOutputs out = forward(batch_images(ptrs), head, frozen);
    for (std::size_t i = 0; i < ptrs.size(); ++i) {
      predictions.push_back(
          decode_predictions(out, static_cast<Index>(i), eval.score_threshold, eval.nms_iou));
      truth.push_back(ptrs[i]->boxes);
    }
  }
  EvalRecord r;
  r.split = std::move(split);
  r.first = first;
  r.count = static_cast<std::int64_t>(samples.size());
  r.ap = evaluate_toy_ap(predictions, truth);
  return r;
}

EvalRecord evaluate_checkpoint(const fs::path& checkpoint, const RunConfig& config,
                               std::int64_t first, std::int64_t count, std::string split) {
  if (count < 1) throw ParameterError("evaluate: empty split");
  if (first < 0) throw ParameterError("evaluate: negative split start");
  const Checkpoint ck = load_checkpoint(checkpoint);
  const auto samples = generate_dataset(config.scene, count, first);
  return evaluate(ck.config, ck.params, samples, config.eval, std::move(split), first);
}

double AblationCell::mean_ap() const {
  if (ap.empty()) return 0.0;
  return std::accumulate(ap.begin(), ap.end(), 0.0) / static_cast<double>(ap.size());
}

const AblationCell& AblationReport::cell(const std::string& label) const {
  for (const auto& c : cells) {
    if (c.label == label) return c;
  }
  throw ParameterError("no ablation cell '" + label + "'");
}

std::string format_report(const AblationReport& report) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  std::string group;
  for (const auto& c : report.cells) {
    if (c.group != group) {
      group = c.group;
      os << (os.tellp() > 0 ? "\n" : "") << "# " << group << "\n";
      os << std::left << std::setw(22) << "cell" << std::setw(10) << "mean_ap" << "per-seed\n";
    }
    os << std::left << std::setw(22) << c.label << std::setw(10) << c.mean_ap();
    for (double v : c.ap) os << ' ' << v;
    if (!c.finite) os << "  NaN-abort";
    os << '\n';
  }
  return os.str();
}

AblationReport ablation_run(const RunConfig& config, const std::optional<fs::path>& teacher) {
  config.validate();
  const DataSplits data = make_splits(config);
  fs::create_directories(config.out_dir);

  AblationReport report;
  report.seeds = config.seeds;
  if (teacher) {
    report.teacher = *teacher;
  } else {
    report.teacher =
        train_teacher(config, config.seeds.front(), config.out_dir / "teacher", &data).checkpoint;
  }

  const DistillConfig base = config.distill;
  auto with = [&](double la, double ld, double ll) {
    DistillConfig d = base;
    d.lambda_a = la;
    d.lambda_d = ld;
    d.lambda_l = ll;
    return d;
  };
  auto add = [&](std::string group, std::string label, bool is_baseline, DistillConfig d) {
    AblationCell c;
    c.group = std::move(group);
    c.label = std::move(label);
    c.baseline = is_baseline;
    c.distill = d;
    c.ap.assign(config.seeds.size(), 0.0);
    report.cells.push_back(std::move(c));
  };
  add("component", "baseline", true, with(0, 0, 0));
  add("component", "+anchor", false, with(base.lambda_a, 0, 0));
  add("component", "+distance", false, with(0, base.lambda_d, 0));
  add("component", "+anchor+distance", false, with(base.lambda_a, base.lambda_d, 0));
  add("component", "+all", false, base);
  for (double tau : config.tau_grid) {
    if (tau == base.tau_d) continue;  // identical to +all
    DistillConfig d = base;
    d.tau_d = tau;
    add("tau_d", "tau_d=" + format_number(tau), false, d);
  }
  for (double tau : config.tau_grid) {
    if (tau == base.tau_l) continue;
    DistillConfig d = base;
    d.tau_l = tau;
    add("tau_l", "tau_l=" + format_number(tau), false, d);
  }

  struct Task {
    std::size_t cell, seed;
  };
  std::vector<Task> tasks;
  for (std::size_t c = 0; c < report.cells.size(); ++c) {
    for (std::size_t s = 0; s < config.seeds.size(); ++s) tasks.push_back({c, s});
  }
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      AblationCell& cell = report.cells[tasks[i].cell];
      const std::uint64_t seed = config.seeds[tasks[i].seed];
      RunConfig rc = config;
      rc.mode = cell.baseline ? RunMode::baseline : RunMode::distill;
      rc.distill = cell.distill;
      std::string dir_name = cell.label;
      for (char& ch : dir_name) {
        if (ch == '+' || ch == '=') ch = '_';
      }
      const fs::path dir = config.out_dir / dir_name / ("seed" + std::to_string(seed));
      TrainOptions opts;
      if (!cell.baseline) opts.teacher = report.teacher;
      try {
        cell.ap[tasks[i].seed] = train_student(rc, seed, dir, opts, &data).val.ap.mean_ap;
      } catch (const NumericAbort&) {
        cell.finite = false;
        cell.ap[tasks[i].seed] = std::numeric_limits<double>::quiet_NaN();
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const int jobs = std::max(1, std::min<int>(config.jobs, static_cast<int>(tasks.size())));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);

  json j;
  j["teacher"] = report.teacher.string();
  j["seeds"] = report.seeds;
  j["config"] = config_json(config);
  json cells = json::array();
  for (const auto& c : report.cells) {
    json cj;
    cj["group"] = c.group;
    cj["label"] = c.label;
    cj["lambda_a"] = c.distill.lambda_a;
    cj["lambda_d"] = c.distill.lambda_d;
    cj["lambda_l"] = c.distill.lambda_l;
    cj["tau_d"] = c.distill.tau_d;
    cj["tau_l"] = c.distill.tau_l;
    cj["finite"] = c.finite;
    cj["toy_ap"] = c.ap;
    cj["mean_toy_ap"] = c.mean_ap();
    cells.push_back(cj);
  }
  j["cells"] = cells;
  write_text(config.out_dir / "report.json", j.dump(2) + "\n");
  write_text(config.out_dir / "report.txt", format_report(report));
  return report;
}

}  // namespace ad
