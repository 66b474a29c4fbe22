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

// Acceptance suite: one PASS/FAIL line per criterion. Criteria 6 and 7 share
// one full ablation grid at the shipped configuration.
//
//   acceptance [--work DIR] [--only N[,N...]]

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include <json.hpp>

#include "anchordistill/checkpoint.hpp"
#include "anchordistill/config.hpp"
#include "anchordistill/detection.hpp"
#include "anchordistill/distill.hpp"
#include "anchordistill/errors.hpp"
#include "anchordistill/gradcheck.hpp"
#include "anchordistill/masks.hpp"
#include "anchordistill/ops.hpp"
#include "anchordistill/trainer.hpp"
#include "oracle_bridge.hpp"

using namespace ad;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) return {};
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

RunConfig shipped_config() { return load_run_config(fs::path(AD_SOURCE_DIR) / "configs" / "default.cfg"); }

// ---------------------------------------------------------------------------
// 1. Gradient correctness

Verdict gradient_correctness() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  auto track = [&](double e) { worst = std::max(worst, e); };
  using test::random_tensor;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Tensor a = random_tensor({2, 3}, seed, true);
    const Tensor b = random_tensor({2, 3}, seed + 10, true);
    std::vector<Tensor> ab{a, b};
    track(finite_difference_check([&] { return sum(add(a, b) * sub(a, b)); }, ab));
    track(finite_difference_check([&] { return mean(scale(mul(a, b), 1.3)); }, ab));
    track(finite_difference_check([](const Tensor& t) { return sum(add_scalar(t, 0.2) * t); }, a));
    const Tensor away = test::away_from_zero({2, 3}, seed + 20, true);
    track(finite_difference_check([](const Tensor& t) { return sum(relu(t) * t); }, away));
    track(finite_difference_check([](const Tensor& t) { return sum(softplus(t) * t); }, a));
    track(finite_difference_check([](const Tensor& t) { return sum(reshape(t, {6}) * reshape(t, {6})); }, a));
    const Tensor in = random_tensor({2, 2, 5, 5}, seed + 30, true);
    const Tensor w = random_tensor({3, 2, 3, 3}, seed + 31, true);
    const Tensor bias = random_tensor({3}, seed + 32, true);
    const Tensor probe = random_tensor({2, 3, 3, 3}, seed + 33);
    std::vector<Tensor> conv{in, w, bias};
    track(finite_difference_check([&] { return sum(conv2d(in, w, bias, 2, 1) * probe); }, conv));
    const Tensor f = random_tensor({3, 3, 3}, seed + 40, true);
    const Tensor m = test::random_mask({3, 3}, seed + 41, 0.6);
    const Tensor pw = random_tensor({3}, seed + 42);
    track(finite_difference_check([&](const Tensor& t) { return sum(masked_average_pool(t, m).value * pw); }, f));
    const Tensor u = random_tensor({4}, seed + 50, true);
    const Tensor v = random_tensor({4}, seed + 51, true);
    std::vector<Tensor> uv{u, v};
    track(finite_difference_check([&] { return cosine_similarity(u, v); }, uv));
    track(finite_difference_check([&] {
      const std::vector<Tensor> parts{u, v};
      return sum(stack(parts) * stack(parts));
    }, uv));
    const Tensor fm = random_tensor({1, 3, 2, 3}, seed + 60, true);
    const Tensor an = random_tensor({3, 3}, seed + 61, true);
    const Tensor pr = random_tensor({1, 3, 2, 3}, seed + 62);
    std::vector<Tensor> ca{fm, an};
    track(finite_difference_check([&] { return sum(channel_cosine(fm, an) * pr); }, ca));
    const Tensor lg = random_tensor({2, 4}, seed + 70, true);
    const Tensor p3 = random_tensor({2, 4}, seed + 71);
    track(finite_difference_check([&](const Tensor& t) { return sum(softmax_temperature(t, 0.3, 1) * p3); }, lg));
    const Tensor lp = random_tensor({3, 4}, seed + 80, true);
    const Tensor lq = random_tensor({3, 4}, seed + 81, true);
    std::vector<Tensor> pq{lp, lq};
    track(finite_difference_check([&] {
      return kl_divergence(softmax_temperature(lp, 0.7, 1), softmax_temperature(lq, 0.7, 1), 1);
    }, pq));
    const Tensor fl = random_tensor({6}, seed + 90, true);
    const Tensor tg = Tensor::from({6}, {1, 0, 0, 1, 0, 0});
    track(finite_difference_check([&](const Tensor& t) { return sigmoid_focal_loss(t, tg, 0.25, 2.0); }, fl));
    const Tensor pd = test::away_from_zero({5}, seed + 91, true);
    const Tensor wt = Tensor::full({5}, 0.25);
    track(finite_difference_check([&](const Tensor& t) { return weighted_l1(t, Tensor::zeros({5}), wt); }, pd));
  }
  const double ops_worst = worst;

  // Full objective on a 2-category 8x8 micro-scene with one pyramid level.
  HeadConfig student;
  student.num_levels = 1;
  student.channels = 4;
  student.num_categories = 2;
  student.backbone_width = 4;
  HeadConfig teacher = student;
  teacher.num_convs = 4;
  teacher.backbone_width = 8;
  SceneSample scene;
  scene.image = test::random_tensor({3, 8, 8}, 123);
  scene.image = Tensor::from({3, 8, 8}, (scene.image.values().array() + 1.0) * 0.5);
  scene.boxes = {{0, 0, 6, 5, 1}, {3, 2, 8, 8, 2}};
  scene.labels = {1, 2};
  const SceneSample* ptrs[] = {&scene};
  ParamStore params = ParamStore::initialize(student, 77);
  CounterRng jitter(stream_key({0xb1a5}));
  for (auto& [name, t] : params.items()) {
    if (name.ends_with(".b")) {
      for (Index i = 0; i < t.size(); ++i) t.mutable_values()[i] += jitter.uniform(-0.1, 0.1);
    }
  }
  const ParamStore tparams = ParamStore::initialize(teacher, 78);
  const HeadOutputs tout = forward(scene.image, teacher, tparams.clone(false));
  const std::vector<CategoryMaskSet> masks{build_category_masks(ptrs, 4, {2, 2}, 2)};
  const DistillConfig dc;
  std::vector<Tensor> leaves;
  for (auto& [name, t] : params.items()) leaves.push_back(t);
  const GradCheckReport full = gradient_check_report(
      [&] {
        const HeadOutputs out = forward(scene.image, student, params);
        const DistillTerms terms = distill_terms(out, tout, masks, dc);
        return total_distill_loss(detection_loss(out, ptrs).total, terms.anchor, terms.distance,
                                  terms.loc, dc)
            .total;
      },
      leaves);
  worst = std::max(worst, full.rel_error);
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 30,
          "ops max rel err " + fmt(ops_worst, 3) + ", full objective " + fmt(full.rel_error, 3) +
              " (< 1e-4; " + std::to_string(full.entries) + " params, max |a - n| " +
              fmt(full.max_abs_error, 3) + " at max |grad| " + fmt(full.max_gradient, 3) + "), " +
              fmt(secs, 3) + " s (< 30 s)"};
}

// ---------------------------------------------------------------------------
// 2. Identity zeroing

Verdict identity_zeroing() {
  const auto t0 = Clock::now();
  const RunConfig cfg = shipped_config();
  const ParamStore teacher = ParamStore::initialize(cfg.teacher, 2024);
  const ParamStore student = teacher.clone(true);
  const auto data = generate_dataset(cfg.scene, cfg.optim.batch_size);
  std::vector<const SceneSample*> ptrs;
  for (const auto& s : data) ptrs.push_back(&s);
  const Tensor images = batch_images(ptrs);
  const HeadOutputs so = forward(images, cfg.teacher, student);
  const HeadOutputs to = forward(images, cfg.teacher, teacher.clone(false));
  std::vector<CategoryMaskSet> masks;
  for (int k = 0; k < cfg.teacher.num_levels; ++k) {
    const Tensor& g = so.cls_logits[static_cast<std::size_t>(k)];
    masks.push_back(build_category_masks(ptrs, cfg.teacher.stride(k), {g.extent(2), g.extent(3)},
                                         cfg.teacher.num_categories, k));
  }
  const DistillTerms t = distill_terms(so, to, masks, cfg.distill);
  const double a = t.anchor.item(), d = t.distance.item(), l = t.loc.item();
  const double secs = seconds_since(t0);
  const bool ok = std::abs(a) < 1e-8 && std::abs(d) < 1e-8 && std::abs(l) < 1e-8 && secs < 5;
  return {ok, "L_anchor " + fmt(a, 3) + ", L_distance " + fmt(d, 3) + ", L_loc " + fmt(l, 3) +
                  " (< 1e-8), " + fmt(secs, 3) + " s (< 5 s)"};
}

// ---------------------------------------------------------------------------
// 3. Oracle equivalence

Verdict oracle_equivalence() {
  double worst = 0;
  std::size_t cases = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto mc = test::make_micro_case(seed + 1000);
    std::vector<AnchorSet> sa, ta;
    std::vector<oracle::Map> os, ot;
    std::vector<oracle::Anchors> oas, oat;
    for (std::size_t i = 0; i < mc.student.size(); ++i) {
      sa.push_back(compute_category_anchors(mc.student[i], mc.masks[i]));
      ta.push_back(compute_category_anchors(mc.teacher[i], mc.masks[i]));
      os.push_back(test::to_map(mc.student[i]));
      ot.push_back(test::to_map(mc.teacher[i]));
      const auto planes = test::to_planes(mc.masks[i]);
      oas.push_back(oracle::anchors(os.back(), planes));
      oat.push_back(oracle::anchors(ot.back(), planes));
    }
    const DistillConfig dc;
    worst = std::max(worst, std::abs(anchor_loss(sa, ta).item() - oracle::anchor_loss(oas, oat)));
    worst = std::max(worst, std::abs(distance_loss(mc.student, sa, mc.teacher, ta, dc.tau_d).item() -
                                     oracle::distance_loss(os, oas, ot, oat, dc.tau_d)));
    worst = std::max(worst, std::abs(loc_loss(mc.student, mc.teacher, dc.tau_l).item() -
                                     oracle::loc_loss(os, ot, dc.tau_l)));
    ++cases;
  }
  return {worst <= 1e-9, std::to_string(cases) + " micro-cases, max |lib - oracle| " + fmt(worst, 3) + " (<= 1e-9)"};
}

// ---------------------------------------------------------------------------
// 4. Mask laws

Verdict mask_laws() {
  const RunConfig cfg = shipped_config();
  const auto scenes = generate_dataset(cfg.scene, 200);
  std::size_t violations = 0, checks = 0;
  for (const auto& s : scenes) {
    for (int k = 0; k < cfg.student.num_levels; ++k) {
      const int stride = cfg.student.stride(k);
      const GridSize g{cfg.scene.height / stride, cfg.scene.width / stride};
      const CategoryMaskSet m = build_category_masks(std::span(&s, 1), stride, g, cfg.scene.num_categories, k);
      const Vector& bg = m.mask(m.background_slot()).values();
      Vector any = Vector::Zero(bg.size());
      for (int p = 1; p < m.background_slot(); ++p) any = any.cwiseMax(m.mask(p).values());
      for (Index i = 0; i < bg.size(); ++i) {
        ++checks;
        if (bg[i] != 1.0 - any[i]) ++violations;
      }
      for (const auto& box : s.boxes) {
        const CellSplit split = split_central_marginal(project_box_to_grid(box, stride, g));
        for (const auto& c : split.central) {
          for (const auto& mc : split.marginal) violations += c == mc;
        }
      }
    }
  }
  const CellSplit four = split_central_marginal({0, 4, 0, 4});
  const CellSplit three = split_central_marginal({0, 3, 0, 3});
  const bool fixtures = four.marginal.size() == 12 && four.central.size() == 4 &&
                        three.marginal.size() == 8 && three.central.size() == 1;
  return {violations == 0 && fixtures,
          "200 scenes x 3 levels, " + std::to_string(checks) + " cells, " + std::to_string(violations) +
              " violations; 4x4 -> (" + std::to_string(four.marginal.size()) + ", " +
              std::to_string(four.central.size()) + "), 3x3 -> (" + std::to_string(three.marginal.size()) +
              ", " + std::to_string(three.central.size()) + ")"};
}

// ---------------------------------------------------------------------------
// 5. Degeneracy

Verdict degeneracy(const fs::path& work) {
  RunConfig cfg = shipped_config();
  cfg.optim.steps = 100;
  cfg.log_every = 1;
  cfg.teacher_optim.steps = 20;
  const auto data = make_splits(cfg);
  const auto teacher = train_teacher(cfg, 1, work / "teacher", &data);
  cfg.mode = RunMode::baseline;
  const auto base = train_student(cfg, 1, work / "baseline", {}, &data);
  cfg.mode = RunMode::distill;
  cfg.distill.lambda_a = cfg.distill.lambda_d = cfg.distill.lambda_l = 0;
  TrainOptions opts;
  opts.teacher = teacher.checkpoint;
  const auto zero = train_student(cfg, 1, work / "zero", opts, &data);
  bool same = base.history.size() == 100 && zero.history.size() == 100;
  for (std::size_t i = 0; same && i < base.history.size(); ++i) {
    same = base.history[i].total == zero.history[i].total && base.history[i].det == zero.history[i].det;
  }
  same = same && slurp(work / "baseline" / "metrics.jsonl") == slurp(work / "zero" / "metrics.jsonl");
  return {same, "100-step trajectories " + std::string(same ? "bitwise identical" : "differ")};
}

// ---------------------------------------------------------------------------
// 6 and 7. Full grid

struct GridResult {
  AblationReport report;
  double seconds = 0;
};

Verdict distillation_benefit(const GridResult& g) {
  const auto& r = g.report;
  const double base = r.cell("baseline").mean_ap();
  const double anc = r.cell("+anchor").mean_ap();
  const double ad = r.cell("+anchor+distance").mean_ap();
  const double all = r.cell("+all").mean_ap();
  const bool order = base < anc && anc <= ad && ad <= all;
  const bool margin = all - base >= 0.01;
  const bool budget = g.seconds < 3600;
  return {order && margin && budget && r.seeds.size() >= 3,
          std::to_string(r.seeds.size()) + " seeds; baseline " + fmt(base) + ", +anchor " + fmt(anc) +
              ", +distance " + fmt(r.cell("+distance").mean_ap()) + ", +anchor+distance " + fmt(ad) +
              ", +all " + fmt(all) + "; gain " + fmt(all - base, 3) + " (>= 0.01); grid " +
              fmt(g.seconds / 60, 3) + " min (< 60)"};
}

Verdict temperature_robustness(const GridResult& g) {
  const auto& r = g.report;
  const double ref = r.cell("+all").mean_ap();
  bool ok = r.cell("+all").finite;
  double worst = 0;
  std::string worst_label = "+all";
  std::size_t cells = 0;
  for (const auto& c : r.cells) {
    if (c.group != "tau_d" && c.group != "tau_l") continue;
    ++cells;
    const double rel = std::abs(c.mean_ap() - ref) / ref;
    if (!c.finite || !std::isfinite(rel)) ok = false;
    if (!(rel <= worst)) {
      worst = rel;
      worst_label = c.label;
    }
    if (!(rel <= 0.2)) ok = false;
  }
  return {ok && cells == 12, std::to_string(cells) + " tau cells, all finite: " +
                                 std::string(ok || worst > 0.2 ? "yes" : "no") +
                                 "; worst relative gap " + fmt(worst, 3) + " at " + worst_label +
                                 " (<= 0.2, reference +all " + fmt(ref) + ")"};
}

// ---------------------------------------------------------------------------
// 8. Defaults

Verdict defaults(const fs::path& work) {
  const RunConfig cfg = shipped_config();
  const DistillConfig& d = cfg.distill;
  const bool shipped = d.lambda_a == 10 && d.lambda_d == 1000 && d.lambda_l == 1 && d.tau_d == 0.1 && d.tau_l == 0.1;
  RunConfig quick = cfg;
  quick.teacher_optim.steps = 1;
  quick.train_count = 8;
  quick.val_count = 4;
  train_teacher(quick, 1, work);
  const auto j = nlohmann::json::parse(slurp(work / "run.json"));
  const auto& echo = j.at("config").at("distill");
  const auto& set = j.at("config").at("settings");
  const bool echoed = echo.at("lambda_a") == 10.0 && echo.at("lambda_d") == 1000.0 &&
                      echo.at("lambda_l") == 1.0 && echo.at("tau_d") == 0.1 && echo.at("tau_l") == 0.1 &&
                      set.at("distill.lambda_a") == "10" && set.at("distill.lambda_d") == "1000" &&
                      set.at("distill.lambda_l") == "1" && set.at("distill.tau_d") == "0.1" &&
                      set.at("distill.tau_l") == "0.1";
  return {shipped && echoed, "configs/default.cfg {" + format_number(d.lambda_a) + ", " +
                                 format_number(d.lambda_d) + ", " + format_number(d.lambda_l) + ", " +
                                 format_number(d.tau_d) + ", " + format_number(d.tau_l) + "}; run.json echo " +
                                 (echoed ? "verbatim" : "differs")};
}

// ---------------------------------------------------------------------------
// 9. Determinism, through the command-line harness

Verdict determinism(const fs::path& work) {
  const std::string cli = AD_CLI_PATH;
  const std::string common = " --config " + (fs::path(AD_SOURCE_DIR) / "configs" / "default.cfg").string() +
                             " --seed 3 --set data.train_count=24 --set data.val_count=8"
                             " --set optim.steps=12 --set teacher_optim.steps=12 --set run.log_every=2";
  auto run = [&](const std::string& args) {
    return std::system((cli + " " + args + common + " > /dev/null 2>&1").c_str());
  };
  bool ok = true;
  std::vector<std::string> compared;
  for (const char* rep : {"a", "b"}) {
    const fs::path d = work / rep;
    fs::remove_all(d);
    ok &= run("train-teacher --out " + (d / "teacher").string()) == 0;
    ok &= run("train-student --out " + (d / "baseline").string()) == 0;
    ok &= run("distill --teacher " + (d / "teacher" / "teacher.ckpt").string() + " --out " + (d / "distill").string()) == 0;
    ok &= run("ablate --teacher " + (d / "teacher" / "teacher.ckpt").string() + " --set ablation.tau_grid=0.5 --out " +
              (d / "ablate").string()) == 0;
  }
  if (!ok) return {false, "a command failed"};
  std::size_t files = 0, mismatches = 0;
  for (const auto& e : fs::recursive_directory_iterator(work / "a")) {
    const auto name = e.path().filename().string();
    if (name != "metrics.jsonl" && e.path().extension() != ".ckpt") continue;
    const auto twin = work / "b" / fs::relative(e.path(), work / "a");
    ++files;
    if (slurp(e.path()) != slurp(twin) || slurp(e.path()).empty()) ++mismatches;
  }
  return {files >= 20 && mismatches == 0, std::to_string(files) + " metrics/checkpoint files compared across reruns, " +
                                              std::to_string(mismatches) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "anchordistill_acceptance";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else if (arg == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
    } else {
      std::cerr << "usage: acceptance [--work DIR] [--only N[,N...]]\n";
      return 2;
    }
  }
  auto wanted = [&](int n) { return only.empty() || only.count(n) > 0; };
  fs::create_directories(work);

  std::optional<GridResult> grid;
  auto full_grid = [&]() -> const GridResult& {
    if (!grid) {
      RunConfig cfg = shipped_config();
      cfg.mode = RunMode::ablation;
      cfg.out_dir = work / "grid";
      fs::remove_all(cfg.out_dir);
      const auto t0 = Clock::now();
      GridResult g;
      g.report = ablation_run(cfg);
      g.seconds = seconds_since(t0);
      grid = std::move(g);
    }
    return *grid;
  };

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"identity zeroing", identity_zeroing},
      {"oracle equivalence", oracle_equivalence},
      {"mask laws", mask_laws},
      {"zero-coefficient degeneracy", [&] { return degeneracy(work / "degeneracy"); }},
      {"distillation benefit", [&] { return distillation_benefit(full_grid()); }},
      {"temperature robustness", [&] { return temperature_robustness(full_grid()); }},
      {"hyperparameter defaults", [&] { return defaults(work / "defaults"); }},
      {"determinism", [&] { return determinism(work / "determinism"); }},
  };

  int failures = 0;
  std::ofstream summary(work / "acceptance.txt");
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!wanted(n)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += !v.pass;
    std::ostringstream line;
    line << (v.pass ? "PASS" : "FAIL") << " criterion " << n << " " << criteria[i].first << ": " << v.detail;
    std::cout << line.str() << std::endl;
    summary << line.str() << '\n';
  }
  if (grid) {
    std::cout << "\n" << format_report(grid->report);
    summary << "\n" << format_report(grid->report);
  }
  return failures == 0 ? 0 : 1;
}
