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

#include "anchordistill/masks.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include "anchordistill/errors.hpp"

namespace ad {

CellRect project_box_to_grid(const BoundingBox& box, int stride, GridSize grid) {
  if (stride < 1) throw ParameterError("project_box_to_grid: stride must be >= 1");
  const double s = stride;
  CellRect r;
  r.x0 = std::max<Index>(0, static_cast<Index>(std::floor(box.x1 / s)));
  r.y0 = std::max<Index>(0, static_cast<Index>(std::floor(box.y1 / s)));
  r.x1 = std::min<Index>(grid.width, static_cast<Index>(std::ceil(box.x2 / s)));
  r.y1 = std::min<Index>(grid.height, static_cast<Index>(std::ceil(box.y2 / s)));
  if (r.x1 <= r.x0 || r.y1 <= r.y0) return CellRect{};
  return r;
}

CellSplit split_central_marginal(const CellRect& cells) {
  CellSplit out;
  const bool has_interior = cells.width() > 2 && cells.height() > 2;
  for (Index y = cells.y0; y < cells.y1; ++y) {
    for (Index x = cells.x0; x < cells.x1; ++x) {
      const bool ring = y == cells.y0 || y == cells.y1 - 1 || x == cells.x0 || x == cells.x1 - 1;
      (has_interior && !ring ? out.central : out.marginal).push_back({y, x});
    }
  }
  return out;
}

CategoryMaskSet::CategoryMaskSet(int level, int stride, GridSize grid, int num_categories,
                                 Index batch)
    : level_(level), stride_(stride), grid_(grid), num_categories_(num_categories),
      batch_(batch) {
  if (num_categories < 1) throw ParameterError("CategoryMaskSet: num_categories >= 1");
  if (batch < 1 || grid.height < 1 || grid.width < 1) {
    throw ParameterError("CategoryMaskSet: empty grid or batch");
  }
  const auto slots = static_cast<std::size_t>(slot_count());
  planes_.assign(slots, Vector::Zero(batch * grid.height * grid.width));
  masks_.resize(slots);
  present_.assign(slots, false);
}

std::size_t CategoryMaskSet::at(int slot) const {
  if (slot < 1 || slot > slot_count()) {
    throw ParameterError("mask slot " + std::to_string(slot) + " out of range");
  }
  return static_cast<std::size_t>(slot - 1);
}

const Tensor& CategoryMaskSet::mask(int slot) const {
  const Tensor& t = masks_[at(slot)];
  if (!t.defined()) throw StateError("CategoryMaskSet used before finalize()");
  return t;
}

bool CategoryMaskSet::present(int slot) const { return present_[at(slot)]; }

Index CategoryMaskSet::count(int slot) const {
  return static_cast<Index>(planes_[at(slot)].sum());
}

void CategoryMaskSet::set_cell(int slot, Index image, Cell cell) {
  if (image < 0 || image >= batch_ || cell.y < 0 || cell.y >= grid_.height || cell.x < 0 ||
      cell.x >= grid_.width) {
    throw ParameterError("set_cell: cell outside the mask grid");
  }
  planes_[at(slot)][(image * grid_.height + cell.y) * grid_.width + cell.x] = 1.0;
}

void CategoryMaskSet::finalize() {
  Vector& bg = planes_[at(background_slot())];
  bg.setOnes();
  for (int p = 1; p < background_slot(); ++p) {
    bg = (planes_[at(p)].array() > 0.0).select(0.0, bg);
  }
  const Shape shape{batch_, grid_.height, grid_.width};
  for (int p = 1; p <= slot_count(); ++p) {
    masks_[at(p)] = Tensor::from(shape, planes_[at(p)]);
    present_[at(p)] = planes_[at(p)].sum() > 0.0;
  }
}

CategoryMaskSet build_category_masks(std::span<const SceneSample* const> samples, int stride,
                                     GridSize grid, int num_categories, int level,
                                     const LevelFilter& keep) {
  const Index batch = std::max<Index>(1, static_cast<Index>(samples.size()));
  CategoryMaskSet set(level, stride, grid, num_categories, batch);
  for (std::size_t b = 0; b < samples.size(); ++b) {
    for (const BoundingBox& box : samples[b]->boxes) {
      if (box.category < 1 || box.category > num_categories) {
        throw ValidationError("category id " + std::to_string(box.category) +
                              " outside [1, " + std::to_string(num_categories) + "]");
      }
      if (keep && !keep(box)) continue;
      const CellRect rect = project_box_to_grid(box, stride, grid);
      if (rect.empty()) continue;
      const CellSplit split = split_central_marginal(rect);
      const auto image = static_cast<Index>(b);
      for (Cell c : split.central) set.set_cell(CategoryMaskSet::central_slot(box.category), image, c);
      for (Cell c : split.marginal) set.set_cell(CategoryMaskSet::marginal_slot(box.category), image, c);
    }
  }
  set.finalize();
  return set;
}

CategoryMaskSet build_category_masks(std::span<const SceneSample> samples, int stride,
                                     GridSize grid, int num_categories, int level,
                                     const LevelFilter& keep) {
  std::vector<const SceneSample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);
  return build_category_masks(std::span<const SceneSample* const>(ptrs), stride, grid,
                              num_categories, level, keep);
}

void write_mask_pgms(const CategoryMaskSet& masks, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const GridSize g = masks.grid();
  for (int p = 1; p <= masks.slot_count(); ++p) {
    const auto path = dir / ("level" + std::to_string(masks.level()) + "_slot" +
                             std::to_string(p) + ".pgm");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot write " + path.string());
    os << "P5\n" << g.width * masks.batch() << ' ' << g.height << "\n255\n";
    const Vector& v = masks.mask(p).values();
    for (Index y = 0; y < g.height; ++y) {
      for (Index b = 0; b < masks.batch(); ++b) {
        for (Index x = 0; x < g.width; ++x) {
          os.put(v[(b * g.height + y) * g.width + x] > 0 ? char(255) : char(0));
        }
      }
    }
  }
}

}  // namespace ad
