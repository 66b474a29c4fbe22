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
#include <functional>
#include <span>
#include <vector>

#include "anchordistill/box.hpp"
#include "anchordistill/scenes.hpp"
#include "anchordistill/tensor.hpp"

namespace ad {

struct GridSize {
  Index height = 0;
  Index width = 0;
};

/// Half-open cell rectangle [x0, x1) x [y0, y1) on a feature grid.
struct CellRect {
  Index x0 = 0, x1 = 0, y0 = 0, y1 = 0;

  Index width() const { return x1 > x0 ? x1 - x0 : 0; }
  Index height() const { return y1 > y0 ? y1 - y0 : 0; }
  Index area() const { return width() * height(); }
  bool empty() const { return area() == 0; }
};

struct Cell {
  Index y = 0, x = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

struct CellSplit {
  std::vector<Cell> central;
  std::vector<Cell> marginal;
};

CellRect project_box_to_grid(const BoundingBox& box, int stride, GridSize grid);

/// Marginal = the one-cell outer ring, central = the interior. Rectangles
/// with no interior (either side <= 2 cells) are entirely marginal.
CellSplit split_central_marginal(const CellRect& cells);

/// Slot p in [1, 2i+1]: 2j-1 central of category j, 2j marginal, 2i+1 background.
class CategoryMaskSet {
 public:
  CategoryMaskSet(int level, int stride, GridSize grid, int num_categories, Index batch);

  static int central_slot(int category) { return 2 * category - 1; }
  static int marginal_slot(int category) { return 2 * category; }
  int background_slot() const { return 2 * num_categories_ + 1; }
  int slot_count() const { return 2 * num_categories_ + 1; }

  int level() const { return level_; }
  int stride() const { return stride_; }
  GridSize grid() const { return grid_; }
  int num_categories() const { return num_categories_; }
  Index batch() const { return batch_; }

  // [B,H,W] binary plane of a slot; one image per batch entry.
  const Tensor& mask(int slot) const;
  bool present(int slot) const;
  // Number of set cells over the whole batch.
  Index count(int slot) const;

  void set_cell(int slot, Index image, Cell cell);
  // Fills the background slot and refreshes presence flags.
  void finalize();

 private:
  std::size_t at(int slot) const;

  int level_, stride_;
  GridSize grid_;
  int num_categories_;
  Index batch_;
  std::vector<Vector> planes_;
  std::vector<Tensor> masks_;
  std::vector<bool> present_;
};

/// Decides whether an instance is rasterized at a level (all-levels by default).
using LevelFilter = std::function<bool(const BoundingBox&)>;

/// Batch-level masks. An empty batch is treated as one image without instances.
CategoryMaskSet build_category_masks(std::span<const SceneSample* const> samples, int stride,
                                     GridSize grid, int num_categories, int level = 0,
                                     const LevelFilter& keep = {});
CategoryMaskSet build_category_masks(std::span<const SceneSample> samples, int stride,
                                     GridSize grid, int num_categories, int level = 0,
                                     const LevelFilter& keep = {});

/// Debug dump: one binary PGM per slot, batch images tiled left to right.
void write_mask_pgms(const CategoryMaskSet& masks, const std::filesystem::path& dir);

}  // namespace ad
