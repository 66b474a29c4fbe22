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

// Converters between library tensors and the oracle's nested vectors, plus
// the seeded micro-case generator shared by unit and acceptance tests.

#pragma once

#include <vector>

#include "anchordistill/distill.hpp"
#include "anchordistill/masks.hpp"
#include "anchordistill/random.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

namespace ad::test {

inline oracle::Map to_map(const Tensor& t) {
  const Index B = t.dim() == 4 ? t.extent(0) : 1;
  const Index C = t.extent(-3), H = t.extent(-2), W = t.extent(-1);
  oracle::Map m(B, std::vector(C, std::vector(H, std::vector<double>(W))));
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c)
      for (Index y = 0; y < H; ++y)
        for (Index x = 0; x < W; ++x) m[b][c][y][x] = t[((b * C + c) * H + y) * W + x];
  return m;
}

inline std::map<int, oracle::Plane> to_planes(const CategoryMaskSet& masks) {
  const GridSize g = masks.grid();
  std::map<int, oracle::Plane> out;
  for (int slot = 1; slot <= masks.slot_count(); ++slot) {
    const Tensor& t = masks.mask(slot);
    oracle::Plane p(masks.batch(), std::vector(g.height, std::vector<double>(g.width)));
    for (Index b = 0; b < masks.batch(); ++b)
      for (Index y = 0; y < g.height; ++y)
        for (Index x = 0; x < g.width; ++x) p[b][y][x] = t[(b * g.height + y) * g.width + x];
    out[slot] = p;
  }
  return out;
}

struct MicroCase {
  std::vector<Tensor> student, teacher;  // one [B,C,H,W] map per (m,k) pair
  std::vector<CategoryMaskSet> masks;    // parallel to the maps
};

// Random grids up to 4x4, C in [1,3], 1 or 2 categories (at most 5 slots),
// batch 1 or 2, 1 to 3 pairs. Masks are random cell patterns, not boxes.
inline MicroCase make_micro_case(std::uint64_t seed, bool requires_grad = false) {
  CounterRng rng(stream_key({0xca5e, seed}));
  MicroCase mc;
  const Index h = rng.uniform_int(1, 4), w = rng.uniform_int(1, 4);
  const Index c = rng.uniform_int(1, 3), b = rng.uniform_int(1, 2);
  const int cats = static_cast<int>(rng.uniform_int(1, 2));
  const int pairs = static_cast<int>(rng.uniform_int(1, 3));
  for (int i = 0; i < pairs; ++i) {
    const std::uint64_t s = seed * 16 + static_cast<std::uint64_t>(i);
    mc.student.push_back(random_tensor({b, c, h, w}, s * 2, requires_grad, 2.0));
    mc.teacher.push_back(random_tensor({b, c, h, w}, s * 2 + 1, false, 2.0));
    CategoryMaskSet m(i, 4, {h, w}, cats, b);
    for (int slot = 1; slot < m.background_slot(); ++slot) {
      for (Index n = 0; n < b; ++n)
        for (Index y = 0; y < h; ++y)
          for (Index x = 0; x < w; ++x)
            if (rng.uniform() < 0.3) m.set_cell(slot, n, {y, x});
    }
    m.finalize();
    mc.masks.push_back(std::move(m));
  }
  return mc;
}

}  // namespace ad::test
