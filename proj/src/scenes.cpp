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

#include "anchordistill/scenes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "anchordistill/binary_io.hpp"
#include "anchordistill/errors.hpp"
#include "anchordistill/random.hpp"

namespace ad {

namespace {

constexpr int kMaxPlacementAttempts = 100;
constexpr std::uint64_t kCountStream = 0;
constexpr std::uint64_t kNoiseStream = 0xfeedULL;
constexpr char kDumpMagic[8] = {'A', 'D', 'S', 'C', 'E', 'N', 'E', 'S'};
constexpr std::uint16_t kDumpVersion = 1;

// Rendered footprint of one object, before occlusion.
struct Shape2d {
  BoundingBox box;
  bool disk = false;
  double cx = 0, cy = 0, radius = 0;

  bool covers(int px, int py) const {
    if (!disk) return px >= box.x1 && px < box.x2 && py >= box.y1 && py < box.y2;
    const double dx = px + 0.5 - cx, dy = py + 0.5 - cy;
    return dx * dx + dy * dy <= radius * radius;
  }
};

Shape2d draw_shape(CounterRng& rng, const SceneSpec& spec) {
  Shape2d s;
  s.disk = rng.uniform() < 0.5;
  const int w = static_cast<int>(rng.uniform_int(spec.min_box, spec.max_box));
  const int h = s.disk ? w : static_cast<int>(rng.uniform_int(spec.min_box, spec.max_box));
  const int x0 = static_cast<int>(rng.uniform_int(0, spec.width - w));
  const int y0 = static_cast<int>(rng.uniform_int(0, spec.height - h));
  if (!s.disk) {
    s.box = {double(x0), double(y0), double(x0 + w), double(y0 + h)};
    return s;
  }
  s.cx = x0 + w / 2.0;
  s.cy = y0 + w / 2.0;
  s.radius = w / 2.0;
  // Tight box around the rasterized disk.
  int minx = x0 + w, maxx = x0 - 1, miny = y0 + w, maxy = y0 - 1;
  for (int py = y0; py < y0 + w; ++py) {
    for (int px = x0; px < x0 + w; ++px) {
      if (!s.covers(px, py)) continue;
      minx = std::min(minx, px);
      maxx = std::max(maxx, px);
      miny = std::min(miny, py);
      maxy = std::max(maxy, py);
    }
  }
  s.box = {double(minx), double(miny), double(maxx + 1), double(maxy + 1)};
  return s;
}

bool too_occluded(const BoundingBox& candidate, const std::vector<Shape2d>& placed) {
  for (const auto& other : placed) {
    const double inter = intersection_area(candidate, other.box);
    if (inter > 0.5 * std::min(candidate.area(), other.box.area())) return true;
  }
  return false;
}

double hsv_channel(double hue, double sat, double val, int channel) {
  // channel 0 = R, 1 = G, 2 = B
  const double k = std::fmod(channel == 0 ? 5.0 + hue * 6.0 : channel == 1 ? 3.0 + hue * 6.0
                                                                          : 1.0 + hue * 6.0,
                             6.0);
  return val - val * sat * std::max(0.0, std::min({k, 4.0 - k, 1.0}));
}

}  // namespace

void SceneSpec::validate() const {
  if (height < 1 || width < 1) throw ParameterError("scene: image size must be positive");
  if (num_categories < 1) throw ParameterError("scene: num_categories >= 1");
  if (min_objects < 0 || min_objects > max_objects) {
    throw ParameterError("scene: objects_per_image range is inverted");
  }
  if (min_box < 1 || min_box > max_box) throw ParameterError("scene: box_size_range is inverted");
  if (max_box > std::min(height, width)) throw ParameterError("scene: boxes do not fit the image");
  if (noise_std < 0) throw ParameterError("scene: noise_std must be >= 0");
}

std::array<double, 3> category_color(int category, int num_categories) {
  const double hue = static_cast<double>(category - 1) / num_categories;
  return {hsv_channel(hue, 0.85, 0.9, 0), hsv_channel(hue, 0.85, 0.9, 1),
          hsv_channel(hue, 0.85, 0.9, 2)};
}

SceneSample generate_scene(const SceneSpec& spec, std::int64_t index) {
  spec.validate();
  if (index < 0) throw ParameterError("generate_scene: index must be >= 0");
  const auto idx = static_cast<std::uint64_t>(index);

  CounterRng count_rng(stream_key({spec.seed, idx, kCountStream}));
  const auto wanted = count_rng.uniform_int(spec.min_objects, spec.max_objects);

  SceneSample sample;
  std::vector<Shape2d> placed;
  std::vector<int> categories;
  for (std::int64_t o = 0; o < wanted; ++o) {
    CounterRng rng(stream_key({spec.seed, idx, static_cast<std::uint64_t>(o) + 1}));
    const int category = static_cast<int>(rng.uniform_int(1, spec.num_categories));
    bool ok = false;
    Shape2d shape;
    for (int attempt = 0; attempt < kMaxPlacementAttempts && !ok; ++attempt) {
      shape = draw_shape(rng, spec);
      ok = !too_occluded(shape.box, placed);
    }
    if (!ok) {
      ++sample.placement_warnings;
      break;
    }
    placed.push_back(shape);
    categories.push_back(category);
  }

  const int h = spec.height, w = spec.width;
  Vector pixels(3 * h * w);
  CounterRng noise(stream_key({spec.seed, idx, kNoiseStream}));
  for (int py = 0; py < h; ++py) {
    for (int px = 0; px < w; ++px) {
      std::array<double, 3> color = {kBackgroundLevel, kBackgroundLevel, kBackgroundLevel};
      for (std::size_t o = 0; o < placed.size(); ++o) {  // later objects occlude
        if (placed[o].covers(px, py)) color = category_color(categories[o], spec.num_categories);
      }
      for (int c = 0; c < 3; ++c) {
        const double n = spec.noise_std > 0 ? spec.noise_std * noise.normal() : 0.0;
        pixels[(c * h + py) * w + px] = std::clamp(color[c] + n, 0.0, 1.0);
      }
    }
  }
  sample.image = Tensor::from(Shape{3, h, w}, std::move(pixels));
  for (std::size_t o = 0; o < placed.size(); ++o) {
    BoundingBox box = placed[o].box;
    box.category = categories[o];
    sample.boxes.push_back(box);
    sample.labels.push_back(categories[o]);
  }
  return sample;
}

std::vector<SceneSample> generate_dataset(const SceneSpec& spec, std::int64_t n,
                                          std::int64_t first) {
  if (n < 1) throw ParameterError("generate_dataset: n must be >= 1");
  std::vector<SceneSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) out.push_back(generate_scene(spec, first + i));
  return out;
}

Tensor batch_images(std::span<const SceneSample* const> samples) {
  if (samples.empty()) throw DimensionError("batch_images: empty batch");
  const Shape& s = samples.front()->image.shape();
  const Index len = samples.front()->image.size();
  Vector v(len * static_cast<Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i]->image.shape() != s) throw DimensionError("batch_images: mixed image sizes");
    v.segment(static_cast<Index>(i) * len, len) = samples[i]->image.values();
  }
  return Tensor::from(Shape{static_cast<Index>(samples.size()), s[0], s[1], s[2]}, std::move(v));
}

void write_scene_dump(const std::filesystem::path& path, std::span<const SceneSample> samples) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  Index h = 0, w = 0;
  if (!samples.empty()) {
    h = samples.front().image.extent(1);
    w = samples.front().image.extent(2);
  }
  os.write(kDumpMagic, sizeof(kDumpMagic));
  io::put<std::uint16_t>(os, kDumpVersion);
  io::put<std::uint16_t>(os, 3);
  io::put<std::uint16_t>(os, static_cast<std::uint16_t>(h));
  io::put<std::uint16_t>(os, static_cast<std::uint16_t>(w));
  for (const auto& s : samples) {
    if (s.image.extent(1) != h || s.image.extent(2) != w) {
      throw DimensionError("write_scene_dump: mixed image sizes");
    }
    for (Index i = 0; i < s.image.size(); ++i) io::put<float>(os, static_cast<float>(s.image[i]));
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(s.boxes.size()));
    for (const auto& b : s.boxes) {
      for (double v : {b.x1, b.y1, b.x2, b.y2}) io::put<float>(os, static_cast<float>(v));
    }
    for (int label : s.labels) io::put<std::uint16_t>(os, static_cast<std::uint16_t>(label));
  }
  if (!os) throw FormatError("write failed: " + path.string());
}

std::vector<SceneSample> read_scene_dump(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || !std::equal(magic, magic + 8, kDumpMagic)) {
    throw FormatError("bad scene dump magic in " + path.string());
  }
  if (io::get<std::uint16_t>(is) != kDumpVersion) throw FormatError("unsupported dump version");
  const Index channels = io::get<std::uint16_t>(is);
  const Index h = io::get<std::uint16_t>(is);
  const Index w = io::get<std::uint16_t>(is);
  std::vector<SceneSample> out;
  while (is.peek() != std::char_traits<char>::eof()) {
    SceneSample s;
    Vector pixels(channels * h * w);
    for (Index i = 0; i < pixels.size(); ++i) pixels[i] = io::get<float>(is);
    s.image = Tensor::from(Shape{channels, h, w}, std::move(pixels));
    const auto count = io::get<std::uint32_t>(is);
    s.boxes.resize(count);
    for (auto& b : s.boxes) {
      b.x1 = io::get<float>(is);
      b.y1 = io::get<float>(is);
      b.x2 = io::get<float>(is);
      b.y2 = io::get<float>(is);
    }
    for (auto& b : s.boxes) {
      b.category = io::get<std::uint16_t>(is);
      s.labels.push_back(b.category);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace ad
