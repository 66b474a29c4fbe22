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

#include "anchordistill/head.hpp"

namespace ad {

struct Checkpoint {
  HeadConfig config;
  ParamStore params;
};

// Layout: magic "ADCHKPT\0", u32 version, u32 length + key=value text of the
// HeadConfig, u32 tensor count, then per tensor u32 name length, name,
// u32 rank, u64 extents, little-endian float64 values.
void save_checkpoint(const std::filesystem::path& path, const HeadConfig& config,
                     const ParamStore& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ad
