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

#include "anchordistill/checkpoint.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "anchordistill/binary_io.hpp"
#include "anchordistill/errors.hpp"

namespace ad {

namespace {

constexpr char kMagic[8] = {'A', 'D', 'C', 'H', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kMaxString = 1u << 20;

std::string serialize(const HeadConfig& c) {
  std::ostringstream os;
  os << "num_levels=" << c.num_levels << '\n'
     << "channels=" << c.channels << '\n'
     << "num_convs=" << c.num_convs << '\n'
     << "num_categories=" << c.num_categories << '\n'
     << "kernel_size=" << c.kernel_size << '\n'
     << "backbone_width=" << c.backbone_width << '\n';
  return os.str();
}

HeadConfig deserialize(const std::string& text) {
  std::map<std::string, int> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("checkpoint: bad config line '" + line + "'");
    try {
      kv[line.substr(0, eq)] = std::stoi(line.substr(eq + 1));
    } catch (const std::exception&) {
      throw FormatError("checkpoint: bad config value in '" + line + "'");
    }
  }
  auto get = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(std::string("checkpoint: missing config key ") + key);
    return it->second;
  };
  HeadConfig c;
  c.num_levels = get("num_levels");
  c.channels = get("channels");
  c.num_convs = get("num_convs");
  c.num_categories = get("num_categories");
  c.kernel_size = get("kernel_size");
  c.backbone_width = get("backbone_width");
  return c;
}

std::string read_string(std::istream& is) {
  const auto len = io::get<std::uint32_t>(is);
  if (len > kMaxString) throw FormatError("checkpoint: oversized string field");
  std::string s(len, '\0');
  if (!is.read(s.data(), len)) throw FormatError("checkpoint: truncated string field");
  return s;
}

void write_string(std::ostream& os, const std::string& s) {
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const HeadConfig& config,
                     const ParamStore& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof(kMagic));
  io::put<std::uint32_t>(os, kVersion);
  write_string(os, serialize(config));
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(params.items().size()));
  for (const auto& [name, t] : params.items()) {
    write_string(os, name);
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.dim()));
    for (Index e : t.shape()) io::put<std::uint64_t>(os, static_cast<std::uint64_t>(e));
    for (Index i = 0; i < t.size(); ++i) io::put<double>(os, t[i]);
  }
  if (!os) throw FormatError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || !std::equal(magic, magic + 8, kMagic)) {
    throw FormatError("not a checkpoint (bad magic): " + path.string());
  }
  const auto version = io::get<std::uint32_t>(is);
  if (version != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.config = deserialize(read_string(is));
  try {
    ck.config.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config invalid: ") + e.what());
  }
  const auto expected = parameter_shapes(ck.config);
  const auto count = io::get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = read_string(is);
    const auto rank = io::get<std::uint32_t>(is);
    if (rank > 8) throw FormatError("checkpoint: implausible rank for " + name);
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<Index>(io::get<std::uint64_t>(is));
    auto it = expected.find(name);
    if (it == expected.end() || it->second != shape) {
      throw FormatError("checkpoint: unexpected tensor " + name + " " + to_string(shape));
    }
    Vector v(numel(shape));
    for (Index j = 0; j < v.size(); ++j) v[j] = io::get<double>(is);
    ck.params.insert(name, Tensor::from(shape, std::move(v), true));
  }
  if (ck.params.items().size() != expected.size()) {
    throw FormatError("checkpoint: parameter set incomplete");
  }
  return ck;
}

}  // namespace ad
