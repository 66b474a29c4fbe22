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

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <type_traits>

#include "anchordistill/errors.hpp"

namespace ad::io {

// Little-endian fixed-width encoding independent of host byte order.
template <typename T>
void put(std::ostream& os, T value) {
  static_assert(std::is_arithmetic_v<T>);
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
            std::conditional_t<sizeof(T) == 4, std::uint32_t,
            std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
  U bits;
  std::memcpy(&bits, &value, sizeof(T));
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  static_assert(std::is_arithmetic_v<T>);
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
            std::conditional_t<sizeof(T) == 4, std::uint32_t,
            std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw FormatError("unexpected end of file");
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(static_cast<U>(buf[i]) << (8 * i));
  T value;
  std::memcpy(&value, &bits, sizeof(T));
  return value;
}

}  // namespace ad::io
