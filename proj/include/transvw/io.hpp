// Copyright 2026 The transvw Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "transvw/tensor.hpp"

namespace tvw {

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temporary and renames over `path`, so a reader never
// observes a partially written file under its final name.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

enum class Precision { f32, f64 };

template <typename T>
constexpr Precision precision_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? Precision::f32 : Precision::f64;
}

// Raw tensor file: a textual header
//
//   TVWTENSOR 1
//   precision f32|f64
//   byteorder little
//   meta <one-line JSON>
//   count <n>
//   tensor <name> <rank> <extents...>      (n lines)
//   end
//
// followed by each tensor's elements as contiguous little-endian bytes in
// header order. Checkpoints, patch files and cohort volumes share it.
template <typename T>
struct TensorBundle {
  std::vector<std::pair<std::string, Tensor<T>>> tensors;
  nlohmann::json meta = nlohmann::json::object();

  const Tensor<T>& at(std::string_view name) const;
};

template <typename T>
std::string encode_tensor_bundle(const TensorBundle<T>& bundle);

// Elements stored at the other precision are converted on load.
template <typename T>
TensorBundle<T> decode_tensor_bundle(std::string_view bytes);

template <typename T>
void write_tensor_bundle(const std::filesystem::path& path,
                         const TensorBundle<T>& bundle) {
  write_file_atomic(path, encode_tensor_bundle(bundle));
}

template <typename T>
TensorBundle<T> read_tensor_bundle(const std::filesystem::path& path) {
  return decode_tensor_bundle<T>(read_file(path));
}

}  // namespace tvw
