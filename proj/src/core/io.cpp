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

#include "transvw/io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace tvw {

std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(),
                 nullptr) != 1) {
    throw IntegrityError("sha256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path.string() + " for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw UsageError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw UsageError("write to " + tmp.string() + " failed");
  }
  std::filesystem::rename(tmp, path);
}

namespace {

template <typename U>
void append_le(std::string& out, const std::vector<U>& values) {
  const std::size_t offset = out.size();
  out.resize(offset + values.size() * sizeof(U));
  std::memcpy(out.data() + offset, values.data(), values.size() * sizeof(U));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      std::reverse(out.begin() + offset + i * sizeof(U),
                   out.begin() + offset + (i + 1) * sizeof(U));
    }
  }
}

template <typename U>
std::vector<U> take_le(std::string_view bytes, std::size_t& pos, std::size_t n) {
  if (bytes.size() - pos < n * sizeof(U)) {
    throw IntegrityError("tensor payload truncated: need " +
                         std::to_string(n * sizeof(U)) + " bytes, have " +
                         std::to_string(bytes.size() - pos));
  }
  std::vector<U> values(n);
  std::memcpy(values.data(), bytes.data() + pos, n * sizeof(U));
  if constexpr (std::endian::native == std::endian::big) {
    auto* raw = reinterpret_cast<char*>(values.data());
    for (std::size_t i = 0; i < n; ++i)
      std::reverse(raw + i * sizeof(U), raw + (i + 1) * sizeof(U));
  }
  pos += n * sizeof(U);
  return values;
}

std::string_view next_line(std::string_view bytes, std::size_t& pos) {
  const std::size_t end = bytes.find('\n', pos);
  if (end == std::string_view::npos) {
    throw IntegrityError("tensor header truncated");
  }
  std::string_view line = bytes.substr(pos, end - pos);
  pos = end + 1;
  return line;
}

std::string expect_key(std::string_view line, std::string_view key) {
  if (line.substr(0, key.size()) != key || line.size() <= key.size() ||
      line[key.size()] != ' ') {
    throw IntegrityError("tensor header: expected '" + std::string(key) +
                         "', got '" + std::string(line.substr(0, 40)) + "'");
  }
  return std::string(line.substr(key.size() + 1));
}

}  // namespace

template <typename T>
const Tensor<T>& TensorBundle<T>::at(std::string_view name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw UsageError("tensor bundle has no entry '" + std::string(name) + "'");
}

template <typename T>
std::string encode_tensor_bundle(const TensorBundle<T>& bundle) {
  std::string out = "TVWTENSOR 1\n";
  out += std::string("precision ") +
         (precision_of<T>() == Precision::f32 ? "f32" : "f64") + "\n";
  out += "byteorder little\n";
  out += "meta " + bundle.meta.dump() + "\n";
  out += "count " + std::to_string(bundle.tensors.size()) + "\n";
  for (const auto& [name, t] : bundle.tensors) {
    if (name.empty() || name.find_first_of(" \n\t") != std::string::npos) {
      throw UsageError("tensor name '" + name + "' must be non-empty without spaces");
    }
    out += "tensor " + name + " " + std::to_string(t.rank());
    for (std::size_t e : t.shape()) out += " " + std::to_string(e);
    out += "\n";
  }
  out += "end\n";
  for (const auto& entry : bundle.tensors) append_le(out, entry.second.storage());
  return out;
}

template <typename T>
TensorBundle<T> decode_tensor_bundle(std::string_view bytes) {
  std::size_t pos = 0;
  if (next_line(bytes, pos) != "TVWTENSOR 1") {
    throw IntegrityError("not a tensor file (bad magic or version)");
  }
  const std::string precision = expect_key(next_line(bytes, pos), "precision");
  if (precision != "f32" && precision != "f64") {
    throw IntegrityError("unknown precision '" + precision + "'");
  }
  if (expect_key(next_line(bytes, pos), "byteorder") != "little") {
    throw IntegrityError("unsupported byte order");
  }
  TensorBundle<T> bundle;
  try {
    bundle.meta = nlohmann::json::parse(expect_key(next_line(bytes, pos), "meta"));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("tensor header meta: ") + e.what());
  }
  std::size_t count = 0;
  std::vector<std::pair<std::string, Shape>> entries;
  {
    std::istringstream ss(expect_key(next_line(bytes, pos), "count"));
    if (!(ss >> count)) throw IntegrityError("tensor header: bad count");
  }
  for (std::size_t i = 0; i < count; ++i) {
    std::istringstream ss(expect_key(next_line(bytes, pos), "tensor"));
    std::string name;
    std::size_t rank = 0;
    if (!(ss >> name >> rank)) throw IntegrityError("tensor header: bad entry");
    Shape shape(rank);
    for (auto& e : shape)
      if (!(ss >> e) || e == 0) throw IntegrityError("tensor header: bad extent");
    entries.emplace_back(std::move(name), std::move(shape));
  }
  if (next_line(bytes, pos) != "end") throw IntegrityError("tensor header: missing end");
  for (auto& [name, shape] : entries) {
    const std::size_t n = shape_numel(shape);
    std::vector<T> values;
    if (precision == "f32") {
      auto raw = take_le<float>(bytes, pos, n);
      values.assign(raw.begin(), raw.end());
    } else {
      auto raw = take_le<double>(bytes, pos, n);
      values.assign(raw.begin(), raw.end());
    }
    bundle.tensors.emplace_back(name, Tensor<T>(shape, std::move(values)));
  }
  if (pos != bytes.size()) {
    throw IntegrityError("tensor file has " + std::to_string(bytes.size() - pos) +
                         " trailing bytes");
  }
  return bundle;
}

template struct TensorBundle<float>;
template struct TensorBundle<double>;
template std::string encode_tensor_bundle<float>(const TensorBundle<float>&);
template std::string encode_tensor_bundle<double>(const TensorBundle<double>&);
template TensorBundle<float> decode_tensor_bundle<float>(std::string_view);
template TensorBundle<double> decode_tensor_bundle<double>(std::string_view);

}  // namespace tvw
