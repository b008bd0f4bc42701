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

#include <set>
#include <string>

#include <json.hpp>

#include "transvw/errors.hpp"

namespace tvw {

// Reads fields out of a JSON object while tracking which keys were consumed,
// so unknown keys can be rejected with their full dotted path.
class ConfigReader {
 public:
  ConfigReader(const nlohmann::json& j, std::string path);

  bool has(const std::string& key) const { return j_.contains(key); }

  // Leaves `out` untouched when the key is absent.
  template <typename V>
  void get(const std::string& key, V& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<V>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(field(key) + ": wrong type (got " +
                        std::string(j_.at(key).type_name()) + ")");
    }
  }

  ConfigReader section(const std::string& key);
  const nlohmann::json& raw(const std::string& key);

  // Throws ConfigError naming the first key that was never read.
  void finish() const;

  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  nlohmann::json j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace tvw
