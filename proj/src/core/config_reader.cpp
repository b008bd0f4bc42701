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

#include "transvw/config_reader.hpp"

namespace tvw {

ConfigReader::ConfigReader(const nlohmann::json& j, std::string path)
    : j_(j.is_null() ? nlohmann::json::object() : j), path_(std::move(path)) {
  if (!j_.is_object()) {
    throw ConfigError((path_.empty() ? std::string("config") : path_) +
                      ": expected an object");
  }
}

ConfigReader ConfigReader::section(const std::string& key) {
  seen_.insert(key);
  if (!j_.contains(key)) return ConfigReader(nlohmann::json::object(), field(key));
  return ConfigReader(j_.at(key), field(key));
}

const nlohmann::json& ConfigReader::raw(const std::string& key) {
  seen_.insert(key);
  return j_.at(key);
}

void ConfigReader::finish() const {
  for (const auto& item : j_.items()) {
    if (!seen_.count(item.key())) {
      throw ConfigError("unknown config key '" + field(item.key()) + "'");
    }
  }
}

}  // namespace tvw
