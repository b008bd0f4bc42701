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
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "transvw/discovery.hpp"
#include "transvw/phantom.hpp"
#include "transvw/pretrain.hpp"
#include "transvw/transfer.hpp"

namespace tvw::cli {

struct RunsConfig {
  std::size_t runs = 5;  // seeds per cell
  std::vector<double> fractions{0.1, 0.25, 0.5, 1.0};
  double alpha = 0.05;
  std::vector<std::size_t> words{5, 10, 20};  // ablation C values
};

struct MontageConfig {
  std::size_t words = 10;
  std::size_t instances = 10;
  std::size_t gap = 1;
};

// Everything a subcommand may read. Section seeds are not configurable: they
// derive from the root seed, so one number pins every stage.
struct RunConfig {
  std::uint64_t seed = 1;
  std::filesystem::path output = "run";  // not part of the digest
  std::size_t threads = 1;               // results do not depend on it
  std::size_t cohort_patients = 64;
  phantom::PhantomConfig phantom;
  discovery::DiscoveryConfig discovery;
  pretrain::PretrainConfig pretrain;
  transfer::TaskConfig task;
  transfer::FinetuneConfig finetune;
  transfer::ProbeConfig probe;
  RunsConfig evaluation;
  MontageConfig montage;

  // Semantic content only (no output path, no thread count).
  nlohmann::json to_json() const;
  std::string digest() const;
  std::vector<std::uint64_t> run_seeds() const;
  static RunConfig from_json(const nlohmann::json& j);
};

// `key.path=value`; the value is read as JSON when it parses, else as a string.
nlohmann::json apply_overrides(nlohmann::json config, const std::vector<std::string>& sets);
RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& sets);

// Binary PGM of words x instances patches (mid-slice along the first
// spatial axis for volumes), separated by `gap` white pixels.
struct MontageSize {
  std::size_t width = 0, height = 0;
};
MontageSize montage_size(const Shape& crop, std::size_t words, std::size_t instances,
                         std::size_t gap);
Tensor<float> montage_image(const discovery::VisualWordDataset& dataset, std::size_t words,
                            std::size_t instances, std::size_t gap);
std::string encode_pgm(const Tensor<float>& image, const std::string& comment = "");

// Re-hashes every file listed by the stage indices under `root`; returns the
// number of files checked, IntegrityError on the first mismatch.
std::size_t verify_artifacts(const std::filesystem::path& root);

// Entry point; returns the process exit code (0 ok, 1 usage, 2 config,
// 3 numerical, 4 integrity).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tvw::cli
