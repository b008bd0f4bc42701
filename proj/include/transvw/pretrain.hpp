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

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "transvw/config_reader.hpp"
#include "transvw/discovery.hpp"
#include "transvw/network.hpp"
#include "transvw/perturb.hpp"
#include "transvw/phantom.hpp"

namespace tvw::pretrain {

enum class Variant {
  transvw,
  restoration_only,
  classification_only,
  rotation,
  inpainting,
  context_restoration,
  genesis,
};
std::string_view to_string(Variant v);
Variant variant_from_string(std::string_view name);
// Variants that already learn from visual-word labels; add_vw is meaningless.
bool is_visual_word_variant(Variant v);

inline constexpr std::string_view kWordHead = "vw";
inline constexpr std::string_view kRotationHead = "rot";

struct PretrainConfig {
  Variant variant = Variant::transvw;
  bool add_vw = false;
  double lambda_cls = 0.01;
  double lambda_rec = 1.0;
  bool squared_restoration = false;
  std::size_t batch = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  double min_delta = 1e-4;
  // Only used for random-crop sources; visual-word datasets carry a split.
  double validation_fraction = 0.1;
  std::size_t crop_samples = 200;
  std::vector<std::size_t> channels{8, 16, 32};
  std::size_t head_hidden = 64;
  perturb::PerturbPolicy policy;
  std::uint64_t seed = 1;

  // Applies the variant's forced weights (restoration_only: lambda_cls = 0,
  // classification_only: lambda_rec = 0) and checks the rest.
  void validate() const;
  PretrainConfig normalized() const;

  nlohmann::json to_json() const;  // includes the policy
  // The policy is read separately (its own config section).
  static PretrainConfig from_json(ConfigReader& reader);
  static PretrainConfig from_json(const nlohmann::json& j);
  std::string digest() const;
};

// Joint objective: lambda_cls * l_cls + lambda_rec * l_rec. A term whose weight is
// exactly zero is left out of the graph. Negative weights: UsageError.
Var<float> joint_loss(const Var<float>& l_cls, const Var<float>& l_rec, double lambda_cls,
                      double lambda_rec);
Var<double> joint_loss(const Var<double>& l_cls, const Var<double>& l_rec, double lambda_cls,
                       double lambda_rec);

// Encoder-decoder with skips, sigmoid restoration output and, for C >= 2, a
// "vw" head of C classes.
NetworkConfig transvw_network_config(const Shape& crop, std::size_t classes,
                                     const std::vector<std::size_t>& channels = {8, 16, 32},
                                     std::size_t head_hidden = 64);
Network<float> build_transvw_network(const Shape& crop, std::size_t classes,
                                     const std::vector<std::size_t>& channels,
                                     std::size_t head_hidden, std::uint64_t seed);
// Topology of any variant (with or without the add-on head).
NetworkConfig variant_network_config(const PretrainConfig& config, const Shape& crop,
                                     std::size_t classes);

// Patches with optional word labels and a train/validation split.
struct PatchSet {
  std::vector<Tensor<float>> patches;  // [1, crop...]
  std::vector<std::size_t> labels;     // empty when unlabeled
  std::size_t classes = 0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  Shape crop;
};
PatchSet patch_set(const discovery::VisualWordDataset& dataset);
// Uniform random crops (scale 1, no jitter) from random patients.
PatchSet random_crop_set(const phantom::PhantomCohort& cohort, const Shape& crop,
                         std::size_t count, double validation_fraction, std::uint64_t seed);

// 90-degree rotations in the plane of the first two spatial axes.
Tensor<float> rotate90(const Tensor<float>& patch, std::size_t quarter_turns);

// Network input/targets for one mini-batch.
struct Batch {
  Tensor<float> input;   // perturbed / distorted / rotated
  Tensor<float> target;  // clean originals
  std::vector<std::size_t> labels;           // word labels (if any)
  std::vector<std::size_t> rotation_labels;  // rotation variant
  std::vector<perturb::PerturbationSpec> specs;
};
// `stream` distinguishes draws: training batches use (epoch, batch seed),
// validation uses a fixed stream so its loss is comparable across epochs.
Batch make_batch(const PatchSet& set, const std::vector<std::size_t>& indices,
                 const PretrainConfig& config, std::uint64_t stream);

struct EpochRow {
  std::size_t epoch = 0;  // 0 = evaluation before any update
  double train_cls = 0, train_rec = 0, train_pretext = 0, train_total = 0;
  double val_cls = 0, val_rec = 0, val_pretext = 0, val_total = 0;
  double val_accuracy = 0;          // word head, NaN when absent
  double val_pretext_accuracy = 0;  // rotation head, NaN when absent
  double seconds = 0;               // wall clock; kept out of report.json
};

struct RunReport {
  std::string variant;
  bool add_vw = false;
  double lambda_cls = 0, lambda_rec = 0;
  std::vector<EpochRow> rows;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
  bool aborted = false;
  std::string diagnostic;
  std::string config_digest;
  std::uint64_t seed = 0;
  std::string checkpoint_digest;

  // Without wall-clock fields, so repeated runs are byte-identical.
  nlohmann::json to_json() const;
  std::string losses_csv() const;
  std::string timing_csv() const;
  const EpochRow& best() const;
};

struct PretrainResult {
  Network<float> network;  // best-validation weights
  RunReport report;
};

// Generic trainer over a patch set.
PretrainResult train_on(const PatchSet& set, const PretrainConfig& config);

PretrainResult train_transvw(const discovery::VisualWordDataset& dataset,
                             PretrainConfig config);
// Baselines (and the visual-word variants) on a word dataset.
PretrainResult train_pretext(const discovery::VisualWordDataset& dataset,
                             const PretrainConfig& config);
// Baselines on random crops of a cohort; add_vw needs a word dataset.
PretrainResult train_pretext(const phantom::PhantomCohort& cohort, const Shape& crop,
                             const PretrainConfig& config);

// checkpoint.tvw, report.json, losses.csv, timing.csv
void write_run(const PretrainResult& result, const std::filesystem::path& dir,
               const nlohmann::json& extra_meta = nlohmann::json::object());

}  // namespace tvw::pretrain
