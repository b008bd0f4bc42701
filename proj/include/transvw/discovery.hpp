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
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "transvw/config_reader.hpp"
#include "transvw/network.hpp"
#include "transvw/phantom.hpp"

namespace tvw::discovery {

struct DiscoveryConfig {
  std::size_t words = 10;      // C
  std::size_t instances = 20;  // K
  Shape crop{16, 16};
  std::vector<double> scales{0.8, 1.0, 1.2};
  std::size_t jitter = 2;
  double validation_fraction = 0.1;

  // autoencoder feature extractor
  std::vector<std::size_t> extractor_channels{8, 16, 32};
  std::size_t extractor_epochs = 40;
  std::size_t extractor_batch = 8;
  double extractor_lr = 1e-3;
  double extractor_holdout = 0.1;
  double reconstruction_threshold = 5e-3;  // held-out MSE

  std::uint64_t seed = 1;

  static DiscoveryConfig default_for_rank(std::size_t rank);
  nlohmann::json to_json() const;
  static DiscoveryConfig from_json(ConfigReader& reader, std::size_t rank);
  static DiscoveryConfig from_json(const nlohmann::json& j, std::size_t rank = 2);
  friend bool operator==(const DiscoveryConfig&, const DiscoveryConfig&) = default;
};

// Resizes a [C, spatial...] volume to `extent`: box averaging when every
// axis divides evenly, multilinear resampling otherwise.
Tensor<float> downsample(const Tensor<float>& volume, const Shape& extent);

// Multi-scale crop resampled to `crop`. Output voxel o samples the source at
// (center + jitter) + (o + 0.5 - n/2) * scale - 0.5 per axis, multilinearly;
// at scale 1 every sample lands on a voxel, so the crop is an exact copy.
Tensor<float> crop_patch(const Tensor<float>& volume, std::span<const std::size_t> center,
                         std::span<const long> jitter, double scale, const Shape& crop);

// Closed per-axis range of word coordinates for which crops at every scale
// and jitter stay inside the grid. Throws ConfigError when empty.
struct CoordinateRange {
  std::vector<std::size_t> lo, hi;
  std::size_t count() const;
};
CoordinateRange valid_coordinates(const Shape& grid, const DiscoveryConfig& config);

struct ExtractorReport {
  std::vector<double> train_loss;    // per epoch, mean MSE
  std::vector<double> holdout_loss;  // per epoch
  std::vector<std::uint64_t> holdout_patients;
  bool threshold_met = false;
};

struct FeatureExtractor {
  Network<float> network;
  Shape input_extent;
  ExtractorReport report;

  std::size_t latent_dim() const;
  // Flattened bottleneck activation of the downsampled volume.
  std::vector<float> embed(const Tensor<float>& volume) const;
};

NetworkConfig extractor_network_config(const DiscoveryConfig& config);

// Autoencoder on whole volumes (no skips, no head), MSE reconstruction.
// Throws NumericalError if the loss diverges.
FeatureExtractor train_feature_extractor(const phantom::PhantomCohort& cohort,
                                         const DiscoveryConfig& config,
                                         std::size_t threads = 0);

struct Latents {
  std::vector<std::uint64_t> ids;
  std::vector<std::vector<float>> codes;
};
Latents embed_cohort(const FeatureExtractor& extractor,
                     const phantom::PhantomCohort& cohort, std::size_t threads = 0);

// The reference followed by its K-1 nearest patients in latent L2 distance,
// ties broken by ascending patient id. Throws UsageError if K exceeds the
// cohort or the reference is unknown.
std::vector<std::uint64_t> nearest_patients(const Latents& latents,
                                            std::uint64_t reference, std::size_t k);
std::vector<std::uint64_t> nearest_patients(const FeatureExtractor& extractor,
                                            const phantom::PhantomCohort& cohort,
                                            std::uint64_t reference, std::size_t k);

struct VisualWordInstance {
  Tensor<float> patch;  // [1, crop...]
  std::size_t label = 0;
  std::size_t index = 0;  // k within the word
  std::uint64_t patient = 0;
  std::vector<std::size_t> coordinate;
  double scale = 1.0;
  std::vector<long> jitter;
};

struct WordRecord {
  std::size_t label = 0;
  std::uint64_t reference = 0;
  std::vector<std::uint64_t> neighbors;
  std::vector<std::size_t> coordinate;
};

struct VisualWordDataset {
  std::size_t words = 0;
  std::size_t instances = 0;
  Shape crop;
  std::vector<WordRecord> word_records;
  std::vector<VisualWordInstance> items;  // word-major: label * K + k
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> validation_indices;
  nlohmann::json manifest;

  const VisualWordInstance& instance(std::size_t word, std::size_t k) const;
};

// Draws each word's reference patient, neighborhood and coordinate, then one
// crop per neighbor at a random scale and jitter.
VisualWordDataset extract_visual_words(const FeatureExtractor& extractor,
                                       const phantom::PhantomCohort& cohort,
                                       const DiscoveryConfig& config,
                                       std::size_t threads = 0);
// Same, from precomputed latents (the extractor is only used to embed).
VisualWordDataset extract_visual_words(const Latents& latents,
                                       const phantom::PhantomCohort& cohort,
                                       const DiscoveryConfig& config,
                                       std::size_t threads = 0,
                                       const std::string& extractor_digest = "");

// Regenerates every patch from a cohort and a manifest alone.
VisualWordDataset replay_from_manifest(const phantom::PhantomCohort& cohort,
                                       const nlohmann::json& manifest);

// Majority-vote agreement of each word's instances with the generator's
// ground truth at the word coordinate (per source patient's cluster),
// averaged over words.
double word_purity(const VisualWordDataset& dataset, const phantom::PhantomCohort& cohort);

struct PatchDistances {
  double within = 0.0;  // mean pairwise L2 between instances of one word
  double cross = 0.0;   // mean pairwise L2 between instances of different words
};
PatchDistances patch_distances(const VisualWordDataset& dataset);

// `manifest.json` plus one tensor file per instance (`word{c}_inst{k}.tvw`).
void persist_dataset(const VisualWordDataset& dataset, const std::filesystem::path& dir,
                     const nlohmann::json& extra_meta = nlohmann::json::object());
// Throws IntegrityError when any payload's digest disagrees with the manifest.
VisualWordDataset load_dataset(const std::filesystem::path& dir);

std::string instance_file_name(std::size_t word, std::size_t k);

}  // namespace tvw::discovery
