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
#include <string_view>
#include <vector>

#include <json.hpp>

#include "transvw/config_reader.hpp"
#include "transvw/tensor.hpp"

namespace tvw::phantom {

inline constexpr int kBackground = -1;

// Shape ids of the pattern vocabulary.
enum ShapeId : int { kBlob = 0, kRing = 1, kBar = 2, kCross = 3 };
inline constexpr int kVocabularySize = 4;

std::string_view shape_name(int shape_id);  // "background" for kBackground

struct PhantomConfig {
  Shape grid{64, 64};
  std::size_t sites = 9;
  std::vector<int> vocabulary{kBlob, kRing, kBar, kCross};
  double pattern_radius = 3.5;  // voxels
  // Ground-truth region of a site: axis-aligned box of this half-extent.
  std::size_t region_half_extent = 4;
  // Minimum distance (voxels) of every site center from the border, per axis.
  Shape margin{12, 12};
  // Max per-axis displacement (voxels) of the patient warp.
  double deformation = 1.5;
  double noise = 0.03;
  std::size_t clusters = 2;
  std::uint64_t seed = 1;

  static PhantomConfig default_2d() { return {}; }
  static PhantomConfig default_3d();

  std::size_t rank() const { return grid.size(); }

  nlohmann::json to_json() const;
  // Missing fields keep the defaults of the grid's rank.
  static PhantomConfig from_json(ConfigReader& reader);
  static PhantomConfig from_json(const nlohmann::json& j);

  friend bool operator==(const PhantomConfig&, const PhantomConfig&) = default;
};

struct Site {
  std::vector<std::size_t> center;
  int shape_id = kBlob;
};

// Smooth background component: amplitude * cos(2*pi * k.u / grid + phase).
struct Wave {
  std::vector<double> k;
  double amplitude = 0.0;
  double phase = 0.0;
};

// Everything patients of one appearance cluster share.
struct ClusterLayout {
  std::vector<Site> sites;
  double base = 0.5;
  std::vector<Wave> waves;
};

struct Volume {
  std::uint64_t patient_id = 0;
  std::size_t cluster = 0;
  std::uint64_t seed = 0;
  Tensor<float> data;  // [1, spatial...]
};

struct PhantomCohort {
  PhantomConfig config;
  std::vector<ClusterLayout> layouts;
  std::vector<Volume> patients;

  const Volume& patient(std::uint64_t id) const;
  std::size_t index_of(std::uint64_t id) const;
};

// Validates the config and lays out sites and cluster backgrounds. Throws
// ConfigError when the sites cannot fit the grid with the margin, when
// their regions would touch, or when deformation >= spacing / 2.
std::vector<ClusterLayout> build_layouts(const PhantomConfig& config);

std::size_t cluster_of(const PhantomConfig& config, std::uint64_t patient_id);
std::uint64_t patient_seed(const PhantomConfig& config, std::uint64_t patient_id);

Volume render_patient(const PhantomConfig& config,
                      std::span<const ClusterLayout> layouts,
                      std::uint64_t patient_id);

// Binary map of the voxels where a site of `shape_id` draws at least
// `threshold` of its peak, in the patient's warped frame (noise-free).
Tensor<float> render_pattern_mask(const PhantomConfig& config,
                                  std::span<const ClusterLayout> layouts,
                                  std::uint64_t patient_id, int shape_id,
                                  double threshold = 0.5);

// Patients get ids first_id .. first_id + n - 1; volumes are identical
// whatever the thread count.
PhantomCohort generate_cohort(const PhantomConfig& config, std::size_t n_patients,
                              std::uint64_t first_id = 0, std::size_t threads = 0);

// Shape id of the site region containing `coordinate` in the given cluster's
// canonical layout, or kBackground.
int ground_truth_at(const PhantomConfig& config,
                    std::span<const ClusterLayout> layouts,
                    std::span<const std::size_t> coordinate, std::size_t cluster);
int ground_truth_at(const PhantomCohort& cohort,
                    std::span<const std::size_t> coordinate, std::size_t cluster = 0);

// One tensor file per patient plus `manifest.json`.
void export_cohort(const PhantomCohort& cohort, const std::filesystem::path& dir,
                   const nlohmann::json& extra_meta = nlohmann::json::object());
// Verifies each volume's digest against the manifest (IntegrityError).
PhantomCohort load_cohort(const std::filesystem::path& dir);

nlohmann::json layouts_to_json(std::span<const ClusterLayout> layouts);

}  // namespace tvw::phantom
