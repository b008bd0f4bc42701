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

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "transvw/config_reader.hpp"
#include "transvw/tensor.hpp"

// Appearance perturbations on single patches of layout [channels, spatial...]
// with intensities in [0, 1]. Every operator is a pure function of its
// arguments; window-based operators act on all channels alike.
namespace tvw::perturb {

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};
using BezierPoints = std::array<Point, 4>;

// Cubic Bezier intensity curve, inverted in x through a 1024-entry table.
class BezierCurve {
 public:
  static constexpr std::size_t kTableSize = 1024;

  // Requires p0.x == 0, p3.x == 1, x sorted ascending, all y in [0, 1].
  explicit BezierCurve(const BezierPoints& points);

  // De Casteljau in the (1-t)a + tb form, so t = 0 and t = 1 hit the
  // endpoints exactly.
  Point evaluate(double t) const;
  // Table lookup of t for B_x(t) = v, then B_y(t).
  double map(double v) const;

  const BezierPoints& points() const { return p_; }

 private:
  BezierPoints p_;
  std::array<double, kTableSize> xs_;
};

struct Box {
  std::vector<std::size_t> origin;
  std::vector<std::size_t> extent;
  friend bool operator==(const Box&, const Box&) = default;
};

Tensor<float> bezier_intensity(const Tensor<float>& patch, const BezierPoints& points);

// Tiles the patch with windows of `window` voxels per spatial axis from a
// random offset, picks n distinct tiles and permutes the voxels inside each.
// Throws UsageError if the window exceeds the patch or n exceeds the tiles.
Tensor<float> local_shuffle(const Tensor<float>& patch, const Shape& window,
                            std::size_t n, std::uint64_t seed,
                            std::vector<Box>* realized = nullptr);
// Permutation step alone, box b drawing from derive_seed(seed, "permute", b).
Tensor<float> shuffle_boxes(const Tensor<float>& patch, const std::vector<Box>& boxes,
                            std::uint64_t seed);

// n blocks with per-axis extents uniform in [min_extent, max_extent], placed
// fully inside the patch and filled with uniform noise.
Tensor<float> inpaint_distort(const Tensor<float>& patch, std::size_t n,
                              const Shape& min_extent, const Shape& max_extent,
                              std::uint64_t seed, std::vector<Box>* realized = nullptr);

// Keeps one window (extent uniform in the range) and fills the rest with noise.
Tensor<float> outpaint_distort(const Tensor<float>& patch, const Shape& min_extent,
                               const Shape& max_extent, std::uint64_t seed,
                               Box* realized = nullptr);

// Noise fill inside (or outside) the union of boxes. Noise is drawn for every
// voxel in raster order so a voxel's value does not depend on the boxes.
Tensor<float> noise_fill(const Tensor<float>& patch, const std::vector<Box>& boxes,
                         bool inside, std::uint64_t seed);

// Swaps n pairs of non-overlapping windows (context-restoration distortion).
Tensor<float> swap_windows(const Tensor<float>& patch, const Shape& window,
                           std::size_t n, std::uint64_t seed,
                           std::vector<std::pair<Box, Box>>* realized = nullptr);
Tensor<float> swap_boxes(const Tensor<float>& patch,
                         const std::vector<std::pair<Box, Box>>& pairs);

enum class OpKind { identity, bezier, local_shuffle, inpaint, outpaint, swap_windows };
std::string_view to_string(OpKind kind);
OpKind op_kind_from_string(std::string_view name);

// One applied operator with its realized parameters.
struct OpRecord {
  OpKind kind = OpKind::identity;
  nlohmann::json params = nlohmann::json::object();
  std::uint64_t seed = 0;
};

struct PerturbationSpec {
  std::uint64_t source_seed = 0;
  std::vector<OpRecord> ops;

  bool is_identity() const;
  nlohmann::json to_json() const;
  static PerturbationSpec from_json(const nlohmann::json& j);
};

Tensor<float> apply_record(const Tensor<float>& patch, const OpRecord& record);
Tensor<float> replay(const Tensor<float>& patch, const PerturbationSpec& spec);

// Chain probabilities and operator ranges. Extents are fractions of the
// patch extent per axis, rounded and clamped to [1, extent].
struct PerturbPolicy {
  double identity_prob = 0.1;
  double bezier_prob = 0.9;
  double inverted_bezier_prob = 0.5;
  double shuffle_prob = 0.5;
  double paint_prob = 0.5;
  double inpaint_share = 0.5;  // of the painting branch

  double shuffle_window = 0.125;
  double shuffle_max_tile_fraction = 0.25;
  std::size_t inpaint_max_blocks = 3;
  double inpaint_min_extent = 1.0 / 6.0;
  double inpaint_max_extent = 1.0 / 3.0;
  double outpaint_min_extent = 3.0 / 7.0;
  double outpaint_max_extent = 4.0 / 7.0;

  void validate() const;
  nlohmann::json to_json() const;
  static PerturbPolicy from_json(ConfigReader& reader);
  static PerturbPolicy from_json(const nlohmann::json& j);

  friend bool operator==(const PerturbPolicy&, const PerturbPolicy&) = default;
};

// identity with identity_prob; otherwise bezier (bezier_prob), then local
// shuffle (shuffle_prob), then inpaint or outpaint (paint_prob, split by
// inpaint_share). A chain in which nothing fired is recorded as identity.
std::pair<Tensor<float>, PerturbationSpec> sample_perturbation(
    const Tensor<float>& patch, std::uint64_t seed, const PerturbPolicy& policy = {});

// Random control points: sorted x, free y; with inverted_prob the endpoints
// run (0,1) -> (1,0).
BezierPoints random_bezier_points(std::uint64_t seed, double inverted_prob = 0.5);

// Relative extent -> voxels, per spatial axis of `spatial`.
Shape relative_extent(const Shape& spatial, double fraction);

}  // namespace tvw::perturb
