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

#include "transvw/perturb.hpp"

#include <algorithm>
#include <cmath>

#include "transvw/rng.hpp"

namespace tvw::perturb {
namespace {

using json = nlohmann::json;

Shape spatial_of(const Tensor<float>& patch) {
  if (patch.rank() < 2) {
    throw UsageError("patch must be [channels, spatial...], got " +
                     shape_to_string(patch.shape()));
  }
  return Shape(patch.shape().begin() + 1, patch.shape().end());
}

std::vector<std::size_t> strides_of(const Shape& spatial) {
  std::vector<std::size_t> s(spatial.size(), 1);
  for (std::size_t a = spatial.size(); a-- > 1;) s[a - 1] = s[a] * spatial[a];
  return s;
}

// Spatial flat indices of a box, raster order.
std::vector<std::size_t> box_indices(const Shape& spatial, const Box& box) {
  const auto strides = strides_of(spatial);
  const std::size_t r = spatial.size();
  std::vector<std::size_t> out;
  out.reserve(shape_numel(box.extent));
  std::vector<std::size_t> k(r, 0);
  for (std::size_t n = 0; n < shape_numel(box.extent); ++n) {
    std::size_t flat = 0;
    for (std::size_t a = 0; a < r; ++a) flat += (box.origin[a] + k[a]) * strides[a];
    out.push_back(flat);
    for (std::size_t a = r; a-- > 0;) {
      if (++k[a] < box.extent[a]) break;
      k[a] = 0;
    }
  }
  return out;
}

void check_box(const Shape& spatial, const Box& box) {
  if (box.origin.size() != spatial.size() || box.extent.size() != spatial.size()) {
    throw UsageError("box rank does not match patch rank");
  }
  for (std::size_t a = 0; a < spatial.size(); ++a) {
    if (box.extent[a] == 0 || box.origin[a] + box.extent[a] > spatial[a]) {
      throw UsageError("box exceeds patch extent on axis " + std::to_string(a));
    }
  }
}

void check_range(const Shape& spatial, const Shape& lo, const Shape& hi,
                 const char* what) {
  if (lo.size() != spatial.size() || hi.size() != spatial.size()) {
    throw UsageError(std::string(what) + " extent rank does not match patch rank");
  }
  for (std::size_t a = 0; a < spatial.size(); ++a) {
    if (lo[a] == 0) throw UsageError(std::string(what) + " extent must be positive");
    if (lo[a] > hi[a]) throw UsageError(std::string(what) + " extent range is empty");
    if (hi[a] > spatial[a]) {
      throw UsageError(std::string(what) + " larger than patch on axis " +
                       std::to_string(a));
    }
  }
}

Box random_box(Rng& rng, const Shape& spatial, const Shape& lo, const Shape& hi) {
  Box b;
  for (std::size_t a = 0; a < spatial.size(); ++a) {
    const auto e = static_cast<std::size_t>(rng.uniform_int(std::int64_t(lo[a]), std::int64_t(hi[a])));
    b.extent.push_back(e);
    b.origin.push_back(static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(spatial[a] - e))));
  }
  return b;
}

void check_unit_range(const Tensor<float>& patch) {
  for (float v : patch.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw UsageError("patch intensities must lie in [0, 1]");
    }
  }
}

json box_to_json(const Box& b) { return json{{"origin", b.origin}, {"extent", b.extent}}; }

Box box_from_json(const json& j) {
  return Box{j.at("origin").get<std::vector<std::size_t>>(),
             j.at("extent").get<std::vector<std::size_t>>()};
}

json boxes_to_json(const std::vector<Box>& boxes) {
  json out = json::array();
  for (const auto& b : boxes) out.push_back(box_to_json(b));
  return out;
}

std::vector<Box> boxes_from_json(const json& j) {
  std::vector<Box> out;
  for (const auto& b : j) out.push_back(box_from_json(b));
  return out;
}

double check_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ConfigError(std::string("perturb.") + name + " must be in [0, 1]");
  }
  return p;
}

}  // namespace

// ---------------------------------------------------------------- bezier

BezierCurve::BezierCurve(const BezierPoints& points) : p_(points) {
  if (p_[0].x != 0.0 || p_[3].x != 1.0) {
    throw UsageError("bezier endpoints must have x = 0 and x = 1");
  }
  for (std::size_t i = 1; i < 4; ++i) {
    if (p_[i].x < p_[i - 1].x) throw UsageError("bezier control x-coordinates must be sorted");
  }
  for (const auto& p : p_) {
    if (!(p.y >= 0.0 && p.y <= 1.0)) throw UsageError("bezier control y must lie in [0, 1]");
  }
  for (std::size_t i = 0; i < kTableSize; ++i) {
    xs_[i] = evaluate(double(i) / double(kTableSize - 1)).x;
  }
}

Point BezierCurve::evaluate(double t) const {
  auto lerp = [t](double a, double b) { return (1.0 - t) * a + t * b; };
  double x[4], y[4];
  for (int i = 0; i < 4; ++i) x[i] = p_[i].x, y[i] = p_[i].y;
  for (int level = 3; level > 0; --level) {
    for (int i = 0; i < level; ++i) {
      x[i] = lerp(x[i], x[i + 1]);
      y[i] = lerp(y[i], y[i + 1]);
    }
  }
  return {x[0], y[0]};
}

double BezierCurve::map(double v) const {
  double t;
  if (v <= xs_.front()) {
    t = 0.0;
  } else if (v >= xs_.back()) {
    t = 1.0;
  } else {
    const auto it = std::upper_bound(xs_.begin(), xs_.end(), v);
    const auto i = static_cast<std::size_t>(it - xs_.begin()) - 1;
    const double f = (v - xs_[i]) / (xs_[i + 1] - xs_[i]);
    t = (double(i) + f) / double(kTableSize - 1);
  }
  return std::clamp(evaluate(t).y, 0.0, 1.0);
}

Tensor<float> bezier_intensity(const Tensor<float>& patch, const BezierPoints& points) {
  check_unit_range(patch);
  const BezierCurve curve(points);
  Tensor<float> out = patch;
  for (auto& v : out.data()) v = static_cast<float>(curve.map(v));
  return out;
}

BezierPoints random_bezier_points(std::uint64_t seed, double inverted_prob) {
  Rng rng(seed);
  double x1 = rng.uniform(), x2 = rng.uniform();
  if (x2 < x1) std::swap(x1, x2);
  const double y1 = rng.uniform(), y2 = rng.uniform();
  const bool inverted = rng.bernoulli(inverted_prob);
  return {Point{0.0, inverted ? 1.0 : 0.0}, Point{x1, y1}, Point{x2, y2},
          Point{1.0, inverted ? 0.0 : 1.0}};
}

// ---------------------------------------------------------------- windows

Tensor<float> shuffle_boxes(const Tensor<float>& patch, const std::vector<Box>& boxes,
                            std::uint64_t seed) {
  const Shape spatial = spatial_of(patch);
  const std::size_t S = shape_numel(spatial);
  const std::size_t C = patch.dim(0);
  Tensor<float> out = patch;
  for (std::size_t b = 0; b < boxes.size(); ++b) {
    check_box(spatial, boxes[b]);
    const auto idx = box_indices(spatial, boxes[b]);
    Rng rng(derive_seed(seed, "permute", b));
    const auto perm = rng.permutation(idx.size());
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t i = 0; i < idx.size(); ++i) {
        out[c * S + idx[i]] = patch[c * S + idx[perm[i]]];
      }
    }
  }
  return out;
}

Tensor<float> local_shuffle(const Tensor<float>& patch, const Shape& window,
                            std::size_t n, std::uint64_t seed,
                            std::vector<Box>* realized) {
  const Shape spatial = spatial_of(patch);
  if (window.size() != spatial.size()) {
    throw UsageError("shuffle window rank does not match patch rank");
  }
  std::size_t tiles = 1;
  std::vector<std::size_t> per_axis(spatial.size());
  for (std::size_t a = 0; a < spatial.size(); ++a) {
    if (window[a] == 0) throw UsageError("shuffle window must be positive");
    if (window[a] > spatial[a]) {
      throw UsageError("shuffle window larger than patch on axis " + std::to_string(a));
    }
    per_axis[a] = spatial[a] / window[a];
    tiles *= per_axis[a];
  }
  if (n > tiles) {
    throw UsageError("cannot shuffle " + std::to_string(n) + " windows; patch holds " +
                     std::to_string(tiles));
  }
  Rng rng(derive_seed(seed, "geometry"));
  std::vector<std::size_t> offset(spatial.size());
  for (std::size_t a = 0; a < spatial.size(); ++a) {
    offset[a] = static_cast<std::size_t>(
        rng.uniform_int(0, std::int64_t(spatial[a] - per_axis[a] * window[a])));
  }
  auto chosen = rng.permutation(tiles);
  chosen.resize(n);
  std::sort(chosen.begin(), chosen.end());
  std::vector<Box> boxes;
  for (std::size_t flat : chosen) {
    Box b{std::vector<std::size_t>(spatial.size()), window};
    for (std::size_t a = spatial.size(); a-- > 0;) {
      b.origin[a] = offset[a] + (flat % per_axis[a]) * window[a];
      flat /= per_axis[a];
    }
    boxes.push_back(std::move(b));
  }
  if (realized) *realized = boxes;
  return shuffle_boxes(patch, boxes, seed);
}

Tensor<float> noise_fill(const Tensor<float>& patch, const std::vector<Box>& boxes,
                         bool inside, std::uint64_t seed) {
  const Shape spatial = spatial_of(patch);
  const std::size_t S = shape_numel(spatial);
  std::vector<char> mask(S, 0);
  for (const auto& b : boxes) {
    check_box(spatial, b);
    for (auto i : box_indices(spatial, b)) mask[i] = 1;
  }
  Rng rng(seed);
  Tensor<float> out = patch;
  for (std::size_t k = 0; k < out.size(); ++k) {
    const auto noise = static_cast<float>(rng.uniform());
    if (bool(mask[k % S]) == inside) out[k] = noise;
  }
  return out;
}

Tensor<float> inpaint_distort(const Tensor<float>& patch, std::size_t n,
                              const Shape& min_extent, const Shape& max_extent,
                              std::uint64_t seed, std::vector<Box>* realized) {
  const Shape spatial = spatial_of(patch);
  check_range(spatial, min_extent, max_extent, "inpaint block");
  Rng rng(derive_seed(seed, "geometry"));
  std::vector<Box> boxes;
  for (std::size_t i = 0; i < n; ++i) boxes.push_back(random_box(rng, spatial, min_extent, max_extent));
  if (realized) *realized = boxes;
  return noise_fill(patch, boxes, true, derive_seed(seed, "noise"));
}

Tensor<float> outpaint_distort(const Tensor<float>& patch, const Shape& min_extent,
                               const Shape& max_extent, std::uint64_t seed,
                               Box* realized) {
  const Shape spatial = spatial_of(patch);
  check_range(spatial, min_extent, max_extent, "outpaint window");
  Rng rng(derive_seed(seed, "geometry"));
  Box kept = random_box(rng, spatial, min_extent, max_extent);
  if (realized) *realized = kept;
  return noise_fill(patch, {kept}, false, derive_seed(seed, "noise"));
}

Tensor<float> swap_boxes(const Tensor<float>& patch,
                         const std::vector<std::pair<Box, Box>>& pairs) {
  const Shape spatial = spatial_of(patch);
  const std::size_t S = shape_numel(spatial);
  Tensor<float> out = patch;
  for (const auto& [a, b] : pairs) {
    check_box(spatial, a);
    check_box(spatial, b);
    if (a.extent != b.extent) throw UsageError("swapped windows must have equal extents");
    const auto ia = box_indices(spatial, a), ib = box_indices(spatial, b);
    for (std::size_t c = 0; c < patch.dim(0); ++c) {
      for (std::size_t i = 0; i < ia.size(); ++i) {
        std::swap(out[c * S + ia[i]], out[c * S + ib[i]]);
      }
    }
  }
  return out;
}

Tensor<float> swap_windows(const Tensor<float>& patch, const Shape& window,
                           std::size_t n, std::uint64_t seed,
                           std::vector<std::pair<Box, Box>>* realized) {
  const Shape spatial = spatial_of(patch);
  check_range(spatial, window, window, "swap window");
  bool room = false;
  for (std::size_t a = 0; a < spatial.size(); ++a) room = room || 2 * window[a] <= spatial[a];
  if (!room) throw UsageError("swap window leaves no room for two disjoint windows");

  Rng rng(derive_seed(seed, "geometry"));
  std::vector<std::pair<Box, Box>> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    // rejection sampling; a swap that finds no disjoint partner is dropped
    for (int attempt = 0; attempt < 64; ++attempt) {
      Box a = random_box(rng, spatial, window, window);
      Box b = random_box(rng, spatial, window, window);
      bool disjoint = false;
      for (std::size_t ax = 0; ax < spatial.size(); ++ax) {
        const auto lo = std::min(a.origin[ax], b.origin[ax]);
        const auto hi = std::max(a.origin[ax], b.origin[ax]);
        disjoint = disjoint || hi - lo >= window[ax];
      }
      if (disjoint) {
        pairs.emplace_back(std::move(a), std::move(b));
        break;
      }
    }
  }
  if (realized) *realized = pairs;
  return swap_boxes(patch, pairs);
}

// ---------------------------------------------------------------- specs

std::string_view to_string(OpKind kind) {
  switch (kind) {
    case OpKind::identity: return "identity";
    case OpKind::bezier: return "bezier";
    case OpKind::local_shuffle: return "local_shuffle";
    case OpKind::inpaint: return "inpaint";
    case OpKind::outpaint: return "outpaint";
    case OpKind::swap_windows: return "swap_windows";
  }
  return "?";
}

OpKind op_kind_from_string(std::string_view name) {
  for (auto k : {OpKind::identity, OpKind::bezier, OpKind::local_shuffle, OpKind::inpaint,
                 OpKind::outpaint, OpKind::swap_windows}) {
    if (to_string(k) == name) return k;
  }
  throw IntegrityError("unknown perturbation kind '" + std::string(name) + "'");
}

bool PerturbationSpec::is_identity() const {
  return std::all_of(ops.begin(), ops.end(),
                     [](const OpRecord& r) { return r.kind == OpKind::identity; });
}

json PerturbationSpec::to_json() const {
  json list = json::array();
  for (const auto& op : ops) {
    list.push_back({{"kind", to_string(op.kind)}, {"params", op.params}, {"seed", op.seed}});
  }
  return json{{"source_seed", source_seed}, {"ops", list}};
}

PerturbationSpec PerturbationSpec::from_json(const json& j) {
  PerturbationSpec spec;
  try {
    spec.source_seed = j.at("source_seed").get<std::uint64_t>();
    for (const auto& op : j.at("ops")) {
      spec.ops.push_back({op_kind_from_string(op.at("kind").get<std::string>()),
                          op.at("params"), op.at("seed").get<std::uint64_t>()});
    }
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("malformed perturbation spec: ") + e.what());
  }
  return spec;
}

Tensor<float> apply_record(const Tensor<float>& patch, const OpRecord& r) {
  switch (r.kind) {
    case OpKind::identity:
      return patch;
    case OpKind::bezier: {
      BezierPoints pts;
      const auto& list = r.params.at("points");
      for (std::size_t i = 0; i < 4; ++i) pts[i] = {list.at(i).at(0), list.at(i).at(1)};
      return bezier_intensity(patch, pts);
    }
    case OpKind::local_shuffle:
      return shuffle_boxes(patch, boxes_from_json(r.params.at("boxes")), r.seed);
    case OpKind::inpaint:
      return noise_fill(patch, boxes_from_json(r.params.at("boxes")), true,
                        derive_seed(r.seed, "noise"));
    case OpKind::outpaint:
      return noise_fill(patch, {box_from_json(r.params.at("kept"))}, false,
                        derive_seed(r.seed, "noise"));
    case OpKind::swap_windows: {
      std::vector<std::pair<Box, Box>> pairs;
      for (const auto& p : r.params.at("pairs")) {
        pairs.emplace_back(box_from_json(p.at(0)), box_from_json(p.at(1)));
      }
      return swap_boxes(patch, pairs);
    }
  }
  throw UsageError("unknown perturbation kind");
}

Tensor<float> replay(const Tensor<float>& patch, const PerturbationSpec& spec) {
  Tensor<float> out = patch;
  for (const auto& op : spec.ops) out = apply_record(out, op);
  return out;
}

// ---------------------------------------------------------------- policy

Shape relative_extent(const Shape& spatial, double fraction) {
  Shape out;
  for (auto e : spatial) {
    const auto v = static_cast<std::size_t>(std::llround(fraction * double(e)));
    out.push_back(std::clamp<std::size_t>(v, 1, e));
  }
  return out;
}

void PerturbPolicy::validate() const {
  check_probability(identity_prob, "identity_prob");
  check_probability(bezier_prob, "bezier_prob");
  check_probability(inverted_bezier_prob, "inverted_bezier_prob");
  check_probability(shuffle_prob, "shuffle_prob");
  check_probability(paint_prob, "paint_prob");
  check_probability(inpaint_share, "inpaint_share");
  for (auto [v, name] : {std::pair{shuffle_window, "shuffle_window"},
                         std::pair{shuffle_max_tile_fraction, "shuffle_max_tile_fraction"},
                         std::pair{inpaint_min_extent, "inpaint_min_extent"},
                         std::pair{inpaint_max_extent, "inpaint_max_extent"},
                         std::pair{outpaint_min_extent, "outpaint_min_extent"},
                         std::pair{outpaint_max_extent, "outpaint_max_extent"}}) {
    if (!(v > 0.0 && v <= 1.0)) throw ConfigError(std::string("perturb.") + name + " must be in (0, 1]");
  }
  if (inpaint_min_extent > inpaint_max_extent || outpaint_min_extent > outpaint_max_extent) {
    throw ConfigError("perturb: extent ranges must have min <= max");
  }
  if (inpaint_max_blocks == 0) throw ConfigError("perturb.inpaint_max_blocks must be >= 1");
}

json PerturbPolicy::to_json() const {
  return json{{"identity_prob", identity_prob},
              {"bezier_prob", bezier_prob},
              {"inverted_bezier_prob", inverted_bezier_prob},
              {"shuffle_prob", shuffle_prob},
              {"paint_prob", paint_prob},
              {"inpaint_share", inpaint_share},
              {"shuffle_window", shuffle_window},
              {"shuffle_max_tile_fraction", shuffle_max_tile_fraction},
              {"inpaint_max_blocks", inpaint_max_blocks},
              {"inpaint_min_extent", inpaint_min_extent},
              {"inpaint_max_extent", inpaint_max_extent},
              {"outpaint_min_extent", outpaint_min_extent},
              {"outpaint_max_extent", outpaint_max_extent}};
}

PerturbPolicy PerturbPolicy::from_json(ConfigReader& r) {
  PerturbPolicy p;
  r.get("identity_prob", p.identity_prob);
  r.get("bezier_prob", p.bezier_prob);
  r.get("inverted_bezier_prob", p.inverted_bezier_prob);
  r.get("shuffle_prob", p.shuffle_prob);
  r.get("paint_prob", p.paint_prob);
  r.get("inpaint_share", p.inpaint_share);
  r.get("shuffle_window", p.shuffle_window);
  r.get("shuffle_max_tile_fraction", p.shuffle_max_tile_fraction);
  r.get("inpaint_max_blocks", p.inpaint_max_blocks);
  r.get("inpaint_min_extent", p.inpaint_min_extent);
  r.get("inpaint_max_extent", p.inpaint_max_extent);
  r.get("outpaint_min_extent", p.outpaint_min_extent);
  r.get("outpaint_max_extent", p.outpaint_max_extent);
  r.finish();
  p.validate();
  return p;
}

PerturbPolicy PerturbPolicy::from_json(const json& j) {
  ConfigReader reader(j, "perturb");
  return from_json(reader);
}

std::pair<Tensor<float>, PerturbationSpec> sample_perturbation(
    const Tensor<float>& patch, std::uint64_t seed, const PerturbPolicy& policy) {
  policy.validate();
  const Shape spatial = spatial_of(patch);
  PerturbationSpec spec;
  spec.source_seed = seed;
  Rng rng(derive_seed(seed, "chain"));
  // branch draws happen unconditionally so each branch's frequency is
  // independent of the others
  const bool identity = rng.bernoulli(policy.identity_prob);
  const bool do_bezier = rng.bernoulli(policy.bezier_prob);
  const bool do_shuffle = rng.bernoulli(policy.shuffle_prob);
  const bool do_paint = rng.bernoulli(policy.paint_prob);
  const bool inpaint = rng.bernoulli(policy.inpaint_share);

  Tensor<float> out = patch;
  if (identity) {
    spec.ops.push_back({OpKind::identity, json::object(), seed});
    return {std::move(out), std::move(spec)};
  }
  if (do_bezier) {
    const auto s = derive_seed(seed, "bezier");
    const auto pts = random_bezier_points(s, policy.inverted_bezier_prob);
    json list = json::array();
    for (const auto& p : pts) list.push_back({p.x, p.y});
    out = bezier_intensity(out, pts);
    spec.ops.push_back({OpKind::bezier, json{{"points", list}}, s});
  }
  if (do_shuffle) {
    const auto s = derive_seed(seed, "shuffle");
    const Shape window = relative_extent(spatial, policy.shuffle_window);
    std::size_t tiles = 1;
    for (std::size_t a = 0; a < spatial.size(); ++a) tiles *= spatial[a] / window[a];
    const auto n_max = std::max<std::size_t>(
        1, static_cast<std::size_t>(policy.shuffle_max_tile_fraction * double(tiles)));
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, std::int64_t(n_max)));
    std::vector<Box> boxes;
    out = local_shuffle(out, window, n, s, &boxes);
    spec.ops.push_back({OpKind::local_shuffle, json{{"boxes", boxes_to_json(boxes)}}, s});
  }
  if (do_paint) {
    if (inpaint) {
      const auto s = derive_seed(seed, "inpaint");
      const auto n = static_cast<std::size_t>(
          rng.uniform_int(1, std::int64_t(policy.inpaint_max_blocks)));
      std::vector<Box> boxes;
      out = inpaint_distort(out, n, relative_extent(spatial, policy.inpaint_min_extent),
                            relative_extent(spatial, policy.inpaint_max_extent), s, &boxes);
      spec.ops.push_back({OpKind::inpaint, json{{"boxes", boxes_to_json(boxes)}}, s});
    } else {
      const auto s = derive_seed(seed, "outpaint");
      Box kept;
      out = outpaint_distort(out, relative_extent(spatial, policy.outpaint_min_extent),
                             relative_extent(spatial, policy.outpaint_max_extent), s, &kept);
      spec.ops.push_back({OpKind::outpaint, json{{"kept", box_to_json(kept)}}, s});
    }
  }
  if (spec.ops.empty()) spec.ops.push_back({OpKind::identity, json::object(), seed});
  return {std::move(out), std::move(spec)};
}

}  // namespace tvw::perturb
