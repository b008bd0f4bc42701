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

#include "transvw/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "transvw/io.hpp"
#include "transvw/parallel.hpp"
#include "transvw/rng.hpp"

namespace tvw::phantom {
namespace {

constexpr std::size_t kControlPoints = 4;  // elastic grid, per axis
constexpr std::size_t kWaves = 4;
constexpr double kSiteAmplitude = 0.3;

using json = nlohmann::json;

// Per-axis lattice counts: repeatedly split the axis with the widest spacing.
std::vector<std::size_t> lattice_counts(const std::vector<double>& lengths,
                                        std::size_t sites) {
  std::vector<std::size_t> n(lengths.size(), 1);
  auto total = [&] {
    std::size_t t = 1;
    for (auto v : n) t *= v;
    return t;
  };
  while (total() < sites) {
    std::size_t best = 0;
    for (std::size_t a = 1; a < n.size(); ++a) {
      if (lengths[a] / n[a] > lengths[best] / n[best]) best = a;
    }
    ++n[best];
  }
  return n;
}

double smoothstep(double f) { return f * f * (3.0 - 2.0 * f); }

double shape_profile(int shape_id, std::span<const double> v) {
  const std::size_t r = v.size();
  double rho2 = 0.0;
  for (double x : v) rho2 += x * x;
  // bar along the last axis; the cross adds one along the second-to-last
  auto bar = [&](std::size_t along) {
    double e = 0.0;
    for (std::size_t a = 0; a < r; ++a) {
      const double w = a == along ? 1.2 : 0.35;
      e += (v[a] / w) * (v[a] / w);
    }
    return std::exp(-e);
  };
  switch (shape_id) {
    case kBlob:
      return std::exp(-2.0 * rho2);
    case kRing: {
      const double d = (std::sqrt(rho2) - 1.0) / 0.3;
      return std::exp(-d * d);
    }
    case kBar:
      return bar(r - 1);
    case kCross:
      return r < 2 ? bar(r - 1) : std::max(bar(r - 1), bar(r - 2));
    default:
      throw ConfigError("unknown shape id " + std::to_string(shape_id));
  }
}

void validate(const PhantomConfig& c) {
  if (c.grid.empty() || c.grid.size() > 3) {
    throw ConfigError("phantom.grid must have 1 to 3 axes");
  }
  for (auto e : c.grid) {
    if (e < 2) throw ConfigError("phantom.grid extents must be >= 2");
  }
  if (c.margin.size() != c.grid.size()) {
    throw ConfigError("phantom.margin must have one entry per grid axis");
  }
  if (c.sites == 0) throw ConfigError("phantom.sites must be >= 1");
  if (c.vocabulary.empty()) throw ConfigError("phantom.vocabulary is empty");
  for (int s : c.vocabulary) {
    if (s < 0 || s >= kVocabularySize) {
      throw ConfigError("phantom.vocabulary: unknown shape id " + std::to_string(s));
    }
  }
  if (c.clusters == 0) throw ConfigError("phantom.clusters must be >= 1");
  if (!(c.pattern_radius > 0.0)) throw ConfigError("phantom.pattern_radius must be > 0");
  if (!(c.deformation >= 0.0)) throw ConfigError("phantom.deformation must be >= 0");
  if (!(c.noise >= 0.0)) throw ConfigError("phantom.noise must be >= 0");
}

struct Warp {
  std::vector<double> translation;
  double scale = 1.0;
  std::vector<double> control;  // kControlPoints^rank x rank displacements
};

Warp draw_warp(const PhantomConfig& config, std::uint64_t seed) {
  const std::size_t r = config.rank();
  Rng rng(derive_seed(seed, "deform"));
  Warp w;
  const double d = config.deformation;
  for (std::size_t a = 0; a < r; ++a) w.translation.push_back(0.4 * d * rng.uniform(-1, 1));
  // a scale change moves a voxel by at most |s - 1| * half-extent
  double half = 0.0;
  for (auto e : config.grid) half = std::max(half, (e - 1) / 2.0);
  w.scale = 1.0 + (half > 0 ? 0.2 * d / half : 0.0) * rng.uniform(-1, 1);
  std::size_t points = 1;
  for (std::size_t a = 0; a < r; ++a) points *= kControlPoints;
  w.control.resize(points * r);
  for (auto& v : w.control) v = 0.4 * d * rng.uniform(-1, 1);
  return w;
}

// Multilinear interpolation of the control displacements with smoothstep
// weights; a convex combination, so bounded by the control magnitudes.
void elastic_displacement(const PhantomConfig& config, const Warp& w,
                          std::span<const double> x, std::span<double> out) {
  const std::size_t r = config.rank();
  std::size_t cell[3] = {0, 0, 0};
  double frac[3] = {0, 0, 0};
  for (std::size_t a = 0; a < r; ++a) {
    const double q = config.grid[a] > 1
                         ? x[a] / double(config.grid[a] - 1) * (kControlPoints - 1)
                         : 0.0;
    std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(q), kControlPoints - 2);
    cell[a] = i;
    frac[a] = smoothstep(std::clamp(q - double(i), 0.0, 1.0));
  }
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t corner = 0; corner < (std::size_t{1} << r); ++corner) {
    double weight = 1.0;
    std::size_t flat = 0;
    for (std::size_t a = 0; a < r; ++a) {
      const bool hi = (corner >> a) & 1;
      weight *= hi ? frac[a] : 1.0 - frac[a];
      flat = flat * kControlPoints + cell[a] + (hi ? 1 : 0);
    }
    for (std::size_t a = 0; a < r; ++a) out[a] += weight * w.control[flat * r + a];
  }
}

double background(const PhantomConfig& config, const ClusterLayout& layout,
                  std::span<const double> u) {
  double v = layout.base;
  for (const auto& wave : layout.waves) {
    double arg = wave.phase;
    for (std::size_t a = 0; a < u.size(); ++a) {
      arg += 2.0 * std::numbers::pi * wave.k[a] * u[a] / double(config.grid[a]);
    }
    v += wave.amplitude * std::cos(arg);
  }
  return v;
}

std::string volume_file(std::uint64_t id) { return "patient_" + std::to_string(id) + ".tvw"; }

}  // namespace

std::string_view shape_name(int shape_id) {
  switch (shape_id) {
    case kBackground: return "background";
    case kBlob: return "blob";
    case kRing: return "ring";
    case kBar: return "bar";
    case kCross: return "cross";
    default: throw UsageError("unknown shape id " + std::to_string(shape_id));
  }
}

PhantomConfig PhantomConfig::default_3d() {
  PhantomConfig c;
  c.grid = {32, 32, 16};
  c.sites = 8;
  c.pattern_radius = 2.0;
  c.region_half_extent = 2;
  c.margin = {7, 7, 5};
  c.deformation = 1.0;
  return c;
}

json PhantomConfig::to_json() const {
  return json{{"grid", grid},
              {"sites", sites},
              {"vocabulary", vocabulary},
              {"pattern_radius", pattern_radius},
              {"region_half_extent", region_half_extent},
              {"margin", margin},
              {"deformation", deformation},
              {"noise", noise},
              {"clusters", clusters},
              {"seed", seed}};
}

PhantomConfig PhantomConfig::from_json(ConfigReader& reader) {
  Shape grid = default_2d().grid;
  reader.get("grid", grid);
  PhantomConfig c = grid.size() == 3 ? default_3d() : default_2d();
  if (grid.size() != c.grid.size()) c.margin.assign(grid.size(), c.margin.front());
  c.grid = grid;
  reader.get("sites", c.sites);
  reader.get("vocabulary", c.vocabulary);
  reader.get("pattern_radius", c.pattern_radius);
  reader.get("region_half_extent", c.region_half_extent);
  reader.get("margin", c.margin);
  reader.get("deformation", c.deformation);
  reader.get("noise", c.noise);
  reader.get("clusters", c.clusters);
  reader.get("seed", c.seed);
  reader.finish();
  validate(c);
  return c;
}

PhantomConfig PhantomConfig::from_json(const json& j) {
  ConfigReader reader(j, "phantom");
  return from_json(reader);
}

const Volume& PhantomCohort::patient(std::uint64_t id) const {
  return patients[index_of(id)];
}

std::size_t PhantomCohort::index_of(std::uint64_t id) const {
  for (std::size_t i = 0; i < patients.size(); ++i) {
    if (patients[i].patient_id == id) return i;
  }
  throw UsageError("no patient with id " + std::to_string(id));
}

std::vector<ClusterLayout> build_layouts(const PhantomConfig& config) {
  validate(config);
  const std::size_t r = config.rank();
  const std::size_t h = config.region_half_extent;

  std::vector<double> lengths(r);
  for (std::size_t a = 0; a < r; ++a) {
    if (2 * config.margin[a] >= config.grid[a] || config.margin[a] < h) {
      throw ConfigError("phantom sites cannot fit the grid with margin on axis " +
                        std::to_string(a));
    }
    lengths[a] = double(config.grid[a] - 2 * config.margin[a]);
  }
  const auto counts = lattice_counts(lengths, config.sites);

  std::vector<std::vector<std::size_t>> axis_pos(r);
  double spacing = 1e300;
  for (std::size_t a = 0; a < r; ++a) {
    for (std::size_t k = 0; k < counts[a]; ++k) {
      axis_pos[a].push_back(config.margin[a] + static_cast<std::size_t>(std::floor(
                                                   (k + 0.5) * lengths[a] / counts[a])));
    }
    for (std::size_t k = 1; k < counts[a]; ++k) {
      spacing = std::min(spacing, double(axis_pos[a][k] - axis_pos[a][k - 1]));
    }
  }
  if (spacing < double(2 * h + 1)) {
    throw ConfigError("phantom sites cannot fit the grid: " + std::to_string(config.sites) +
                      " sites leave spacing " + std::to_string(spacing) +
                      " < region width " + std::to_string(2 * h + 1));
  }
  if (config.deformation >= spacing / 2.0) {
    throw ConfigError("phantom.deformation must be < site spacing / 2 (" +
                      std::to_string(spacing / 2.0) + ")");
  }

  Rng rng(derive_seed(config.seed, "layout"));
  std::size_t cells = 1;
  for (auto n : counts) cells *= n;
  auto order = rng.permutation(cells);
  order.resize(config.sites);
  std::sort(order.begin(), order.end());

  std::vector<std::vector<std::size_t>> centers;
  for (std::size_t flat : order) {
    std::vector<std::size_t> c(r);
    for (std::size_t a = r; a-- > 0;) {
      c[a] = axis_pos[a][flat % counts[a]];
      flat /= counts[a];
    }
    centers.push_back(std::move(c));
  }
  // cluster c's shape at site i is vocabulary[(base_i + c) mod V], so any two
  // clusters (fewer than V apart) disagree at every site
  const std::size_t v = config.vocabulary.size();
  std::vector<std::size_t> base(config.sites);
  for (auto& b : base) b = static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(v) - 1));

  std::vector<ClusterLayout> layouts(config.clusters);
  for (std::size_t c = 0; c < config.clusters; ++c) {
    auto& L = layouts[c];
    for (std::size_t i = 0; i < config.sites; ++i) {
      L.sites.push_back({centers[i], config.vocabulary[(base[i] + c) % v]});
    }
    L.base = config.clusters == 1 ? 0.45 : 0.4 + 0.12 * double(c) / double(config.clusters - 1);
    Rng crng(derive_seed(config.seed, "cluster", c));
    for (std::size_t m = 0; m < kWaves; ++m) {
      Wave w;
      do {
        w.k.assign(r, 0.0);
        for (auto& k : w.k) k = double(crng.uniform_int(-3, 3));
      } while (std::all_of(w.k.begin(), w.k.end(), [](double k) { return k == 0.0; }));
      w.amplitude = crng.uniform(0.025, 0.05);
      w.phase = crng.uniform(0.0, 2.0 * std::numbers::pi);
      L.waves.push_back(std::move(w));
    }
  }
  return layouts;
}

std::size_t cluster_of(const PhantomConfig& config, std::uint64_t patient_id) {
  return static_cast<std::size_t>(patient_id % config.clusters);
}

std::uint64_t patient_seed(const PhantomConfig& config, std::uint64_t patient_id) {
  return derive_seed(config.seed, "patient", patient_id);
}

Volume render_patient(const PhantomConfig& config, std::span<const ClusterLayout> layouts,
                      std::uint64_t patient_id) {
  const std::size_t r = config.rank();
  Volume vol;
  vol.patient_id = patient_id;
  vol.cluster = cluster_of(config, patient_id);
  vol.seed = patient_seed(config, patient_id);
  if (vol.cluster >= layouts.size()) throw UsageError("layout missing for cluster");
  const ClusterLayout& layout = layouts[vol.cluster];

  const Warp warp = draw_warp(config, vol.seed);
  Rng noise_rng(derive_seed(vol.seed, "noise"));

  Shape shape{1};
  shape.insert(shape.end(), config.grid.begin(), config.grid.end());
  vol.data = Tensor<float>(shape);

  std::vector<double> mid(r), x(r), u(r), d(r), v(r);
  for (std::size_t a = 0; a < r; ++a) mid[a] = (config.grid[a] - 1) / 2.0;
  std::vector<std::size_t> idx(r, 0);
  const std::size_t n = shape_numel(config.grid);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t rem = flat;
    for (std::size_t a = r; a-- > 0;) {
      idx[a] = rem % config.grid[a];
      rem /= config.grid[a];
      x[a] = double(idx[a]);
    }
    elastic_displacement(config, warp, x, d);
    for (std::size_t a = 0; a < r; ++a) {
      u[a] = mid[a] + warp.scale * (x[a] - mid[a]) + warp.translation[a] + d[a];
    }
    double value = background(config, layout, u);
    for (const auto& site : layout.sites) {
      for (std::size_t a = 0; a < r; ++a) {
        v[a] = (u[a] - double(site.center[a])) / config.pattern_radius;
      }
      value += kSiteAmplitude * shape_profile(site.shape_id, v);
    }
    if (config.noise > 0.0) value += config.noise * noise_rng.normal();
    vol.data[flat] = static_cast<float>(std::clamp(value, 0.0, 1.0));
  }
  return vol;
}

Tensor<float> render_pattern_mask(const PhantomConfig& config,
                                  std::span<const ClusterLayout> layouts,
                                  std::uint64_t patient_id, int shape_id, double threshold) {
  const std::size_t r = config.rank();
  const std::size_t cluster = cluster_of(config, patient_id);
  if (cluster >= layouts.size()) throw UsageError("layout missing for cluster");
  const ClusterLayout& layout = layouts[cluster];
  const Warp warp = draw_warp(config, patient_seed(config, patient_id));

  Shape shape{1};
  shape.insert(shape.end(), config.grid.begin(), config.grid.end());
  Tensor<float> mask(shape);
  std::vector<double> mid(r), x(r), u(r), d(r), v(r);
  for (std::size_t a = 0; a < r; ++a) mid[a] = (config.grid[a] - 1) / 2.0;
  const std::size_t n = shape_numel(config.grid);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t rem = flat;
    for (std::size_t a = r; a-- > 0;) {
      x[a] = double(rem % config.grid[a]);
      rem /= config.grid[a];
    }
    elastic_displacement(config, warp, x, d);
    for (std::size_t a = 0; a < r; ++a) {
      u[a] = mid[a] + warp.scale * (x[a] - mid[a]) + warp.translation[a] + d[a];
    }
    for (const auto& site : layout.sites) {
      if (site.shape_id != shape_id) continue;
      for (std::size_t a = 0; a < r; ++a) {
        v[a] = (u[a] - double(site.center[a])) / config.pattern_radius;
      }
      if (shape_profile(site.shape_id, v) >= threshold) {
        mask[flat] = 1.0f;
        break;
      }
    }
  }
  return mask;
}

PhantomCohort generate_cohort(const PhantomConfig& config, std::size_t n_patients,
                              std::uint64_t first_id, std::size_t threads) {
  if (n_patients < 2) throw UsageError("generate_cohort needs at least 2 patients");
  PhantomCohort cohort;
  cohort.config = config;
  cohort.layouts = build_layouts(config);
  cohort.patients.resize(n_patients);
  parallel_for(n_patients, threads, [&](std::size_t i) {
    cohort.patients[i] = render_patient(config, cohort.layouts, first_id + i);
  });
  return cohort;
}

int ground_truth_at(const PhantomConfig& config, std::span<const ClusterLayout> layouts,
                    std::span<const std::size_t> coordinate, std::size_t cluster) {
  if (coordinate.size() != config.rank()) {
    throw UsageError("coordinate rank " + std::to_string(coordinate.size()) +
                     " does not match grid rank " + std::to_string(config.rank()));
  }
  for (std::size_t a = 0; a < coordinate.size(); ++a) {
    if (coordinate[a] >= config.grid[a]) {
      throw UsageError("coordinate outside grid on axis " + std::to_string(a));
    }
  }
  if (cluster >= layouts.size()) throw UsageError("cluster index out of range");
  const auto h = config.region_half_extent;
  for (const auto& site : layouts[cluster].sites) {
    bool inside = true;
    for (std::size_t a = 0; a < coordinate.size() && inside; ++a) {
      const auto lo = site.center[a] >= h ? site.center[a] - h : 0;
      inside = coordinate[a] >= lo && coordinate[a] <= site.center[a] + h;
    }
    if (inside) return site.shape_id;
  }
  return kBackground;
}

int ground_truth_at(const PhantomCohort& cohort, std::span<const std::size_t> coordinate,
                    std::size_t cluster) {
  return ground_truth_at(cohort.config, cohort.layouts, coordinate, cluster);
}

json layouts_to_json(std::span<const ClusterLayout> layouts) {
  json out = json::array();
  for (const auto& L : layouts) {
    json sites = json::array();
    for (const auto& s : L.sites) {
      sites.push_back({{"center", s.center}, {"shape_id", s.shape_id},
                       {"shape", shape_name(s.shape_id)}});
    }
    out.push_back({{"sites", sites}, {"base", L.base}});
  }
  return out;
}

void export_cohort(const PhantomCohort& cohort, const std::filesystem::path& dir,
                   const json& extra_meta) {
  std::filesystem::create_directories(dir);
  json patients = json::array();
  for (const auto& p : cohort.patients) {
    TensorBundle<float> bundle;
    bundle.tensors.emplace_back("volume", p.data);
    bundle.meta = extra_meta;
    bundle.meta["patient_id"] = p.patient_id;
    bundle.meta["cluster"] = p.cluster;
    bundle.meta["seed"] = p.seed;
    const std::string bytes = encode_tensor_bundle(bundle);
    write_file_atomic(dir / volume_file(p.patient_id), bytes);
    patients.push_back({{"id", p.patient_id},
                        {"cluster", p.cluster},
                        {"seed", p.seed},
                        {"file", volume_file(p.patient_id)},
                        {"sha256", sha256_hex(bytes)}});
  }
  json manifest = extra_meta;
  manifest["kind"] = "phantom_cohort";
  manifest["config"] = cohort.config.to_json();
  manifest["ground_truth"] = layouts_to_json(cohort.layouts);
  manifest["patients"] = patients;
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

PhantomCohort load_cohort(const std::filesystem::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw IntegrityError("cohort manifest unreadable: " + std::string(e.what()));
  }
  PhantomCohort cohort;
  cohort.config = PhantomConfig::from_json(manifest.at("config"));
  cohort.layouts = build_layouts(cohort.config);
  for (const auto& entry : manifest.at("patients")) {
    const std::string bytes = read_file(dir / entry.at("file").get<std::string>());
    if (sha256_hex(bytes) != entry.at("sha256").get<std::string>()) {
      throw IntegrityError("digest mismatch for " + entry.at("file").get<std::string>());
    }
    auto bundle = decode_tensor_bundle<float>(bytes);
    Volume v;
    v.patient_id = entry.at("id").get<std::uint64_t>();
    v.cluster = entry.at("cluster").get<std::size_t>();
    v.seed = entry.at("seed").get<std::uint64_t>();
    v.data = bundle.at("volume");
    cohort.patients.push_back(std::move(v));
  }
  return cohort;
}

}  // namespace tvw::phantom
