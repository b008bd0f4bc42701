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

#include "transvw/discovery.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "transvw/io.hpp"
#include "transvw/ops.hpp"
#include "transvw/parallel.hpp"
#include "transvw/rng.hpp"
#include "transvw/training.hpp"

namespace tvw::discovery {
namespace {

using json = nlohmann::json;
using phantom::PhantomCohort;

constexpr double kEps = 1e-9;

Shape spatial_of(const Tensor<float>& t) { return Shape(t.shape().begin() + 1, t.shape().end()); }

std::vector<std::size_t> strides_of(const Shape& spatial) {
  std::vector<std::size_t> s(spatial.size(), 1);
  for (std::size_t a = spatial.size(); a-- > 1;) s[a - 1] = s[a] * spatial[a];
  return s;
}

// Multilinear sample of channel c at position p (per axis). Corners with zero
// weight are skipped so integer positions reproduce voxels exactly.
float sample(const Tensor<float>& vol, std::size_t c, const Shape& spatial,
             const std::vector<std::size_t>& strides, const double* p) {
  const std::size_t r = spatial.size();
  std::size_t i0[3];
  double f[3];
  for (std::size_t a = 0; a < r; ++a) {
    const double fl = std::floor(p[a]);
    i0[a] = static_cast<std::size_t>(fl);
    f[a] = p[a] - fl;
  }
  const std::size_t base = c * shape_numel(spatial);
  double acc = 0.0;
  for (std::size_t corner = 0; corner < (std::size_t{1} << r); ++corner) {
    double w = 1.0;
    std::size_t flat = base;
    for (std::size_t a = 0; a < r && w != 0.0; ++a) {
      const bool hi = (corner >> a) & 1;
      w *= hi ? f[a] : 1.0 - f[a];
      flat += (i0[a] + (hi ? 1 : 0)) * strides[a];
    }
    if (w != 0.0) acc += w * double(vol[flat]);
  }
  return static_cast<float>(acc);
}

std::vector<std::size_t> unravel(std::size_t flat, const Shape& shape) {
  std::vector<std::size_t> idx(shape.size());
  for (std::size_t a = shape.size(); a-- > 0;) {
    idx[a] = flat % shape[a];
    flat /= shape[a];
  }
  return idx;
}

// Source offset of output voxel o relative to (center + jitter).
double crop_offset(std::size_t o, std::size_t n, double scale) {
  const double m = (double(n) - 1.0) / 2.0;
  return (double(o) - m) * scale + (m - double(n / 2));
}

void check_config(const DiscoveryConfig& c) {
  if (c.words == 0) throw ConfigError("discovery.words must be >= 1");
  if (c.instances == 0) throw ConfigError("discovery.instances must be >= 1");
  if (c.scales.empty()) throw ConfigError("discovery.scales must be non-empty");
  for (double s : c.scales) {
    if (!(s > 0.0)) throw ConfigError("discovery.scales must be positive");
  }
  if (c.crop.empty()) throw ConfigError("discovery.crop must be non-empty");
  if (!(c.validation_fraction >= 0.0 && c.validation_fraction < 1.0)) {
    throw ConfigError("discovery.validation_fraction must be in [0, 1)");
  }
  if (!(c.extractor_holdout >= 0.0 && c.extractor_holdout < 1.0)) {
    throw ConfigError("discovery.extractor_holdout must be in [0, 1)");
  }
  if (c.extractor_batch == 0) throw ConfigError("discovery.extractor_batch must be >= 1");
}

json word_to_json(const WordRecord& w) {
  return json{{"label", w.label}, {"reference", w.reference},
              {"neighbors", w.neighbors}, {"coordinate", w.coordinate}};
}

json instance_to_json(const VisualWordInstance& v) {
  return json{{"label", v.label}, {"index", v.index}, {"patient", v.patient},
              {"coordinate", v.coordinate}, {"scale", v.scale}, {"jitter", v.jitter}};
}

// Stratified split: round(fraction * K) validation instances per word,
// at least one when the fraction is positive and K > 1.
void split_dataset(VisualWordDataset& d, double fraction, std::uint64_t seed) {
  d.train_indices.clear();
  d.validation_indices.clear();
  std::size_t n_val = static_cast<std::size_t>(std::llround(fraction * double(d.instances)));
  if (fraction > 0.0 && n_val == 0) n_val = 1;
  if (n_val >= d.instances) n_val = d.instances > 1 ? d.instances - 1 : 0;
  for (std::size_t c = 0; c < d.words; ++c) {
    Rng rng(derive_seed(seed, "split", c));
    const auto perm = rng.permutation(d.instances);
    for (std::size_t i = 0; i < d.instances; ++i) {
      (i < n_val ? d.validation_indices : d.train_indices).push_back(c * d.instances + perm[i]);
    }
  }
  std::sort(d.train_indices.begin(), d.train_indices.end());
  std::sort(d.validation_indices.begin(), d.validation_indices.end());
}

json dataset_manifest(const VisualWordDataset& d, const DiscoveryConfig& config,
                      const PhantomCohort& cohort, const std::string& extractor_digest) {
  json words = json::array(), items = json::array();
  for (const auto& w : d.word_records) words.push_back(word_to_json(w));
  for (const auto& v : d.items) items.push_back(instance_to_json(v));
  std::vector<std::uint64_t> ids;
  for (const auto& p : cohort.patients) ids.push_back(p.patient_id);
  return json{{"kind", "visual_word_dataset"},
              {"version", 1},
              {"seed", config.seed},
              {"config", config.to_json()},
              {"words", d.words},
              {"instances", d.instances},
              {"crop", d.crop},
              {"cohort", {{"phantom", cohort.config.to_json()}, {"patient_ids", ids}}},
              {"extractor_digest", extractor_digest},
              {"word_records", words},
              {"items", items},
              {"split", {{"train", d.train_indices}, {"validation", d.validation_indices}}}};
}

// Parses the manifest's bookkeeping without touching patches.
VisualWordDataset skeleton_from_manifest(const json& m) {
  VisualWordDataset d;
  try {
    d.words = m.at("words").get<std::size_t>();
    d.instances = m.at("instances").get<std::size_t>();
    d.crop = m.at("crop").get<Shape>();
    for (const auto& w : m.at("word_records")) {
      d.word_records.push_back({w.at("label").get<std::size_t>(),
                                w.at("reference").get<std::uint64_t>(),
                                w.at("neighbors").get<std::vector<std::uint64_t>>(),
                                w.at("coordinate").get<std::vector<std::size_t>>()});
    }
    for (const auto& v : m.at("items")) {
      VisualWordInstance inst;
      inst.label = v.at("label").get<std::size_t>();
      inst.index = v.at("index").get<std::size_t>();
      inst.patient = v.at("patient").get<std::uint64_t>();
      inst.coordinate = v.at("coordinate").get<std::vector<std::size_t>>();
      inst.scale = v.at("scale").get<double>();
      inst.jitter = v.at("jitter").get<std::vector<long>>();
      d.items.push_back(std::move(inst));
    }
    d.train_indices = m.at("split").at("train").get<std::vector<std::size_t>>();
    d.validation_indices = m.at("split").at("validation").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("malformed dataset manifest: ") + e.what());
  }
  if (d.items.size() != d.words * d.instances || d.word_records.size() != d.words) {
    throw IntegrityError("dataset manifest counts disagree with C x K");
  }
  for (std::size_t i = 0; i < d.items.size(); ++i) {
    if (d.items[i].label != i / d.instances || d.items[i].index != i % d.instances) {
      throw IntegrityError("dataset manifest items out of word-major order");
    }
  }
  d.manifest = m;
  return d;
}

}  // namespace

// ---------------------------------------------------------------- config

DiscoveryConfig DiscoveryConfig::default_for_rank(std::size_t rank) {
  DiscoveryConfig c;
  if (rank == 3) c.crop = {8, 8, 4};
  else c.crop.assign(rank, 16);
  return c;
}

json DiscoveryConfig::to_json() const {
  return json{{"words", words},
              {"instances", instances},
              {"crop", crop},
              {"scales", scales},
              {"jitter", jitter},
              {"validation_fraction", validation_fraction},
              {"extractor_channels", extractor_channels},
              {"extractor_epochs", extractor_epochs},
              {"extractor_batch", extractor_batch},
              {"extractor_lr", extractor_lr},
              {"extractor_holdout", extractor_holdout},
              {"reconstruction_threshold", reconstruction_threshold},
              {"seed", seed}};
}

DiscoveryConfig DiscoveryConfig::from_json(ConfigReader& r, std::size_t rank) {
  DiscoveryConfig c = default_for_rank(rank);
  r.get("words", c.words);
  r.get("instances", c.instances);
  r.get("crop", c.crop);
  r.get("scales", c.scales);
  r.get("jitter", c.jitter);
  r.get("validation_fraction", c.validation_fraction);
  r.get("extractor_channels", c.extractor_channels);
  r.get("extractor_epochs", c.extractor_epochs);
  r.get("extractor_batch", c.extractor_batch);
  r.get("extractor_lr", c.extractor_lr);
  r.get("extractor_holdout", c.extractor_holdout);
  r.get("reconstruction_threshold", c.reconstruction_threshold);
  r.get("seed", c.seed);
  r.finish();
  check_config(c);
  return c;
}

DiscoveryConfig DiscoveryConfig::from_json(const json& j, std::size_t rank) {
  ConfigReader reader(j, "discovery");
  return from_json(reader, rank);
}

// ---------------------------------------------------------------- resampling

Tensor<float> downsample(const Tensor<float>& volume, const Shape& extent) {
  const Shape spatial = spatial_of(volume);
  if (extent.size() != spatial.size()) throw ConfigError("downsample rank mismatch");
  Shape out_shape{volume.dim(0)};
  out_shape.insert(out_shape.end(), extent.begin(), extent.end());
  Tensor<float> out(out_shape);
  const auto strides = strides_of(spatial);
  const std::size_t n_out = shape_numel(extent);
  const std::size_t n_in = shape_numel(spatial);

  bool divisible = true;
  for (std::size_t a = 0; a < extent.size(); ++a) divisible = divisible && spatial[a] % extent[a] == 0;

  for (std::size_t c = 0; c < volume.dim(0); ++c) {
    for (std::size_t o = 0; o < n_out; ++o) {
      const auto idx = unravel(o, extent);
      if (divisible) {
        Shape f(extent.size());
        for (std::size_t a = 0; a < f.size(); ++a) f[a] = spatial[a] / extent[a];
        double acc = 0.0;
        for (std::size_t k = 0; k < shape_numel(f); ++k) {
          const auto off = unravel(k, f);
          std::size_t flat = c * n_in;
          for (std::size_t a = 0; a < f.size(); ++a) flat += (idx[a] * f[a] + off[a]) * strides[a];
          acc += volume[flat];
        }
        out[c * n_out + o] = static_cast<float>(acc / double(shape_numel(f)));
      } else {
        double p[3];
        for (std::size_t a = 0; a < extent.size(); ++a) {
          p[a] = std::clamp((idx[a] + 0.5) * double(spatial[a]) / double(extent[a]) - 0.5, 0.0,
                            double(spatial[a] - 1));
        }
        out[c * n_out + o] = sample(volume, c, spatial, strides, p);
      }
    }
  }
  return out;
}

Tensor<float> crop_patch(const Tensor<float>& volume, std::span<const std::size_t> center,
                         std::span<const long> jitter, double scale, const Shape& crop) {
  const Shape spatial = spatial_of(volume);
  const std::size_t r = spatial.size();
  if (center.size() != r || jitter.size() != r || crop.size() != r) {
    throw UsageError("crop rank does not match volume rank");
  }
  if (!(scale > 0.0)) throw UsageError("crop scale must be positive");
  const auto strides = strides_of(spatial);

  // per-axis source positions, bounds-checked once
  std::vector<std::vector<double>> pos(r);
  for (std::size_t a = 0; a < r; ++a) {
    const double anchor = double(center[a]) + double(jitter[a]);
    for (std::size_t o = 0; o < crop[a]; ++o) {
      const double p = anchor + crop_offset(o, crop[a], scale);
      if (p < 0.0 || std::ceil(p) > double(spatial[a] - 1)) {
        throw UsageError("crop leaves the grid on axis " + std::to_string(a));
      }
      pos[a].push_back(p);
    }
  }
  Shape out_shape{volume.dim(0)};
  out_shape.insert(out_shape.end(), crop.begin(), crop.end());
  Tensor<float> out(out_shape);
  const std::size_t n = shape_numel(crop);
  double p[3];
  for (std::size_t c = 0; c < volume.dim(0); ++c) {
    for (std::size_t o = 0; o < n; ++o) {
      const auto idx = unravel(o, crop);
      for (std::size_t a = 0; a < r; ++a) p[a] = pos[a][idx[a]];
      out[c * n + o] = sample(volume, c, spatial, strides, p);
    }
  }
  return out;
}

std::size_t CoordinateRange::count() const {
  std::size_t n = 1;
  for (std::size_t a = 0; a < lo.size(); ++a) n *= hi[a] - lo[a] + 1;
  return n;
}

CoordinateRange valid_coordinates(const Shape& grid, const DiscoveryConfig& config) {
  if (config.crop.size() != grid.size()) {
    throw ConfigError("discovery.crop rank " + std::to_string(config.crop.size()) +
                      " does not match grid rank " + std::to_string(grid.size()));
  }
  CoordinateRange range;
  for (std::size_t a = 0; a < grid.size(); ++a) {
    long need_lo = 0, need_hi = 0;
    for (double s : config.scales) {
      const double lo = crop_offset(0, config.crop[a], s);
      const double hi = crop_offset(config.crop[a] - 1, config.crop[a], s);
      need_lo = std::max(need_lo, long(std::ceil(-lo - kEps)));
      need_hi = std::max(need_hi, long(std::ceil(hi - kEps)));
    }
    const long lo = need_lo + long(config.jitter);
    const long hi = long(grid[a]) - 1 - need_hi - long(config.jitter);
    if (hi < lo) {
      throw ConfigError("no valid word coordinate on axis " + std::to_string(a) +
                        ": crops at the largest scale plus jitter do not fit the grid");
    }
    range.lo.push_back(std::size_t(lo));
    range.hi.push_back(std::size_t(hi));
  }
  return range;
}

// ---------------------------------------------------------------- extractor

NetworkConfig extractor_network_config(const DiscoveryConfig& config) {
  NetworkConfig n;
  n.in_channels = 1;
  n.input_extent = config.crop;
  n.channels = config.extractor_channels;
  n.decoder = true;
  n.skips = false;
  n.out_channels = 1;
  return n;
}

std::size_t FeatureExtractor::latent_dim() const {
  const auto& cfg = network.config();
  std::size_t n = cfg.channels.back();
  for (auto e : cfg.input_extent) n *= e >> (cfg.depth() - 1);
  return n;
}

std::vector<float> FeatureExtractor::embed(const Tensor<float>& volume) const {
  NoGradGuard guard;
  Tensor<float> x = downsample(volume, input_extent);
  Shape batched{1};
  batched.insert(batched.end(), x.shape().begin(), x.shape().end());
  auto out = network.forward(x.reshaped(batched));
  const auto& deep = out.stages.back().value();
  return {deep.data().begin(), deep.data().end()};
}

FeatureExtractor train_feature_extractor(const PhantomCohort& cohort,
                                         const DiscoveryConfig& config, std::size_t threads) {
  check_config(config);
  const std::size_t n = cohort.patients.size();
  if (n < 2) throw UsageError("feature extractor needs at least 2 patients");
  if (config.crop.size() != cohort.config.rank()) {
    throw ConfigError("discovery.crop rank does not match the cohort grid");
  }
  FeatureExtractor fx{Network<float>(extractor_network_config(config),
                                     derive_seed(config.seed, "extractor")),
                      config.crop, {}};

  std::vector<Tensor<float>> inputs(n);
  parallel_for(n, threads, [&](std::size_t i) {
    inputs[i] = downsample(cohort.patients[i].data, config.crop);
  });

  Rng rng(derive_seed(config.seed, "extractor_holdout"));
  auto order = rng.permutation(n);
  std::size_t n_hold = static_cast<std::size_t>(std::llround(config.extractor_holdout * double(n)));
  if (config.extractor_holdout > 0.0) n_hold = std::clamp<std::size_t>(n_hold, 1, n - 1);
  std::vector<std::size_t> hold(order.begin(), order.begin() + n_hold);
  std::vector<std::size_t> train(order.begin() + n_hold, order.end());
  std::sort(hold.begin(), hold.end());
  std::sort(train.begin(), train.end());
  for (auto i : hold) fx.report.holdout_patients.push_back(cohort.patients[i].patient_id);

  auto batch_of = [&](const std::vector<std::size_t>& idx) {
    std::vector<const Tensor<float>*> ptrs;
    for (auto i : idx) ptrs.push_back(&inputs[i]);
    return stack_batch(ptrs);
  };

  AdamState<float> adam(AdamConfig{config.extractor_lr});
  const auto params = fx.network.trainable();
  for (std::size_t epoch = 0; epoch < config.extractor_epochs; ++epoch) {
    double total = 0.0;
    try {
      for (const auto& b : epoch_batches(train.size(), config.extractor_batch,
                                         derive_seed(config.seed, "extractor_batches"), epoch)) {
        std::vector<std::size_t> idx;
        for (auto k : b) idx.push_back(train[k]);
        const Tensor<float> x = batch_of(idx);
        auto out = fx.network.forward(x);
        auto loss = ops::mse(out.restoration, x);
        total += double(loss.value()[0]) * double(idx.size());
        backward(loss);
        apply_adam(params, adam);
      }
    } catch (const NumericalError& e) {
      throw NumericalError("feature extractor diverged at epoch " + std::to_string(epoch) +
                           ": " + e.what());
    }
    if (!std::isfinite(total)) {
      throw NumericalError("feature extractor loss is not finite at epoch " + std::to_string(epoch));
    }
    fx.report.train_loss.push_back(total / double(train.size()));
    if (!hold.empty()) {
      NoGradGuard guard;
      const Tensor<float> x = batch_of(hold);
      fx.report.holdout_loss.push_back(double(ops::mse(fx.network.forward(x).restoration, x).value()[0]));
    }
  }
  const auto& final_loss = fx.report.holdout_loss.empty() ? fx.report.train_loss : fx.report.holdout_loss;
  fx.report.threshold_met = !final_loss.empty() && final_loss.back() < config.reconstruction_threshold;
  return fx;
}

Latents embed_cohort(const FeatureExtractor& extractor, const PhantomCohort& cohort,
                     std::size_t threads) {
  Latents out;
  out.codes.resize(cohort.patients.size());
  for (const auto& p : cohort.patients) out.ids.push_back(p.patient_id);
  parallel_for(cohort.patients.size(), threads, [&](std::size_t i) {
    out.codes[i] = extractor.embed(cohort.patients[i].data);
  });
  return out;
}

// ---------------------------------------------------------------- k-NN

std::vector<std::uint64_t> nearest_patients(const Latents& latents, std::uint64_t reference,
                                            std::size_t k) {
  const std::size_t n = latents.ids.size();
  if (k == 0 || k > n) {
    throw UsageError("K = " + std::to_string(k) + " must lie in [1, cohort size " +
                     std::to_string(n) + "]");
  }
  const auto it = std::find(latents.ids.begin(), latents.ids.end(), reference);
  if (it == latents.ids.end()) throw UsageError("unknown reference patient " + std::to_string(reference));
  const auto& ref = latents.codes[std::size_t(it - latents.ids.begin())];

  std::vector<std::pair<double, std::uint64_t>> dist;
  for (std::size_t i = 0; i < n; ++i) {
    if (latents.ids[i] == reference) continue;
    const auto& code = latents.codes[i];
    if (code.size() != ref.size()) throw UsageError("latent codes differ in length");
    double s = 0.0;
    for (std::size_t j = 0; j < code.size(); ++j) {
      const double d = double(code[j]) - double(ref[j]);
      s += d * d;
    }
    dist.emplace_back(s, latents.ids[i]);
  }
  std::partial_sort(dist.begin(), dist.begin() + std::ptrdiff_t(k - 1), dist.end());
  std::vector<std::uint64_t> out{reference};
  for (std::size_t i = 0; i + 1 < k; ++i) out.push_back(dist[i].second);
  return out;
}

std::vector<std::uint64_t> nearest_patients(const FeatureExtractor& extractor,
                                            const PhantomCohort& cohort,
                                            std::uint64_t reference, std::size_t k) {
  return nearest_patients(embed_cohort(extractor, cohort), reference, k);
}

// ---------------------------------------------------------------- extraction

const VisualWordInstance& VisualWordDataset::instance(std::size_t word, std::size_t k) const {
  if (word >= words || k >= instances) {
    throw UsageError("instance (" + std::to_string(word) + ", " + std::to_string(k) +
                     ") out of range");
  }
  return items[word * instances + k];
}

VisualWordDataset extract_visual_words(const Latents& latents, const PhantomCohort& cohort,
                                       const DiscoveryConfig& config, std::size_t threads,
                                       const std::string& extractor_digest) {
  check_config(config);
  const std::size_t n = cohort.patients.size();
  if (config.instances > n) {
    throw ConfigError("discovery.instances (" + std::to_string(config.instances) +
                      ") exceeds the cohort size " + std::to_string(n));
  }
  const auto range = valid_coordinates(cohort.config.grid, config);
  if (config.words > range.count()) {
    throw ConfigError("discovery.words (" + std::to_string(config.words) +
                      ") exceeds the " + std::to_string(range.count()) +
                      " available word coordinates");
  }
  const std::size_t r = cohort.config.rank();
  const std::size_t C = config.words, K = config.instances;

  VisualWordDataset d;
  d.words = C;
  d.instances = K;
  d.crop = config.crop;
  d.word_records.resize(C);
  d.items.resize(C * K);

  // plan every word serially (cheap), then crop in parallel
  for (std::size_t c = 0; c < C; ++c) {
    Rng rng(derive_seed(config.seed, "word", c));
    WordRecord& w = d.word_records[c];
    w.label = c;
    w.reference = cohort.patients[std::size_t(rng.uniform_int(0, std::int64_t(n) - 1))].patient_id;
    w.neighbors = nearest_patients(latents, w.reference, K);
    for (std::size_t a = 0; a < r; ++a) {
      w.coordinate.push_back(std::size_t(rng.uniform_int(std::int64_t(range.lo[a]), std::int64_t(range.hi[a]))));
    }
    for (std::size_t k = 0; k < K; ++k) {
      VisualWordInstance& inst = d.items[c * K + k];
      inst.label = c;
      inst.index = k;
      inst.patient = w.neighbors[k];
      inst.coordinate = w.coordinate;
      inst.scale = config.scales[std::size_t(rng.uniform_int(0, std::int64_t(config.scales.size()) - 1))];
      for (std::size_t a = 0; a < r; ++a) {
        inst.jitter.push_back(long(rng.uniform_int(-std::int64_t(config.jitter), std::int64_t(config.jitter))));
      }
    }
  }
  parallel_for(d.items.size(), threads, [&](std::size_t i) {
    auto& inst = d.items[i];
    inst.patch = crop_patch(cohort.patient(inst.patient).data, inst.coordinate, inst.jitter,
                            inst.scale, config.crop);
  });
  split_dataset(d, config.validation_fraction, derive_seed(config.seed, "split"));
  d.manifest = dataset_manifest(d, config, cohort, extractor_digest);
  return d;
}

VisualWordDataset extract_visual_words(const FeatureExtractor& extractor,
                                       const PhantomCohort& cohort,
                                       const DiscoveryConfig& config, std::size_t threads) {
  const std::string digest = sha256_hex(encode_tensor_bundle(extractor.network.to_bundle()));
  return extract_visual_words(embed_cohort(extractor, cohort, threads), cohort, config, threads,
                              digest);
}

VisualWordDataset replay_from_manifest(const PhantomCohort& cohort, const json& manifest) {
  VisualWordDataset d = skeleton_from_manifest(manifest);
  for (auto& inst : d.items) {
    inst.patch = crop_patch(cohort.patient(inst.patient).data, inst.coordinate, inst.jitter,
                            inst.scale, d.crop);
  }
  return d;
}

double word_purity(const VisualWordDataset& d, const PhantomCohort& cohort) {
  double total = 0.0;
  for (std::size_t c = 0; c < d.words; ++c) {
    std::map<int, std::size_t> votes;
    for (std::size_t k = 0; k < d.instances; ++k) {
      const auto& inst = d.instance(c, k);
      const auto cluster = phantom::cluster_of(cohort.config, inst.patient);
      ++votes[phantom::ground_truth_at(cohort, inst.coordinate, cluster)];
    }
    std::size_t best = 0;
    for (const auto& [label, count] : votes) best = std::max(best, count);
    total += double(best) / double(d.instances);
  }
  return total / double(d.words);
}

PatchDistances patch_distances(const VisualWordDataset& d) {
  double within = 0.0, cross = 0.0;
  std::size_t nw = 0, nc = 0;
  for (std::size_t i = 0; i < d.items.size(); ++i) {
    for (std::size_t j = i + 1; j < d.items.size(); ++j) {
      const auto& a = d.items[i].patch;
      const auto& b = d.items[j].patch;
      double s = 0.0;
      for (std::size_t k = 0; k < a.size(); ++k) {
        const double diff = double(a[k]) - double(b[k]);
        s += diff * diff;
      }
      if (d.items[i].label == d.items[j].label) {
        within += std::sqrt(s);
        ++nw;
      } else {
        cross += std::sqrt(s);
        ++nc;
      }
    }
  }
  return {nw ? within / double(nw) : 0.0, nc ? cross / double(nc) : 0.0};
}

// ---------------------------------------------------------------- persistence

std::string instance_file_name(std::size_t word, std::size_t k) {
  return "word" + std::to_string(word) + "_inst" + std::to_string(k) + ".tvw";
}

void persist_dataset(const VisualWordDataset& d, const std::filesystem::path& dir,
                     const json& extra_meta) {
  std::filesystem::create_directories(dir);
  json payload = json::array();
  for (const auto& inst : d.items) {
    TensorBundle<float> bundle;
    bundle.tensors.emplace_back("patch", inst.patch);
    bundle.meta = {{"label", inst.label}, {"index", inst.index}, {"patient", inst.patient}};
    if (!extra_meta.empty()) bundle.meta["artifact"] = extra_meta;
    const std::string bytes = encode_tensor_bundle(bundle);
    const std::string name = instance_file_name(inst.label, inst.index);
    write_file_atomic(dir / name, bytes);
    payload.push_back({{"file", name}, {"sha256", sha256_hex(bytes)}});
  }
  json manifest = d.manifest;
  manifest["payload"] = payload;
  if (!extra_meta.empty()) manifest["artifact"] = extra_meta;
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

VisualWordDataset load_dataset(const std::filesystem::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("dataset manifest unreadable: ") + e.what());
  }
  if (!manifest.contains("payload")) throw IntegrityError("dataset manifest lacks payload digests");
  const json payload = manifest["payload"];
  manifest.erase("payload");
  manifest.erase("artifact");
  VisualWordDataset d = skeleton_from_manifest(manifest);
  if (payload.size() != d.items.size()) throw IntegrityError("payload count disagrees with manifest");
  for (std::size_t i = 0; i < d.items.size(); ++i) {
    const std::string name = payload[i].at("file").get<std::string>();
    if (name != instance_file_name(d.items[i].label, d.items[i].index)) {
      throw IntegrityError("payload entry " + name + " out of order");
    }
    std::string bytes;
    try {
      bytes = read_file(dir / name);
    } catch (const UsageError& e) {
      throw IntegrityError(std::string("missing payload: ") + e.what());
    }
    if (sha256_hex(bytes) != payload[i].at("sha256").get<std::string>()) {
      throw IntegrityError("digest mismatch for " + name);
    }
    d.items[i].patch = decode_tensor_bundle<float>(bytes).at("patch");
    Shape expect{1};
    expect.insert(expect.end(), d.crop.begin(), d.crop.end());
    if (d.items[i].patch.shape() != expect) throw IntegrityError(name + " has the wrong shape");
  }
  return d;
}

}  // namespace tvw::discovery
