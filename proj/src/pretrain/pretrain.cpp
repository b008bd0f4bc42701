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

#include "transvw/pretrain.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "transvw/io.hpp"
#include "transvw/ops.hpp"
#include "transvw/rng.hpp"
#include "transvw/training.hpp"

namespace tvw::pretrain {
namespace {

using json = nlohmann::json;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

template <typename T>
Var<T> joint_loss_impl(const Var<T>& l_cls, const Var<T>& l_rec, double lambda_cls,
                       double lambda_rec) {
  if (lambda_cls < 0.0 || lambda_rec < 0.0 || !std::isfinite(lambda_cls) ||
      !std::isfinite(lambda_rec)) {
    throw UsageError("loss weights must be finite and non-negative");
  }
  const bool use_cls = lambda_cls != 0.0, use_rec = lambda_rec != 0.0;
  if (use_cls && use_rec) {
    return ops::add(ops::scale(l_cls, T(lambda_cls)), ops::scale(l_rec, T(lambda_rec)));
  }
  if (use_cls) return ops::scale(l_cls, T(lambda_cls));
  return ops::scale(l_rec, T(lambda_rec));  // lambda_rec may be 0 here: zero loss
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

struct Losses {
  Var<float> total;
  double cls = 0, rec = 0, pretext = 0;
  std::size_t correct = 0, pretext_correct = 0;
};

struct Heads {
  bool word = false;
  bool restoration = false;
  bool rotation = false;
};

Heads heads_of(const NetworkConfig& n) {
  return {n.find_head(kWordHead) != nullptr, n.decoder, n.find_head(kRotationHead) != nullptr};
}

Losses compute_losses(const Network<float>& net, const Batch& batch, const PretrainConfig& c,
                      const Heads& h) {
  auto out = net.forward(batch.input);
  Losses L;
  Var<float> cls, rec, rot;
  if (h.word) {
    const auto& probs = out.probabilities.at(std::string(kWordHead));
    cls = ops::categorical_cross_entropy(probs, one_hot<float>(batch.labels, probs.shape()[1]));
    L.cls = cls.value()[0];
    const auto pred = argmax_rows(probs.value());
    for (std::size_t i = 0; i < pred.size(); ++i) L.correct += pred[i] == batch.labels[i];
  }
  if (h.restoration) {
    rec = ops::restoration_loss(Var<float>::constant(batch.target), out.restoration,
                                c.squared_restoration);
    L.rec = rec.value()[0];
  }
  if (h.rotation) {
    const auto& probs = out.probabilities.at(std::string(kRotationHead));
    rot = ops::categorical_cross_entropy(probs, one_hot<float>(batch.rotation_labels, 4));
    L.pretext = rot.value()[0];
    const auto pred = argmax_rows(probs.value());
    for (std::size_t i = 0; i < pred.size(); ++i) L.pretext_correct += pred[i] == batch.rotation_labels[i];
  }
  // missing terms carry weight zero and are left out of the graph
  const double lc = cls.valid() ? c.lambda_cls : 0.0;
  const double lr = rec.valid() ? c.lambda_rec : 0.0;
  Var<float> total;
  if (lc != 0.0 || lr != 0.0) {
    total = joint_loss(cls.valid() ? cls : rec, rec.valid() ? rec : cls, lc, lr);
  }
  if (rot.valid()) total = total.valid() ? ops::add(total, rot) : rot;
  if (!total.valid()) {
    throw ConfigError("pre-training objective is empty: every loss weight is zero");
  }
  L.total = total;
  return L;
}

struct Aggregate {
  double cls = 0, rec = 0, pretext = 0;
  std::size_t n = 0, correct = 0, pretext_n = 0, pretext_correct = 0;
  void add(const Losses& L, std::size_t count, bool rotation) {
    cls += L.cls * double(count);
    rec += L.rec * double(count);
    pretext += L.pretext * double(count);
    n += count;
    correct += L.correct;
    if (rotation) pretext_n += count, pretext_correct += L.pretext_correct;
  }
};

void fill(EpochRow& row, const Aggregate& a, const PretrainConfig& c, const Heads& h, bool train) {
  const double cls = a.cls / double(a.n), rec = a.rec / double(a.n);
  const double pre = a.pretext / double(a.n);
  // reported total is recomposed from the reported components
  const double total = (h.word ? c.lambda_cls * cls : 0.0) +
                       (h.restoration ? c.lambda_rec * rec : 0.0) + pre;
  if (train) {
    row.train_cls = cls, row.train_rec = rec, row.train_pretext = pre, row.train_total = total;
  } else {
    row.val_cls = cls, row.val_rec = rec, row.val_pretext = pre, row.val_total = total;
    row.val_accuracy = h.word ? double(a.correct) / double(a.n) : kNaN;
    row.val_pretext_accuracy = h.rotation ? double(a.pretext_correct) / double(a.pretext_n) : kNaN;
  }
}

// Every sample at all four angles, so a blind rotation classifier scores
// exactly chance.
Batch rotation_batch(const PatchSet& set, const std::vector<std::size_t>& indices,
                     std::size_t k) {
  Batch b;
  std::vector<Tensor<float>> inputs;
  std::vector<const Tensor<float>*> targets;
  for (std::size_t idx : indices) {
    inputs.push_back(rotate90(set.patches.at(idx), k));
    targets.push_back(&set.patches[idx]);
    if (!set.labels.empty()) b.labels.push_back(set.labels[idx]);
    b.rotation_labels.push_back(k);
  }
  std::vector<const Tensor<float>*> in_ptrs;
  for (const auto& t : inputs) in_ptrs.push_back(&t);
  b.input = stack_batch(in_ptrs);
  b.target = stack_batch(targets);
  return b;
}

constexpr std::size_t kEvalChunk = 32;

Aggregate evaluate(const Network<float>& net, const PatchSet& set,
                   const std::vector<std::size_t>& indices, const PretrainConfig& c,
                   const Heads& h, std::uint64_t stream) {
  NoGradGuard guard;
  Aggregate a;
  for (std::size_t i = 0; i < indices.size(); i += kEvalChunk) {
    std::vector<std::size_t> chunk(
        indices.begin() + std::ptrdiff_t(i),
        indices.begin() + std::ptrdiff_t(std::min(indices.size(), i + kEvalChunk)));
    if (c.variant == Variant::rotation) {
      for (std::size_t k = 0; k < 4; ++k) {
        a.add(compute_losses(net, rotation_batch(set, chunk, k), c, h), chunk.size(), true);
      }
    } else {
      a.add(compute_losses(net, make_batch(set, chunk, c, stream), c, h), chunk.size(), h.rotation);
    }
  }
  return a;
}

TensorBundle<float> checkpoint_bundle(const Network<float>& net, const RunReport& r,
                                      const json& extra_meta) {
  json meta = extra_meta;
  meta["variant"] = r.variant;
  meta["add_vw"] = r.add_vw;
  meta["best_epoch"] = r.best_epoch;
  meta["pretrain_config_digest"] = r.config_digest;
  meta["seed"] = r.seed;
  return net.to_bundle(meta);
}

}  // namespace

// ---------------------------------------------------------------- config

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::transvw: return "transvw";
    case Variant::restoration_only: return "restoration_only";
    case Variant::classification_only: return "classification_only";
    case Variant::rotation: return "rotation";
    case Variant::inpainting: return "inpainting";
    case Variant::context_restoration: return "context_restoration";
    case Variant::genesis: return "genesis";
  }
  return "?";
}

Variant variant_from_string(std::string_view name) {
  for (auto v : {Variant::transvw, Variant::restoration_only, Variant::classification_only,
                 Variant::rotation, Variant::inpainting, Variant::context_restoration,
                 Variant::genesis}) {
    if (to_string(v) == name) return v;
  }
  throw ConfigError("unknown pretext variant '" + std::string(name) + "'");
}

bool is_visual_word_variant(Variant v) {
  return v == Variant::transvw || v == Variant::restoration_only ||
         v == Variant::classification_only;
}

void PretrainConfig::validate() const {
  if (lambda_cls < 0.0 || lambda_rec < 0.0) throw ConfigError("pretrain: lambda values must be >= 0");
  if (add_vw && is_visual_word_variant(variant)) {
    throw ConfigError("pretrain.add_vw applies to baseline pretexts only, not '" +
                      std::string(to_string(variant)) + "'");
  }
  if (batch == 0) throw ConfigError("pretrain.batch must be >= 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("pretrain.learning_rate must be >= 0");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("pretrain.validation_fraction must be in (0, 1)");
  }
  if (channels.empty()) throw ConfigError("pretrain.channels must be non-empty");
  policy.validate();
}

PretrainConfig PretrainConfig::normalized() const {
  PretrainConfig c = *this;
  if (c.variant == Variant::restoration_only) c.lambda_cls = 0.0;
  if (c.variant == Variant::classification_only) c.lambda_rec = 0.0;
  c.validate();
  return c;
}

json PretrainConfig::to_json() const {
  return json{{"variant", to_string(variant)},
              {"add_vw", add_vw},
              {"lambda_cls", lambda_cls},
              {"lambda_rec", lambda_rec},
              {"squared_restoration", squared_restoration},
              {"batch", batch},
              {"learning_rate", learning_rate},
              {"beta1", beta1},
              {"beta2", beta2},
              {"max_epochs", max_epochs},
              {"patience", patience},
              {"min_delta", min_delta},
              {"validation_fraction", validation_fraction},
              {"crop_samples", crop_samples},
              {"channels", channels},
              {"head_hidden", head_hidden},
              {"policy", policy.to_json()},
              {"seed", seed}};
}

PretrainConfig PretrainConfig::from_json(ConfigReader& r) {
  PretrainConfig c;
  std::string variant = std::string(to_string(c.variant));
  r.get("variant", variant);
  c.variant = variant_from_string(variant);
  r.get("add_vw", c.add_vw);
  r.get("lambda_cls", c.lambda_cls);
  r.get("lambda_rec", c.lambda_rec);
  r.get("squared_restoration", c.squared_restoration);
  r.get("batch", c.batch);
  r.get("learning_rate", c.learning_rate);
  r.get("beta1", c.beta1);
  r.get("beta2", c.beta2);
  r.get("max_epochs", c.max_epochs);
  r.get("patience", c.patience);
  r.get("min_delta", c.min_delta);
  r.get("validation_fraction", c.validation_fraction);
  r.get("crop_samples", c.crop_samples);
  r.get("channels", c.channels);
  r.get("head_hidden", c.head_hidden);
  if (r.has("policy")) {
    auto section = r.section("policy");
    c.policy = perturb::PerturbPolicy::from_json(section);
  }
  r.get("seed", c.seed);
  r.finish();
  c.validate();
  return c;
}

PretrainConfig PretrainConfig::from_json(const json& j) {
  ConfigReader reader(j, "pretrain");
  return from_json(reader);
}

std::string PretrainConfig::digest() const { return sha256_hex(to_json().dump()); }

// ---------------------------------------------------------------- losses, nets

Var<float> joint_loss(const Var<float>& l_cls, const Var<float>& l_rec, double lambda_cls,
                      double lambda_rec) {
  return joint_loss_impl(l_cls, l_rec, lambda_cls, lambda_rec);
}

Var<double> joint_loss(const Var<double>& l_cls, const Var<double>& l_rec, double lambda_cls,
                       double lambda_rec) {
  return joint_loss_impl(l_cls, l_rec, lambda_cls, lambda_rec);
}

NetworkConfig transvw_network_config(const Shape& crop, std::size_t classes,
                                     const std::vector<std::size_t>& channels,
                                     std::size_t head_hidden) {
  NetworkConfig n;
  n.in_channels = 1;
  n.input_extent = crop;
  n.channels = channels;
  n.decoder = true;
  n.skips = true;
  n.out_channels = 1;
  if (classes >= 2) n.heads.push_back({std::string(kWordHead), classes, head_hidden});
  return n;
}

Network<float> build_transvw_network(const Shape& crop, std::size_t classes,
                                     const std::vector<std::size_t>& channels,
                                     std::size_t head_hidden, std::uint64_t seed) {
  return Network<float>(transvw_network_config(crop, classes, channels, head_hidden), seed);
}

NetworkConfig variant_network_config(const PretrainConfig& c, const Shape& crop,
                                     std::size_t classes) {
  const bool word = (is_visual_word_variant(c.variant) || c.add_vw) && classes >= 2;
  NetworkConfig n = transvw_network_config(crop, word ? classes : 0, c.channels, c.head_hidden);
  if (c.variant == Variant::classification_only || c.variant == Variant::rotation) {
    n.decoder = false;
  }
  if (c.variant == Variant::rotation) {
    n.heads.push_back({std::string(kRotationHead), 4, c.head_hidden});
  }
  return n;
}

// ---------------------------------------------------------------- data

PatchSet patch_set(const discovery::VisualWordDataset& d) {
  PatchSet s;
  s.classes = d.words;
  s.crop = d.crop;
  for (const auto& inst : d.items) {
    s.patches.push_back(inst.patch);
    s.labels.push_back(inst.label);
  }
  s.train = d.train_indices;
  s.validation = d.validation_indices;
  return s;
}

PatchSet random_crop_set(const phantom::PhantomCohort& cohort, const Shape& crop,
                         std::size_t count, double validation_fraction, std::uint64_t seed) {
  if (count < 2) throw ConfigError("pretrain.crop_samples must be >= 2");
  discovery::DiscoveryConfig dc;
  dc.crop = crop;
  dc.scales = {1.0};
  dc.jitter = 0;
  const auto range = discovery::valid_coordinates(cohort.config.grid, dc);
  Rng rng(derive_seed(seed, "random_crops"));
  PatchSet s;
  s.crop = crop;
  const std::vector<long> zero(crop.size(), 0);
  for (std::size_t i = 0; i < count; ++i) {
    const auto& p = cohort.patients[std::size_t(rng.uniform_int(0, std::int64_t(cohort.patients.size()) - 1))];
    std::vector<std::size_t> center;
    for (std::size_t a = 0; a < crop.size(); ++a) {
      center.push_back(std::size_t(rng.uniform_int(std::int64_t(range.lo[a]), std::int64_t(range.hi[a]))));
    }
    s.patches.push_back(discovery::crop_patch(p.data, center, zero, 1.0, crop));
  }
  const auto order = rng.permutation(count);
  std::size_t n_val = std::max<std::size_t>(1, std::size_t(std::llround(validation_fraction * double(count))));
  n_val = std::min(n_val, count - 1);
  s.validation.assign(order.begin(), order.begin() + std::ptrdiff_t(n_val));
  s.train.assign(order.begin() + std::ptrdiff_t(n_val), order.end());
  std::sort(s.validation.begin(), s.validation.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

Tensor<float> rotate90(const Tensor<float>& patch, std::size_t quarter_turns) {
  if (patch.rank() < 3) throw UsageError("rotation needs at least two spatial axes");
  const std::size_t C = patch.dim(0), H = patch.dim(1), W = patch.dim(2);
  if (H != W) throw ConfigError("rotation needs equal extents on the first two spatial axes");
  std::size_t inner = 1;
  for (std::size_t a = 3; a < patch.rank(); ++a) inner *= patch.dim(a);
  Tensor<float> out(patch.shape());
  const std::size_t k = quarter_turns % 4;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < H; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        std::size_t si = i, sj = j;  // out[i][j] = in[si][sj]
        if (k == 1) si = j, sj = W - 1 - i;
        if (k == 2) si = H - 1 - i, sj = W - 1 - j;
        if (k == 3) si = H - 1 - j, sj = i;
        for (std::size_t z = 0; z < inner; ++z) {
          out[((c * H + i) * W + j) * inner + z] = patch[((c * H + si) * W + sj) * inner + z];
        }
      }
    }
  }
  return out;
}

Batch make_batch(const PatchSet& set, const std::vector<std::size_t>& indices,
                 const PretrainConfig& c, std::uint64_t stream) {
  Batch b;
  std::vector<Tensor<float>> inputs;
  std::vector<const Tensor<float>*> targets;
  inputs.reserve(indices.size());
  for (std::size_t idx : indices) {
    const Tensor<float>& x = set.patches.at(idx);
    const std::uint64_t s = derive_seed(stream, "item", idx);
    targets.push_back(&x);
    if (!set.labels.empty()) b.labels.push_back(set.labels[idx]);
    switch (c.variant) {
      case Variant::rotation: {
        const auto k = std::size_t(Rng(s).uniform_int(0, 3));
        b.rotation_labels.push_back(k);
        inputs.push_back(rotate90(x, k));
        break;
      }
      case Variant::inpainting: {
        perturb::PerturbPolicy p = c.policy;
        p.identity_prob = 0.0, p.bezier_prob = 0.0, p.shuffle_prob = 0.0;
        p.paint_prob = 1.0, p.inpaint_share = 1.0;
        auto [out, spec] = perturb::sample_perturbation(x, s, p);
        inputs.push_back(std::move(out));
        b.specs.push_back(std::move(spec));
        break;
      }
      case Variant::context_restoration: {
        Shape spatial(x.shape().begin() + 1, x.shape().end());
        const Shape window = perturb::relative_extent(spatial, 0.25);
        std::vector<std::pair<perturb::Box, perturb::Box>> pairs;
        inputs.push_back(perturb::swap_windows(x, window, 2, s, &pairs));
        json list = json::array();
        for (const auto& [p, q] : pairs) {
          list.push_back(json::array({json{{"origin", p.origin}, {"extent", p.extent}},
                                      json{{"origin", q.origin}, {"extent", q.extent}}}));
        }
        b.specs.push_back({s, {{perturb::OpKind::swap_windows, json{{"pairs", list}}, s}}});
        break;
      }
      default: {
        auto [out, spec] = perturb::sample_perturbation(x, s, c.policy);
        inputs.push_back(std::move(out));
        b.specs.push_back(std::move(spec));
      }
    }
  }
  std::vector<const Tensor<float>*> in_ptrs;
  for (const auto& t : inputs) in_ptrs.push_back(&t);
  b.input = stack_batch(in_ptrs);
  b.target = stack_batch(targets);
  return b;
}

// ---------------------------------------------------------------- reports

const EpochRow& RunReport::best() const {
  for (const auto& r : rows) {
    if (r.epoch == best_epoch) return r;
  }
  throw UsageError("run report has no rows");
}

json RunReport::to_json() const {
  json rows_json = json::array();
  auto num = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
  for (const auto& r : rows) {
    rows_json.push_back({{"epoch", r.epoch},
                         {"train", {{"cls", r.train_cls}, {"rec", r.train_rec},
                                    {"pretext", r.train_pretext}, {"total", r.train_total}}},
                         {"validation", {{"cls", r.val_cls}, {"rec", r.val_rec},
                                         {"pretext", r.val_pretext}, {"total", r.val_total},
                                         {"accuracy", num(r.val_accuracy)},
                                         {"pretext_accuracy", num(r.val_pretext_accuracy)}}}});
  }
  return json{{"variant", variant},
              {"add_vw", add_vw},
              {"lambda_cls", lambda_cls},
              {"lambda_rec", lambda_rec},
              {"best_epoch", best_epoch},
              {"stopped_early", stopped_early},
              {"aborted", aborted},
              {"diagnostic", diagnostic},
              {"config_digest", config_digest},
              {"seed", seed},
              {"checkpoint_digest", checkpoint_digest},
              {"epochs", rows_json}};
}

std::string RunReport::losses_csv() const {
  std::string out =
      "epoch,train_cls,train_rec,train_pretext,train_total,val_cls,val_rec,val_pretext,"
      "val_total,val_accuracy,val_pretext_accuracy\n";
  for (const auto& r : rows) {
    out += std::to_string(r.epoch);
    for (double v : {r.train_cls, r.train_rec, r.train_pretext, r.train_total, r.val_cls,
                     r.val_rec, r.val_pretext, r.val_total, r.val_accuracy,
                     r.val_pretext_accuracy}) {
      out += "," + fmt(v);
    }
    out += "\n";
  }
  return out;
}

std::string RunReport::timing_csv() const {
  std::string out = "epoch,seconds\n";
  for (const auto& r : rows) out += std::to_string(r.epoch) + "," + fmt(r.seconds) + "\n";
  return out;
}

// ---------------------------------------------------------------- training

PretrainResult train_on(const PatchSet& set, const PretrainConfig& config_in) {
  const PretrainConfig c = config_in.normalized();
  if (set.validation.empty()) throw UsageError("pre-training needs a non-empty validation split");
  if (set.train.empty()) throw UsageError("pre-training needs a non-empty training split");
  const bool wants_words = is_visual_word_variant(c.variant) || c.add_vw;
  if (wants_words && set.labels.empty()) {
    throw ConfigError("variant '" + std::string(to_string(c.variant)) +
                      "' needs a visual-word dataset");
  }
  const NetworkConfig net_config = variant_network_config(c, set.crop, set.classes);
  Network<float> net(net_config, derive_seed(c.seed, "init"));
  const Heads h = heads_of(net_config);

  RunReport report;
  report.variant = std::string(to_string(c.variant));
  report.add_vw = c.add_vw;
  report.lambda_cls = c.lambda_cls;
  report.lambda_rec = c.lambda_rec;
  report.config_digest = c.digest();
  report.seed = c.seed;

  const std::uint64_t val_stream = derive_seed(c.seed, "validation");
  AdamState<float> adam(AdamConfig{c.learning_rate, c.beta1, c.beta2});
  const auto params = net.trainable();

  Network<float> best = net;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch <= c.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRow row;
    row.epoch = epoch;
    try {
      if (epoch == 0) {
        fill(row, evaluate(net, set, set.train, c, h, derive_seed(c.seed, "train_eval")), c, h, true);
      } else {
        Aggregate a;
        const std::uint64_t stream = derive_seed(c.seed, "train", epoch);
        for (const auto& b : epoch_batches(set.train.size(), c.batch,
                                           derive_seed(c.seed, "batches"), epoch)) {
          std::vector<std::size_t> idx;
          for (auto k : b) idx.push_back(set.train[k]);
          const Batch batch = make_batch(set, idx, c, stream);
          Losses L = compute_losses(net, batch, c, h);
          a.add(L, idx.size(), h.rotation);
          backward(L.total);
          apply_adam(params, adam);
        }
        fill(row, a, c, h, true);
      }
      fill(row, evaluate(net, set, set.validation, c, h, val_stream), c, h, false);
      if (!std::isfinite(row.val_total) || !std::isfinite(row.train_total)) {
        throw NumericalError("non-finite loss");
      }
    } catch (const NumericalError& e) {
      report.aborted = true;
      report.diagnostic = "numerical failure at epoch " + std::to_string(epoch) + ": " + e.what() +
                          "; returning the best checkpoint (epoch " +
                          std::to_string(report.best_epoch) + ")";
      break;
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.rows.push_back(row);

    if (row.val_total < best_loss - c.min_delta) {
      best_loss = row.val_total;
      report.best_epoch = epoch;
      best = net;
      since_best = 0;
    } else if (++since_best >= c.patience && epoch > 0) {
      report.stopped_early = true;
      break;
    }
  }
  report.checkpoint_digest =
      sha256_hex(encode_tensor_bundle(checkpoint_bundle(best, report, json::object())));
  return {std::move(best), std::move(report)};
}

PretrainResult train_transvw(const discovery::VisualWordDataset& dataset, PretrainConfig config) {
  if (!is_visual_word_variant(config.variant)) config.variant = Variant::transvw;
  return train_on(patch_set(dataset), config);
}

PretrainResult train_pretext(const discovery::VisualWordDataset& dataset,
                             const PretrainConfig& config) {
  return train_on(patch_set(dataset), config);
}

PretrainResult train_pretext(const phantom::PhantomCohort& cohort, const Shape& crop,
                             const PretrainConfig& config) {
  if (config.add_vw) throw ConfigError("pretrain.add_vw requires a visual-word dataset");
  if (is_visual_word_variant(config.variant)) {
    throw ConfigError("variant '" + std::string(to_string(config.variant)) +
                      "' needs a visual-word dataset");
  }
  return train_on(random_crop_set(cohort, crop, config.crop_samples, config.validation_fraction,
                                  config.seed),
                  config);
}

void write_run(const PretrainResult& result, const std::filesystem::path& dir,
               const json& extra_meta) {
  std::filesystem::create_directories(dir);
  RunReport report = result.report;
  const std::string bytes =
      encode_tensor_bundle(checkpoint_bundle(result.network, report, extra_meta));
  report.checkpoint_digest = sha256_hex(bytes);
  write_file_atomic(dir / "checkpoint.tvw", bytes);
  json j = report.to_json();
  if (!extra_meta.empty()) j["artifact"] = extra_meta;
  write_file_atomic(dir / "report.json", j.dump(2) + "\n");
  write_file_atomic(dir / "losses.csv", report.losses_csv());
  write_file_atomic(dir / "timing.csv", report.timing_csv());
}

}  // namespace tvw::pretrain
