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

#include "transvw/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "transvw/ops.hpp"
#include "transvw/parallel.hpp"
#include "transvw/rng.hpp"
#include "transvw/training.hpp"

namespace tvw::transfer {
namespace {

using json = nlohmann::json;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::size_t kEvalChunk = 64;
constexpr const char* kTaskHead = "task";

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

double variance_of(const std::vector<double>& v, double mean) {
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / double(v.size() - 1);
}

TTest finish_ttest(double diff, double se, double df) {
  TTest r;
  r.df = df;
  if (se == 0.0) {
    if (diff == 0.0) return r;  // t = 0, p = 1
    r.degenerate = true;
    r.t = diff > 0 ? std::numeric_limits<double>::infinity()
                   : -std::numeric_limits<double>::infinity();
    r.p = 0.0;
    return r;
  }
  r.t = diff / se;
  r.p = std::min(1.0, incomplete_beta(df / 2.0, 0.5, df / (df + r.t * r.t)));
  return r;
}

// Continued fraction of the incomplete beta (modified Lentz).
double beta_continued_fraction(double a, double b, double x) {
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-16;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw NumericalError("incomplete beta continued fraction did not converge");
}

std::vector<std::size_t> chunk_of(const std::vector<std::size_t>& idx, std::size_t start,
                                  std::size_t size) {
  return {idx.begin() + std::ptrdiff_t(start),
          idx.begin() + std::ptrdiff_t(std::min(idx.size(), start + size))};
}

Tensor<float> stack(const std::vector<Tensor<float>>& items, const std::vector<std::size_t>& idx) {
  std::vector<const Tensor<float>*> ptrs;
  ptrs.reserve(idx.size());
  for (auto i : idx) ptrs.push_back(&items.at(i));
  return stack_batch(ptrs);
}

// Scores (classification) or pooled overlap (segmentation) on a split.
struct Evaluation {
  double metric = 0.0;
  double iou = 0.0;
  double loss = 0.0;
};

Evaluation evaluate(const Network<float>& net, const TargetTask& task,
                    const std::vector<std::size_t>& indices) {
  NoGradGuard guard;
  Evaluation e;
  if (task.kind == TaskKind::classification) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (std::size_t i = 0; i < indices.size(); i += kEvalChunk) {
      const auto idx = chunk_of(indices, i, kEvalChunk);
      auto out = net.forward(stack(task.inputs, idx));
      const auto& p = out.probabilities.at(kTaskHead);
      std::vector<std::size_t> y;
      for (auto k : idx) y.push_back(std::size_t(task.labels[k]));
      e.loss += ops::categorical_cross_entropy(p, one_hot<float>(y, 2)).value()[0] * double(idx.size());
      for (std::size_t b = 0; b < idx.size(); ++b) {
        scores.push_back(p.value()[b * 2 + 1]);
        labels.push_back(task.labels[idx[b]]);
      }
    }
    e.metric = auc(scores, labels);
  } else {
    std::size_t inter = 0, pred_n = 0, truth_n = 0, uni = 0;
    for (std::size_t i = 0; i < indices.size(); i += kEvalChunk) {
      const auto idx = chunk_of(indices, i, kEvalChunk);
      const auto target = stack(task.masks, idx);
      auto out = net.forward(stack(task.inputs, idx));
      e.loss += ops::binary_cross_entropy(out.restoration, target).value()[0] * double(idx.size());
      const auto& p = out.restoration.value();
      for (std::size_t v = 0; v < p.size(); ++v) {
        const bool a = p[v] >= 0.5f, b = target[v] >= 0.5f;
        inter += a && b;
        uni += a || b;
        pred_n += a;
        truth_n += b;
      }
    }
    e.metric = pred_n + truth_n == 0 ? 1.0 : 2.0 * double(inter) / double(pred_n + truth_n);
    e.iou = uni == 0 ? 1.0 : double(inter) / double(uni);
  }
  e.loss /= double(indices.size());
  return e;
}

}  // namespace

// ---------------------------------------------------------------- metrics

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw UsageError("auc: scores and labels differ in length");
  std::size_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw UsageError("auc: labels must be 0 or 1");
    if (!std::isfinite(scores[i])) throw UsageError("auc: non-finite score");
    (labels[i] ? pos : neg) += 1;
  }
  if (pos == 0 || neg == 0) throw UsageError("auc needs both classes");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  // count negatives below each positive, ties worth one half (in halves)
  double twice = 0.0;
  std::size_t neg_below = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i, tie_pos = 0, tie_neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? tie_pos : tie_neg) += 1;
      ++j;
    }
    twice += double(tie_pos) * double(2 * neg_below + tie_neg);
    neg_below += tie_neg;
    i = j;
  }
  return (twice / 2.0) / (double(pos) * double(neg));
}

Overlap dice_iou(std::span<const float> pred, std::span<const float> truth) {
  if (pred.size() != truth.size()) throw UsageError("dice_iou: masks differ in size");
  std::size_t inter = 0, a = 0, b = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if ((pred[i] != 0.0f && pred[i] != 1.0f) || (truth[i] != 0.0f && truth[i] != 1.0f)) {
      throw UsageError("dice_iou: masks must be binary");
    }
    const bool p = pred[i] == 1.0f, t = truth[i] == 1.0f;
    inter += p && t;
    a += p;
    b += t;
  }
  if (a + b == 0) return {1.0, 1.0};
  return {2.0 * double(inter) / double(a + b), double(inter) / double(a + b - inter)};
}

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw UsageError("incomplete_beta: a and b must be positive");
  if (!(x >= 0.0 && x <= 1.0)) throw UsageError("incomplete_beta: x outside [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return std::exp(ln_front) * beta_continued_fraction(a, b, x) / a;
  }
  return 1.0 - std::exp(ln_front) * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double df) {
  if (!(df > 0.0)) throw UsageError("student_t_cdf: df must be positive");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double tail = 0.5 * incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
  return t > 0 ? 1.0 - tail : tail;
}

double TTest::p_greater() const {
  if (degenerate) return t > 0 ? 0.0 : 1.0;
  if (df == 0.0 || t == 0.0) return t == 0.0 ? 0.5 : 1.0;
  // from the two-sided p, which keeps full precision in the small tail
  return t > 0 ? p / 2.0 : 1.0 - p / 2.0;
}

TTest ttest_independent(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2) throw UsageError("t-test needs at least 2 values per sample");
  const double ma = mean_of(a), mb = mean_of(b);
  const double df = double(a.size() + b.size() - 2);
  const double pooled = ((double(a.size()) - 1) * variance_of(a, ma) +
                         (double(b.size()) - 1) * variance_of(b, mb)) / df;
  const double se = std::sqrt(pooled * (1.0 / double(a.size()) + 1.0 / double(b.size())));
  return finish_ttest(ma - mb, se, df);
}

TTest ttest_paired(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw UsageError("paired t-test needs equal sample sizes");
  if (a.size() < 2) throw UsageError("t-test needs at least 2 values per sample");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double md = mean_of(d);
  const double se = std::sqrt(variance_of(d, md) / double(d.size()));
  return finish_ttest(md, se, double(d.size() - 1));
}

EvalResult EvalResult::from_scores(std::string metric, std::vector<double> scores,
                                   std::vector<std::uint64_t> seeds) {
  if (scores.empty()) throw UsageError("EvalResult needs at least one score");
  EvalResult r;
  r.metric = std::move(metric);
  r.mean = mean_of(scores);
  r.stddev = scores.size() > 1 ? std::sqrt(variance_of(scores, r.mean)) : 0.0;
  r.scores = std::move(scores);
  r.seeds = std::move(seeds);
  return r;
}

json EvalResult::to_json() const {
  return json{{"metric", metric}, {"scores", scores}, {"seeds", seeds},
              {"mean", mean},     {"std", stddev},    {"runs", scores.size()}};
}

// ---------------------------------------------------------------- tasks

std::string_view to_string(TaskKind kind) {
  return kind == TaskKind::classification ? "classification" : "segmentation";
}

json TaskConfig::to_json() const {
  return json{{"kind", to_string(kind)},
              {"shape", phantom::shape_name(shape_id)},
              {"patients", patients},
              {"first_patient_id", first_patient_id},
              {"crop", crop},
              {"jitter", jitter},
              {"background_per_patient", background_per_patient},
              {"validation_fraction", validation_fraction},
              {"test_fraction", test_fraction},
              {"mask_threshold", mask_threshold},
              {"seed", seed}};
}

TaskConfig TaskConfig::from_json(ConfigReader& r) {
  TaskConfig c;
  std::string kind(to_string(c.kind));
  r.get("kind", kind);
  if (kind == "classification") {
    c.kind = TaskKind::classification;
  } else if (kind == "segmentation") {
    c.kind = TaskKind::segmentation;
  } else {
    throw ConfigError(r.field("kind") + ": unknown task kind '" + kind + "'");
  }
  std::string shape(phantom::shape_name(c.shape_id));
  r.get("shape", shape);
  c.shape_id = -2;
  for (int s = 0; s < phantom::kVocabularySize; ++s) {
    if (phantom::shape_name(s) == shape) c.shape_id = s;
  }
  if (c.shape_id < 0) throw ConfigError(r.field("shape") + ": unknown shape '" + shape + "'");
  r.get("patients", c.patients);
  r.get("first_patient_id", c.first_patient_id);
  r.get("crop", c.crop);
  r.get("jitter", c.jitter);
  r.get("background_per_patient", c.background_per_patient);
  r.get("validation_fraction", c.validation_fraction);
  r.get("test_fraction", c.test_fraction);
  r.get("mask_threshold", c.mask_threshold);
  r.get("seed", c.seed);
  r.finish();
  return c;
}

TaskConfig TaskConfig::from_json(const json& j) {
  ConfigReader reader(j, "task");
  return from_json(reader);
}

std::vector<std::size_t> TargetTask::train_subset(double fraction, std::uint64_t seed) const {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw UsageError("label fraction must be in (0, 1]");
  Rng rng(derive_seed(seed, "label_fraction"));
  const auto order = rng.permutation(train.size());
  const auto n = std::max<std::size_t>(
      1, std::size_t(std::ceil(fraction * double(train.size()) - 1e-9)));
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(train[order[i]]);
  return out;
}

std::size_t TargetTask::positives(const std::vector<std::size_t>& indices) const {
  std::size_t n = 0;
  for (auto i : indices) n += labels.at(i) == 1;
  return n;
}

TargetTask make_phantom_task(const phantom::PhantomConfig& pc, const TaskConfig& tc) {
  if (tc.patients < 3) throw ConfigError("task.patients must be >= 3");
  if (!(tc.validation_fraction > 0.0 && tc.test_fraction > 0.0 &&
        tc.validation_fraction + tc.test_fraction < 1.0)) {
    throw ConfigError("task.validation_fraction and task.test_fraction must be positive and sum below 1");
  }
  if (tc.crop.size() != pc.rank()) throw ConfigError("task.crop rank does not match the phantom grid");
  if (tc.shape_id < 0 || tc.shape_id >= phantom::kVocabularySize) {
    throw ConfigError("task.shape is not a pattern shape");
  }
  const auto cohort = phantom::generate_cohort(pc, tc.patients, tc.first_patient_id);
  const std::size_t r = pc.rank();

  TargetTask task;
  task.kind = tc.kind;
  task.crop = tc.crop;
  std::vector<std::size_t> patient_split(tc.patients, 0);  // 0 train, 1 val, 2 test
  {
    Rng rng(derive_seed(tc.seed, "patient_split"));
    const auto order = rng.permutation(tc.patients);
    auto count = [&](double f) {
      return std::max<std::size_t>(1, std::size_t(std::llround(f * double(tc.patients))));
    };
    const std::size_t n_val = count(tc.validation_fraction), n_test = count(tc.test_fraction);
    if (n_val + n_test >= tc.patients) throw ConfigError("task: no patients left for training");
    for (std::size_t i = 0; i < n_val; ++i) patient_split[order[i]] = 1;
    for (std::size_t i = n_val; i < n_val + n_test; ++i) patient_split[order[i]] = 2;
  }

  const std::vector<long> no_jitter(r, 0);
  auto fits = [&](const std::vector<std::size_t>& c) {
    for (std::size_t a = 0; a < r; ++a) {
      const std::size_t half = tc.crop[a] / 2;
      if (c[a] < half || c[a] - half + tc.crop[a] > pc.grid[a]) return false;
    }
    return true;
  };
  json samples = json::array();
  for (std::size_t p = 0; p < cohort.patients.size(); ++p) {
    const auto& vol = cohort.patients[p];
    const auto& layout = cohort.layouts[vol.cluster];
    Rng rng(derive_seed(tc.seed, "patient", vol.patient_id));
    Tensor<float> mask_volume;
    if (tc.kind == TaskKind::segmentation) {
      mask_volume = phantom::render_pattern_mask(pc, cohort.layouts, vol.patient_id, tc.shape_id,
                                                 tc.mask_threshold);
    }
    std::vector<std::pair<std::vector<std::size_t>, int>> centers;
    for (const auto& site : layout.sites) {
      std::vector<std::size_t> c(r);
      for (std::size_t a = 0; a < r; ++a) {
        const long j = long(rng.uniform_int(-std::int64_t(tc.jitter), std::int64_t(tc.jitter)));
        c[a] = std::size_t(std::max(0L, long(site.center[a]) + j));
      }
      if (!fits(c)) {
        throw ConfigError("task crop around a site leaves the grid; reduce task.crop or task.jitter");
      }
      centers.emplace_back(c, site.shape_id == tc.shape_id ? 1 : 0);
    }
    for (std::size_t b = 0; b < tc.background_per_patient; ++b) {
      for (int attempt = 0; attempt < 200; ++attempt) {
        std::vector<std::size_t> c(r);
        for (std::size_t a = 0; a < r; ++a) {
          const std::size_t half = tc.crop[a] / 2;
          c[a] = std::size_t(rng.uniform_int(std::int64_t(half),
                                             std::int64_t(pc.grid[a] + half - tc.crop[a])));
        }
        if (phantom::ground_truth_at(cohort, c, vol.cluster) == phantom::kBackground) {
          centers.emplace_back(c, 0);
          break;
        }
      }
    }
    for (const auto& [c, label] : centers) {
      const std::size_t idx = task.inputs.size();
      task.inputs.push_back(discovery::crop_patch(vol.data, c, no_jitter, 1.0, tc.crop));
      task.labels.push_back(label);
      task.patients.push_back(vol.patient_id);
      if (tc.kind == TaskKind::segmentation) {
        task.masks.push_back(discovery::crop_patch(mask_volume, c, no_jitter, 1.0, tc.crop));
      }
      (patient_split[p] == 0 ? task.train : patient_split[p] == 1 ? task.validation : task.test)
          .push_back(idx);
      samples.push_back({{"patient", vol.patient_id}, {"center", c}, {"label", label}});
    }
  }
  if (tc.kind == TaskKind::classification) {
    for (const auto* split : {&task.train, &task.validation, &task.test}) {
      const auto pos = task.positives(*split);
      if (pos == 0 || pos == split->size()) {
        throw ConfigError("task split lacks one of the classes; use more patients");
      }
    }
  }
  json ids = json::object();
  for (const auto& [name, split] : {std::pair{"train", &task.train},
                                    std::pair{"validation", &task.validation},
                                    std::pair{"test", &task.test}}) {
    std::set<std::uint64_t> s;
    for (auto i : *split) s.insert(task.patients[i]);
    ids[name] = std::vector<std::uint64_t>(s.begin(), s.end());
  }
  task.manifest = json{{"kind", "target_task"},
                       {"task", tc.to_json()},
                       {"phantom", pc.to_json()},
                       {"patients", ids},
                       {"samples", samples},
                       {"sizes", {{"train", task.train.size()},
                                  {"validation", task.validation.size()},
                                  {"test", task.test.size()}}}};
  return task;
}

void check_no_leak(const TargetTask& task, const std::vector<std::uint64_t>& pretraining_ids) {
  const std::set<std::uint64_t> pre(pretraining_ids.begin(), pretraining_ids.end());
  for (auto id : task.patients) {
    if (pre.count(id)) {
      throw IntegrityError("patient " + std::to_string(id) +
                           " is used by both pre-training and the target task");
    }
  }
}

// ---------------------------------------------------------------- fine-tuning

json FinetuneConfig::to_json() const {
  return json{{"learning_rate", learning_rate},
              {"beta1", beta1},
              {"beta2", beta2},
              {"batch", batch},
              {"max_epochs", max_epochs},
              {"patience", patience},
              {"head_hidden", head_hidden},
              {"label_fraction", label_fraction},
              {"freeze_encoder", freeze_encoder},
              {"target_metric", target_metric},
              {"channels", channels},
              {"seed", seed}};
}

FinetuneConfig FinetuneConfig::from_json(ConfigReader& r) {
  FinetuneConfig c;
  r.get("learning_rate", c.learning_rate);
  r.get("beta1", c.beta1);
  r.get("beta2", c.beta2);
  r.get("batch", c.batch);
  r.get("max_epochs", c.max_epochs);
  r.get("patience", c.patience);
  r.get("head_hidden", c.head_hidden);
  r.get("label_fraction", c.label_fraction);
  r.get("freeze_encoder", c.freeze_encoder);
  r.get("target_metric", c.target_metric);
  r.get("channels", c.channels);
  r.get("seed", c.seed);
  r.finish();
  if (c.batch == 0) throw ConfigError(r.field("batch") + " must be >= 1");
  if (!(c.learning_rate >= 0.0)) throw ConfigError(r.field("learning_rate") + " must be >= 0");
  if (!(c.label_fraction > 0.0 && c.label_fraction <= 1.0)) {
    throw ConfigError(r.field("label_fraction") + " must be in (0, 1]");
  }
  return c;
}

FinetuneConfig FinetuneConfig::from_json(const json& j) {
  ConfigReader reader(j, "finetune");
  return from_json(reader);
}

json FinetuneResult::to_json() const {
  json curve_json = json::array();
  for (const auto& row : curve) {
    curve_json.push_back({{"epoch", row.epoch}, {"train_loss", row.train_loss},
                          {"val_metric", row.val_metric}});
  }
  json j{{"metric", metric},
         {"test_metric", test_metric},
         {"best_epoch", best_epoch},
         {"epochs_to_target", epochs_to_target ? json(*epochs_to_target) : json(nullptr)},
         {"train_size", train_size},
         {"aborted", aborted},
         {"diagnostic", diagnostic},
         {"curve", curve_json}};
  if (metric == "dice") j["test_iou"] = test_iou;
  return j;
}

std::string FinetuneResult::curve_csv() const {
  std::string out = "epoch,split,metric,value\n";
  for (const auto& row : curve) {
    out += std::to_string(row.epoch) + ",train,loss," + fmt(row.train_loss) + "\n";
    out += std::to_string(row.epoch) + ",validation," + metric + "," + fmt(row.val_metric) + "\n";
  }
  out += std::to_string(best_epoch) + ",test," + metric + "," + fmt(test_metric) + "\n";
  return out;
}

Network<float> target_network(const Network<float>* pretrained, const TargetTask& task,
                              const FinetuneConfig& config) {
  NetworkConfig nc;
  nc.in_channels = 1;
  nc.input_extent = task.crop;
  nc.channels = config.channels;
  nc.skips = true;
  if (pretrained) {
    const auto& base = pretrained->config();
    if (base.in_channels != 1 || base.input_extent != task.crop) {
      throw ConfigError("checkpoint input extent does not match the target task crop");
    }
    nc.channels = base.channels;
    nc.skips = base.skips;
  }
  if (task.kind == TaskKind::classification) {
    nc.decoder = false;
    nc.heads.push_back({kTaskHead, 2, config.head_hidden});
  } else {
    nc.decoder = true;
    nc.out_channels = 1;
  }
  Network<float> net(nc, derive_seed(config.seed, "target"));
  if (pretrained) {
    std::vector<std::string> prefixes{"enc"};
    if (task.kind == TaskKind::segmentation && pretrained->config().decoder) prefixes.push_back("dec");
    const auto copied = net.copy_from(*pretrained, prefixes);
    std::size_t enc_params = 0, enc_copied = 0;
    for (const auto& [name, v] : net.parameters()) enc_params += name.rfind("enc", 0) == 0;
    for (const auto& name : copied) enc_copied += name.rfind("enc", 0) == 0;
    if (enc_copied != enc_params) {
      throw ConfigError("checkpoint encoder does not match the target network topology");
    }
  }
  if (config.freeze_encoder) net.set_trainable("enc", false);
  return net;
}

FinetuneResult finetune(const Network<float>* pretrained, const TargetTask& task,
                        const FinetuneConfig& config) {
  if (config.batch == 0) throw ConfigError("finetune.batch must be >= 1");
  if (task.train.empty() || task.validation.empty() || task.test.empty()) {
    throw UsageError("target task needs non-empty train, validation and test splits");
  }
  Network<float> net = target_network(pretrained, task, config);
  const auto subset = task.train_subset(config.label_fraction, config.seed);
  const bool cls = task.kind == TaskKind::classification;

  FinetuneResult res;
  res.metric = cls ? "auc" : "dice";
  res.train_size = subset.size();
  AdamState<float> adam(AdamConfig{config.learning_rate, config.beta1, config.beta2});
  const auto params = net.trainable();
  const std::uint64_t batch_seed = derive_seed(config.seed, "finetune_batches");

  Network<float> best = net;
  double best_metric = -std::numeric_limits<double>::infinity();
  std::size_t since = 0;
  for (std::size_t epoch = 0; epoch <= config.max_epochs; ++epoch) {
    CurveRow row;
    row.epoch = epoch;
    try {
      if (epoch == 0) {
        row.train_loss = evaluate(net, task, subset).loss;
      } else {
        double total = 0.0;
        for (const auto& b : epoch_batches(subset.size(), config.batch, batch_seed, epoch)) {
          std::vector<std::size_t> idx;
          for (auto k : b) idx.push_back(subset[k]);
          auto out = net.forward(stack(task.inputs, idx));
          Var<float> loss;
          if (cls) {
            std::vector<std::size_t> y;
            for (auto k : idx) y.push_back(std::size_t(task.labels[k]));
            loss = ops::categorical_cross_entropy(out.probabilities.at(kTaskHead), one_hot<float>(y, 2));
          } else {
            loss = ops::binary_cross_entropy(out.restoration, stack(task.masks, idx));
          }
          total += loss.value()[0] * double(idx.size());
          if (!params.empty()) {
            backward(loss);
            apply_adam(params, adam);
          }
        }
        row.train_loss = total / double(subset.size());
      }
      row.val_metric = evaluate(net, task, task.validation).metric;
      if (!std::isfinite(row.train_loss)) throw NumericalError("non-finite training loss");
    } catch (const NumericalError& e) {
      res.aborted = true;
      res.diagnostic = "numerical failure at epoch " + std::to_string(epoch) + ": " + e.what();
      break;
    }
    res.curve.push_back(row);
    if (epoch > 0 && !res.epochs_to_target && row.val_metric >= config.target_metric) {
      res.epochs_to_target = epoch;
    }
    if (row.val_metric > best_metric) {
      best_metric = row.val_metric;
      res.best_epoch = epoch;
      best = net;
      since = 0;
    } else if (++since >= config.patience) {
      break;
    }
  }
  const auto test = evaluate(best, task, task.test);
  res.test_metric = test.metric;
  res.test_iou = test.iou;
  return res;
}

// ---------------------------------------------------------------- probes

std::vector<std::vector<double>> stage_features(const Network<float>& network,
                                                const std::vector<Tensor<float>>& inputs,
                                                std::size_t stage) {
  if (stage < 1 || stage > network.config().depth()) {
    throw UsageError("probe stage must be in 1.." + std::to_string(network.config().depth()));
  }
  NoGradGuard guard;
  std::vector<std::size_t> all(inputs.size());
  std::iota(all.begin(), all.end(), 0);
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < all.size(); i += kEvalChunk) {
    const auto idx = chunk_of(all, i, kEvalChunk);
    auto out = network.forward(stack(inputs, idx));
    const auto pooled = ops::global_avg_pool(out.stages.at(stage - 1)).value();
    const std::size_t F = pooled.dim(1);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      rows.emplace_back(pooled.data().begin() + std::ptrdiff_t(b * F),
                        pooled.data().begin() + std::ptrdiff_t((b + 1) * F));
    }
  }
  return rows;
}

ProbeResult probe_features(const std::vector<std::vector<double>>& features,
                           const std::vector<int>& labels, const std::vector<std::size_t>& train,
                           const std::vector<std::size_t>& validation,
                           const std::vector<std::size_t>& test, const ProbeConfig& config) {
  if (features.empty() || features.size() != labels.size()) {
    throw UsageError("probe: features and labels differ in length");
  }
  if (train.empty() || validation.empty() || test.empty()) {
    throw UsageError("probe needs non-empty train, validation and test splits");
  }
  const std::size_t F = features[0].size();
  // standardise with training statistics (affine, so rank-neutral per feature)
  std::vector<double> mu(F, 0.0), sd(F, 0.0);
  for (auto i : train) {
    for (std::size_t f = 0; f < F; ++f) mu[f] += features[i][f];
  }
  for (auto& m : mu) m /= double(train.size());
  for (auto i : train) {
    for (std::size_t f = 0; f < F; ++f) sd[f] += std::pow(features[i][f] - mu[f], 2);
  }
  for (auto& s : sd) s = std::sqrt(s / double(train.size())) + 1e-12;
  auto matrix = [&](const std::vector<std::size_t>& idx) {
    Tensor<double> m({idx.size(), F});
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t f = 0; f < F; ++f) m[r * F + f] = (features[idx[r]][f] - mu[f]) / sd[f];
    }
    return m;
  };
  auto W = Var<double>::parameter(Tensor<double>({2, F}));
  auto b = Var<double>::parameter(Tensor<double>({2}));
  auto scores = [&](const std::vector<std::size_t>& idx) {
    NoGradGuard guard;
    const auto p = ops::softmax(ops::dense(Var<double>::constant(matrix(idx)), W, b)).value();
    std::vector<double> s(idx.size());
    std::vector<int> y(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) s[r] = p[r * 2 + 1], y[r] = labels[idx[r]];
    return auc(s, y);
  };
  AdamState<double> adam(AdamConfig{config.learning_rate, 0.9, 0.999});
  ProbeResult res;
  double best = -1.0;
  Tensor<double> best_w = W.value(), best_b = b.value();
  const std::uint64_t batch_seed = derive_seed(config.seed, "probe_batches");
  for (std::size_t epoch = 0; epoch <= config.epochs; ++epoch) {
    if (epoch > 0) {
      for (const auto& batch : epoch_batches(train.size(), config.batch, batch_seed, epoch)) {
        std::vector<std::size_t> idx;
        std::vector<std::size_t> y;
        for (auto k : batch) idx.push_back(train[k]), y.push_back(std::size_t(labels[train[k]]));
        auto p = ops::softmax(ops::dense(Var<double>::constant(matrix(idx)), W, b));
        backward(ops::categorical_cross_entropy(p, one_hot<double>(y, 2)));
        apply_adam<double>({W, b}, adam);
      }
    }
    const double v = scores(validation);
    if (v > best) {
      best = v;
      res.best_epoch = epoch;
      best_w = W.value();
      best_b = b.value();
    }
  }
  W.mutable_value() = best_w;
  b.mutable_value() = best_b;
  res.val_auc = best;
  res.test_auc = scores(test);
  return res;
}

ProbeResult linear_probe(const Network<float>& network, const TargetTask& task, std::size_t stage,
                         const ProbeConfig& config) {
  if (task.kind != TaskKind::classification) throw UsageError("linear probes need a classification task");
  auto res = probe_features(stage_features(network, task.inputs, stage), task.labels, task.train,
                            task.validation, task.test, config);
  res.stage = stage;
  return res;
}

// ---------------------------------------------------------------- sweeps

const SweepCell& SweepReport::cell(const std::string& init, double fraction) const {
  for (const auto& c : cells) {
    if (c.init == init && c.fraction == fraction) return c;
  }
  throw UsageError("no sweep cell for " + init + " at fraction " + fmt(fraction));
}

std::optional<double> SweepReport::minimum_for(const std::string& init) const {
  for (const auto& [name, f] : minimum_fraction) {
    if (name == init) return f;
  }
  throw UsageError("no sweep init named " + init);
}

json SweepReport::to_json() const {
  json cells_json = json::array();
  for (const auto& c : cells) {
    cells_json.push_back({{"init", c.init},
                          {"fraction", c.fraction},
                          {"result", c.result.to_json()},
                          {"p_vs_reference", c.p_vs_reference},
                          {"equivalent", c.equivalent}});
  }
  json mins = json::object();
  for (const auto& [name, f] : minimum_fraction) mins[name] = f ? json(*f) : json(nullptr);
  return json{{"alpha", alpha}, {"cells", cells_json}, {"minimum_equivalent_fraction", mins}};
}

std::string SweepReport::csv() const {
  std::string out = "init,fraction,seed,metric,value\n";
  for (const auto& c : cells) {
    for (std::size_t i = 0; i < c.result.scores.size(); ++i) {
      out += c.init + "," + fmt(c.fraction) + "," + std::to_string(c.result.seeds[i]) + "," +
             c.result.metric + "," + fmt(c.result.scores[i]) + "\n";
    }
  }
  return out;
}

SweepReport annotation_sweep(const std::vector<NamedInit>& inits, const TargetTask& task,
                             std::vector<double> fractions, const std::vector<std::uint64_t>& seeds,
                             const FinetuneConfig& config, double alpha, std::size_t threads) {
  if (fractions.empty()) throw UsageError("annotation sweep needs at least one fraction");
  if (seeds.size() < 2) throw UsageError("annotation sweep needs at least 2 seeds");
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw UsageError("sweep fractions must be in (0, 1]");
  }
  fractions.push_back(1.0);
  std::sort(fractions.begin(), fractions.end());
  fractions.erase(std::unique(fractions.begin(), fractions.end()), fractions.end());

  std::vector<NamedInit> all{{"scratch", nullptr}};
  for (const auto& i : inits) {
    if (i.name == "scratch") throw UsageError("init name 'scratch' is reserved");
    all.push_back(i);
  }
  const std::size_t F = fractions.size(), S = seeds.size();
  std::vector<double> scores(all.size() * F * S);
  std::string metric;
  parallel_for(scores.size(), threads, [&](std::size_t job) {
    const std::size_t i = job / (F * S), f = (job / S) % F, s = job % S;
    FinetuneConfig c = config;
    c.label_fraction = fractions[f];
    c.seed = seeds[s];
    scores[job] = finetune(all[i].network, task, c).test_metric;
  });
  metric = task.kind == TaskKind::classification ? "auc" : "dice";

  SweepReport report;
  report.alpha = alpha;
  for (std::size_t i = 0; i < all.size(); ++i) {
    for (std::size_t f = 0; f < F; ++f) {
      SweepCell cell;
      cell.init = all[i].name;
      cell.fraction = fractions[f];
      const auto first = scores.begin() + std::ptrdiff_t((i * F + f) * S);
      cell.result = EvalResult::from_scores(metric, {first, first + std::ptrdiff_t(S)}, seeds);
      report.cells.push_back(std::move(cell));
    }
  }
  const EvalResult reference = report.cell("scratch", 1.0).result;
  for (auto& cell : report.cells) {
    cell.p_vs_reference = ttest_independent(cell.result.scores, reference.scores).p;
    cell.equivalent = cell.result.mean >= reference.mean || cell.p_vs_reference >= alpha;
  }
  for (const auto& init : all) {
    std::optional<double> minimum;
    for (const auto& cell : report.cells) {
      if (cell.init == init.name && cell.equivalent) {
        minimum = cell.fraction;
        break;
      }
    }
    report.minimum_fraction.emplace_back(init.name, minimum);
  }
  return report;
}

json AblationReport::to_json() const {
  json out = json::array();
  for (const auto& r : rows) {
    json row{{"words", r.words}, {"failed", r.failed}};
    if (r.failed) {
      row["error"] = r.error;
    } else {
      row["result"] = r.result.to_json();
      row["pretrain_best_val_accuracy"] =
          std::isnan(r.pretrain_best_val_accuracy) ? json(nullptr) : json(r.pretrain_best_val_accuracy);
    }
    out.push_back(row);
  }
  return json{{"rows", out}};
}

std::string AblationReport::csv() const {
  std::string out = "C,metric,mean,std,runs,status\n";
  for (const auto& r : rows) {
    out += std::to_string(r.words) + ",";
    if (r.failed) {
      out += ",nan,nan,0,failed\n";
    } else {
      out += r.result.metric + "," + fmt(r.result.mean) + "," + fmt(r.result.stddev) + "," +
             std::to_string(r.result.scores.size()) + ",ok\n";
    }
  }
  return out;
}

AblationReport ablate_num_words(const phantom::PhantomCohort& cohort,
                                const discovery::Latents& latents,
                                const std::vector<std::size_t>& word_counts,
                                const discovery::DiscoveryConfig& discovery,
                                const pretrain::PretrainConfig& pretrain,
                                const TargetTask& task, const FinetuneConfig& finetune_config,
                                const std::vector<std::uint64_t>& seeds, std::size_t threads) {
  if (word_counts.empty()) throw UsageError("ablation needs at least one C value");
  if (seeds.empty()) throw UsageError("ablation needs at least one seed");
  std::vector<std::uint64_t> cohort_ids;
  for (const auto& p : cohort.patients) cohort_ids.push_back(p.patient_id);
  check_no_leak(task, cohort_ids);
  const auto capacity = discovery::valid_coordinates(cohort.config.grid, discovery).count();
  for (auto C : word_counts) {
    if (C == 0 || C > capacity) {
      throw ConfigError("C = " + std::to_string(C) + " exceeds the coordinate capacity (" +
                        std::to_string(capacity) + ")");
    }
  }
  AblationReport report;
  for (auto C : word_counts) {
    AblationRow row;
    row.words = C;
    try {
      auto dc = discovery;
      dc.words = C;
      const auto dataset = discovery::extract_visual_words(latents, cohort, dc, threads);
      const auto pre = pretrain::train_transvw(dataset, pretrain);
      if (pre.report.aborted) throw NumericalError(pre.report.diagnostic);
      row.pretrain_best_val_accuracy = pre.report.best().val_accuracy;
      std::vector<double> scores(seeds.size());
      parallel_for(seeds.size(), threads, [&](std::size_t s) {
        auto c = finetune_config;
        c.seed = seeds[s];
        scores[s] = finetune(&pre.network, task, c).test_metric;
      });
      row.result = EvalResult::from_scores(task.kind == TaskKind::classification ? "auc" : "dice",
                                           scores, seeds);
    } catch (const NumericalError& e) {
      row.failed = true;
      row.error = e.what();
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace tvw::transfer
