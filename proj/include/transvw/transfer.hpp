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
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "transvw/config_reader.hpp"
#include "transvw/discovery.hpp"
#include "transvw/network.hpp"
#include "transvw/phantom.hpp"
#include "transvw/pretrain.hpp"

namespace tvw::transfer {

// ---------------------------------------------------------------- metrics

// Mann-Whitney AUC: fraction of (positive, negative) pairs ranked correctly,
// ties counting one half. UsageError unless both classes are present.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct Overlap {
  double dice = 0.0;
  double iou = 0.0;
};
// Masks must hold only 0 and 1 (UsageError otherwise); two empty masks
// overlap perfectly.
Overlap dice_iou(std::span<const float> pred, std::span<const float> truth);

struct TTest {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;  // two-sided
  bool degenerate = false;  // zero variance with unequal means
  // One-sided p for the alternative mean(a) > mean(b) (paired: mean(a-b) > 0).
  double p_greater() const;
};
// Pooled-variance Student t.
TTest ttest_independent(const std::vector<double>& a, const std::vector<double>& b);
// t on the differences a_i - b_i, df = n - 1.
TTest ttest_paired(const std::vector<double>& a, const std::vector<double>& b);
// Student t CDF through the regularized incomplete beta function.
double student_t_cdf(double t, double df);
double incomplete_beta(double a, double b, double x);

struct EvalResult {
  std::string metric;
  std::vector<double> scores;
  std::vector<std::uint64_t> seeds;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation (n - 1), 0 for n = 1

  static EvalResult from_scores(std::string metric, std::vector<double> scores,
                                std::vector<std::uint64_t> seeds);
  nlohmann::json to_json() const;
};

// ---------------------------------------------------------------- tasks

enum class TaskKind { classification, segmentation };
std::string_view to_string(TaskKind kind);

struct TaskConfig {
  TaskKind kind = TaskKind::classification;
  int shape_id = phantom::kRing;  // positive pattern / segmented pattern
  std::size_t patients = 24;
  // Target patients come from their own id range, disjoint from the
  // pre-training cohort.
  std::uint64_t first_patient_id = 100000;
  Shape crop{16, 16};
  std::size_t jitter = 3;
  std::size_t background_per_patient = 3;
  double validation_fraction = 0.25;  // by patient
  double test_fraction = 0.25;
  double mask_threshold = 0.5;
  std::uint64_t seed = 1;

  nlohmann::json to_json() const;
  static TaskConfig from_json(ConfigReader& reader);
  static TaskConfig from_json(const nlohmann::json& j);
};

struct TargetTask {
  TaskKind kind = TaskKind::classification;
  Shape crop;
  std::vector<Tensor<float>> inputs;  // [1, crop...]
  std::vector<int> labels;            // 1 = centred on the pattern shape
  std::vector<Tensor<float>> masks;   // segmentation
  std::vector<std::uint64_t> patients;
  std::vector<std::size_t> train, validation, test;
  nlohmann::json manifest;

  // First ceil(fraction * |train|) entries of a seeded permutation of the
  // training split, so smaller fractions are subsets of larger ones.
  std::vector<std::size_t> train_subset(double fraction, std::uint64_t seed) const;
  std::size_t positives(const std::vector<std::size_t>& indices) const;
};

// One patch per site (centred with jitter) plus background patches, from a
// freshly generated cohort; patients are split into train/validation/test.
// Crops are wider than the site spacing, so their borders may show parts of
// neighbouring sites.
TargetTask make_phantom_task(const phantom::PhantomConfig& phantom, const TaskConfig& config);

// IntegrityError if any task patient appears among `pretraining_ids`.
void check_no_leak(const TargetTask& task, const std::vector<std::uint64_t>& pretraining_ids);

// ---------------------------------------------------------------- fine-tuning

struct FinetuneConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::size_t batch = 8;
  std::size_t max_epochs = 50;
  std::size_t patience = 10;
  std::size_t head_hidden = 64;
  double label_fraction = 1.0;
  bool freeze_encoder = false;
  double target_metric = 0.9;  // for epochs-to-target
  // Architecture of a from-scratch network (a checkpoint brings its own).
  std::vector<std::size_t> channels{8, 16, 32};
  std::uint64_t seed = 1;

  nlohmann::json to_json() const;
  static FinetuneConfig from_json(ConfigReader& reader);
  static FinetuneConfig from_json(const nlohmann::json& j);
};

struct CurveRow {
  std::size_t epoch = 0;  // 0 = before any update
  double train_loss = 0.0;
  double val_metric = 0.0;
};

struct FinetuneResult {
  std::string metric;  // "auc" or "dice"
  double test_metric = 0.0;
  double test_iou = 0.0;  // segmentation only
  std::size_t best_epoch = 0;
  std::optional<std::size_t> epochs_to_target;  // first epoch >= 1 reaching target on validation
  std::vector<CurveRow> curve;
  std::size_t train_size = 0;
  bool aborted = false;
  std::string diagnostic;

  nlohmann::json to_json() const;
  std::string curve_csv() const;  // epoch,split,metric,value
};

// Target network for a task: encoder (plus decoder for segmentation) from
// `pretrained` when given, else seeded random; a fresh head / output layer.
// ConfigError when the checkpoint does not fit the task.
Network<float> target_network(const Network<float>* pretrained, const TargetTask& task,
                              const FinetuneConfig& config);

FinetuneResult finetune(const Network<float>* pretrained, const TargetTask& task,
                        const FinetuneConfig& config);

// ---------------------------------------------------------------- probes

struct ProbeConfig {
  double learning_rate = 1e-2;
  std::size_t epochs = 200;
  std::size_t batch = 32;
  std::uint64_t seed = 1;
};

struct ProbeResult {
  std::size_t stage = 0;  // 1-based encoder stage
  double test_auc = 0.0;
  double val_auc = 0.0;
  std::size_t best_epoch = 0;
};

// Spatially averaged activations of encoder stage `stage` (1-based), one
// row per sample.
std::vector<std::vector<double>> stage_features(const Network<float>& network,
                                                const std::vector<Tensor<float>>& inputs,
                                                std::size_t stage);
// Dense + softmax trained on fixed features; AUC on test at best validation.
ProbeResult probe_features(const std::vector<std::vector<double>>& features,
                           const std::vector<int>& labels, const std::vector<std::size_t>& train,
                           const std::vector<std::size_t>& validation,
                           const std::vector<std::size_t>& test, const ProbeConfig& config);
ProbeResult linear_probe(const Network<float>& network, const TargetTask& task,
                         std::size_t stage, const ProbeConfig& config);

// ---------------------------------------------------------------- sweeps

struct NamedInit {
  std::string name;
  const Network<float>* network = nullptr;  // null = random init
};

struct SweepCell {
  std::string init;
  double fraction = 1.0;
  EvalResult result;
  double p_vs_reference = 1.0;  // two-sided pooled t-test against scratch at 100%
  bool equivalent = false;
};

struct SweepReport {
  std::vector<SweepCell> cells;  // init-major, fractions ascending
  // Per init, the smallest fraction equivalent to scratch at 100% (if any).
  std::vector<std::pair<std::string, std::optional<double>>> minimum_fraction;
  double alpha = 0.05;

  const SweepCell& cell(const std::string& init, double fraction) const;
  std::optional<double> minimum_for(const std::string& init) const;
  nlohmann::json to_json() const;
  std::string csv() const;  // init,fraction,seed,metric,value
};

// Runs every init x fraction over `seeds`. A cell is equivalent to the
// reference (scratch at fraction 1) when its mean is at least the
// reference mean or the two-sided pooled t-test gives p >= alpha. Scratch
// is always included, under the name "scratch".
SweepReport annotation_sweep(const std::vector<NamedInit>& inits, const TargetTask& task,
                             std::vector<double> fractions,
                             const std::vector<std::uint64_t>& seeds,
                             const FinetuneConfig& config, double alpha = 0.05,
                             std::size_t threads = 1);

struct AblationRow {
  std::size_t words = 0;
  bool failed = false;
  std::string error;
  EvalResult result;
  double pretrain_best_val_accuracy = 0.0;  // NaN for C = 1
};

struct AblationReport {
  std::vector<AblationRow> rows;
  nlohmann::json to_json() const;
  std::string csv() const;  // C,metric,mean,std,runs,status
};

// discovery -> pre-training -> fine-tuning for each C, the extractor and
// all seeds shared. ConfigError up front when a C exceeds the coordinate
// capacity of the cohort; numerical failures mark the row failed.
AblationReport ablate_num_words(const phantom::PhantomCohort& cohort,
                                const discovery::Latents& latents,
                                const std::vector<std::size_t>& word_counts,
                                const discovery::DiscoveryConfig& discovery,
                                const pretrain::PretrainConfig& pretrain,
                                const TargetTask& task, const FinetuneConfig& finetune,
                                const std::vector<std::uint64_t>& seeds,
                                std::size_t threads = 1);

}  // namespace tvw::transfer
