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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>

#include "transvw/io.hpp"
#include "transvw/ops.hpp"
#include "transvw/pretrain.hpp"
#include "transvw/rng.hpp"
#include "transvw/training.hpp"

namespace tvw::pretrain {
namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("tvw_pretrain_" + name);
  std::filesystem::remove_all(p);
  return p;
}

// Random-probability rows and one-hot targets for loss oracles.
std::pair<Tensor<double>, Tensor<double>> random_probs(Rng& rng, std::size_t B, std::size_t C) {
  Tensor<double> p({B, C}), y({B, C});
  for (std::size_t b = 0; b < B; ++b) {
    double s = 0;
    for (std::size_t c = 0; c < C; ++c) s += p[b * C + c] = rng.uniform(0.01, 1.0);
    for (std::size_t c = 0; c < C; ++c) p[b * C + c] /= s;
    y[b * C + std::size_t(rng.uniform_int(0, std::int64_t(C) - 1))] = 1.0;
  }
  return {p, y};
}

// Small labeled set of smooth random patches: cheap enough to train on.
PatchSet toy_set(std::size_t classes, std::size_t per_class, std::uint64_t seed,
                 Shape crop = {8, 8}) {
  Rng rng(seed);
  PatchSet s;
  s.crop = crop;
  s.classes = classes;
  Shape shape{1};
  shape.insert(shape.end(), crop.begin(), crop.end());
  for (std::size_t c = 0; c < classes; ++c) {
    const double level = 0.2 + 0.6 * double(c) / double(std::max<std::size_t>(1, classes - 1));
    for (std::size_t k = 0; k < per_class; ++k) {
      Tensor<float> t(shape);
      for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = float(std::clamp(level + 0.1 * std::sin(double(i) * 0.7 + double(c)) +
                                    rng.uniform(-0.05, 0.05), 0.0, 1.0));
      }
      const std::size_t idx = s.patches.size();
      s.patches.push_back(std::move(t));
      s.labels.push_back(c);
      (k == 0 ? s.validation : s.train).push_back(idx);
    }
  }
  return s;
}

PretrainConfig toy_config() {
  PretrainConfig c;
  c.channels = {4, 8};
  c.head_hidden = 8;
  c.batch = 4;
  c.max_epochs = 3;
  c.seed = 7;
  return c;
}

std::map<std::string, Tensor<float>> params_with(const Network<float>& n,
                                                 const std::string& skip_prefix) {
  std::map<std::string, Tensor<float>> out;
  for (const auto& [name, v] : n.parameters()) {
    if (!skip_prefix.empty() && name.rfind(skip_prefix, 0) == 0) continue;
    out.emplace(name, v.value());
  }
  return out;
}

// ---------------------------------------------------------------- losses

TEST(Losses, UniformFourClassCrossEntropyIsLnFour) {
  Tensor<double> p({1, 4}, {0.25, 0.25, 0.25, 0.25}), y({1, 4}, {0, 0, 1, 0});
  auto l = ops::categorical_cross_entropy(Var<double>::constant(p), y);
  EXPECT_NEAR(l.value()[0], std::log(4.0), 1e-15);
}

TEST(Losses, RestorationThreeFourFive) {
  Tensor<double> a({1, 1, 2}, {0, 0}), b({1, 1, 2}, {3, 4});
  auto l = ops::restoration_loss(Var<double>::constant(a), Var<double>::constant(b));
  EXPECT_DOUBLE_EQ(l.value()[0], 5.0);
  auto sq = ops::restoration_loss(Var<double>::constant(a), Var<double>::constant(b), true);
  EXPECT_DOUBLE_EQ(sq.value()[0], 25.0);
}

TEST(Losses, JointWithDefaultWeights) {
  auto cls = Var<double>::constant(Tensor<double>({1}, {1.386294}));
  auto rec = Var<double>::constant(Tensor<double>({1}, {0.5}));
  EXPECT_NEAR(joint_loss(cls, rec, 0.01, 1.0).value()[0], 0.51386294, 1e-15);
  EXPECT_EQ(joint_loss(cls, rec, 0.0, 1.0).value()[0], 0.5);
  EXPECT_EQ(joint_loss(cls, rec, 1.0, 0.0).value()[0], 1.386294);
  EXPECT_THROW(joint_loss(cls, rec, -0.1, 1.0), UsageError);
}

TEST(Losses, CrossEntropyMatchesLoopOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    auto [p, y] = random_probs(rng, 8, 45);
    double oracle = 0;
    for (std::size_t b = 0; b < 8; ++b) {
      for (std::size_t c = 0; c < 45; ++c) {
        oracle -= y[b * 45 + c] * std::log(std::max(p[b * 45 + c], 1e-12));
      }
    }
    oracle /= 8;
    EXPECT_NEAR(ops::categorical_cross_entropy(Var<double>::constant(p), y).value()[0], oracle, 1e-12);
  }
}

TEST(Losses, RestorationMatchesFlattenNormOracle) {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t B = std::size_t(rng.uniform_int(1, 6));
    Tensor<double> a({B, 1, 5, 7}), b({B, 1, 5, 7});
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng.uniform(), b[i] = rng.uniform();
    double oracle = 0, oracle_sq = 0;
    for (std::size_t s = 0; s < B; ++s) {
      double acc = 0;
      for (std::size_t i = 0; i < 35; ++i) acc += std::pow(a[s * 35 + i] - b[s * 35 + i], 2);
      oracle += std::sqrt(acc);
      oracle_sq += acc;
    }
    const auto va = Var<double>::constant(a), vb = Var<double>::constant(b);
    EXPECT_NEAR(ops::restoration_loss(va, vb).value()[0], oracle / double(B), 1e-12);
    EXPECT_NEAR(ops::restoration_loss(va, vb, true).value()[0], oracle_sq / double(B), 1e-12);
  }
}

TEST(Losses, JointMatchesWeightedSumOracle) {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const double c = rng.uniform(0, 5), r = rng.uniform(0, 5);
    const double lc = rng.uniform(0, 1), lr = rng.uniform(0, 2);
    auto j = joint_loss(Var<double>::constant(Tensor<double>({1}, {c})),
                        Var<double>::constant(Tensor<double>({1}, {r})), lc, lr);
    EXPECT_NEAR(j.value()[0], lc * c + lr * r, 1e-12);
  }
}

// Gradients of the joint loss are the weighted sums of the per-term ones.
TEST(Losses, JointGradientsAreWeightedSums) {
  Network<double> net(transvw_network_config({8, 8}, 3, {4, 8}, 8), 3);
  Rng rng(14);
  Tensor<double> x({2, 1, 8, 8});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform();
  const auto onehot = one_hot<double>({0, 2}, 3);
  auto term = [&](bool cls) {
    auto out = net.forward(x);
    return cls ? ops::categorical_cross_entropy(out.probabilities.at("vw"), onehot)
               : ops::restoration_loss(Var<double>::constant(x), out.restoration);
  };
  auto grads = [&](const Var<double>& loss) {
    net.zero_grad();
    backward(loss);
    std::vector<Tensor<double>> g;
    for (const auto& p : net.trainable()) g.push_back(p.grad());
    return g;
  };
  const auto gc = grads(term(true));
  const auto gr = grads(term(false));
  const auto gj = grads(joint_loss(term(true), term(false), 0.01, 1.0));
  for (std::size_t p = 0; p < gj.size(); ++p) {
    for (std::size_t i = 0; i < gj[p].size(); ++i) {
      EXPECT_NEAR(gj[p][i], 0.01 * gc[p][i] + gr[p][i], 1e-12);
    }
  }
}

// ---------------------------------------------------------------- network

TEST(TransvwNetwork, ShapeContract) {
  auto net = build_transvw_network({16, 16}, 10, {8, 16, 32}, 64, 1);
  Tensor<float> x({3, 1, 16, 16}, 0.5f);
  auto out = net.forward(x);
  EXPECT_EQ(out.restoration.shape(), x.shape());
  EXPECT_EQ(out.probabilities.at("vw").shape(), (Shape{3, 10}));
  // a single word is no classification task
  EXPECT_EQ(transvw_network_config({16, 16}, 1).find_head(kWordHead), nullptr);
}

TEST(TransvwNetwork, BothHeadsReachTheEncoder) {
  Network<float> net(transvw_network_config({8, 8}, 3, {4, 8}, 8), 5);
  Rng rng(15);
  Tensor<float> x({4, 1, 8, 8});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = float(rng.uniform());
  auto encoder_norm = [&](bool cls) {
    net.zero_grad();
    auto out = net.forward(x);
    backward(cls ? ops::categorical_cross_entropy(out.probabilities.at("vw"),
                                                  one_hot<float>({0, 1, 2, 0}, 3))
                 : ops::restoration_loss(Var<float>::constant(x), out.restoration));
    double s = 0;
    for (const auto& [name, v] : net.parameters()) {
      if (name.rfind("enc", 0) != 0) continue;
      for (std::size_t i = 0; i < v.grad().size(); ++i) s += std::abs(v.grad()[i]);
    }
    return s;
  };
  EXPECT_GT(encoder_norm(true), 0.0);
  EXPECT_GT(encoder_norm(false), 0.0);
}

TEST(TransvwNetwork, VariantTopologies) {
  PretrainConfig c;
  c.variant = Variant::rotation;
  auto rot = variant_network_config(c, {16, 16}, 10);
  EXPECT_FALSE(rot.decoder);
  EXPECT_EQ(rot.find_head(kRotationHead)->classes, 4u);
  EXPECT_EQ(rot.find_head(kWordHead), nullptr);
  c.add_vw = true;
  EXPECT_EQ(variant_network_config(c, {16, 16}, 10).find_head(kWordHead)->classes, 10u);
  c = {};
  c.variant = Variant::classification_only;
  EXPECT_FALSE(variant_network_config(c, {16, 16}, 10).decoder);
  c.variant = Variant::genesis;
  auto gen = variant_network_config(c, {16, 16}, 10);
  EXPECT_TRUE(gen.decoder);
  EXPECT_TRUE(gen.heads.empty());
}

// ---------------------------------------------------------------- config

TEST(Config, JsonRoundTripAndDigest) {
  PretrainConfig c;
  c.variant = Variant::inpainting;
  c.add_vw = true;
  c.batch = 4;
  c.policy.shuffle_prob = 0.25;
  auto back = PretrainConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.digest(), c.digest());
  c.seed = 2;
  EXPECT_NE(back.digest(), c.digest());
}

TEST(Config, Errors) {
  EXPECT_THROW(PretrainConfig::from_json(nlohmann::json{{"lambda_clss", 1}}), ConfigError);
  EXPECT_THROW(PretrainConfig::from_json(nlohmann::json{{"variant", "jigsaw"}}), ConfigError);
  EXPECT_THROW(PretrainConfig::from_json(nlohmann::json{{"lambda_rec", -1}}), ConfigError);
  EXPECT_THROW(PretrainConfig::from_json(nlohmann::json{{"add_vw", true}}), ConfigError);
  EXPECT_THROW(PretrainConfig::from_json(nlohmann::json{{"batch", 0}}), ConfigError);
}

TEST(Config, IsolatedVariantsForceTheirWeights) {
  PretrainConfig c;
  c.variant = Variant::restoration_only;
  EXPECT_EQ(c.normalized().lambda_cls, 0.0);
  EXPECT_EQ(c.normalized().lambda_rec, 1.0);
  c.variant = Variant::classification_only;
  EXPECT_EQ(c.normalized().lambda_rec, 0.0);
  EXPECT_EQ(c.normalized().lambda_cls, 0.01);
}

// ---------------------------------------------------------------- batches

TEST(Rotate, QuarterTurnsCompose) {
  Tensor<float> x({1, 3, 3, 2});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = float(i);
  auto r1 = rotate90(x, 1);
  // out[i][j] = in[j][W-1-i]
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      for (std::size_t z = 0; z < 2; ++z) {
        EXPECT_EQ(r1[(i * 3 + j) * 2 + z], x[(j * 3 + (2 - i)) * 2 + z]);
      }
    }
  }
  EXPECT_EQ(rotate90(r1, 3), x);
  EXPECT_EQ(rotate90(rotate90(x, 2), 2), x);
  EXPECT_EQ(rotate90(x, 4), x);
  EXPECT_THROW(rotate90(Tensor<float>({1, 3, 4}), 1), ConfigError);
}

TEST(Batches, PerturbedInputPairsWithCleanTarget) {
  const auto set = toy_set(3, 4, 1);
  const auto c = toy_config();
  const std::vector<std::size_t> idx{0, 5, 9};
  const auto b = make_batch(set, idx, c, 99);
  ASSERT_EQ(b.specs.size(), 3u);
  EXPECT_EQ(b.labels, (std::vector<std::size_t>{0, 1, 2}));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    EXPECT_EQ(unstack(b.target, i), set.patches[idx[i]]);
    EXPECT_EQ(unstack(b.input, i), perturb::replay(set.patches[idx[i]], b.specs[i]));
  }
  // same stream, same batch; another stream, other perturbations
  EXPECT_EQ(make_batch(set, idx, c, 99).input, b.input);
  EXPECT_NE(make_batch(set, idx, c, 100).input, b.input);
}

TEST(Batches, BaselineDistortions) {
  const auto set = toy_set(2, 20, 2, {16, 16});
  auto c = toy_config();
  std::vector<std::size_t> idx(set.patches.size());
  std::iota(idx.begin(), idx.end(), 0);

  c.variant = Variant::inpainting;
  auto b = make_batch(set, idx, c, 3);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    ASSERT_EQ(b.specs[i].ops.size(), 1u);
    EXPECT_EQ(b.specs[i].ops[0].kind, perturb::OpKind::inpaint);
    EXPECT_EQ(unstack(b.input, i), perturb::replay(set.patches[i], b.specs[i]));
  }

  c.variant = Variant::context_restoration;
  b = make_batch(set, idx, c, 3);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    EXPECT_EQ(b.specs[i].ops[0].kind, perturb::OpKind::swap_windows);
    EXPECT_EQ(unstack(b.input, i), perturb::replay(set.patches[i], b.specs[i]));
  }

  c.variant = Variant::rotation;
  b = make_batch(set, idx, c, 3);
  std::set<std::size_t> seen(b.rotation_labels.begin(), b.rotation_labels.end());
  EXPECT_EQ(seen.size(), 4u);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    EXPECT_EQ(unstack(b.input, i), rotate90(set.patches[i], b.rotation_labels[i]));
  }
}

TEST(Batches, RandomCropSet) {
  auto cohort = phantom::generate_cohort(phantom::PhantomConfig{}, 4);
  auto s = random_crop_set(cohort, {16, 16}, 30, 0.2, 5);
  EXPECT_EQ(s.patches.size(), 30u);
  EXPECT_EQ(s.validation.size(), 6u);
  EXPECT_EQ(s.train.size(), 24u);
  EXPECT_TRUE(s.labels.empty());
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.validation.begin(), s.validation.end());
  EXPECT_EQ(all.size(), 30u);
  EXPECT_EQ(s.patches[0].shape(), (Shape{1, 16, 16}));
  auto again = random_crop_set(cohort, {16, 16}, 30, 0.2, 5);
  for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(again.patches[i], s.patches[i]);
}

// ---------------------------------------------------------------- training

TEST(Training, RowsDecomposeAndAreOrdered) {
  const auto set = toy_set(3, 6, 3);
  const auto r = train_on(set, toy_config());
  ASSERT_EQ(r.report.rows.size(), 4u);
  for (std::size_t e = 0; e < r.report.rows.size(); ++e) {
    const auto& row = r.report.rows[e];
    EXPECT_EQ(row.epoch, e);
    EXPECT_NEAR(row.train_total, 0.01 * row.train_cls + row.train_rec, 1e-9);
    EXPECT_NEAR(row.val_total, 0.01 * row.val_cls + row.val_rec, 1e-9);
    EXPECT_TRUE(std::isnan(row.val_pretext_accuracy));
    EXPECT_GE(row.val_accuracy, 0.0);
  }
  EXPECT_LE(r.report.best().val_total, r.report.rows[0].val_total);
}

TEST(Training, DeterministicPerSeed) {
  const auto set = toy_set(3, 6, 3);
  const auto a = train_on(set, toy_config());
  const auto b = train_on(set, toy_config());
  EXPECT_EQ(a.report.to_json(), b.report.to_json());
  EXPECT_EQ(a.report.losses_csv(), b.report.losses_csv());
  EXPECT_EQ(a.report.checkpoint_digest, b.report.checkpoint_digest);
  auto c = toy_config();
  c.seed = 8;
  EXPECT_NE(train_on(set, c).report.checkpoint_digest, a.report.checkpoint_digest);
}

// lambda_cls = 0 is the pure restoration trainer: genesis and
// restoration_only reproduce its trunk bit-exactly.
TEST(Training, ZeroClassificationWeightIsPureRestoration) {
  const auto set = toy_set(3, 6, 4);
  auto c = toy_config();
  c.lambda_cls = 0.0;
  const auto joint = train_on(set, c);
  c.variant = Variant::genesis;
  const auto genesis = train_on(set, c);
  c.variant = Variant::restoration_only;
  c.lambda_cls = 0.5;  // forced to zero
  const auto restoration = train_on(set, c);

  const auto trunk = params_with(joint.network, "head.");
  EXPECT_EQ(params_with(genesis.network, ""), trunk);
  EXPECT_EQ(params_with(restoration.network, ""), params_with(joint.network, ""));
  for (std::size_t e = 0; e < joint.report.rows.size(); ++e) {
    EXPECT_EQ(genesis.report.rows[e].train_rec, joint.report.rows[e].train_rec);
    EXPECT_EQ(genesis.report.rows[e].val_rec, joint.report.rows[e].val_rec);
    EXPECT_EQ(restoration.report.rows[e].val_total, joint.report.rows[e].val_total);
  }
  EXPECT_EQ(restoration.report.lambda_cls, 0.0);
}

TEST(Training, ZeroRestorationWeightIsPureClassifier) {
  const auto set = toy_set(3, 6, 5);
  auto c = toy_config();
  c.lambda_rec = 0.0;
  const auto joint = train_on(set, c);
  c.variant = Variant::classification_only;
  c.lambda_rec = 1.0;  // forced to zero
  const auto cls = train_on(set, c);
  auto trunk = params_with(joint.network, "");
  std::erase_if(trunk, [](const auto& kv) {
    return kv.first.rfind("dec", 0) == 0 || kv.first.rfind("out", 0) == 0;
  });
  EXPECT_EQ(params_with(cls.network, ""), trunk);
  for (std::size_t e = 0; e < joint.report.rows.size(); ++e) {
    EXPECT_EQ(cls.report.rows[e].val_cls, joint.report.rows[e].val_cls);
    EXPECT_EQ(cls.report.rows[e].val_accuracy, joint.report.rows[e].val_accuracy);
  }
}

TEST(Training, RotationOnConstantPatchesScoresExactChance) {
  PatchSet s;
  s.crop = {8, 8};
  for (std::size_t i = 0; i < 12; ++i) {
    s.patches.emplace_back(Shape{1, 8, 8}, float(i) / 12.0f);
    (i % 4 == 0 ? s.validation : s.train).push_back(i);
  }
  auto c = toy_config();
  c.variant = Variant::rotation;
  const auto r = train_on(s, c);
  for (const auto& row : r.report.rows) {
    EXPECT_EQ(row.val_pretext_accuracy, 0.25);
    EXPECT_TRUE(std::isnan(row.val_accuracy));
    EXPECT_NEAR(row.val_total, row.val_pretext, 1e-12);
  }
}

TEST(Training, AddOnHeadJoinsTheObjective) {
  const auto set = toy_set(3, 6, 6);
  auto c = toy_config();
  c.variant = Variant::inpainting;
  const auto off = train_on(set, c);
  c.add_vw = true;
  const auto on = train_on(set, c);
  EXPECT_TRUE(std::isnan(off.report.rows[0].val_accuracy));
  EXPECT_EQ(off.report.rows[0].val_cls, 0.0);
  EXPECT_GT(on.report.rows[0].val_cls, 0.0);
  EXPECT_NE(on.network.config().find_head(kWordHead), nullptr);
  for (const auto& row : on.report.rows) {
    EXPECT_NEAR(row.val_total, 0.01 * row.val_cls + row.val_rec, 1e-9);
  }
}

TEST(Training, MisconfiguredSourcesAreConfigErrors) {
  auto cohort = phantom::generate_cohort(phantom::PhantomConfig{}, 4);
  auto c = toy_config();
  EXPECT_THROW(train_pretext(cohort, {16, 16}, c), ConfigError);  // transvw needs words
  c.variant = Variant::rotation;
  c.add_vw = true;
  EXPECT_THROW(train_pretext(cohort, {16, 16}, c), ConfigError);
  PatchSet unlabeled = toy_set(2, 4, 1);
  unlabeled.labels.clear();
  EXPECT_THROW(train_on(unlabeled, c), ConfigError);
  c.variant = Variant::transvw;
  EXPECT_THROW(train_on(toy_set(2, 4, 1), c), ConfigError);
}

TEST(Training, BaselineOnRandomCrops) {
  auto cohort = phantom::generate_cohort(phantom::PhantomConfig{}, 4);
  auto c = toy_config();
  c.variant = Variant::context_restoration;
  c.crop_samples = 20;
  c.max_epochs = 1;
  const auto r = train_pretext(cohort, {16, 16}, c);
  EXPECT_EQ(r.report.rows.size(), 2u);
  EXPECT_FALSE(r.network.config().find_head(kWordHead));
  EXPECT_GT(r.report.rows[0].val_rec, 0.0);
}

TEST(Training, EarlyStopsWhenValidationStalls) {
  auto c = toy_config();
  c.learning_rate = 0.0;
  c.max_epochs = 50;
  c.patience = 3;
  const auto r = train_on(toy_set(3, 6, 7), c);
  EXPECT_TRUE(r.report.stopped_early);
  EXPECT_EQ(r.report.best_epoch, 0u);
  EXPECT_EQ(r.report.rows.size(), 4u);
}

TEST(Training, DivergenceAbortsWithBestCheckpoint) {
  auto c = toy_config();
  c.learning_rate = 1e30;
  c.max_epochs = 5;
  const auto set = toy_set(3, 6, 8);
  const auto r = train_on(set, c);
  EXPECT_TRUE(r.report.aborted);
  EXPECT_NE(r.report.diagnostic.find("numerical"), std::string::npos);
  ASSERT_FALSE(r.report.rows.empty());
  // the returned weights are the untouched initialisation
  Network<float> init(variant_network_config(c, set.crop, set.classes),
                      derive_seed(c.seed, "init"));
  EXPECT_EQ(r.report.best_epoch, 0u);
  EXPECT_EQ(params_with(r.network, ""), params_with(init, ""));
}

TEST(Training, WriteRunArtifacts) {
  const auto r = train_on(toy_set(3, 6, 9), toy_config());
  const auto dir = scratch_dir("run");
  write_run(r, dir, {{"run_digest", "abc"}});
  for (auto f : {"checkpoint.tvw", "report.json", "losses.csv", "timing.csv"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  const auto report = nlohmann::json::parse(read_file(dir / "report.json"));
  EXPECT_EQ(report.at("checkpoint_digest"), sha256_hex(read_file(dir / "checkpoint.tvw")));
  EXPECT_EQ(report.at("artifact").at("run_digest"), "abc");
  EXPECT_EQ(report.dump().find("seconds"), std::string::npos);
  const auto csv = read_file(dir / "losses.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "epoch,train_cls,train_rec,train_pretext,train_total,val_cls,val_rec,val_pretext,"
            "val_total,val_accuracy,val_pretext_accuracy");
  auto loaded = Network<float>::load(dir / "checkpoint.tvw");
  EXPECT_EQ(params_with(loaded, ""), params_with(r.network, ""));
}

}  // namespace
}  // namespace tvw::pretrain
