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

// Acceptance harness: one verdict line per criterion.
//
//   acceptance --criterion N [--strict] [--work DIR] [--record DIR]
//
// --record also writes the verdict line to DIR/criterion_N.txt, since ctest
// shows the output of passing tests only in verbose mode.
//
// Exit status is 0 once a verdict has been computed (PASS or FAIL), so the
// ctest entries record the outcome without hiding a failing criterion behind
// a red build; --strict turns FAIL into exit status 1. Any exception is 2.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>

#include "support/gradcheck.hpp"
#include "transvw/cli.hpp"
#include "transvw/io.hpp"
#include "transvw/ops.hpp"
#include "transvw/perturb.hpp"
#include "transvw/pretrain.hpp"
#include "transvw/rng.hpp"
#include "transvw/training.hpp"
#include "transvw/transfer.hpp"

namespace {

using namespace tvw;
namespace fs = std::filesystem;
using json = nlohmann::json;
using testing::grad_check;
using testing::random_tensor;

struct Verdict {
  bool pass = false;
  std::string detail;
};

// Accumulates named sub-checks; the first few failures go into the detail.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    ++total_;
    if (!ok) {
      if (failed_.size() < 5) failed_.push_back(what);
      ++failures_;
    }
  }
  bool ok() const { return failures_ == 0; }
  std::string summary() const {
    std::ostringstream s;
    s << (total_ - failures_) << "/" << total_ << " checks";
    for (const auto& f : failed_) s << "; failed: " << f;
    return s.str();
  }

 private:
  std::size_t total_ = 0, failures_ = 0;
  std::vector<std::string> failed_;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

std::string join(const std::vector<double>& v, int precision = 3) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i], precision);
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / double(v.size());
}

// ------------------------------------------------------------------ C1

Verdict gradient_checks() {
  constexpr double kTol = 1e-4;
  std::map<std::string, double> worst;
  auto record = [&](const std::string& name, const testing::GradCheckResult& r) {
    worst[name] = std::max(worst[name], r.max_relative_error);
  };

  {  // strided, padded 2D convolution (the down-sampling layer)
    auto x = Var<double>::parameter(random_tensor<double>({2, 2, 6, 5}, 1));
    auto w = Var<double>::parameter(random_tensor<double>({3, 2, 3, 3}, 2));
    auto b = Var<double>::parameter(random_tensor<double>({3}, 3));
    auto t = random_tensor<double>({2, 3, 3, 3}, 4);
    record("conv2d", grad_check([&] { return ops::mse(ops::conv(x, w, b, {2, 1}), t); },
                                {x, w, b}));
  }
  {
    auto x = Var<double>::parameter(random_tensor<double>({1, 2, 4, 4, 4}, 5));
    auto w = Var<double>::parameter(random_tensor<double>({2, 2, 3, 3, 3}, 6));
    auto b = Var<double>::parameter(random_tensor<double>({2}, 7));
    auto t = random_tensor<double>({1, 2, 4, 4, 4}, 8);
    record("conv3d", grad_check([&] { return ops::mse(ops::conv(x, w, b, {1, 1}), t); },
                                {x, w, b}));
  }
  {
    auto x = Var<double>::parameter(random_tensor<double>({2, 1, 9}, 9));
    auto w = Var<double>::parameter(random_tensor<double>({2, 1, 3}, 10));
    auto b = Var<double>::parameter(random_tensor<double>({2}, 11));
    auto t = random_tensor<double>({2, 2, 4}, 12);
    record("conv1d", grad_check([&] { return ops::mse(ops::conv(x, w, b, {2, 0}), t); },
                                {x, w, b}));
  }
  {
    auto a = Var<double>::parameter(random_tensor<double>({2, 2, 3, 3}, 13));
    auto c = Var<double>::parameter(random_tensor<double>({2, 1, 6, 6}, 14));
    auto t6 = random_tensor<double>({2, 3, 6, 6}, 15);
    auto t3 = random_tensor<double>({2, 2, 6, 6}, 16);
    auto tg = random_tensor<double>({2, 3}, 17);
    record("upsample", grad_check([&] { return ops::mse(ops::upsample_nearest(a, 2), t3); }, {a}));
    record("concat", grad_check([&] {
             return ops::mse(ops::concat_channels(ops::upsample_nearest(a, 2), c), t6);
           }, {a, c}));
    record("global_avg_pool", grad_check([&] {
             return ops::mse(ops::global_avg_pool(ops::concat_channels(ops::upsample_nearest(a, 2), c)), tg);
           }, {a, c}));
  }
  {
    auto x = Var<double>::parameter(random_tensor<double>({4, 5}, 18));
    auto w = Var<double>::parameter(random_tensor<double>({3, 5}, 19));
    auto b = Var<double>::parameter(random_tensor<double>({3}, 20));
    auto t = random_tensor<double>({4, 3}, 21, 0.1, 0.9);
    Tensor<double> y({4, 3});
    for (std::size_t n = 0; n < 4; ++n) y[n * 3 + (n + 1) % 3] = 1.0;
    record("dense", grad_check([&] { return ops::mse(ops::dense(x, w, b), t); }, {x, w, b}));
    record("relu", grad_check([&] { return ops::mse(ops::relu(ops::dense(x, w, b)), t); }, {w, b}));
    record("sigmoid", grad_check([&] { return ops::mse(ops::sigmoid(x), random_tensor<double>({4, 5}, 22)); }, {x}));
    record("softmax", grad_check([&] { return ops::mse(ops::softmax(ops::dense(x, w, b)), t); }, {x, w, b}));
    record("cross_entropy", grad_check([&] {
             return ops::categorical_cross_entropy(ops::softmax(ops::dense(x, w, b)), y);
           }, {x, w, b}));
  }
  {
    auto a = Var<double>::parameter(random_tensor<double>({3, 1, 4, 4}, 23, 0.1, 0.9));
    auto b = Var<double>::parameter(random_tensor<double>({3, 1, 4, 4}, 24, 0.1, 0.9));
    Tensor<double> mask({3, 1, 4, 4});
    for (std::size_t i = 0; i < mask.size(); i += 3) mask[i] = 1.0;
    record("restoration", grad_check([&] { return ops::restoration_loss(a, b); }, {a, b}));
    record("restoration_squared", grad_check([&] { return ops::restoration_loss(a, b, true); }, {a, b}));
    record("binary_cross_entropy", grad_check([&] { return ops::binary_cross_entropy(a, mask); }, {a}));
  }
  std::size_t params = 0, checked = 0;
  {  // the TransVW composite: encoder, skip decoder, restoration and word head, joint loss
    Network<double> net(pretrain::transvw_network_config({8, 8}, 3, {2, 4, 4}, 8), 7);
    params = net.parameter_count();
    auto x = random_tensor<double>({2, 1, 8, 8}, 25, 0.0, 1.0);
    const auto y = one_hot<double>({0, 2}, 3);
    auto r = grad_check(
        [&] {
          auto out = net.forward(x);
          return pretrain::joint_loss(ops::categorical_cross_entropy(out.probabilities.at("vw"), y),
                                      ops::restoration_loss(Var<double>::constant(x), out.restoration),
                                      0.01, 1.0);
        },
        net.trainable());
    checked = r.checked;
    record("transvw_composite", r);
  }
  double overall = 0;
  std::string names;
  for (const auto& [n, e] : worst) overall = std::max(overall, e), names += (names.empty() ? "" : ",") + n;
  const bool pass = overall < kTol && params <= 5000 && checked == params;
  return {pass, "max rel err " + fmt(overall, 3) + " over {" + names + "}; composite " +
                    std::to_string(params) + " params, " + std::to_string(checked) + " checked"};
}

// ------------------------------------------------------------------ C2

Verdict loss_oracles() {
  Checks c;
  Rng rng(2);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t B = std::size_t(rng.uniform_int(1, 8));
    const std::size_t C = std::size_t(rng.uniform_int(2, 50));
    Tensor<double> p({B, C}), y({B, C});
    for (std::size_t b = 0; b < B; ++b) {
      double s = 0;
      for (std::size_t k = 0; k < C; ++k) s += p[b * C + k] = rng.uniform(0.01, 1.0);
      for (std::size_t k = 0; k < C; ++k) p[b * C + k] /= s;
      y[b * C + std::size_t(rng.uniform_int(0, std::int64_t(C) - 1))] = 1.0;
    }
    double ce = 0;
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t k = 0; k < C; ++k) {
        if (y[b * C + k] == 1.0) ce -= std::log(p[b * C + k]);
      }
    }
    ce /= double(B);

    const Shape spatial = trial % 2 ? Shape{5, 7} : Shape{4, 3, 5};
    Shape full{B, 1};
    full.insert(full.end(), spatial.begin(), spatial.end());
    Tensor<double> x(full), xr(full);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(), xr[i] = rng.uniform();
    const std::size_t per = x.size() / B;
    double rec = 0;
    for (std::size_t b = 0; b < B; ++b) {
      double acc = 0;
      for (std::size_t i = 0; i < per; ++i) acc += (x[b * per + i] - xr[b * per + i]) * (x[b * per + i] - xr[b * per + i]);
      rec += std::sqrt(acc);
    }
    rec /= double(B);

    const double lc = rng.uniform(0, 1), lr = rng.uniform(0, 2);
    const auto l_ce = ops::categorical_cross_entropy(Var<double>::constant(p), y);
    const auto l_rec = ops::restoration_loss(Var<double>::constant(x), Var<double>::constant(xr));
    const auto l_joint = pretrain::joint_loss(l_ce, l_rec, lc, lr);
    const double e = std::max({std::abs(l_ce.value()[0] - ce), std::abs(l_rec.value()[0] - rec),
                               std::abs(l_joint.value()[0] - (lc * ce + lr * rec))});
    worst = std::max(worst, e);
    c.expect(e <= 1e-10, "batch " + std::to_string(trial));
  }
  // uniform 4-way prediction and a 3-4-5 residual: 0.01 * ln 4 + 1 * 5
  Tensor<double> p({1, 4}, {0.25, 0.25, 0.25, 0.25}), y({1, 4}, {0, 1, 0, 0});
  Tensor<double> a({1, 1, 2}, {0, 0}), b({1, 1, 2}, {3, 4});
  const double joint = pretrain::joint_loss(ops::categorical_cross_entropy(Var<double>::constant(p), y),
                                            ops::restoration_loss(Var<double>::constant(a), Var<double>::constant(b)),
                                            0.01, 1.0).value()[0];
  const double hand = 0.01 * 1.3862943611198906 + 5.0;
  c.expect(std::abs(joint - hand) <= 1e-12, "joint hand value");
  return {c.ok(), c.summary() + "; max oracle err " + fmt(worst, 3) + "; joint " +
                      fmt(joint, 12) + " vs hand " + fmt(hand, 12)};
}

// ------------------------------------------------------------------ C3

std::vector<char> box_mask(const Shape& spatial, const std::vector<perturb::Box>& boxes) {
  std::vector<char> m(shape_numel(spatial), 0);
  std::vector<std::size_t> c(spatial.size());
  for (std::size_t f = 0; f < m.size(); ++f) {
    std::size_t rem = f;
    for (std::size_t a = spatial.size(); a-- > 0;) {
      c[a] = rem % spatial[a];
      rem /= spatial[a];
    }
    for (const auto& b : boxes) {
      bool in = true;
      for (std::size_t a = 0; a < c.size(); ++a) {
        in = in && c[a] >= b.origin[a] && c[a] < b.origin[a] + b.extent[a];
      }
      if (in) m[f] = 1;
    }
  }
  return m;
}

std::vector<float> sorted(std::vector<float> v) {
  std::sort(v.begin(), v.end());
  return v;
}

std::vector<float> values(const Tensor<float>& t) { return {t.data().begin(), t.data().end()}; }

Verdict perturbation_invariants() {
  using namespace perturb;
  Checks c;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const std::string tag = " case " + std::to_string(s);
    Rng rng(derive_seed(3, "case", s));
    const bool volume = s % 4 == 3;
    const Shape spatial = volume ? Shape{8, 8, 8} : Shape{16, 16};
    Shape full{1};
    full.insert(full.end(), spatial.begin(), spatial.end());
    const auto patch = random_tensor<float>(full, s, 0.0, 1.0);
    const std::size_t channel = patch.size();

    // sampled chain: shape and range, determinism, replay through JSON
    auto [out, spec] = sample_perturbation(patch, s);
    bool in_range = out.shape() == patch.shape();
    for (float v : out.data()) in_range = in_range && v >= 0.0f && v <= 1.0f;
    c.expect(in_range, "shape/range" + tag);
    const auto parsed = PerturbationSpec::from_json(json::parse(spec.to_json().dump()));
    c.expect(bit_identical(replay(patch, parsed), out), "replay" + tag);
    c.expect(bit_identical(sample_perturbation(patch, s).first, out), "determinism" + tag);

    // identity parameterizations
    PerturbPolicy id;
    id.identity_prob = 1.0;
    c.expect(bit_identical(sample_perturbation(patch, s, id).first, patch), "identity branch" + tag);
    const Shape ones(spatial.size(), 1);
    c.expect(bit_identical(local_shuffle(patch, ones, 5, s), patch), "unit-window shuffle" + tag);
    c.expect(bit_identical(local_shuffle(patch, relative_extent(spatial, 0.25), 0, s), patch), "zero-window shuffle" + tag);
    c.expect(bit_identical(inpaint_distort(patch, 0, ones, ones, s), patch), "zero-block inpaint" + tag);
    c.expect(bit_identical(outpaint_distort(patch, spatial, spatial, s), patch), "full-window outpaint" + tag);

    // local shuffle: global and per-window multisets, untouched outside
    std::vector<Box> boxes;
    const Shape window = volume ? Shape{2, 2, 2} : Shape{2, 4};
    const auto shuffled = local_shuffle(patch, window, std::size_t(rng.uniform_int(1, 6)), s, &boxes);
    c.expect(sorted(values(shuffled)) == sorted(values(patch)), "shuffle multiset" + tag);
    const auto outside = box_mask(spatial, boxes);
    bool kept = true;
    for (std::size_t i = 0; i < channel; ++i) kept = kept && (outside[i] || shuffled[i] == patch[i]);
    c.expect(kept, "shuffle outside windows" + tag);
    for (const auto& b : boxes) {
      const auto m = box_mask(spatial, {b});
      std::vector<float> x, y;
      for (std::size_t i = 0; i < channel; ++i) {
        if (m[i]) x.push_back(patch[i]), y.push_back(shuffled[i]);
      }
      c.expect(sorted(x) == sorted(y), "shuffle window multiset" + tag);
    }

    // in-painting: complement bit-identical; out-painting: kept window bit-identical
    std::vector<Box> holes;
    const auto in = inpaint_distort(patch, std::size_t(rng.uniform_int(1, 3)),
                                    relative_extent(spatial, 1.0 / 6), relative_extent(spatial, 1.0 / 3), s, &holes);
    const auto hole_mask = box_mask(spatial, holes);
    bool comp = true;
    for (std::size_t i = 0; i < channel; ++i) comp = comp && (hole_mask[i] || in[i] == patch[i]);
    c.expect(comp, "inpaint complement" + tag);
    Box window_kept;
    const auto outp = outpaint_distort(patch, relative_extent(spatial, 3.0 / 7), relative_extent(spatial, 4.0 / 7), s, &window_kept);
    const auto keep_mask = box_mask(spatial, {window_kept});
    bool keep = true;
    for (std::size_t i = 0; i < channel; ++i) keep = keep && (!keep_mask[i] || outp[i] == patch[i]);
    c.expect(keep, "outpaint kept window" + tag);

    // Bezier: 1e5-point sweep is monotone in the curve's direction and stays in [0, 1]
    const auto pts = random_bezier_points(s);
    BezierCurve curve(pts);
    const double dir = pts[3].y >= pts[0].y ? 1.0 : -1.0;
    double prev = curve.map(0.0);
    bool mono = prev == pts[0].y;
    for (int i = 1; i < 100000; ++i) {
      const double y = curve.map(i / 99999.0);
      mono = mono && dir * (y - prev) >= 0.0 && y >= 0.0 && y <= 1.0;
      prev = y;
    }
    mono = mono && prev == pts[3].y;
    c.expect(mono, "bezier monotone" + tag);
  }
  return {c.ok(), c.summary() + " over 1000 seeded cases (2D and 3D)"};
}

// ------------------------------------------------------------------ C4

std::vector<std::uint64_t> brute_force_knn(const discovery::Latents& L, std::uint64_t ref, std::size_t k) {
  std::size_t r = 0;
  while (L.ids[r] != ref) ++r;
  std::vector<std::pair<double, std::uint64_t>> all;
  for (std::size_t i = 0; i < L.ids.size(); ++i) {
    if (i == r) continue;
    double s = 0;
    for (std::size_t d = 0; d < L.codes[i].size(); ++d) {
      const double diff = double(L.codes[i][d]) - L.codes[r][d];
      s += diff * diff;
    }
    all.emplace_back(s, L.ids[i]);
  }
  std::sort(all.begin(), all.end());
  std::vector<std::uint64_t> out{ref};
  for (std::size_t i = 0; i + 1 < k; ++i) out.push_back(all[i].second);
  return out;
}

Verdict discovery_correctness() {
  Checks c;
  for (std::uint64_t trial = 0; trial < 50; ++trial) {
    Rng rng(derive_seed(4, "latents", trial));
    discovery::Latents L;
    const std::size_t n = std::size_t(rng.uniform_int(10, 40));
    const std::size_t dim = std::size_t(rng.uniform_int(1, 16));
    for (std::size_t i = 0; i < n; ++i) {
      L.ids.push_back(7 * i + 3);
      std::vector<float> code(dim);
      // coarse values on half the trials so ties are exercised
      for (auto& v : code) v = trial % 2 ? float(rng.uniform_int(0, 2)) : float(rng.normal());
      L.codes.push_back(std::move(code));
    }
    const auto ref = L.ids[trial % n];
    for (std::size_t k : {std::size_t(1), std::size_t(5), n}) {
      c.expect(discovery::nearest_patients(L, ref, k) == brute_force_knn(L, ref, k),
               "knn set " + std::to_string(trial) + " k " + std::to_string(k));
    }
  }

  const phantom::PhantomConfig pc;
  const auto cohort = phantom::generate_cohort(pc, 64);
  const discovery::DiscoveryConfig dc;  // C = 10, K = 20
  const auto fx = discovery::train_feature_extractor(cohort, dc);
  const auto d = discovery::extract_visual_words(fx, cohort, dc);
  std::vector<std::size_t> hist(dc.words, 0);
  for (const auto& inst : d.items) ++hist[inst.label];
  c.expect(d.items.size() == dc.words * dc.instances &&
               std::all_of(hist.begin(), hist.end(), [&](std::size_t h) { return h == dc.instances; }),
           "balance");
  const auto replayed = discovery::replay_from_manifest(cohort, json::parse(d.manifest.dump()));
  bool exact = replayed.items.size() == d.items.size();
  for (std::size_t i = 0; exact && i < d.items.size(); ++i) {
    exact = bit_identical(replayed.items[i].patch, d.items[i].patch) && replayed.items[i].label == d.items[i].label;
  }
  c.expect(exact, "manifest replay");
  const double purity = discovery::word_purity(d, cohort);
  const auto pd = discovery::patch_distances(d);
  c.expect(purity >= 0.95, "purity");
  c.expect(pd.cross >= 1.2 * pd.within, "margin");
  return {c.ok(), c.summary() + "; purity " + fmt(purity) + ", cross/within L2 " +
                      fmt(pd.cross / pd.within) + " (" + fmt(pd.cross) + "/" + fmt(pd.within) + ")"};
}

// ------------------------------------------------------------------ shared recipes

// The pre-training recipe used by every desk-scale transfer criterion: the
// default 64-patient cohort, discovery and pre-training seeded by `seed`,
// batch 2 for 100 epochs, no early stop.
struct Pretrained {
  discovery::VisualWordDataset dataset;
  pretrain::PretrainResult result;
};

discovery::VisualWordDataset words_for(const phantom::PhantomCohort& cohort, std::uint64_t seed) {
  discovery::DiscoveryConfig dc;
  dc.seed = seed;
  const auto fx = discovery::train_feature_extractor(cohort, dc);
  return discovery::extract_visual_words(discovery::embed_cohort(fx, cohort), cohort, dc);
}

pretrain::PretrainConfig pretrain_recipe(std::uint64_t seed) {
  pretrain::PretrainConfig c;
  c.seed = seed;
  c.batch = 2;
  c.max_epochs = 100;
  c.patience = 1000;
  return c;
}

transfer::FinetuneConfig finetune_recipe(std::uint64_t seed) {
  transfer::FinetuneConfig f;
  f.seed = seed;
  f.patience = 20;
  return f;
}

double max_val_accuracy(const pretrain::RunReport& r) {
  double m = 0;
  for (const auto& row : r.rows) m = std::max(m, row.val_accuracy);
  return m;
}

// ------------------------------------------------------------------ C5

Verdict pretraining_behaviour() {
  const auto cohort = phantom::generate_cohort(phantom::PhantomConfig{}, 64);
  std::vector<double> acc, ablated_acc, rec_drop;
  for (std::uint64_t s = 1; s <= 5; ++s) {
    const auto ds = words_for(cohort, s);
    acc.push_back(max_val_accuracy(pretrain::train_transvw(ds, pretrain_recipe(s)).report));
    auto cfg = pretrain_recipe(s);
    cfg.lambda_cls = 0.0;
    cfg.max_epochs = 200;
    const auto r = pretrain::train_transvw(ds, cfg).report;
    ablated_acc.push_back(r.best().val_accuracy);
    rec_drop.push_back(1.0 - r.rows.back().train_rec / r.rows.front().train_rec);
  }
  const double chance_bound = 0.3;  // 10 words; 20 validation instances
  const bool learns = median(acc) >= 0.5;
  const bool ablated_chance = median(ablated_acc) <= chance_bound;
  const bool restores = median(rec_drop) >= 0.5;
  return {learns && ablated_chance && restores,
          "median max val acc " + fmt(median(acc), 3) + " [" + join(acc) + "] (need >= 0.5); lambda_cls=0: " +
              "median acc " + fmt(median(ablated_acc), 3) + " [" + join(ablated_acc) + "] (need <= " +
              fmt(chance_bound) + "), median L_rec drop " + fmt(median(rec_drop), 3) + " [" + join(rec_drop) +
              "] (need >= 0.5)"};
}

// ------------------------------------------------------------------ C6

Verdict transfer_direction() {
  const phantom::PhantomConfig pc;
  const auto cohort = phantom::generate_cohort(pc, 64);
  const auto task = transfer::make_phantom_task(pc, transfer::TaskConfig{});
  std::vector<std::uint64_t> ids;
  for (const auto& p : cohort.patients) ids.push_back(p.patient_id);
  transfer::check_no_leak(task, ids);
  std::vector<double> tvw_auc, scratch_auc, tvw_e, scratch_e;
  for (std::uint64_t s = 1; s <= 5; ++s) {
    const auto pre = pretrain::train_transvw(words_for(cohort, s), pretrain_recipe(s));
    const auto f = finetune_recipe(s);
    const auto a = transfer::finetune(&pre.network, task, f);
    const auto b = transfer::finetune(nullptr, task, f);
    const double miss = double(f.max_epochs + 1);
    tvw_auc.push_back(a.test_metric), scratch_auc.push_back(b.test_metric);
    tvw_e.push_back(a.epochs_to_target ? double(*a.epochs_to_target) : miss);
    scratch_e.push_back(b.epochs_to_target ? double(*b.epochs_to_target) : miss);
  }
  const auto t = transfer::ttest_paired(tvw_auc, scratch_auc);
  const bool auc_ok = t.p_greater() < 0.05;
  const bool faster = median(tvw_e) < median(scratch_e);
  return {auc_ok && faster,
          "test AUC transvw " + fmt(mean(tvw_auc)) + " [" + join(tvw_auc) + "] vs scratch " + fmt(mean(scratch_auc)) +
              " [" + join(scratch_auc) + "], paired one-sided p " + fmt(t.p_greater(), 3) + (auc_ok ? " ok" : " (need < 0.05)") +
              "; median epochs to AUC 0.9: " + fmt(median(tvw_e)) + " vs " + fmt(median(scratch_e)) +
              (faster ? " ok" : " (need strictly fewer)")};
}

// ------------------------------------------------------------------ C7

Verdict addon_direction() {
  const phantom::PhantomConfig pc;
  const auto cohort = phantom::generate_cohort(pc, 64);
  const auto task = transfer::make_phantom_task(pc, transfer::TaskConfig{});
  const std::vector<pretrain::Variant> variants{pretrain::Variant::rotation, pretrain::Variant::inpainting,
                                                pretrain::Variant::context_restoration, pretrain::Variant::genesis};
  std::vector<std::vector<double>> on(variants.size()), off(variants.size());
  for (std::uint64_t s = 1; s <= 5; ++s) {
    const auto ds = words_for(cohort, s);  // one word set per seed, shared by off and on
    for (std::size_t v = 0; v < variants.size(); ++v) {
      for (bool add : {false, true}) {
        auto cfg = pretrain_recipe(s);
        cfg.variant = variants[v];
        cfg.add_vw = add;
        const auto pre = pretrain::train_pretext(ds, cfg);
        (add ? on : off)[v].push_back(transfer::finetune(&pre.network, task, finetune_recipe(s)).test_metric);
      }
    }
  }
  std::size_t not_worse = 0, significant = 0;
  std::string detail;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    const auto t = transfer::ttest_paired(on[v], off[v]);
    const bool ge = mean(on[v]) >= mean(off[v]);
    const bool sig = t.p_greater() < 0.05;
    not_worse += ge;
    significant += ge && sig;
    detail += std::string(detail.empty() ? "" : "; ") + std::string(pretrain::to_string(variants[v])) +
              " on " + fmt(mean(on[v])) + " [" + join(on[v]) + "] off " + fmt(mean(off[v])) + " [" +
              join(off[v]) + "] p " + fmt(t.p_greater(), 3);
  }
  return {not_worse == variants.size() && significant >= 3,
          std::to_string(not_worse) + "/4 variants with mean on >= off, " + std::to_string(significant) +
              "/4 significant (need 4 and >= 3): " + detail};
}

// ------------------------------------------------------------------ C8

Verdict annotation_efficiency() {
  const phantom::PhantomConfig pc;
  const auto cohort = phantom::generate_cohort(pc, 64);
  const auto task = transfer::make_phantom_task(pc, transfer::TaskConfig{});
  const auto pre = pretrain::train_transvw(words_for(cohort, 1), pretrain_recipe(1));
  const auto rep = transfer::annotation_sweep({{"transvw", &pre.network}}, task, {0.1, 0.25, 0.5, 1.0},
                                              {1, 2, 3, 4, 5}, finetune_recipe(1));
  const auto tvw = rep.minimum_for("transvw"), scratch = rep.minimum_for("scratch");
  const bool pass = tvw && (!scratch || *tvw <= *scratch);
  std::string cells;
  for (const auto& cell : rep.cells) {
    cells += " " + cell.init + "@" + fmt(cell.fraction, 2) + "=" + fmt(cell.result.mean, 3) +
             (cell.equivalent ? "*" : "");
  }
  auto show = [](const std::optional<double>& f) { return f ? fmt(*f, 2) : std::string("none"); };
  return {pass, "minimum equivalent fraction transvw " + show(tvw) + " vs scratch " + show(scratch) +
                    "; mean AUC (* = equivalent to scratch@1):" + cells};
}

// ------------------------------------------------------------------ C9

Verdict metric_oracles() {
  using boost::multiprecision::cpp_bin_float_50;
  Checks c;
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = std::size_t(rng.uniform_int(2, 60));
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = trial % 3 ? rng.normal() : double(rng.uniform_int(0, 4));  // ties on a third
      labels[i] = rng.bernoulli(0.4);
    }
    labels[0] = 0, labels[1] = 1;
    double pairs = 0, wins = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (labels[i] != 1 || labels[j] != 0) continue;
        pairs += 1;
        wins += scores[i] > scores[j] ? 1.0 : scores[i] == scores[j] ? 0.5 : 0.0;
      }
    }
    c.expect(transfer::auc(scores, labels) == wins / pairs, "auc case " + std::to_string(trial));
  }

  auto overlap = [](std::vector<float> p, std::vector<float> t) { return transfer::dice_iou(p, t); };
  auto exact = [&](const transfer::Overlap& o, double dice, double iou, const std::string& what) {
    c.expect(o.dice == dice && o.iou == iou, what);
  };
  exact(overlap({1, 1, 0, 0}, {1, 1, 0, 0}), 1.0, 1.0, "identical");
  exact(overlap({1, 0, 0, 0}, {0, 1, 0, 0}), 0.0, 0.0, "disjoint");
  exact(overlap({0, 0, 0}, {0, 0, 0}), 1.0, 1.0, "both empty");
  exact(overlap({1, 1, 0, 0}, {1, 0, 0, 0}), 2.0 / 3.0, 0.5, "half");
  exact(overlap({1, 1, 1, 0}, {0, 1, 1, 1}), 2.0 / 3.0, 0.5, "shifted");
  exact(overlap({1, 1, 1, 1}, {1, 0, 0, 0}), 0.4, 0.25, "quarter");

  // Student t on the same samples, evaluated in 50-digit arithmetic.
  using hp = cpp_bin_float_50;
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t na = std::size_t(rng.uniform_int(2, 30));
    const bool paired = trial % 2;
    const std::size_t nb = paired ? na : std::size_t(rng.uniform_int(2, 30));
    std::vector<double> a(na), b(nb);
    const double shift = rng.uniform(-1.5, 1.5);
    for (auto& v : a) v = rng.normal() + shift;
    for (auto& v : b) v = rng.normal() * rng.uniform(0.5, 2.0);
    hp t, df;
    if (paired) {
      hp m = 0, ss = 0;
      for (std::size_t i = 0; i < na; ++i) m += hp(a[i]) - hp(b[i]);
      m /= na;
      for (std::size_t i = 0; i < na; ++i) {
        const hp d = hp(a[i]) - hp(b[i]) - m;
        ss += d * d;
      }
      df = na - 1;
      t = m / sqrt(ss / df / na);
    } else {
      hp ma = 0, mb = 0, sa = 0, sb = 0;
      for (double v : a) ma += v;
      for (double v : b) mb += v;
      ma /= na, mb /= nb;
      for (double v : a) sa += (hp(v) - ma) * (hp(v) - ma);
      for (double v : b) sb += (hp(v) - mb) * (hp(v) - mb);
      df = na + nb - 2;
      t = (ma - mb) / sqrt((sa + sb) / df * (hp(1) / na + hp(1) / nb));
    }
    boost::math::students_t_distribution<hp> dist(df);
    const hp p = 2 * boost::math::cdf(dist, -abs(t));
    const auto got = paired ? transfer::ttest_paired(a, b) : transfer::ttest_independent(a, b);
    const double err = std::abs(got.p - p.convert_to<double>());
    worst = std::max(worst, err);
    c.expect(err <= 1e-6, "t-test case " + std::to_string(trial));
  }
  return {c.ok(), c.summary() + "; max |p - p_ref| " + fmt(worst, 3)};
}

// ------------------------------------------------------------------ C10

std::map<std::string, std::string> snapshot(const fs::path& root, std::set<std::string>& volatile_files) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), root).generic_string();
    files[rel] = read_file(e.path());
    if (e.path().filename() == "index.json") {
      const auto stage_dir = fs::relative(e.path().parent_path(), root).generic_string();
      for (const auto& v : json::parse(files[rel]).value("volatile", json::array())) {
        volatile_files.insert(stage_dir + "/" + v.get<std::string>());
      }
    }
  }
  return files;
}

Verdict reproducibility(const fs::path& work) {
  // Default configuration with shortened training; the code paths are the full ones.
  const std::vector<std::string> sets{
      "discovery.extractor_epochs=10", "pretrain.max_epochs=10", "finetune.max_epochs=10",
      "evaluation.runs=2", "evaluation.fractions=[0.5,1.0]", "evaluation.words=[5,10,20]", "probe.epochs=20"};
  const std::vector<std::vector<std::string>> commands{
      {"gen-phantoms"}, {"discover"}, {"pretrain"}, {"finetune"}, {"finetune", "--init", "scratch"},
      {"linear-probe"}, {"evaluate"}, {"sweep-annotation"}, {"ablate-c"}, {"export-montage"},
      {"verify", "--strict"}};
  Checks c;
  std::vector<fs::path> dirs{work / "run_a", work / "run_b"};
  for (const auto& dir : dirs) {
    fs::remove_all(dir);
    for (const auto& cmd : commands) {
      std::vector<std::string> args = cmd;
      args.insert(args.end(), {"-o", dir.string(), "--set"});
      args.insert(args.end(), sets.begin(), sets.end());
      std::ostringstream out, err;
      const int code = cli::run(args, out, err);
      c.expect(code == 0, cmd[0] + " exit " + std::to_string(code) + " " + err.str());
    }
  }
  std::set<std::string> volatile_files;
  const auto a = snapshot(dirs[0], volatile_files), b = snapshot(dirs[1], volatile_files);
  std::size_t compared = 0;
  c.expect(a.size() == b.size(), "same file set");
  for (const auto& [name, bytes] : a) {
    if (volatile_files.count(name)) continue;
    const auto it = b.find(name);
    c.expect(it != b.end() && it->second == bytes, "identical " + name);
    ++compared;
  }
  std::string table = "missing";
  if (a.count("ablation/ablation.json")) {
    const auto abl = json::parse(a.at("ablation/ablation.json"));
    std::set<std::size_t> words;
    bool populated = true;
    table.clear();
    for (const auto& row : abl.at("rows")) {
      words.insert(row.at("words").get<std::size_t>());
      const bool ok = !row.at("failed").get<bool>() && row.contains("result") &&
                      row["result"].at("mean").is_number() && row["result"].at("std").is_number() &&
                      row["result"].at("scores").size() == 2;
      populated = populated && ok;
      table += " C=" + std::to_string(row.at("words").get<std::size_t>()) + ":" +
               (ok ? fmt(row["result"]["mean"].get<double>(), 3) : std::string("failed"));
    }
    c.expect(words == std::set<std::size_t>{5, 10, 20} && populated, "ablation table populated");
  } else {
    c.expect(false, "ablation table present");
  }
  return {c.ok(), c.summary() + "; " + std::to_string(compared) + " files byte-identical across runs, " +
                      std::to_string(volatile_files.size()) + " volatile per run; ablation AUC" + table};
}

struct Criterion {
  std::string name;
  double budget_seconds;
  std::function<Verdict()> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"transvw acceptance criteria"};
  int which = 0;
  bool strict = false;
  std::string work = (fs::temp_directory_path() / "tvw_acceptance").string();
  app.add_option("--criterion", which, "criterion number 1-10")->required()->check(CLI::Range(1, 10));
  app.add_flag("--strict", strict, "exit 1 on FAIL");
  app.add_option("--work", work, "scratch directory for the CLI pipeline runs");
  std::string record;
  app.add_option("--record", record, "directory for criterion_N.txt verdict files");
  CLI11_PARSE(app, argc, argv);

  const std::map<int, Criterion> criteria{
      {1, Criterion{"gradient correctness", 60, gradient_checks}},
      {2, Criterion{"loss oracles", 10, loss_oracles}},
      {3, Criterion{"perturbation invariants", 60, perturbation_invariants}},
      {4, Criterion{"discovery correctness", 300, discovery_correctness}},
      {5, Criterion{"pre-training behaviour", 900, pretraining_behaviour}},
      {6, Criterion{"transfer direction", 1200, transfer_direction}},
      {7, Criterion{"add-on direction", 2700, addon_direction}},
      {8, Criterion{"annotation efficiency", 2700, annotation_efficiency}},
      {9, Criterion{"metric oracles", 10, metric_oracles}},
      {10, Criterion{"reproducibility", 3600, [&] { return reproducibility(work); }}},
  };
  const auto& crit = criteria.at(which);
  auto emit = [&](const std::string& line) {
    std::cout << line << "\n";
    if (!record.empty()) {
      fs::create_directories(record);
      std::ofstream(fs::path(record) / ("criterion_" + std::to_string(which) + ".txt")) << line << "\n";
    }
  };
  const auto start = std::chrono::steady_clock::now();
  Verdict v;
  try {
    v = crit.run();
  } catch (const std::exception& e) {
    emit("CRITERION " + std::to_string(which) + ": FAIL " + crit.name + ": error: " + e.what());
    return 2;
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const bool in_budget = seconds <= crit.budget_seconds;
  const bool pass = v.pass && in_budget;
  std::ostringstream line;
  line << "CRITERION " << which << ": " << (pass ? "PASS" : "FAIL") << " " << crit.name << ": " << v.detail
       << "; runtime " << fmt(seconds, 3) << " s (budget " << crit.budget_seconds << " s"
       << (in_budget ? "" : ", exceeded") << ")";
  emit(line.str());
  return strict && !pass ? 1 : 0;
}
