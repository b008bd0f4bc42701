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

#include <filesystem>
#include <map>
#include <sstream>

#include "transvw/cli.hpp"
#include "transvw/io.hpp"

namespace tvw::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("tvw_cli_" + name);
  fs::remove_all(p);
  return p;
}

struct Outcome {
  int code;
  std::string out, err;
};

Outcome invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

// Small enough for a unit test, same code paths as the defaults.
std::vector<std::string> quick(const fs::path& dir) {
  return {"-o", dir.string(), "--set", "cohort_patients=24", "discovery.extractor_epochs=2",
          "discovery.instances=6", "pretrain.max_epochs=2", "finetune.max_epochs=2",
          "task.patients=6", "evaluation.runs=2", "evaluation.fractions=[0.5]",
          "evaluation.words=[2,3]", "probe.epochs=3"};
}

Outcome step(const std::string& cmd, const fs::path& dir, std::vector<std::string> extra = {}) {
  std::vector<std::string> args{cmd};
  for (auto& a : quick(dir)) args.push_back(a);
  for (auto& a : extra) args.push_back(a);
  return invoke(args);
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).generic_string()] = read_file(e.path());
  }
  return files;
}

// -------------------------------------------------------------- config

TEST(Config, DigestTracksSemanticFieldsOnly) {
  const auto base = RunConfig::from_json(json::object());
  EXPECT_EQ(base.digest(), RunConfig::from_json(json::object()).digest());
  EXPECT_EQ(base.digest(), RunConfig::from_json(json{{"threads", 3}, {"output", "elsewhere"}}).digest());
  // restating a default is not a change
  EXPECT_EQ(base.digest(), RunConfig::from_json(json{{"pretrain", {{"learning_rate", 1e-3}}}}).digest());
  std::set<std::string> seen{base.digest()};
  for (const auto& change : {json{{"seed", 2}}, json{{"pretrain", {{"learning_rate", 2e-3}}}},
                             json{{"phantom", {{"noise", 0.05}}}}, json{{"discovery", {{"words", 8}}}},
                             json{{"task", {{"shape", "cross"}}}}, json{{"finetune", {{"batch", 4}}}},
                             json{{"evaluation", {{"runs", 3}}}}, json{{"montage", {{"gap", 2}}}}}) {
    EXPECT_TRUE(seen.insert(RunConfig::from_json(change).digest()).second) << change.dump();
  }
}

TEST(Config, SeedsDeriveFromTheRoot) {
  const auto a = RunConfig::from_json(json{{"seed", 5}});
  const auto b = RunConfig::from_json(json{{"seed", 6}});
  EXPECT_NE(a.pretrain.seed, b.pretrain.seed);
  EXPECT_NE(a.pretrain.seed, a.discovery.seed);
  EXPECT_EQ(a.run_seeds().size(), 5u);
  EXPECT_NE(a.run_seeds()[0], a.run_seeds()[1]);
  EXPECT_THROW(RunConfig::from_json(json{{"pretrain", {{"seed", 3}}}}), ConfigError);
}

TEST(Config, UnknownKeysAreRejectedByPath) {
  try {
    RunConfig::from_json(json{{"pretrain", {{"learning_rat", 0.1}}}});
    FAIL() << "accepted an unknown key";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("pretrain.learning_rat"), std::string::npos) << e.what();
  }
  EXPECT_THROW(RunConfig::from_json(json{{"bogus", 1}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json(json{{"task", {{"first_patient_id", 10}}}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json(json{{"evaluation", {{"runs", 0}}}}), ConfigError);

  const auto r = invoke({"finetune", "--set", "finetune.colour=blue", "-o", "/nonexistent"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("finetune.colour"), std::string::npos) << r.err;
}

TEST(Config, OverridesParseJsonOrStrings) {
  const auto j = apply_overrides(json{{"pretrain", {{"batch", 4}}}},
                                 {"pretrain.batch=8", "pretrain.variant=rotation",
                                  "discovery.scales=[1.0]", "seed=9"});
  EXPECT_EQ(j["pretrain"]["batch"], 8);
  EXPECT_EQ(j["pretrain"]["variant"], "rotation");
  EXPECT_EQ(j["discovery"]["scales"], json::array({1.0}));
  EXPECT_EQ(j["seed"], 9);
  EXPECT_THROW(apply_overrides(json::object(), {"novalue"}), ConfigError);
  EXPECT_THROW(apply_overrides(json::object(), {"a..b=1"}), ConfigError);
  EXPECT_THROW(apply_overrides(json{{"seed", 1}}, {"seed.x=1"}), ConfigError);

  const auto dir = scratch_dir("config_file");
  fs::create_directories(dir);
  write_file_atomic(dir / "run.json", R"({"seed": 4, "pretrain": {"batch": 2}})");
  const auto cfg = load_config(dir / "run.json", {"pretrain.batch=3"});
  EXPECT_EQ(cfg.seed, 4u);
  EXPECT_EQ(cfg.pretrain.batch, 3u);
  write_file_atomic(dir / "bad.json", "{ not json");
  EXPECT_THROW(load_config(dir / "bad.json", {}), ConfigError);
  EXPECT_THROW(load_config(dir / "missing.json", {}), ConfigError);
}

// -------------------------------------------------------------- pipeline

TEST(Pipeline, ChainRunsVerifiesAndDetectsTampering) {
  const auto dir = scratch_dir("chain");
  for (const char* cmd : {"gen-phantoms", "discover", "pretrain", "finetune"}) {
    const auto r = step(cmd, dir);
    ASSERT_EQ(r.code, 0) << cmd << ": " << r.err;
  }
  for (const char* f : {"phantoms/index.json", "discovery/index.json", "discovery/words/manifest.json",
                        "pretrain/checkpoint.tvw", "pretrain/report.json", "pretrain/losses.csv",
                        "finetune/pretrain/result.json", "finetune/pretrain/curve.csv"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  // every index carries the config digest and points at its upstream
  const auto cfg = load_config({}, {"cohort_patients=24", "discovery.extractor_epochs=2",
                                    "discovery.instances=6", "pretrain.max_epochs=2",
                                    "finetune.max_epochs=2", "task.patients=6", "evaluation.runs=2",
                                    "evaluation.fractions=[0.5]", "evaluation.words=[2,3]",
                                    "probe.epochs=3"});
  const auto pre = json::parse(read_file(dir / "pretrain/index.json"));
  EXPECT_EQ(pre["config_digest"], cfg.digest());
  EXPECT_EQ(pre["seed"], cfg.seed);
  EXPECT_EQ(pre["upstream"]["discovery/index.json"], sha256_hex(read_file(dir / "discovery/index.json")));
  const auto ft = json::parse(read_file(dir / "finetune/pretrain/result.json"));
  EXPECT_EQ(ft["config_digest"], cfg.digest());
  EXPECT_EQ(ft["checkpoint_digest"], sha256_hex(read_file(dir / "pretrain/checkpoint.tvw")));
  const auto report = json::parse(read_file(dir / "pretrain/report.json"));
  EXPECT_EQ(report["artifact"]["config_digest"], cfg.digest());

  auto v = step("verify", dir, {"--strict"});
  EXPECT_EQ(v.code, 0) << v.err;
  // a run under another config fails the strict check only
  v = invoke({"verify", "-o", dir.string(), "--strict"});
  EXPECT_EQ(v.code, 4);
  EXPECT_EQ(invoke({"verify", "-o", dir.string()}).code, 0);

  // tamper with a payload
  auto bytes = read_file(dir / "finetune/pretrain/curve.csv");
  bytes[bytes.size() / 2] ^= 1;
  write_file_atomic(dir / "finetune/pretrain/curve.csv", bytes);
  v = step("verify", dir);
  EXPECT_EQ(v.code, 4);
  EXPECT_NE(v.err.find("curve.csv"), std::string::npos) << v.err;

  // re-running discovery invalidates downstream indices
  ASSERT_EQ(step("finetune", dir).code, 0);
  ASSERT_EQ(step("discover", dir, {"--set", "discovery.jitter=1"}).code, 0);
  v = step("verify", dir);
  EXPECT_EQ(v.code, 4);
  EXPECT_NE(v.err.find("upstream"), std::string::npos) << v.err;
  // and pretraining against it under the old config is refused
  EXPECT_EQ(step("pretrain", dir).code, 4);

  // no temporaries left behind
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    EXPECT_EQ(e.path().filename().string().find(".tmp"), std::string::npos) << e.path();
  }
}

TEST(Pipeline, RepeatedRunsAreByteIdentical) {
  const auto a = scratch_dir("repeat_a"), b = scratch_dir("repeat_b");
  for (const auto& dir : {a, b}) {
    for (const char* cmd : {"gen-phantoms", "discover", "pretrain", "finetune", "linear-probe",
                            "evaluate", "sweep-annotation", "ablate-c", "export-montage"}) {
      const auto r = step(cmd, dir, std::string(cmd) == "export-montage"
                                        ? std::vector<std::string>{"montage.instances=4"}
                                        : std::vector<std::string>{});
      ASSERT_EQ(r.code, 0) << cmd << ": " << r.err;
    }
    ASSERT_EQ(step("finetune", dir, {"--init", "scratch"}).code, 0);
  }
  const auto sa = snapshot(a), sb = snapshot(b);
  ASSERT_EQ(sa.size(), sb.size());
  std::size_t compared = 0;
  for (const auto& [name, bytes] : sa) {
    ASSERT_TRUE(sb.count(name)) << name;
    if (name == "pretrain/timing.csv") continue;  // wall clock
    EXPECT_EQ(bytes, sb.at(name)) << name;
    ++compared;
  }
  EXPECT_GT(compared, 50u);
  for (const char* f : {"sweep/sweep.csv", "ablation/ablation.csv", "evaluate/pretrain/evaluation.json",
                        "probe/pretrain/probe.json", "montage/words.pgm",
                        "finetune/scratch/result.json"}) {
    EXPECT_TRUE(sa.count(f)) << f;
  }
  const auto abl = json::parse(sa.at("ablation/ablation.json"));
  EXPECT_EQ(abl["rows"].size(), 2u);
  // a third run with a different seed differs
  const auto c = scratch_dir("repeat_c");
  ASSERT_EQ(step("gen-phantoms", c, {"seed=2"}).code, 0);
  EXPECT_NE(read_file(c / "phantoms/manifest.json"), sa.at("phantoms/manifest.json"));
}

TEST(Pipeline, ExitCodes) {
  const auto dir = scratch_dir("exit");
  // integrity: downstream stage without its inputs
  auto r = step("discover", dir);
  EXPECT_EQ(r.code, 4) << r.err;
  EXPECT_EQ(step("finetune", dir).code, 4);
  // config
  EXPECT_EQ(step("gen-phantoms", dir, {"phantom.noise=\"loud\""}).code, 2);
  // usage
  EXPECT_EQ(invoke({}).code, 1);
  EXPECT_EQ(invoke({"no-such-command"}).code, 1);
  ASSERT_EQ(step("gen-phantoms", dir).code, 0);
  ASSERT_EQ(step("discover", dir).code, 0);
  r = step("export-montage", dir, {"montage.words=99"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("words"), std::string::npos);
  EXPECT_EQ(step("linear-probe", dir, {"--init", "scratch", "--stage", "9"}).code, 1);
  // numerical: a diverging pre-training run still leaves its best checkpoint
  r = step("pretrain", dir, {"pretrain.learning_rate=1e30", "pretrain.max_epochs=3"});
  EXPECT_EQ(r.code, 3) << r.out << r.err;
  EXPECT_TRUE(fs::exists(dir / "pretrain/checkpoint.tvw"));
  EXPECT_TRUE(invoke({"--help"}).code == 0);
}

// -------------------------------------------------------------- montage

discovery::VisualWordDataset synthetic_words(Shape crop, std::size_t words, std::size_t instances) {
  discovery::VisualWordDataset d;
  d.words = words;
  d.instances = instances;
  d.crop = crop;
  Shape shape{1};
  shape.insert(shape.end(), crop.begin(), crop.end());
  for (std::size_t w = 0; w < words; ++w) {
    for (std::size_t k = 0; k < instances; ++k) {
      discovery::VisualWordInstance inst;
      inst.patch = Tensor<float>(shape);
      for (std::size_t i = 0; i < inst.patch.size(); ++i) {
        inst.patch[i] = float((i * 7 + w * 13 + k * 3) % 17) / 16.0f;
      }
      inst.label = w;
      inst.index = k;
      d.items.push_back(std::move(inst));
    }
  }
  return d;
}

TEST(Montage, SinglePatchIsItsMidSlice) {
  const auto d2 = synthetic_words({6, 5}, 1, 1);
  const auto img = montage_image(d2, 1, 1, 3);
  ASSERT_EQ(img.shape(), (Shape{6, 5}));
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_EQ(img[i], d2.items[0].patch[i]);

  const auto d3 = synthetic_words({5, 4, 3}, 1, 1);
  const auto vol = montage_image(d3, 1, 1, 1);
  ASSERT_EQ(vol.shape(), (Shape{4, 3}));
  for (std::size_t y = 0; y < 4; ++y) {
    for (std::size_t x = 0; x < 3; ++x) EXPECT_EQ(vol[y * 3 + x], d3.items[0].patch[(2 * 4 + y) * 3 + x]);
  }
}

TEST(Montage, GridArithmeticAndPgm) {
  const auto d = synthetic_words({6, 5}, 3, 4);
  const auto size = montage_size({6, 5}, 3, 4, 2);
  EXPECT_EQ(size.width, 4u * 5 + 3 * 2);
  EXPECT_EQ(size.height, 3u * 6 + 2 * 2);
  const auto img = montage_image(d, 3, 4, 2);
  EXPECT_EQ(img.shape(), (Shape{size.height, size.width}));
  // gaps are white, cell (r, c) holds instance (r, c)
  EXPECT_EQ(img[5], 1.0f);
  EXPECT_EQ(img[6 * size.width], 1.0f);
  const auto& p = d.instance(2, 3).patch;
  EXPECT_EQ(img[(2 * 8 + 1) * size.width + 3 * 7 + 4], p[1 * 5 + 4]);
  EXPECT_THROW(montage_image(d, 4, 1, 1), UsageError);
  EXPECT_THROW(montage_image(d, 1, 5, 1), UsageError);
  EXPECT_THROW(montage_image(d, 0, 1, 1), UsageError);

  const auto pgm = encode_pgm(img, "note");
  const std::string header = "P5\n# note\n" + std::to_string(size.width) + " " +
                             std::to_string(size.height) + "\n255\n";
  ASSERT_EQ(pgm.substr(0, header.size()), header);
  EXPECT_EQ(pgm.size(), header.size() + img.size());
  EXPECT_EQ(std::uint8_t(pgm[header.size() + 5]), 255);
}

TEST(Montage, RigidCohortGivesIdenticalInstancesPerWord) {
  phantom::PhantomConfig pc;
  pc.deformation = 0.0;
  pc.noise = 0.0;
  pc.clusters = 1;
  const auto cohort = phantom::generate_cohort(pc, 12);
  discovery::Latents latents;
  for (const auto& p : cohort.patients) {
    latents.ids.push_back(p.patient_id);
    latents.codes.push_back({float(p.patient_id)});
  }
  discovery::DiscoveryConfig dc;
  dc.words = 4;
  dc.instances = 5;
  dc.scales = {1.0};
  dc.jitter = 0;
  const auto ds = discovery::extract_visual_words(latents, cohort, dc);
  const auto img = montage_image(ds, 4, 5, 1);
  const std::size_t w = 16, h = 16, width = 5 * 17 - 1;
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 1; c < 5; ++c) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          ASSERT_EQ(img[(r * 17 + y) * width + c * 17 + x], img[(r * 17 + y) * width + x])
              << r << " " << c;
        }
      }
    }
  }
}

}  // namespace
}  // namespace tvw::cli
