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

#include "transvw/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "transvw/io.hpp"
#include "transvw/parallel.hpp"
#include "transvw/rng.hpp"

namespace tvw::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

constexpr const char* kIndex = "index.json";

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

void reject_section_seed(const json& root, const std::string& section) {
  if (root.contains(section) && root[section].is_object() && root[section].contains("seed")) {
    throw ConfigError(section + ".seed: section seeds derive from the top-level seed");
  }
}

// A stage directory and the index describing it. The directory is emptied
// first so stale files from an earlier configuration cannot linger; the
// index is written last.
class Stage {
 public:
  Stage(const RunConfig& cfg, fs::path root, fs::path rel)
      : cfg_(cfg), root_(std::move(root)), rel_(std::move(rel)), dir_(root_ / rel_) {
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }

  const fs::path& dir() const { return dir_; }

  json meta() const {
    return json{{"config_digest", cfg_.digest()}, {"seed", cfg_.seed}, {"stage", rel_.generic_string()}};
  }

  void write(const std::string& name, std::string_view bytes) {
    write_file_atomic(dir_ / name, bytes);
  }
  void write_json(const std::string& name, json j) {
    j["config_digest"] = cfg_.digest();
    j["seed"] = cfg_.seed;
    write(name, j.dump(2) + "\n");
  }
  // Files whose contents depend on the wall clock; listed but not hashed.
  void mark_volatile(const std::string& name) { volatile_.push_back(name); }

  void upstream(const fs::path& rel_index) {
    const auto path = root_ / rel_index;
    if (!fs::exists(path)) {
      throw IntegrityError("missing upstream artifact index " + path.string());
    }
    upstream_[rel_index.generic_string()] = sha256_hex(read_file(path));
  }

  void finish() const {
    json files = json::object();
    std::vector<std::string> names;
    for (const auto& e : fs::recursive_directory_iterator(dir_)) {
      if (!e.is_regular_file()) continue;
      const auto rel = fs::relative(e.path(), dir_).generic_string();
      if (rel == kIndex || std::count(volatile_.begin(), volatile_.end(), rel)) continue;
      names.push_back(rel);
    }
    std::sort(names.begin(), names.end());
    for (const auto& n : names) files[n] = sha256_hex(read_file(dir_ / n));
    json index = meta();
    index["files"] = files;
    index["volatile"] = volatile_;
    index["upstream"] = upstream_;
    write_file_atomic(dir_ / kIndex, index.dump(2) + "\n");
  }

 private:
  const RunConfig& cfg_;
  fs::path root_, rel_, dir_;
  std::vector<std::string> volatile_;
  json upstream_ = json::object();
};

phantom::PhantomCohort load_checked_cohort(const RunConfig& cfg) {
  const auto dir = cfg.output / "phantoms";
  if (!fs::exists(dir / "manifest.json")) {
    throw IntegrityError("no phantom cohort under " + dir.string() + "; run gen-phantoms first");
  }
  auto cohort = phantom::load_cohort(dir);
  if (!(cohort.config == cfg.phantom) || cohort.patients.size() != cfg.cohort_patients) {
    throw IntegrityError(dir.string() + " was generated from a different phantom configuration");
  }
  return cohort;
}

discovery::VisualWordDataset load_checked_dataset(const RunConfig& cfg) {
  const auto dir = cfg.output / "discovery" / "words";
  if (!fs::exists(dir / "manifest.json")) {
    throw IntegrityError("no visual-word dataset under " + dir.string() + "; run discover first");
  }
  auto ds = discovery::load_dataset(dir);
  const auto raw = json::parse(read_file(dir / "manifest.json"));
  const auto recorded = raw.value("artifact", json::object()).value("discovery", json());
  if (recorded.dump() != cfg.discovery.to_json().dump()) {
    throw IntegrityError(dir.string() + " was discovered with a different discovery configuration");
  }
  return ds;
}

discovery::Latents load_latents(const RunConfig& cfg) {
  const auto path = cfg.output / "discovery" / "latents.json";
  if (!fs::exists(path)) throw IntegrityError("missing " + path.string() + "; run discover first");
  const auto j = json::parse(read_file(path));
  discovery::Latents l;
  l.ids = j.at("ids").get<std::vector<std::uint64_t>>();
  l.codes = j.at("codes").get<std::vector<std::vector<float>>>();
  return l;
}

struct Init {
  std::string name;  // "scratch", "pretrain" or a checkpoint file stem
  std::optional<Network<float>> network;
  std::string checkpoint_digest;
  std::optional<fs::path> index;  // upstream stage index, relative to output
  const Network<float>* ptr() const { return network ? &*network : nullptr; }
};

Init resolve_init(const RunConfig& cfg, const std::string& spec) {
  Init init;
  if (spec == "scratch") {
    init.name = "scratch";
    return init;
  }
  fs::path path;
  if (spec == "pretrain") {
    init.name = "pretrain";
    path = cfg.output / "pretrain" / "checkpoint.tvw";
    init.index = fs::path("pretrain") / kIndex;
    if (!fs::exists(path)) {
      throw IntegrityError("no checkpoint at " + path.string() + "; run pretrain first");
    }
  } else {
    path = spec;
    init.name = path.stem().string();
    if (!fs::exists(path)) throw UsageError("checkpoint " + path.string() + " does not exist");
  }
  const auto bytes = read_file(path);
  init.checkpoint_digest = sha256_hex(bytes);
  init.network = Network<float>::from_bundle(decode_tensor_bundle<float>(bytes));
  return init;
}

std::vector<std::uint64_t> cohort_ids(const RunConfig& cfg) {
  std::vector<std::uint64_t> ids(cfg.cohort_patients);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  return ids;
}

transfer::TargetTask build_task(const RunConfig& cfg) {
  auto task = transfer::make_phantom_task(cfg.phantom, cfg.task);
  transfer::check_no_leak(task, cohort_ids(cfg));
  return task;
}

// ---------------------------------------------------------------- commands

int cmd_gen_phantoms(const RunConfig& cfg, std::ostream& out) {
  Stage stage(cfg, cfg.output, "phantoms");
  const auto cohort = phantom::generate_cohort(cfg.phantom, cfg.cohort_patients, 0, cfg.threads);
  phantom::export_cohort(cohort, stage.dir(), stage.meta());
  stage.finish();
  out << "gen-phantoms: " << cohort.patients.size() << " patients -> " << stage.dir().string() << "\n";
  return 0;
}

int cmd_discover(const RunConfig& cfg, std::ostream& out) {
  const auto cohort = load_checked_cohort(cfg);
  Stage stage(cfg, cfg.output, "discovery");
  stage.upstream(fs::path("phantoms") / kIndex);
  auto fx = discovery::train_feature_extractor(cohort, cfg.discovery, cfg.threads);
  json fx_meta = stage.meta();
  fx_meta["input_extent"] = fx.input_extent;
  const auto fx_bytes = encode_tensor_bundle(fx.network.to_bundle(fx_meta));
  stage.write("extractor.tvw", fx_bytes);
  const auto fx_digest = sha256_hex(fx_bytes);

  const auto latents = discovery::embed_cohort(fx, cohort, cfg.threads);
  stage.write_json("latents.json", json{{"ids", latents.ids}, {"codes", latents.codes}});
  const auto ds = discovery::extract_visual_words(latents, cohort, cfg.discovery, cfg.threads, fx_digest);
  json ds_meta = stage.meta();
  ds_meta["discovery"] = cfg.discovery.to_json();
  discovery::persist_dataset(ds, stage.dir() / "words", ds_meta);

  const double purity = discovery::word_purity(ds, cohort);
  const auto dist = discovery::patch_distances(ds);
  stage.write_json("report.json",
                   json{{"extractor", {{"digest", fx_digest},
                                       {"train_loss", fx.report.train_loss},
                                       {"holdout_loss", fx.report.holdout_loss},
                                       {"holdout_patients", fx.report.holdout_patients},
                                       {"threshold_met", fx.report.threshold_met}}},
                        {"words", ds.words},
                        {"instances", ds.instances},
                        {"purity", purity},
                        {"within_word_l2", dist.within},
                        {"cross_word_l2", dist.cross}});
  stage.finish();
  out << "discover: " << ds.words << " words x " << ds.instances << " instances, purity " << purity
      << " -> " << stage.dir().string() << "\n";
  return 0;
}

int cmd_pretrain(const RunConfig& cfg, std::ostream& out) {
  const auto ds = load_checked_dataset(cfg);
  Stage stage(cfg, cfg.output, "pretrain");
  stage.upstream(fs::path("discovery") / kIndex);
  const auto result = pretrain::is_visual_word_variant(cfg.pretrain.variant)
                          ? pretrain::train_transvw(ds, cfg.pretrain)
                          : pretrain::train_pretext(ds, cfg.pretrain);
  pretrain::write_run(result, stage.dir(), stage.meta());
  stage.mark_volatile("timing.csv");
  stage.finish();
  const auto& best = result.report.best();
  out << "pretrain: " << pretrain::to_string(cfg.pretrain.variant) << (cfg.pretrain.add_vw ? "+vw" : "")
      << ", " << result.report.rows.size() - 1 << " epochs, best epoch " << result.report.best_epoch
      << " (val total " << best.val_total << ")\n";
  if (result.report.aborted) throw NumericalError(result.report.diagnostic);
  return 0;
}

int cmd_finetune(const RunConfig& cfg, const std::string& init_spec, std::ostream& out) {
  const auto init = resolve_init(cfg, init_spec);
  const auto task = build_task(cfg);
  Stage stage(cfg, cfg.output, fs::path("finetune") / init.name);
  if (init.index) stage.upstream(*init.index);
  const auto r = transfer::finetune(init.ptr(), task, cfg.finetune);
  json j = r.to_json();
  j["init"] = init.name;
  j["checkpoint_digest"] = init.checkpoint_digest;
  j["finetune"] = cfg.finetune.to_json();
  stage.write_json("result.json", j);
  stage.write("curve.csv", r.curve_csv());
  stage.write_json("task.json", task.manifest);
  stage.finish();
  out << "finetune(" << init.name << "): test " << r.metric << " " << r.test_metric << " at epoch "
      << r.best_epoch << "\n";
  if (r.aborted) throw NumericalError(r.diagnostic);
  return 0;
}

int cmd_probe(const RunConfig& cfg, const std::string& init_spec, std::size_t only_stage,
              std::ostream& out) {
  const auto init = resolve_init(cfg, init_spec);
  const auto task = build_task(cfg);
  const auto net = init.network ? *init.network : transfer::target_network(nullptr, task, cfg.finetune);
  const std::size_t depth = net.config().depth();
  if (only_stage > depth) {
    throw UsageError("--stage must be in 1.." + std::to_string(depth) + " (0 = all)");
  }
  Stage stage(cfg, cfg.output, fs::path("probe") / init.name);
  if (init.index) stage.upstream(*init.index);
  json rows = json::array();
  std::string csv = "stage,test_auc,val_auc,best_epoch\n";
  for (std::size_t s = 1; s <= depth; ++s) {
    if (only_stage && s != only_stage) continue;
    const auto r = transfer::linear_probe(net, task, s, cfg.probe);
    rows.push_back({{"stage", s}, {"test_auc", r.test_auc}, {"val_auc", r.val_auc},
                    {"best_epoch", r.best_epoch}});
    csv += std::to_string(s) + "," + fmt(r.test_auc) + "," + fmt(r.val_auc) + "," +
           std::to_string(r.best_epoch) + "\n";
    out << "linear-probe(" << init.name << ") stage " << s << ": test auc " << r.test_auc << "\n";
  }
  stage.write_json("probe.json", json{{"init", init.name},
                                      {"checkpoint_digest", init.checkpoint_digest},
                                      {"stages", rows}});
  stage.write("probe.csv", csv);
  stage.finish();
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& init_spec, std::ostream& out) {
  const auto init = resolve_init(cfg, init_spec);
  if (!init.network) throw UsageError("evaluate compares a checkpoint against scratch; pass --init");
  const auto task = build_task(cfg);
  const auto seeds = cfg.run_seeds();
  Stage stage(cfg, cfg.output, fs::path("evaluate") / init.name);
  if (init.index) stage.upstream(*init.index);

  std::vector<transfer::FinetuneResult> runs(2 * seeds.size());
  parallel_for(runs.size(), cfg.threads, [&](std::size_t job) {
    auto c = cfg.finetune;
    c.seed = seeds[job % seeds.size()];
    runs[job] = transfer::finetune(job < seeds.size() ? nullptr : init.ptr(), task, c);
  });
  const std::string metric = runs[0].metric;
  std::string csv = "init,seed,metric,value,epochs_to_target\n";
  json results = json::object();
  std::vector<double> scores[2];
  for (int which = 0; which < 2; ++which) {
    const std::string name = which ? init.name : "scratch";
    std::vector<double> epochs;
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      const auto& r = runs[which * seeds.size() + s];
      scores[which].push_back(r.test_metric);
      // runs that never reach the target count as one epoch past the budget
      epochs.push_back(r.epochs_to_target ? double(*r.epochs_to_target) : double(cfg.finetune.max_epochs + 1));
      csv += name + "," + std::to_string(seeds[s]) + "," + metric + "," + fmt(r.test_metric) + "," +
             (r.epochs_to_target ? std::to_string(*r.epochs_to_target) : std::string("")) + "\n";
    }
    std::sort(epochs.begin(), epochs.end());
    const std::size_t n = epochs.size();
    const double median = n % 2 ? epochs[n / 2] : 0.5 * (epochs[n / 2 - 1] + epochs[n / 2]);
    auto j = transfer::EvalResult::from_scores(metric, scores[which], seeds).to_json();
    j["median_epochs_to_target"] = median;
    results[name] = j;
  }
  json comparison = json::object();
  if (seeds.size() >= 2) {
    const auto t = transfer::ttest_paired(scores[1], scores[0]);
    comparison = {{"t", t.t}, {"df", t.df}, {"p_two_sided", t.p}, {"p_greater", t.p_greater()},
                  {"degenerate", t.degenerate}};
  }
  stage.write_json("evaluation.json", json{{"init", init.name},
                                           {"checkpoint_digest", init.checkpoint_digest},
                                           {"results", results},
                                           {"paired_ttest", comparison}});
  stage.write("evaluation.csv", csv);
  stage.finish();
  out << "evaluate: " << init.name << " " << results[init.name]["mean"].get<double>() << " vs scratch "
      << results["scratch"]["mean"].get<double>() << " (" << metric << ")\n";
  return 0;
}

int cmd_sweep(const RunConfig& cfg, const std::string& init_spec, std::ostream& out) {
  const auto init = resolve_init(cfg, init_spec);
  const auto task = build_task(cfg);
  Stage stage(cfg, cfg.output, "sweep");
  if (init.index) stage.upstream(*init.index);
  std::vector<transfer::NamedInit> inits;
  if (init.network) inits.push_back({init.name, init.ptr()});
  const auto rep = transfer::annotation_sweep(inits, task, cfg.evaluation.fractions, cfg.run_seeds(),
                                              cfg.finetune, cfg.evaluation.alpha, cfg.threads);
  json j = rep.to_json();
  j["checkpoint_digest"] = init.checkpoint_digest;
  stage.write_json("sweep.json", j);
  stage.write("sweep.csv", rep.csv());
  stage.finish();
  for (const auto& [name, f] : rep.minimum_fraction) {
    out << "sweep-annotation: " << name << " minimum equivalent fraction "
        << (f ? fmt(*f) : std::string("none")) << "\n";
  }
  return 0;
}

int cmd_ablate(const RunConfig& cfg, std::ostream& out) {
  const auto cohort = load_checked_cohort(cfg);
  const auto latents = load_latents(cfg);
  const auto task = build_task(cfg);
  Stage stage(cfg, cfg.output, "ablation");
  stage.upstream(fs::path("discovery") / kIndex);
  const auto rep = transfer::ablate_num_words(cohort, latents, cfg.evaluation.words, cfg.discovery,
                                              cfg.pretrain, task, cfg.finetune, cfg.run_seeds(),
                                              cfg.threads);
  stage.write_json("ablation.json", rep.to_json());
  stage.write("ablation.csv", rep.csv());
  stage.finish();
  for (const auto& row : rep.rows) {
    out << "ablate-c: C=" << row.words << " "
        << (row.failed ? "failed: " + row.error : row.result.metric + " " + fmt(row.result.mean)) << "\n";
  }
  return 0;
}

int cmd_montage(const RunConfig& cfg, std::ostream& out) {
  const auto ds = load_checked_dataset(cfg);
  const auto& m = cfg.montage;
  const auto image = montage_image(ds, m.words, m.instances, m.gap);
  Stage stage(cfg, cfg.output, "montage");
  stage.upstream(fs::path("discovery") / kIndex);
  stage.write("words.pgm", encode_pgm(image, "config_digest " + cfg.digest() + " seed " +
                                                 std::to_string(cfg.seed)));
  stage.finish();
  out << "export-montage: " << image.dim(1) << "x" << image.dim(0) << " -> "
      << (stage.dir() / "words.pgm").string() << "\n";
  return 0;
}

}  // namespace

// ---------------------------------------------------------------- config

json RunConfig::to_json() const {
  return json{{"seed", seed},
              {"cohort_patients", cohort_patients},
              {"phantom", phantom.to_json()},
              {"discovery", discovery.to_json()},
              {"pretrain", pretrain.to_json()},
              {"task", task.to_json()},
              {"finetune", finetune.to_json()},
              {"probe", {{"learning_rate", probe.learning_rate}, {"epochs", probe.epochs},
                         {"batch", probe.batch}, {"seed", probe.seed}}},
              {"evaluation", {{"runs", evaluation.runs}, {"fractions", evaluation.fractions},
                              {"alpha", evaluation.alpha}, {"words", evaluation.words}}},
              {"montage", {{"words", montage.words}, {"instances", montage.instances},
                           {"gap", montage.gap}}}};
}

std::string RunConfig::digest() const { return sha256_hex(to_json().dump()); }

std::vector<std::uint64_t> RunConfig::run_seeds() const {
  std::vector<std::uint64_t> s(evaluation.runs);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = derive_seed(seed, "run", i);
  return s;
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  ConfigReader r(j, "");
  for (const char* s : {"phantom", "discovery", "pretrain", "task", "finetune", "probe"}) {
    reject_section_seed(j, s);
  }
  r.get("seed", c.seed);
  std::string output = c.output.string();
  r.get("output", output);
  c.output = output;
  r.get("threads", c.threads);
  r.get("cohort_patients", c.cohort_patients);
  {
    auto s = r.section("phantom");
    c.phantom = phantom::PhantomConfig::from_json(s);
  }
  {
    auto s = r.section("discovery");
    c.discovery = discovery::DiscoveryConfig::from_json(s, c.phantom.rank());
  }
  {
    auto s = r.section("pretrain");
    c.pretrain = pretrain::PretrainConfig::from_json(s);
  }
  const bool task_crop = j.contains("task") && j["task"].is_object() && j["task"].contains("crop");
  {
    auto s = r.section("task");
    c.task = transfer::TaskConfig::from_json(s);
  }
  const bool ft_channels =
      j.contains("finetune") && j["finetune"].is_object() && j["finetune"].contains("channels");
  {
    auto s = r.section("finetune");
    c.finetune = transfer::FinetuneConfig::from_json(s);
  }
  {
    auto s = r.section("probe");
    s.get("learning_rate", c.probe.learning_rate);
    s.get("epochs", c.probe.epochs);
    s.get("batch", c.probe.batch);
    s.finish();
    if (c.probe.batch == 0) throw ConfigError("probe.batch must be >= 1");
  }
  {
    auto s = r.section("evaluation");
    s.get("runs", c.evaluation.runs);
    s.get("fractions", c.evaluation.fractions);
    s.get("alpha", c.evaluation.alpha);
    s.get("words", c.evaluation.words);
    s.finish();
    if (c.evaluation.runs == 0) throw ConfigError("evaluation.runs must be >= 1");
    if (!(c.evaluation.alpha > 0.0 && c.evaluation.alpha < 1.0)) {
      throw ConfigError("evaluation.alpha must be in (0, 1)");
    }
  }
  {
    auto s = r.section("montage");
    s.get("words", c.montage.words);
    s.get("instances", c.montage.instances);
    s.get("gap", c.montage.gap);
    s.finish();
  }
  r.finish();

  // Target crops and scratch networks follow the pre-training geometry
  // unless set explicitly.
  if (!task_crop) c.task.crop = c.discovery.crop;
  if (!ft_channels) c.finetune.channels = c.pretrain.channels;
  if (c.threads == 0) c.threads = default_thread_count();
  if (c.cohort_patients == 0) throw ConfigError("cohort_patients must be >= 1");
  if (c.task.first_patient_id < c.cohort_patients) {
    throw ConfigError("task.first_patient_id must be >= cohort_patients (target patients must not "
                      "overlap the pre-training cohort)");
  }
  c.pretrain.validate();

  c.phantom.seed = derive_seed(c.seed, "phantom");
  c.discovery.seed = derive_seed(c.seed, "discovery");
  c.pretrain.seed = derive_seed(c.seed, "pretrain");
  c.task.seed = derive_seed(c.seed, "task");
  c.finetune.seed = derive_seed(c.seed, "finetune");
  c.probe.seed = derive_seed(c.seed, "probe");
  return c;
}

json apply_overrides(json config, const std::vector<std::string>& sets) {
  if (config.is_null()) config = json::object();
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("override '" + s + "' must look like section.key=value");
    }
    const std::string path = s.substr(0, eq), text = s.substr(eq + 1);
    json value;
    try {
      value = json::parse(text);
    } catch (const json::parse_error&) {
      value = text;
    }
    json* node = &config;
    std::size_t start = 0;
    while (true) {
      const auto dot = path.find('.', start);
      const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (key.empty()) throw ConfigError("override '" + s + "' has an empty key");
      if (!node->is_object()) throw ConfigError("override '" + s + "' descends into a non-object");
      if (dot == std::string::npos) {
        (*node)[key] = value;
        break;
      }
      if (!node->contains(key)) (*node)[key] = json::object();
      node = &(*node)[key];
      start = dot + 1;
    }
  }
  return config;
}

RunConfig load_config(const fs::path& path, const std::vector<std::string>& sets) {
  json j = json::object();
  if (!path.empty()) {
    if (!fs::exists(path)) throw ConfigError("config file " + path.string() + " does not exist");
    try {
      j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
      throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
  }
  return RunConfig::from_json(apply_overrides(std::move(j), sets));
}

// ---------------------------------------------------------------- montage

MontageSize montage_size(const Shape& crop, std::size_t words, std::size_t instances,
                         std::size_t gap) {
  if (crop.size() < 2) throw UsageError("montage needs 2D or 3D patches");
  const std::size_t h = crop[crop.size() - 2], w = crop[crop.size() - 1];
  return {instances * w + (instances - 1) * gap, words * h + (words - 1) * gap};
}

Tensor<float> montage_image(const discovery::VisualWordDataset& ds, std::size_t words,
                            std::size_t instances, std::size_t gap) {
  if (words == 0 || instances == 0) throw UsageError("montage needs at least one word and instance");
  if (words > ds.words) {
    throw UsageError("montage asks for " + std::to_string(words) + " words; the dataset has " +
                     std::to_string(ds.words));
  }
  if (instances > ds.instances) {
    throw UsageError("montage asks for " + std::to_string(instances) +
                     " instances per word; the dataset has " + std::to_string(ds.instances));
  }
  const auto size = montage_size(ds.crop, words, instances, gap);
  const std::size_t h = ds.crop[ds.crop.size() - 2], w = ds.crop[ds.crop.size() - 1];
  // mid-slice along the first spatial axis for volumes
  const std::size_t offset = ds.crop.size() == 3 ? (ds.crop[0] / 2) * h * w : 0;
  Tensor<float> image({size.height, size.width});
  std::fill(image.data().begin(), image.data().end(), 1.0f);
  for (std::size_t r = 0; r < words; ++r) {
    for (std::size_t c = 0; c < instances; ++c) {
      const auto& patch = ds.instance(r, c).patch;
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          image[(r * (h + gap) + y) * size.width + c * (w + gap) + x] = patch[offset + y * w + x];
        }
      }
    }
  }
  return image;
}

std::string encode_pgm(const Tensor<float>& image, const std::string& comment) {
  if (image.rank() != 2) throw UsageError("encode_pgm needs a 2D image");
  std::string out = "P5\n";
  if (!comment.empty()) out += "# " + comment + "\n";
  out += std::to_string(image.dim(1)) + " " + std::to_string(image.dim(0)) + "\n255\n";
  for (float v : image.data()) {
    out.push_back(char(std::uint8_t(std::lround(std::clamp(double(v), 0.0, 1.0) * 255.0))));
  }
  return out;
}

// ---------------------------------------------------------------- verify

std::size_t verify_artifacts(const fs::path& root) {
  if (!fs::exists(root)) throw IntegrityError("no artifacts under " + root.string());
  std::vector<fs::path> indices;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && e.path().filename() == kIndex) indices.push_back(e.path());
  }
  if (indices.empty()) throw IntegrityError("no artifact indices under " + root.string());
  std::sort(indices.begin(), indices.end());
  std::size_t checked = 0;
  for (const auto& path : indices) {
    json index;
    try {
      index = json::parse(read_file(path));
    } catch (const json::parse_error&) {
      throw IntegrityError(path.string() + " is not valid JSON");
    }
    const auto dir = path.parent_path();
    for (const auto& [name, digest] : index.at("files").items()) {
      const auto file = dir / name;
      if (!fs::exists(file)) throw IntegrityError("missing artifact " + file.string());
      if (sha256_hex(read_file(file)) != digest.get<std::string>()) {
        throw IntegrityError("digest mismatch for " + file.string());
      }
      ++checked;
    }
    for (const auto& [rel, digest] : index.at("upstream").items()) {
      const auto up = root / rel;
      if (!fs::exists(up) || sha256_hex(read_file(up)) != digest.get<std::string>()) {
        throw IntegrityError(path.string() + ": upstream " + rel + " changed since this stage ran");
      }
    }
  }
  return checked;
}

// ---------------------------------------------------------------- entry

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"transvw: visual-word self-supervised pre-training on phantom cohorts"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path, output, init = "pretrain";
  std::vector<std::string> sets;
  std::size_t stage = 0;
  bool strict = false;
  app.add_option("-c,--config", config_path, "JSON run configuration");
  app.add_option("-s,--set", sets, "override, e.g. --set pretrain.max_epochs=20")->take_all();
  app.add_option("-o,--output", output, "output directory (overrides the config)");

  auto* gen = app.add_subcommand("gen-phantoms", "generate and export the phantom cohort");
  auto* disc = app.add_subcommand("discover", "train the extractor and mine visual words");
  auto* pre = app.add_subcommand("pretrain", "pre-train on the visual-word dataset");
  auto* ft = app.add_subcommand("finetune", "fine-tune on the phantom target task");
  auto* probe = app.add_subcommand("linear-probe", "linear probes on frozen encoder stages");
  auto* eval = app.add_subcommand("evaluate", "checkpoint vs scratch over evaluation.runs seeds");
  auto* sweep = app.add_subcommand("sweep-annotation", "label-fraction sweep");
  auto* abl = app.add_subcommand("ablate-c", "discovery -> pretrain -> finetune for each C");
  auto* mont = app.add_subcommand("export-montage", "PGM grid of visual-word instances");
  auto* ver = app.add_subcommand("verify", "re-hash every recorded artifact");
  for (auto* sc : {ft, probe, eval, sweep}) {
    sc->add_option("--init", init, "scratch, pretrain, or a checkpoint path")->capture_default_str();
  }
  probe->add_option("--stage", stage, "encoder stage (0 = all)")->capture_default_str();
  ver->add_flag("--strict", strict, "also require the current config digest");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    RunConfig cfg = load_config(config_path, sets);
    if (!output.empty()) cfg.output = output;
    if (*gen) return cmd_gen_phantoms(cfg, out);
    if (*disc) return cmd_discover(cfg, out);
    if (*pre) return cmd_pretrain(cfg, out);
    if (*ft) return cmd_finetune(cfg, init, out);
    if (*probe) return cmd_probe(cfg, init, stage, out);
    if (*eval) return cmd_evaluate(cfg, init, out);
    if (*sweep) return cmd_sweep(cfg, init, out);
    if (*abl) return cmd_ablate(cfg, out);
    if (*mont) return cmd_montage(cfg, out);
    if (*ver) {
      const auto n = verify_artifacts(cfg.output);
      if (strict) {
        for (const auto& e : fs::recursive_directory_iterator(cfg.output)) {
          if (!e.is_regular_file() || e.path().filename() != kIndex) continue;
          const auto index = json::parse(read_file(e.path()));
          if (index.at("config_digest") != cfg.digest()) {
            throw IntegrityError(e.path().string() + " was produced under a different configuration");
          }
        }
      }
      out << "verify: " << n << " artifacts match their recorded digests\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const IntegrityError& e) {
    err << "integrity failure: " << e.what() << "\n";
    return 4;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace tvw::cli
