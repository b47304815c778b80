// Copyright 2026 The privdistill Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef PRIVDISTILL_PIPELINE_HPP_
#define PRIVDISTILL_PIPELINE_HPP_

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "privdistill/alignment.hpp"
#include "privdistill/cohort.hpp"
#include "privdistill/diffusion.hpp"
#include "privdistill/error.hpp"
#include "privdistill/filtering.hpp"
#include "privdistill/identity.hpp"
#include "privdistill/io.hpp"
#include "privdistill/metrics.hpp"
#include "privdistill/retrieval.hpp"
#include "privdistill/rng.hpp"
#include "privdistill/stats.hpp"

namespace privdistill::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;
using nn::Matrix;
using nn::Vector;

inline constexpr const char* kConfigFormat = "privdistill.config/1";
inline constexpr const char* kManifestFormat = "privdistill.manifest/1";

struct WorldConfig {
  int patients = 600;
  cohort::WorldDims dims;
  double train_patient_frac = 0.9;
  double crossover_frac = 0.1;
};

struct DiffusionConfig {
  diffusion::TrainConfig train;
  int steps = 100;
  double beta_first = 1e-4;
  double beta_last = 0.02;
  double guidance = 2.0;
  std::string init = "scratch";         // scratch | pretrained
  std::string pretrained_checkpoint;    // empty: pretrain on a second world
  double fraction = 1.0;                // share of train patients used
  int prompt_limit = 0;                 // 0: one prompt per train record
};

struct MetricsConfig {
  std::vector<double> delta_grid = metrics::DefaultDeltaGrid();
  bool audit_endpoints = false;
  metrics::ClassifierConfig classifier;
};

struct ExperimentConfig {
  int table1_prompts = 400;
  int table1_instances = 10;
  std::vector<double> size_fractions{0.01, 0.1, 0.5, 1.0};
};

struct PipelineConfig {
  std::uint64_t base_seed = 7;
  WorldConfig world;
  DiffusionConfig diffusion;
  identity::TrainConfig reid{100, 4096, 64, 1e-3, {}};
  retrieval::TrainConfig retrieval{1.0, 300, 4096, 64, 3e-3, {}};
  alignment::TrainConfig align;
  filtering::FilterConfig filter;
  MetricsConfig metrics;
  ExperimentConfig experiments;

  void Validate() const {
    if (world.patients < 2) throw ConfigError("world.patients must be at least 2");
    world.dims.Validate();
    if (world.train_patient_frac < 0.0 || world.train_patient_frac > 1.0 ||
        world.crossover_frac < 0.0 || world.crossover_frac > 1.0) {
      throw ConfigError("world fractions must be in [0,1]");
    }
    diffusion.train.Validate();
    if (diffusion.steps < 2) throw ConfigError("diffusion.steps must be at least 2");
    if (diffusion.guidance < 0.0) throw ConfigError("diffusion.guidance must be non-negative");
    if (diffusion.init != "scratch" && diffusion.init != "pretrained") {
      throw ConfigError("diffusion.init must be 'scratch' or 'pretrained'");
    }
    if (!(diffusion.fraction > 0.0) || diffusion.fraction > 1.0) {
      throw ConfigError("diffusion.fraction must be in (0,1]");
    }
    if (diffusion.prompt_limit < 0) throw ConfigError("diffusion.prompt_limit must be >= 0");
    reid.Validate();
    (void)retrieval.Validate();
    align.Validate();
    filter.Validate();
    metrics.classifier.Validate();
    if (metrics.delta_grid.empty() ||
        !std::is_sorted(metrics.delta_grid.begin(), metrics.delta_grid.end())) {
      throw ConfigError("metrics.delta_grid must be nonempty and ascending");
    }
    for (double d : metrics.delta_grid) {
      if (d < 0.0 || d > 1.0) throw ConfigError("metrics.delta_grid values must be in [0,1]");
    }
    if (experiments.table1_prompts < 1 || experiments.table1_instances < 1) {
      throw ConfigError("experiments.table1 sizes must be positive");
    }
    if (experiments.size_fractions.empty()) throw ConfigError("experiments.size_fractions is empty");
    for (double f : experiments.size_fractions) {
      if (!(f > 0.0) || f > 1.0) throw ConfigError("experiments.size_fractions must be in (0,1]");
    }
  }

  filtering::FilterConfig Filter() const {
    auto f = filter;
    f.guidance = diffusion.guidance;
    f.resample_seed = DeriveSeed(base_seed, {static_cast<std::uint64_t>(StreamKey::kFilterResample)});
    return f;
  }

  diffusion::NoiseSchedule Schedule() const {
    return diffusion::MakeSchedule(diffusion.steps, diffusion.beta_first, diffusion.beta_last);
  }
};

inline json PairSamplingJson(const identity::PairSamplingConfig& s) {
  return {{"oversample_positives", s.oversample_positives}, {"positive_fraction", s.positive_fraction}};
}

inline json ConfigToJson(const PipelineConfig& c) {
  const auto& w = c.world;
  const auto& d = c.diffusion;
  const auto& cl = c.metrics.classifier;
  return {
      {"format", kConfigFormat},
      {"base_seed", c.base_seed},
      {"world",
       {{"patients", w.patients},
        {"observation_dim", w.dims.observation_dim},
        {"identity_dim", w.dims.identity_dim},
        {"label_count", w.dims.label_count},
        {"record_noise", w.dims.record_noise},
        {"flip_prob", w.dims.flip_prob},
        {"max_records", w.dims.max_records},
        {"train_patient_frac", w.train_patient_frac},
        {"crossover_frac", w.crossover_frac}}},
      {"diffusion",
       {{"epochs", d.train.epochs},
        {"batch_size", d.train.batch_size},
        {"learning_rate", d.train.learning_rate},
        {"p_uncond", d.train.p_uncond},
        {"hidden", d.train.architecture.hidden},
        {"hidden_layers", d.train.architecture.hidden_layers},
        {"steps", d.steps},
        {"beta_first", d.beta_first},
        {"beta_last", d.beta_last},
        {"guidance", d.guidance},
        {"init", d.init},
        {"pretrained_checkpoint", d.pretrained_checkpoint},
        {"fraction", d.fraction},
        {"prompt_limit", d.prompt_limit}}},
      {"reid",
       {{"epochs", c.reid.epochs},
        {"pairs_per_epoch", c.reid.pairs_per_epoch},
        {"batch_size", c.reid.batch_size},
        {"learning_rate", c.reid.learning_rate},
        {"sampling", PairSamplingJson(c.reid.sampling)}}},
      {"retrieval",
       {{"margin", c.retrieval.margin},
        {"epochs", c.retrieval.epochs},
        {"pairs_per_epoch", c.retrieval.pairs_per_epoch},
        {"batch_size", c.retrieval.batch_size},
        {"learning_rate", c.retrieval.learning_rate},
        {"sampling", PairSamplingJson(c.retrieval.sampling)}}},
      {"align",
       {{"epochs", c.align.epochs},
        {"batch_size", c.align.batch_size},
        {"learning_rate", c.align.learning_rate},
        {"temperature", c.align.temperature}}},
      {"filter",
       {{"delta", c.filter.delta},
        {"candidates_per_prompt", c.filter.candidates_per_prompt},
        {"mode", filtering::MatchModeName(c.filter.mode)},
        {"max_rounds", c.filter.max_rounds},
        {"similarity", identity::SimilarityName(c.filter.similarity)},
        {"l2_tau", c.filter.l2_tau}}},
      {"metrics",
       {{"delta_grid", c.metrics.delta_grid},
        {"audit_endpoints", c.metrics.audit_endpoints},
        {"classifier",
         {{"epochs_stage1", cl.epochs_stage1},
          {"epochs_stage2", cl.epochs_stage2},
          {"batch_size", cl.batch_size},
          {"learning_rate", cl.learning_rate},
          {"auc_margin", cl.auc_margin},
          {"hidden", cl.hidden}}}}},
      {"experiments",
       {{"table1_prompts", c.experiments.table1_prompts},
        {"table1_instances", c.experiments.table1_instances},
        {"size_fractions", c.experiments.size_fractions}}},
  };
}

namespace detail {

// Overlays `user` on `base`; keys absent from `base` are rejected so typos
// fail loudly.
inline void Overlay(json& base, const json& user, const std::string& where) {
  if (!user.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    if (base[key].is_object()) {
      Overlay(base[key], value, path);
    } else {
      base[key] = value;
    }
  }
}

inline identity::PairSamplingConfig PairSamplingFromJson(const json& j) {
  return {j.at("oversample_positives").get<bool>(), j.at("positive_fraction").get<double>()};
}

}  // namespace detail

inline PipelineConfig ConfigFromJson(const json& user) {
  json j = ConfigToJson(PipelineConfig{});
  detail::Overlay(j, user, "");
  if (j.at("format") != kConfigFormat) throw ConfigError("unsupported config format");
  PipelineConfig c;
  try {
    c.base_seed = j.at("base_seed").get<std::uint64_t>();
    const auto& w = j.at("world");
    c.world.patients = w.at("patients").get<int>();
    c.world.dims.observation_dim = w.at("observation_dim").get<int>();
    c.world.dims.identity_dim = w.at("identity_dim").get<int>();
    c.world.dims.label_count = w.at("label_count").get<int>();
    c.world.dims.record_noise = w.at("record_noise").get<double>();
    c.world.dims.flip_prob = w.at("flip_prob").get<double>();
    c.world.dims.max_records = w.at("max_records").get<int>();
    c.world.train_patient_frac = w.at("train_patient_frac").get<double>();
    c.world.crossover_frac = w.at("crossover_frac").get<double>();
    const auto& d = j.at("diffusion");
    c.diffusion.train.epochs = d.at("epochs").get<int>();
    c.diffusion.train.batch_size = d.at("batch_size").get<int>();
    c.diffusion.train.learning_rate = d.at("learning_rate").get<double>();
    c.diffusion.train.p_uncond = d.at("p_uncond").get<double>();
    c.diffusion.train.architecture.hidden = d.at("hidden").get<int>();
    c.diffusion.train.architecture.hidden_layers = d.at("hidden_layers").get<int>();
    c.diffusion.steps = d.at("steps").get<int>();
    c.diffusion.beta_first = d.at("beta_first").get<double>();
    c.diffusion.beta_last = d.at("beta_last").get<double>();
    c.diffusion.guidance = d.at("guidance").get<double>();
    c.diffusion.init = d.at("init").get<std::string>();
    c.diffusion.pretrained_checkpoint = d.at("pretrained_checkpoint").get<std::string>();
    c.diffusion.fraction = d.at("fraction").get<double>();
    c.diffusion.prompt_limit = d.at("prompt_limit").get<int>();
    const auto& r = j.at("reid");
    c.reid.epochs = r.at("epochs").get<int>();
    c.reid.pairs_per_epoch = r.at("pairs_per_epoch").get<int>();
    c.reid.batch_size = r.at("batch_size").get<int>();
    c.reid.learning_rate = r.at("learning_rate").get<double>();
    c.reid.sampling = detail::PairSamplingFromJson(r.at("sampling"));
    const auto& rt = j.at("retrieval");
    c.retrieval.margin = rt.at("margin").get<double>();
    c.retrieval.epochs = rt.at("epochs").get<int>();
    c.retrieval.pairs_per_epoch = rt.at("pairs_per_epoch").get<int>();
    c.retrieval.batch_size = rt.at("batch_size").get<int>();
    c.retrieval.learning_rate = rt.at("learning_rate").get<double>();
    c.retrieval.sampling = detail::PairSamplingFromJson(rt.at("sampling"));
    const auto& a = j.at("align");
    c.align.epochs = a.at("epochs").get<int>();
    c.align.batch_size = a.at("batch_size").get<int>();
    c.align.learning_rate = a.at("learning_rate").get<double>();
    c.align.temperature = a.at("temperature").get<double>();
    const auto& f = j.at("filter");
    c.filter.delta = f.at("delta").get<double>();
    c.filter.candidates_per_prompt = f.at("candidates_per_prompt").get<int>();
    c.filter.mode = filtering::ParseMatchMode(f.at("mode").get<std::string>());
    c.filter.max_rounds = f.at("max_rounds").get<int>();
    c.filter.similarity = identity::ParseSimilarity(f.at("similarity").get<std::string>());
    c.filter.l2_tau = f.at("l2_tau").get<double>();
    const auto& m = j.at("metrics");
    c.metrics.delta_grid = m.at("delta_grid").get<std::vector<double>>();
    c.metrics.audit_endpoints = m.at("audit_endpoints").get<bool>();
    const auto& cl = m.at("classifier");
    c.metrics.classifier.epochs_stage1 = cl.at("epochs_stage1").get<int>();
    c.metrics.classifier.epochs_stage2 = cl.at("epochs_stage2").get<int>();
    c.metrics.classifier.batch_size = cl.at("batch_size").get<int>();
    c.metrics.classifier.learning_rate = cl.at("learning_rate").get<double>();
    c.metrics.classifier.auc_margin = cl.at("auc_margin").get<double>();
    c.metrics.classifier.hidden = cl.at("hidden").get<int>();
    const auto& e = j.at("experiments");
    c.experiments.table1_prompts = e.at("table1_prompts").get<int>();
    c.experiments.table1_instances = e.at("table1_instances").get<int>();
    c.experiments.size_fractions = e.at("size_fractions").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.Validate();
  return c;
}

// "default" selects the built-in defaults; anything else is a file path.
inline PipelineConfig LoadConfig(const std::string& path_or_default) {
  if (path_or_default.empty() || path_or_default == "default") {
    PipelineConfig c;
    c.Validate();
    return c;
  }
  if (!fs::exists(path_or_default)) throw ConfigError("config file not found: " + path_or_default);
  try {
    return ConfigFromJson(io::ReadJson(path_or_default));
  } catch (const ParseError& e) {
    throw ConfigError(std::string(e.what()));
  }
}

using Logger = std::function<void(const std::string&)>;

// ---------------------------------------------------------------------------
// Run manifest: config snapshot, per-stage outputs and timings, formats.

struct StageRecord {
  std::string name;
  bool completed = false;
  double seconds = 0.0;
  std::vector<std::string> inputs;   // relative to the run directory
  std::vector<std::string> outputs;  // relative to the run directory
};

struct RunManifest {
  json config;
  std::vector<StageRecord> stages;
  std::string last_completed;
  std::map<std::string, std::string> reports;  // name -> relative path

  StageRecord* Find(const std::string& name) {
    for (auto& s : stages) {
      if (s.name == name) return &s;
    }
    return nullptr;
  }
  const StageRecord* Find(const std::string& name) const {
    return const_cast<RunManifest*>(this)->Find(name);
  }
  bool Completed(const std::string& name) const {
    const auto* s = Find(name);
    return s != nullptr && s->completed;
  }
};

inline json FormatVersions() {
  return {{"config", kConfigFormat},
          {"manifest", kManifestFormat},
          {"world", "privdistill.world/1"},
          {"network", "privdistill.network/1"},
          {"diffusion", "privdistill.diffusion/1"},
          {"reid", "privdistill.reid/1"},
          {"retrieval", "privdistill.retrieval/1"},
          {"align", "privdistill.align/1"},
          {"classifier", "privdistill.classifier/1"},
          {"filter_report", "privdistill.filter_report/1"},
          {"eval_report", "privdistill.eval_report/1"}};
}

inline json ManifestToJson(const RunManifest& m) {
  json stages = json::array();
  for (const auto& s : m.stages) {
    stages.push_back({{"name", s.name},
                      {"completed", s.completed},
                      {"seconds", s.seconds},
                      {"inputs", s.inputs},
                      {"outputs", s.outputs}});
  }
  return {{"format", kManifestFormat},
          {"formats", FormatVersions()},
          {"config", m.config},
          {"last_completed_stage", m.last_completed},
          {"stages", stages},
          {"reports", m.reports}};
}

inline RunManifest ManifestFromJson(const json& j) {
  try {
    if (j.at("format") != kManifestFormat) throw ParseError("unsupported manifest format");
    RunManifest m;
    m.config = j.at("config");
    m.last_completed = j.at("last_completed_stage").get<std::string>();
    for (const auto& s : j.at("stages")) {
      m.stages.push_back({s.at("name").get<std::string>(), s.at("completed").get<bool>(),
                          s.at("seconds").get<double>(),
                          s.at("inputs").get<std::vector<std::string>>(),
                          s.at("outputs").get<std::vector<std::string>>()});
    }
    m.reports = j.at("reports").get<std::map<std::string, std::string>>();
    return m;
  } catch (const json::exception& e) {
    throw ParseError(std::string("manifest: ") + e.what());
  }
}

inline fs::path ManifestPath(const fs::path& run_dir) { return run_dir / "manifest.json"; }

inline void SaveManifest(const fs::path& run_dir, const RunManifest& m) {
  io::WriteJson(ManifestPath(run_dir), ManifestToJson(m));
}

inline RunManifest LoadManifest(const fs::path& run_dir) {
  const auto p = ManifestPath(run_dir);
  if (!fs::exists(p)) throw ConfigError("no manifest at " + p.string());
  return ManifestFromJson(io::ReadJson(p));
}

// Standard relative paths inside a run directory.
namespace paths {
inline const char* kWorld = "cohort/world.json";
inline const char* kRecords = "cohort/records.csv";
inline const char* kReId = "models/reid.json";
inline const char* kRetrieval = "models/retrieval.json";
inline const char* kAlign = "models/align.json";
inline const char* kIndex = "models/retrieval_index.csv";
inline const char* kPretrained = "models/diffusion_pretrained.json";
inline const char* kDiffusionReal = "models/diffusion_real.json";
inline const char* kDiffusionDistill = "models/diffusion_distill.json";
inline const char* kSynth = "datasets/synth.csv";
inline const char* kFiltered = "datasets/filtered.csv";
inline const char* kDistill = "datasets/distill.csv";
inline const char* kScorers = "reports/scorers.json";
inline const char* kTraining = "reports/training.json";
inline const char* kFilterReport = "reports/filter_report.json";
inline const char* kCandidates = "reports/candidate_scores.csv";
inline const char* kReIdScores = "reports/reid_scores.csv";
inline const char* kAlignScores = "reports/align_scores.csv";
inline const char* kEval = "reports/eval_report.json";
inline const char* kSweepSynth = "reports/sweep_synth.csv";
inline const char* kSweepDistill = "reports/sweep_distill.csv";
inline const char* kScoresSynth = "reports/scores_synth.csv";
inline const char* kScoresDistill = "reports/scores_distill.csv";
}  // namespace paths

// ---------------------------------------------------------------------------
// Seeds. Each stage owns a stream derived from the base seed so any stage
// recomputes identically regardless of which earlier stages were loaded.

inline std::uint64_t WorldSeed(std::uint64_t base) {
  return DeriveSeed(base, {static_cast<std::uint64_t>(StreamKey::kWorld)});
}
inline RngStream StageStream(std::uint64_t base, StreamKey key, std::uint64_t sub = 0) {
  return RngStream(DeriveSeed(base, {static_cast<std::uint64_t>(key), sub}));
}
inline std::uint64_t SampleBase(std::uint64_t base, std::uint64_t which) {
  return DeriveSeed(base, {static_cast<std::uint64_t>(StreamKey::kSample), which});
}

// ---------------------------------------------------------------------------
// Building blocks shared by the pipeline, experiments, and CLI.

inline cohort::Cohort BuildCohort(const WorldConfig& w, std::uint64_t world_seed, std::uint64_t base) {
  const auto world = cohort::GenerateWorld(w.dims, world_seed);
  RngStream gen = StageStream(base, StreamKey::kCohort);
  RngStream split = StageStream(base, StreamKey::kSplit);
  return cohort::SplitCohort(cohort::GenerateCohort(world, w.patients, gen), w.train_patient_frac,
                             w.crossover_frac, split);
}

inline cohort::Cohort BuildCohort(const PipelineConfig& c) {
  return BuildCohort(c.world, WorldSeed(c.base_seed), c.base_seed);
}

// Cohort restricted to a fraction of train patients (test untouched).
inline cohort::Cohort TrainingCohort(const cohort::Cohort& c, double fraction, std::uint64_t base) {
  if (fraction >= 1.0) return c;
  RngStream rng = StageStream(base, StreamKey::kSubset);
  return cohort::SubsetFraction(c, fraction, rng);
}

struct Scorers {
  identity::ReIdModel reid;
  retrieval::RetrievalModel retrieval;
  alignment::AlignModel align;
  retrieval::EmbeddingIndex index;
};

struct ScorerQuality {
  identity::ReIdEval reid;
  retrieval::RetrievalEval retrieval;
  alignment::AlignmentGap align;
  std::string retrieval_warning;
};

inline json ScorerQualityToJson(const ScorerQuality& q) {
  return {{"reid_accuracy", q.reid.accuracy},
          {"reid_auc", q.reid.auc},
          {"reid_pairs", q.reid.pairs},
          {"retrieval_precision_at_1", q.retrieval.precision_at_1},
          {"retrieval_map_at_r", q.retrieval.map_at_r},
          {"retrieval_queries", q.retrieval.queries},
          {"retrieval_skipped_queries", q.retrieval.skipped_queries},
          {"retrieval_warning", q.retrieval_warning},
          {"align_matched_mean", q.align.matched_mean},
          {"align_mismatched_mean", q.align.mismatched_mean}};
}

// Trains the three scorers on the train split and evaluates them on the
// held-out test split.
inline std::pair<Scorers, ScorerQuality> TrainScorers(const cohort::Cohort& c,
                                                      const PipelineConfig& cfg) {
  const auto train = c.Records(cohort::Split::kTrain);
  const auto test = c.Records(cohort::Split::kTest);
  ScorerQuality q;
  RngStream r_reid = StageStream(cfg.base_seed, StreamKey::kReIdTrain);
  auto reid = identity::TrainReId(train, cfg.reid, r_reid).model;
  RngStream r_ret = StageStream(cfg.base_seed, StreamKey::kRetrievalTrain);
  auto ret = retrieval::TrainRetrieval(train, cfg.retrieval, r_ret);
  q.retrieval_warning = ret.warning;
  RngStream r_align = StageStream(cfg.base_seed, StreamKey::kAlignTrain);
  auto align = alignment::TrainAlign(train, cfg.align, r_align).model;

  identity::PairSampler held_out(test);
  RngStream r_pairs = StageStream(cfg.base_seed, StreamKey::kEvalPairs);
  q.reid = identity::EvalReId(reid, test, identity::HeldOutPairs(held_out, r_pairs));
  q.retrieval = retrieval::EvalRetrieval(ret.model, test);
  RngStream r_gap = StageStream(cfg.base_seed, StreamKey::kEvalPairs, 1);
  q.align = alignment::MeasureAlignmentGap(align, test, r_gap);
  auto index = retrieval::BuildIndex(ret.model, train, "train");
  return {Scorers{std::move(reid), std::move(ret.model), std::move(align), std::move(index)}, q};
}

inline filtering::MatchContext MakeContext(const cohort::Cohort& c,
                                           const std::vector<diffusion::Prompt>& prompts,
                                           const Scorers& s, const filtering::FilterConfig& f) {
  return {&c, &prompts, &s.reid, &s.retrieval, &s.index, f.similarity, f.l2_tau};
}

inline std::vector<diffusion::Prompt> PromptsFor(const cohort::Cohort& c, const PipelineConfig& cfg) {
  const std::size_t limit =
      cfg.diffusion.prompt_limit > 0 ? static_cast<std::size_t>(cfg.diffusion.prompt_limit) : SIZE_MAX;
  return diffusion::TrainingPrompts(c, limit);
}

// Pretraining arm: a model trained on a cohort drawn from a different world.
inline diffusion::DiffusionModel Pretrain(const PipelineConfig& cfg, bool conditional) {
  const std::uint64_t pre_base =
      DeriveSeed(cfg.base_seed, {static_cast<std::uint64_t>(StreamKey::kPretrain)});
  const auto other = BuildCohort(cfg.world, WorldSeed(pre_base), pre_base);
  auto data = diffusion::ExamplesFromCohort(other, cohort::Split::kTrain);
  if (!conditional) {
    for (auto& ex : data) ex.y.reset();
  }
  RngStream rng = StageStream(pre_base, StreamKey::kDiffusionTrain);
  return diffusion::TrainDiffusion(data, cfg.world.dims.label_count, cfg.diffusion.train, rng,
                                   std::nullopt, cfg.Schedule())
      .model;
}

inline std::optional<diffusion::DiffusionModel> InitialModel(const PipelineConfig& cfg,
                                                             const fs::path& run_dir, bool conditional,
                                                             std::vector<std::string>* written) {
  if (cfg.diffusion.init == "scratch") return std::nullopt;
  if (!cfg.diffusion.pretrained_checkpoint.empty()) {
    return diffusion::DiffusionModel::Load(cfg.diffusion.pretrained_checkpoint);
  }
  auto model = Pretrain(cfg, conditional);
  if (!run_dir.empty() && conditional) {
    model.Save(run_dir / paths::kPretrained);
    if (written) written->push_back(paths::kPretrained);
  }
  return model;
}

inline Matrix RecordMatrix(const std::vector<const cohort::PatientRecord*>& recs) {
  std::vector<Vector> xs;
  for (const auto* r : recs) xs.push_back(r->x);
  return metrics::StackColumns(xs);
}

inline Matrix SynthMatrix(const std::vector<diffusion::SynthRecord>& s) {
  std::vector<Vector> xs;
  for (const auto& r : s) xs.push_back(r.x_hat);
  return metrics::StackColumns(xs);
}

// First instance of every prompt (one sample per prompt), matching the
// real training set's size for the downstream classifier.
inline std::vector<diffusion::SynthRecord> FirstInstances(const std::vector<diffusion::SynthRecord>& s,
                                                          std::uint64_t sample_base) {
  std::vector<diffusion::SynthRecord> out;
  for (const auto& r : s) {
    if (r.sample_seed == diffusion::SampleSeed(sample_base, r.prompt_index, 0)) out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation.

struct EvalReport {
  std::uint64_t base_seed = 0;
  double delta = 0.5;
  ScorerQuality scorers;
  std::vector<metrics::DatasetReport> datasets;
  std::vector<metrics::SweepPoint> sweep_synth;
  std::vector<metrics::SweepPoint> sweep_distill;
  std::optional<double> frechet_gaussian_baseline;
};

inline json SweepJson(const std::vector<metrics::SweepPoint>& c) {
  json a = json::array();
  for (const auto& p : c) a.push_back({{"delta", p.delta}, {"ratio", p.ratio}});
  return a;
}

inline json EvalReportToJson(const EvalReport& r) {
  json ds = json::array();
  for (const auto& d : r.datasets) ds.push_back(metrics::DatasetReportToJson(d));
  return {{"format", "privdistill.eval_report/1"},
          {"base_seed", r.base_seed},
          {"delta", r.delta},
          {"scorers", ScorerQualityToJson(r.scorers)},
          {"datasets", ds},
          {"frechet_gaussian_baseline", metrics::OptionalJson(r.frechet_gaussian_baseline)},
          {"sweep_synth", SweepJson(r.sweep_synth)},
          {"sweep_distill", SweepJson(r.sweep_distill)}};
}

inline const metrics::DatasetReport* FindDataset(const EvalReport& r, const std::string& name) {
  for (const auto& d : r.datasets) {
    if (d.name == name) return &d;
  }
  return nullptr;
}

struct DatasetScores {
  std::vector<double> source;
  std::vector<double> retrieval;
};

inline DatasetScores ScoreDataset(const std::vector<diffusion::SynthRecord>& s,
                                  const filtering::MatchContext& ctx) {
  return {metrics::ScoresOf(metrics::MatchAll(s, ctx, filtering::MatchMode::kSource)),
          metrics::ScoresOf(metrics::MatchAll(s, ctx, filtering::MatchMode::kRetrieval))};
}

inline metrics::DatasetReport DescribeSynthetic(const std::string& name,
                                                const std::vector<diffusion::SynthRecord>& all,
                                                const std::vector<diffusion::SynthRecord>& classifier_set,
                                                const DatasetScores& scores, double delta,
                                                const Scorers& sc, const Matrix& real_test,
                                                const std::vector<const cohort::PatientRecord*>& test,
                                                const metrics::ClassifierConfig& ccfg, RngStream rng) {
  metrics::DatasetReport d;
  d.name = name;
  d.samples = all.size();
  d.reid_ratio_source = metrics::RatioAtLeast(scores.source, delta);
  d.reid_ratio_retrieval = metrics::RatioAtLeast(scores.retrieval, delta);
  const Matrix x = SynthMatrix(all);
  if (x.cols() >= 2) {
    d.frechet_data = metrics::FrechetBetween(x, real_test);
    d.frechet_feature = metrics::FrechetFeatureSpace(sc.retrieval, x, real_test);
  }
  std::vector<double> align;
  for (const auto& r : all) align.push_back(sc.align.Score(r.x_hat, *r.y));
  d.s_align = metrics::Summarize(align);
  const auto clf = metrics::TrainClassifier(diffusion::ExamplesFromSynth(classifier_set), ccfg, rng);
  const auto ev = metrics::EvalClassifier(clf, test);
  d.classifier_macro_auc = ev.macro_auc;
  d.classifier_per_label_auc = ev.per_label_auc;
  return d;
}

// ---------------------------------------------------------------------------
// The distillation run.

struct RunState {
  fs::path dir;
  PipelineConfig cfg;
  RunManifest manifest;
  Logger log;

  std::optional<cohort::Cohort> cohort;
  std::optional<Scorers> scorers;
  std::optional<ScorerQuality> quality;
  std::vector<diffusion::Prompt> prompts;
  std::optional<diffusion::DiffusionModel> real_model;
  std::vector<diffusion::SynthRecord> synth;
  std::optional<filtering::FilterResult> filter;
  std::vector<diffusion::SynthRecord> filtered;
  std::optional<diffusion::DiffusionModel> distill_model;
  std::vector<diffusion::SynthRecord> distill;
  json training_curves = json::object();
};

inline const std::vector<std::string>& DistillationStages() {
  static const std::vector<std::string> kStages{"cohort",        "scorers", "train_real", "generate",
                                                "filter",        "train_distill", "share", "evaluate"};
  return kStages;
}

namespace detail {

inline bool OutputsExist(const fs::path& dir, const StageRecord& s) {
  return std::all_of(s.outputs.begin(), s.outputs.end(),
                     [&](const std::string& p) { return fs::exists(dir / p); });
}

inline void Note(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

inline int Dim(const RunState& s) { return s.cfg.world.dims.observation_dim; }
inline int Labels(const RunState& s) { return s.cfg.world.dims.label_count; }

inline void RunCohort(RunState& s, bool load, StageRecord& rec) {
  if (load) {
    s.cohort = cohort::LoadCohort(s.dir / "cohort");
  } else {
    s.cohort = BuildCohort(s.cfg);
    cohort::SaveCohort(*s.cohort, s.dir / "cohort");
  }
  CheckDim(s.cohort->world.d(), Dim(s), "cohort observation dim vs config");
  CheckDim(s.cohort->world.L(), Labels(s), "cohort label count vs config");
  s.prompts = PromptsFor(*s.cohort, s.cfg);
  rec.outputs = {paths::kWorld, paths::kRecords};
}

inline void RunScorers(RunState& s, bool load, StageRecord& rec) {
  rec.inputs = {paths::kWorld, paths::kRecords};
  rec.outputs = {paths::kReId, paths::kRetrieval, paths::kAlign, paths::kIndex, paths::kScorers};
  if (load) {
    Scorers sc{identity::ReIdModel::Load(s.dir / paths::kReId),
               retrieval::RetrievalModel::Load(s.dir / paths::kRetrieval),
               alignment::AlignModel::Load(s.dir / paths::kAlign), {}};
    CheckDim(sc.reid.data_dim(), Dim(s), "re-id model input dim vs cohort");
    CheckDim(sc.retrieval.data_dim(), Dim(s), "retrieval model input dim vs cohort");
    CheckDim(sc.align.data_dim(), Dim(s), "alignment model input dim vs cohort");
    CheckDim(sc.align.label_dim(), Labels(s), "alignment model label dim vs cohort");
    sc.index = retrieval::BuildIndex(sc.retrieval, s.cohort->Records(cohort::Split::kTrain), "train");
    s.scorers = std::move(sc);
    const auto q = io::ReadJson(s.dir / paths::kScorers);
    ScorerQuality sq;
    sq.reid = {q.at("reid_accuracy").get<double>(), q.at("reid_auc").get<double>(),
               q.at("reid_pairs").get<std::size_t>()};
    sq.retrieval = {q.at("retrieval_precision_at_1").get<double>(), q.at("retrieval_map_at_r").get<double>(),
                    q.at("retrieval_queries").get<std::size_t>(),
                    q.at("retrieval_skipped_queries").get<std::size_t>()};
    sq.align = {q.at("align_matched_mean").get<double>(), q.at("align_mismatched_mean").get<double>()};
    sq.retrieval_warning = q.at("retrieval_warning").get<std::string>();
    s.quality = sq;
    return;
  }
  auto [sc, q] = TrainScorers(*s.cohort, s.cfg);
  if (!q.retrieval_warning.empty()) Note(s.log, "warning: " + q.retrieval_warning);
  sc.reid.Save(s.dir / paths::kReId);
  sc.retrieval.Save(s.dir / paths::kRetrieval);
  sc.align.Save(s.dir / paths::kAlign);
  retrieval::SaveIndex(sc.index, s.dir / paths::kIndex);
  io::WriteJson(s.dir / paths::kScorers, ScorerQualityToJson(q));
  s.scorers = std::move(sc);
  s.quality = q;
}

inline void RunTrainReal(RunState& s, bool load, StageRecord& rec) {
  rec.inputs = {paths::kRecords};
  rec.outputs = {paths::kDiffusionReal};
  if (load) {
    s.real_model = diffusion::DiffusionModel::Load(s.dir / paths::kDiffusionReal);
    CheckDim(s.real_model->data_dim, Dim(s), "real diffusion model data dim vs cohort");
    CheckDim(s.real_model->label_dim, Labels(s), "real diffusion model label dim vs cohort");
    if (s.cfg.diffusion.init == "pretrained" && s.cfg.diffusion.pretrained_checkpoint.empty()) {
      rec.outputs.push_back(paths::kPretrained);
    }
    return;
  }
  std::vector<std::string> written;
  auto init = InitialModel(s.cfg, s.dir, /*conditional=*/true, &written);
  const auto train_cohort = TrainingCohort(*s.cohort, s.cfg.diffusion.fraction, s.cfg.base_seed);
  RngStream rng = StageStream(s.cfg.base_seed, StreamKey::kDiffusionTrain, 1);
  auto result = diffusion::TrainDiffusion(diffusion::ExamplesFromCohort(train_cohort, cohort::Split::kTrain),
                                          Labels(s), s.cfg.diffusion.train, rng, std::move(init),
                                          s.cfg.Schedule());
  s.training_curves["diffusion_real"] = result.epoch_losses;
  s.real_model = std::move(result.model);
  s.real_model->Save(s.dir / paths::kDiffusionReal);
  for (const auto& w : written) rec.outputs.push_back(w);
  if (!s.cfg.diffusion.pretrained_checkpoint.empty()) rec.inputs.push_back(s.cfg.diffusion.pretrained_checkpoint);
}

inline void RunGenerate(RunState& s, bool load, StageRecord& rec) {
  rec.inputs = {paths::kDiffusionReal, paths::kRecords};
  rec.outputs = {paths::kSynth};
  if (load) {
    s.synth = diffusion::LoadSynthDataset(s.dir / paths::kSynth, Labels(s), Dim(s));
    return;
  }
  s.synth = diffusion::GenerateDataset(*s.real_model, s.prompts, s.cfg.filter.candidates_per_prompt,
                                       SampleBase(s.cfg.base_seed, 1), s.cfg.diffusion.guidance);
  diffusion::SaveSynthDataset(s.synth, Labels(s), Dim(s), s.dir / paths::kSynth);
}

inline void RunFilter(RunState& s, bool load, StageRecord& rec) {
  rec.inputs = {paths::kSynth, paths::kReId, paths::kRetrieval, paths::kAlign, paths::kDiffusionReal};
  rec.outputs = {paths::kFiltered, paths::kFilterReport, paths::kCandidates};
  if (load) {
    s.filtered = diffusion::LoadSynthDataset(s.dir / paths::kFiltered, Labels(s), Dim(s));
    return;
  }
  const auto fcfg = s.cfg.Filter();
  const auto ctx = MakeContext(*s.cohort, s.prompts, *s.scorers, fcfg);
  s.filter = filtering::FilterDataset(s.synth, ctx, s.scorers->align, fcfg, &*s.real_model);
  s.filtered = s.filter->filtered;
  diffusion::SaveSynthDataset(s.filtered, Labels(s), Dim(s), s.dir / paths::kFiltered);
  io::WriteJson(s.dir / paths::kFilterReport, filtering::ReportToJson(s.filter->report));
  filtering::WriteCandidateScores(s.dir / paths::kCandidates, s.filter->candidates);
  if (!s.filter->report.omitted_prompts.empty()) {
    Note(s.log, "filter: omitted " + std::to_string(s.filter->report.omitted_prompts.size()) +
                    " prompt(s) with no survivor");
  }
}

inline void RunTrainDistill(RunState& s, bool load, StageRecord& rec) {
  rec.inputs = {paths::kFiltered};
  rec.outputs = {paths::kDiffusionDistill};
  if (load) {
    s.distill_model = diffusion::DiffusionModel::Load(s.dir / paths::kDiffusionDistill);
    return;
  }
  if (s.filtered.empty()) throw TrainingError("every prompt was omitted by the filter; nothing to distill");
  RngStream rng = StageStream(s.cfg.base_seed, StreamKey::kDiffusionTrain, 2);
  auto result = diffusion::TrainDiffusion(diffusion::ExamplesFromSynth(s.filtered), Labels(s),
                                          s.cfg.diffusion.train, rng, std::nullopt, s.cfg.Schedule());
  s.training_curves["diffusion_distill"] = result.epoch_losses;
  s.distill_model = std::move(result.model);
  s.distill_model->Save(s.dir / paths::kDiffusionDistill);
}

// Prompts that survived filtering, in prompt order.
inline std::vector<diffusion::Prompt> KeptPrompts(const RunState& s) {
  std::vector<diffusion::Prompt> kept;
  for (const auto& r : s.filtered) kept.push_back(s.prompts.at(static_cast<std::size_t>(r.prompt_index)));
  return kept;
}

// The shared artifact is the distilled checkpoint; its samples (N_c per
// retained prompt, drawn from the reloaded checkpoint) form D_distill.
inline void RunShare(RunState& s, bool load, StageRecord& rec) {
  rec.inputs = {paths::kDiffusionDistill, paths::kFiltered};
  rec.outputs = {paths::kDistill};
  if (load) {
    s.distill = diffusion::LoadSynthDataset(s.dir / paths::kDistill, Labels(s), Dim(s));
    return;
  }
  const auto shared = diffusion::DiffusionModel::Load(s.dir / paths::kDiffusionDistill);
  s.distill = diffusion::GenerateDataset(shared, KeptPrompts(s), s.cfg.filter.candidates_per_prompt,
                                         SampleBase(s.cfg.base_seed, 2), s.cfg.diffusion.guidance);
  diffusion::SaveSynthDataset(s.distill, Labels(s), Dim(s), s.dir / paths::kDistill);
}

}  // namespace detail

// Full evaluation of a run's datasets; all inputs are in memory.
inline EvalReport Evaluate(const RunState& s) {
  const auto& cfg = s.cfg;
  const auto& c = *s.cohort;
  const auto& sc = *s.scorers;
  const auto test = c.Records(cohort::Split::kTest);
  const Matrix real_test = RecordMatrix(test);
  const auto fcfg = cfg.Filter();
  const auto ctx = MakeContext(c, s.prompts, sc, fcfg);
  const double delta = fcfg.delta;
  EvalReport r;
  r.base_seed = cfg.base_seed;
  r.delta = delta;
  r.scorers = *s.quality;

  // Real-data classifier reference.
  {
    metrics::DatasetReport d;
    d.name = "real";
    const auto train = c.Records(cohort::Split::kTrain);
    d.samples = train.size();
    RngStream rng = StageStream(cfg.base_seed, StreamKey::kClassifierTrain, 0);
    const auto clf = metrics::TrainClassifier(diffusion::ExamplesFromCohort(c, cohort::Split::kTrain),
                                              cfg.metrics.classifier, rng);
    const auto ev = metrics::EvalClassifier(clf, test);
    d.classifier_macro_auc = ev.macro_auc;
    d.classifier_per_label_auc = ev.per_label_auc;
    const Matrix x = RecordMatrix(train);
    d.frechet_data = metrics::FrechetBetween(x, real_test);
    d.frechet_feature = metrics::FrechetFeatureSpace(sc.retrieval, x, real_test);
    std::vector<double> align;
    for (const auto* rec : train) align.push_back(sc.align.Score(rec->x, rec->y));
    d.s_align = metrics::Summarize(align);
    r.datasets.push_back(d);
  }

  // D_synth is scored on the retained prompts so it is comparable with D_distill.
  std::set<int> kept;
  for (const auto& f : s.filtered) kept.insert(f.prompt_index);
  std::vector<diffusion::SynthRecord> synth_kept;
  for (const auto& x : s.synth) {
    if (kept.count(x.prompt_index)) synth_kept.push_back(x);
  }
  const auto synth_scores = ScoreDataset(synth_kept, ctx);
  r.datasets.push_back(DescribeSynthetic(
      "synth", synth_kept, FirstInstances(synth_kept, SampleBase(cfg.base_seed, 1)), synth_scores, delta, sc,
      real_test, test, cfg.metrics.classifier, StageStream(cfg.base_seed, StreamKey::kClassifierTrain, 1)));
  const auto filtered_scores = ScoreDataset(s.filtered, ctx);
  r.datasets.push_back(DescribeSynthetic("filtered", s.filtered, s.filtered, filtered_scores, delta, sc,
                                         real_test, test, cfg.metrics.classifier,
                                         StageStream(cfg.base_seed, StreamKey::kClassifierTrain, 2)));
  const auto distill_scores = ScoreDataset(s.distill, ctx);
  r.datasets.push_back(DescribeSynthetic(
      "distill", s.distill, FirstInstances(s.distill, SampleBase(cfg.base_seed, 2)), distill_scores, delta, sc,
      real_test, test, cfg.metrics.classifier, StageStream(cfg.base_seed, StreamKey::kClassifierTrain, 3)));

  auto grid = cfg.metrics.delta_grid;
  if (cfg.metrics.audit_endpoints) {
    grid.insert(grid.begin(), 0.0);
    grid.push_back(1.0);
  }
  const auto& mode_scores = [&](const DatasetScores& d) {
    return fcfg.mode == filtering::MatchMode::kRetrieval ? d.retrieval : d.source;
  };
  r.sweep_synth = metrics::SweepDelta(mode_scores(synth_scores), grid);
  r.sweep_distill = metrics::SweepDelta(mode_scores(distill_scores), grid);

  // Utility floor reference: standard-normal draws against the same records.
  RngStream g = StageStream(cfg.base_seed, StreamKey::kEvalPairs, 2);
  Matrix noise(real_test.rows(), std::max<Eigen::Index>(real_test.cols(), 2));
  for (Eigen::Index j = 0; j < noise.cols(); ++j) {
    for (Eigen::Index i = 0; i < noise.rows(); ++i) noise(i, j) = g.Normal();
  }
  r.frechet_gaussian_baseline = metrics::FrechetBetween(noise, real_test);
  return r;
}

namespace detail {

inline void RunEvaluate(RunState& s, bool load, StageRecord& rec) {
  rec.inputs = {paths::kRecords, paths::kReId,     paths::kRetrieval, paths::kAlign,
                paths::kSynth,   paths::kFiltered, paths::kDistill};
  rec.outputs = {paths::kEval,        paths::kSweepSynth,    paths::kSweepDistill,
                 paths::kScoresSynth, paths::kScoresDistill, paths::kReIdScores,
                 paths::kAlignScores};
  if (load) return;
  const auto report = Evaluate(s);
  io::WriteJson(s.dir / paths::kEval, EvalReportToJson(report));
  metrics::WriteSweep(s.dir / paths::kSweepSynth, report.sweep_synth);
  metrics::WriteSweep(s.dir / paths::kSweepDistill, report.sweep_distill);

  const auto fcfg = s.cfg.Filter();
  const auto ctx = MakeContext(*s.cohort, s.prompts, *s.scorers, fcfg);
  const auto synth_matches = metrics::MatchAll(s.synth, ctx, fcfg.mode);
  metrics::WriteScores(s.dir / paths::kScoresSynth, metrics::ScoresOf(synth_matches));
  metrics::WriteScores(s.dir / paths::kScoresDistill,
                       metrics::ScoresOf(metrics::MatchAll(s.distill, ctx, fcfg.mode)));
  std::vector<identity::ScoreRow> rows;
  std::vector<alignment::AlignRow> align_rows;
  for (std::size_t i = 0; i < s.synth.size(); ++i) {
    rows.push_back({i, synth_matches[i].real_record_id, synth_matches[i].score});
    align_rows.push_back({i, s.synth[i].prompt_index, s.scorers->align.Score(s.synth[i].x_hat, *s.synth[i].y)});
  }
  identity::WriteScoreDump(s.dir / paths::kReIdScores, rows);
  alignment::WriteAlignDump(s.dir / paths::kAlignScores, align_rows);
}

}  // namespace detail

inline void PrepareLayout(const fs::path& dir) {
  for (const char* sub : {"cohort", "models", "datasets", "reports"}) fs::create_directories(dir / sub);
}

// Opens (or starts) a run directory. A manifest from a different config is
// an error rather than being silently overwritten.
inline RunManifest OpenRun(const fs::path& dir, const PipelineConfig& cfg) {
  PrepareLayout(dir);
  const json snapshot = ConfigToJson(cfg);
  if (fs::exists(ManifestPath(dir))) {
    auto m = LoadManifest(dir);
    if (m.config != snapshot) {
      throw ConfigError("run directory " + dir.string() +
                        " holds a manifest for a different config; choose another --out");
    }
    return m;
  }
  RunManifest m;
  m.config = snapshot;
  for (const auto& name : DistillationStages()) m.stages.push_back({name, false, 0.0, {}, {}});
  return m;
}

// Executes the distillation procedure with resumable stages. Completed
// stages whose outputs still exist are loaded; the first stage needing work
// and every stage after it are recomputed.
inline RunManifest RunDistillation(const PipelineConfig& cfg, const fs::path& dir, Logger log = {},
                                   const std::string& stop_after = "") {
  cfg.Validate();
  RunState s;
  s.dir = dir;
  s.cfg = cfg;
  s.manifest = OpenRun(dir, cfg);
  s.log = std::move(log);
  using StageFn = void (*)(RunState&, bool, StageRecord&);
  const std::vector<std::pair<std::string, StageFn>> stages{
      {"cohort", detail::RunCohort},         {"scorers", detail::RunScorers},
      {"train_real", detail::RunTrainReal},  {"generate", detail::RunGenerate},
      {"filter", detail::RunFilter},         {"train_distill", detail::RunTrainDistill},
      {"share", detail::RunShare},           {"evaluate", detail::RunEvaluate}};
  bool recompute = false;
  for (const auto& [name, fn] : stages) {
    StageRecord* rec = s.manifest.Find(name);
    const bool load = !recompute && rec->completed && detail::OutputsExist(dir, *rec);
    if (!load) {
      recompute = true;
      rec->completed = false;
    }
    // Evaluation needs in-memory results from filtering; reload if skipped.
    if (load && name == "evaluate") {
      detail::Note(s.log, "stage " + name + ": up to date");
      continue;
    }
    detail::Note(s.log, "stage " + name + (load ? ": loading" : ": running"));
    const auto t0 = std::chrono::steady_clock::now();
    try {
      fn(s, load, *rec);
    } catch (...) {
      SaveManifest(dir, s.manifest);
      throw;
    }
    if (!load) {
      rec->seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      rec->completed = true;
      s.manifest.last_completed = name;
      if (!s.training_curves.empty()) {
        json curves = fs::exists(dir / paths::kTraining) ? io::ReadJson(dir / paths::kTraining) : json::object();
        curves.update(s.training_curves);
        io::WriteJson(dir / paths::kTraining, curves);
        s.training_curves = json::object();
        rec->outputs.push_back(paths::kTraining);
      }
      SaveManifest(dir, s.manifest);
    }
    if (name == stop_after) break;
  }
  if (s.manifest.Completed("evaluate")) {
    s.manifest.reports = {{"eval", paths::kEval},
                          {"filter", paths::kFilterReport},
                          {"scorers", paths::kScorers},
                          {"sweep_synth", paths::kSweepSynth},
                          {"sweep_distill", paths::kSweepDistill}};
    SaveManifest(dir, s.manifest);
  }
  return s.manifest;
}

// Loads every artifact of a finished (or partially finished) run.
inline RunState LoadRun(const fs::path& dir) {
  auto m = LoadManifest(dir);
  RunState s;
  s.dir = dir;
  s.cfg = ConfigFromJson(m.config);
  s.manifest = m;
  StageRecord scratch;
  detail::RunCohort(s, true, scratch);
  if (m.Completed("scorers")) detail::RunScorers(s, true, scratch);
  if (m.Completed("train_real")) detail::RunTrainReal(s, true, scratch);
  if (m.Completed("generate")) detail::RunGenerate(s, true, scratch);
  if (m.Completed("filter")) detail::RunFilter(s, true, scratch);
  if (m.Completed("train_distill")) detail::RunTrainDistill(s, true, scratch);
  if (m.Completed("share")) detail::RunShare(s, true, scratch);
  return s;
}

// Re-evaluates a run from its manifest alone.
inline EvalReport EvaluateRun(const fs::path& dir) {
  const auto s = LoadRun(dir);
  for (const char* needed : {"scorers", "generate", "filter", "share"}) {
    if (!s.manifest.Completed(needed)) {
      throw ConfigError(std::string("run is missing completed stage '") + needed + "'");
    }
  }
  return Evaluate(s);
}

// ---------------------------------------------------------------------------
// Experiments.

struct Table1Row {
  std::string init;          // scratch | pretrained
  std::string conditioning;  // conditional | unconditional
  std::string mode;          // source | retrieval
  std::size_t samples = 0;
  double reid_ratio = 0.0;
  double frechet_data = 0.0;
  double frechet_feature = 0.0;
};

inline json Table1ToJson(const std::vector<Table1Row>& rows) {
  json a = json::array();
  for (const auto& r : rows) {
    a.push_back({{"init", r.init},
                 {"conditioning", r.conditioning},
                 {"mode", r.mode},
                 {"samples", r.samples},
                 {"reid_ratio", r.reid_ratio},
                 {"frechet_data_space", r.frechet_data},
                 {"frechet_feature_space", r.frechet_feature}});
  }
  return {{"format", "privdistill.table1/1"}, {"rows", a}};
}

// 2x2 grid of {scratch, pretrained} x {conditional, unconditional}.
// Unconditional models are trained with every condition dropped and are
// matched by retrieval; conditional rows use source matching.
inline std::vector<Table1Row> RunTable1(const PipelineConfig& cfg, const fs::path& dir, Logger log = {}) {
  cfg.Validate();
  fs::create_directories(dir);
  const auto c = BuildCohort(cfg);
  auto [sc, q] = TrainScorers(c, cfg);
  const auto test = c.Records(cohort::Split::kTest);
  const Matrix real_test = RecordMatrix(test);
  const auto fcfg = cfg.Filter();
  const auto prompts = diffusion::TrainingPrompts(c, static_cast<std::size_t>(cfg.experiments.table1_prompts));
  const auto ctx = MakeContext(c, prompts, sc, fcfg);
  std::vector<Table1Row> rows;
  for (const std::string init : {"scratch", "pretrained"}) {
    for (const bool conditional : {true, false}) {
      detail::Note(log, "table1: " + init + (conditional ? " conditional" : " unconditional"));
      auto data = diffusion::ExamplesFromCohort(c, cohort::Split::kTrain);
      auto tcfg = cfg.diffusion.train;
      if (!conditional) {
        for (auto& ex : data) ex.y.reset();
        tcfg.p_uncond = 1.0;
      }
      std::optional<diffusion::DiffusionModel> start;
      if (init == "pretrained") {
        if (!cfg.diffusion.pretrained_checkpoint.empty()) {
          start = diffusion::DiffusionModel::Load(cfg.diffusion.pretrained_checkpoint);
        } else {
          auto pre_cfg = cfg;
          pre_cfg.diffusion.train = tcfg;
          start = Pretrain(pre_cfg, conditional);
        }
      }
      RngStream rng = StageStream(cfg.base_seed, StreamKey::kDiffusionTrain, 10 + rows.size());
      const auto model =
          diffusion::TrainDiffusion(data, cfg.world.dims.label_count, tcfg, rng, std::move(start), cfg.Schedule())
              .model;
      const auto request = conditional ? prompts : diffusion::UnconditionalPrompts(prompts.size());
      const auto samples = diffusion::GenerateDataset(model, request, cfg.experiments.table1_instances,
                                                      SampleBase(cfg.base_seed, 10 + rows.size()),
                                                      cfg.diffusion.guidance);
      const auto mode = conditional ? filtering::MatchMode::kSource : filtering::MatchMode::kRetrieval;
      const Matrix x = SynthMatrix(samples);
      rows.push_back({init, conditional ? "conditional" : "unconditional", filtering::MatchModeName(mode),
                      samples.size(), metrics::ReIdRatio(samples, ctx, fcfg.delta, mode),
                      metrics::FrechetBetween(x, real_test),
                      metrics::FrechetFeatureSpace(sc.retrieval, x, real_test)});
    }
  }
  io::WriteJson(dir / "table1.json", Table1ToJson(rows));
  return rows;
}

struct SizeRow {
  double fraction = 0.0;
  std::size_t train_patients = 0;
  std::size_t prompts = 0;
  double reid_ratio = 0.0;
  std::string ratio_file;
  std::string embedding_file;
};

inline std::string FractionTag(double f) { return io::FormatDouble(f); }

// One model per training fraction; per-prompt ratios over N_c instances
// and per-prompt embeddings for external cluster plots.
inline std::vector<SizeRow> RunSizeAblation(const PipelineConfig& cfg, const fs::path& dir,
                                            std::vector<double> fractions = {}, Logger log = {}) {
  cfg.Validate();
  if (fractions.empty()) fractions = cfg.experiments.size_fractions;
  for (double f : fractions) {
    if (!(f > 0.0) || f > 1.0) throw ConfigError("size fractions must be in (0,1]");
  }
  std::sort(fractions.begin(), fractions.end());
  fs::create_directories(dir);
  const auto c = BuildCohort(cfg);
  auto [sc, q] = TrainScorers(c, cfg);
  const auto fcfg = cfg.Filter();
  const int nc = fcfg.candidates_per_prompt;
  std::vector<SizeRow> rows;
  json report = json::array();
  for (std::size_t k = 0; k < fractions.size(); ++k) {
    const double f = fractions[k];
    detail::Note(log, "sizes: fraction " + FractionTag(f));
    const auto sub = TrainingCohort(c, f, cfg.base_seed);
    const std::size_t limit =
        cfg.diffusion.prompt_limit > 0 ? static_cast<std::size_t>(cfg.diffusion.prompt_limit) : SIZE_MAX;
    const auto prompts = diffusion::TrainingPrompts(sub, limit);
    RngStream rng = StageStream(cfg.base_seed, StreamKey::kDiffusionTrain, 100 + k);
    const auto model = diffusion::TrainDiffusion(diffusion::ExamplesFromCohort(sub, cohort::Split::kTrain),
                                                 cfg.world.dims.label_count, cfg.diffusion.train, rng,
                                                 std::nullopt, cfg.Schedule())
                           .model;
    const auto samples = diffusion::GenerateDataset(model, prompts, nc, SampleBase(cfg.base_seed, 100 + k),
                                                    cfg.diffusion.guidance);
    const auto ctx = MakeContext(c, prompts, sc, fcfg);
    const auto scores = metrics::ScoresOf(metrics::MatchAll(samples, ctx, fcfg.mode));
    SizeRow row{f, sub.Patients(cohort::Split::kTrain).size(), prompts.size(),
                metrics::RatioAtLeast(scores, fcfg.delta), "ratios_f" + FractionTag(f) + ".csv",
                "prompt_embeddings_f" + FractionTag(f) + ".csv"};
    {
      io::CsvWriter csv(dir / row.ratio_file);
      csv.Row({"prompt_index", "source_record_id", "instances", "ratio"});
      for (std::size_t p = 0; p < prompts.size(); ++p) {
        const std::vector<double> mine(scores.begin() + static_cast<std::ptrdiff_t>(p * nc),
                                       scores.begin() + static_cast<std::ptrdiff_t>((p + 1) * nc));
        csv.Row({std::to_string(p), std::to_string(prompts[p].source_record_id), std::to_string(nc),
                 io::FormatDouble(metrics::RatioAtLeast(mine, fcfg.delta))});
      }
    }
    {
      // Condition embedding of the prompt, then the retrieval embedding of
      // its source record.
      io::CsvWriter csv(dir / row.embedding_file);
      std::vector<std::string> header{"prompt_index", "source_record_id"};
      for (int j = 0; j < diffusion::kCondEmbedDim; ++j) header.push_back("c" + std::to_string(j));
      for (int j = 0; j < retrieval::kEmbedDim; ++j) header.push_back("r" + std::to_string(j));
      csv.Row(header);
      for (const auto& p : prompts) {
        const Vector ce = model.EmbedCondition(p.y);
        const Vector re = sc.retrieval.Embed(c.RecordById(p.source_record_id).x);
        std::vector<std::string> fields{std::to_string(p.index), std::to_string(p.source_record_id)};
        for (Eigen::Index j = 0; j < ce.size(); ++j) fields.push_back(io::FormatDouble(ce[j]));
        for (Eigen::Index j = 0; j < re.size(); ++j) fields.push_back(io::FormatDouble(re[j]));
        csv.Row(fields);
      }
    }
    report.push_back({{"fraction", f},
                      {"train_patients", row.train_patients},
                      {"prompts", row.prompts},
                      {"instances_per_prompt", nc},
                      {"reid_ratio", row.reid_ratio},
                      {"ratio_file", row.ratio_file},
                      {"embedding_file", row.embedding_file}});
    rows.push_back(row);
  }
  io::WriteJson(dir / "sizes.json", {{"format", "privdistill.sizes/1"},
                                     {"mode", filtering::MatchModeName(fcfg.mode)},
                                     {"delta", fcfg.delta},
                                     {"rows", report}});
  return rows;
}

struct DistributionSummary {
  metrics::MeanStd s_reid;
  metrics::MeanStd s_align;
  std::size_t at_or_above_delta = 0;
};

struct FilterEffect {
  DistributionSummary pre;
  DistributionSummary post;
  std::size_t prompts = 0;
};

inline json SummaryJson(const DistributionSummary& d) {
  return {{"count", d.s_reid.count},
          {"s_reid_mean", d.s_reid.mean},
          {"s_reid_std", d.s_reid.std},
          {"s_align_mean", d.s_align.mean},
          {"s_align_std", d.s_align.std},
          {"count_at_or_above_delta", d.at_or_above_delta}};
}

// Score distributions of D_synth versus D_filtered. Runs (or resumes) the
// distillation run in `dir` up to the filter stage.
inline FilterEffect RunFilterEffect(const PipelineConfig& cfg, const fs::path& dir, Logger log = {}) {
  RunDistillation(cfg, dir, log, "filter");
  const auto s = LoadRun(dir);
  const auto fcfg = cfg.Filter();
  const auto ctx = MakeContext(*s.cohort, s.prompts, *s.scorers, fcfg);
  const fs::path out = dir / "reports" / "filter_effect";
  fs::create_directories(out);
  auto dump = [&](const std::vector<diffusion::SynthRecord>& set, const fs::path& path) {
    DistributionSummary sum;
    std::vector<double> reid, align;
    io::CsvWriter csv(path);
    csv.Row({"prompt_index", "seed", "real_record_id", "s_reid", "s_align"});
    for (const auto& x : set) {
      const auto m = filtering::MatchReal(x, ctx, fcfg.mode);
      const double a = s.scorers->align.Score(x.x_hat, *x.y);
      reid.push_back(m.score);
      align.push_back(a);
      if (m.score >= fcfg.delta) ++sum.at_or_above_delta;
      csv.Row({std::to_string(x.prompt_index), std::to_string(x.sample_seed), std::to_string(m.real_record_id),
               io::FormatDouble(m.score), io::FormatDouble(a)});
    }
    sum.s_reid = metrics::Summarize(reid);
    sum.s_align = metrics::Summarize(align);
    return sum;
  };
  FilterEffect e;
  e.pre = dump(s.synth, out / "pre_filter.csv");
  e.post = dump(s.filtered, out / "post_filter.csv");
  e.prompts = s.prompts.size();
  io::WriteJson(out / "summary.json", {{"format", "privdistill.filter_effect/1"},
                                        {"delta", fcfg.delta},
                                        {"mode", filtering::MatchModeName(fcfg.mode)},
                                        {"prompts", e.prompts},
                                        {"pre_filter", SummaryJson(e.pre)},
                                        {"post_filter", SummaryJson(e.post)}});
  return e;
}

}  // namespace privdistill::pipeline

#endif  // PRIVDISTILL_PIPELINE_HPP_
