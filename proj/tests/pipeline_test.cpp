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

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "privdistill.hpp"

namespace privdistill {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

json SmallJson() {
  return json::parse(R"({
    "world": {"patients": 60},
    "diffusion": {"epochs": 8, "prompt_limit": 16},
    "reid": {"epochs": 3, "pairs_per_epoch": 256},
    "retrieval": {"epochs": 3, "pairs_per_epoch": 256},
    "align": {"epochs": 3},
    "filter": {"candidates_per_prompt": 4, "max_rounds": 2},
    "metrics": {"classifier": {"epochs_stage1": 1, "epochs_stage2": 1}},
    "experiments": {"table1_prompts": 8, "table1_instances": 2, "size_fractions": [0.5, 1.0]}
  })");
}

pipeline::PipelineConfig Small() { return pipeline::ConfigFromJson(SmallJson()); }

fs::path Scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("privdistill_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// One finished run shared by the read-only tests.
const fs::path& FinishedRun() {
  static const fs::path dir = [] {
    const auto d = Scratch("finished");
    pipeline::RunDistillation(Small(), d);
    return d;
  }();
  return dir;
}

TEST(Config, DefaultsValidateAndRoundTrip) {
  const pipeline::PipelineConfig d;
  EXPECT_NO_THROW(d.Validate());
  const json j = pipeline::ConfigToJson(d);
  EXPECT_EQ(pipeline::ConfigToJson(pipeline::ConfigFromJson(j)), j);
  const auto s = Small();
  EXPECT_EQ(s.world.patients, 60);
  EXPECT_EQ(s.diffusion.train.epochs, 8);
  EXPECT_EQ(s.filter.delta, d.filter.delta);
  EXPECT_EQ(pipeline::ConfigToJson(pipeline::ConfigFromJson(pipeline::ConfigToJson(s))), pipeline::ConfigToJson(s));
}

TEST(Config, RejectsBadValuesAndUnknownKeys) {
  EXPECT_THROW(pipeline::ConfigFromJson(json::parse(R"({"filter": {"candidates_per_prompt": 0}})")), ConfigError);
  EXPECT_THROW(pipeline::ConfigFromJson(json::parse(R"({"filter": {"delta": 1.5}})")), ConfigError);
  EXPECT_THROW(pipeline::ConfigFromJson(json::parse(R"({"diffusion": {"guidance": -1}})")), ConfigError);
  EXPECT_THROW(pipeline::ConfigFromJson(json::parse(R"({"metrics": {"delta_grid": [0.5, 0.1]}})")), ConfigError);
  try {
    pipeline::ConfigFromJson(json::parse(R"({"world": {"patinets": 10}})"));
    FAIL() << "unknown key accepted";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("patinets"), std::string::npos) << e.what();
  }
}

TEST(Config, MissingFileNamesPath) {
  try {
    pipeline::LoadConfig("/nonexistent/privdistill.json");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/privdistill.json"), std::string::npos);
  }
  EXPECT_NO_THROW(pipeline::LoadConfig("default"));
}

TEST(Config, FileOverlay) {
  const auto p = fs::temp_directory_path() / "privdistill_cfg.json";
  io::WriteJson(p, SmallJson());
  EXPECT_EQ(pipeline::ConfigToJson(pipeline::LoadConfig(p.string())), pipeline::ConfigToJson(Small()));
}

TEST(Seeds, StageStreamsAreIndependentOfEachOther) {
  auto a = pipeline::StageStream(7, StreamKey::kCohort);
  auto b = pipeline::StageStream(7, StreamKey::kSplit);
  auto a2 = pipeline::StageStream(7, StreamKey::kCohort);
  EXPECT_NE(a.NextU64(), b.NextU64());
  auto a3 = pipeline::StageStream(7, StreamKey::kCohort);
  EXPECT_EQ(a2.NextU64(), a3.NextU64());
}

TEST(Distillation, ManifestListsEveryStage) {
  const auto m = pipeline::LoadManifest(FinishedRun());
  for (const auto& s : pipeline::DistillationStages()) {
    EXPECT_TRUE(m.Completed(s)) << s;
  }
  for (const char* p : {pipeline::paths::kFiltered, pipeline::paths::kDistill, pipeline::paths::kEval,
                        pipeline::paths::kFilterReport, pipeline::paths::kSweepSynth}) {
    EXPECT_TRUE(fs::exists(FinishedRun() / p)) << p;
  }
}

TEST(Distillation, ReportsAreConsistent) {
  const auto run = pipeline::LoadRun(FinishedRun());
  const auto cfg = run.cfg;
  // Every kept sample passed the threshold, at most one per prompt.
  std::set<int> prompts;
  for (const auto& x : run.filtered) EXPECT_TRUE(prompts.insert(x.prompt_index).second);
  const auto ctx = pipeline::MakeContext(*run.cohort, run.prompts, *run.scorers, cfg.Filter());
  for (const auto& x : run.filtered) {
    EXPECT_LT(filtering::MatchReal(x, ctx, cfg.filter.mode).score, cfg.filter.delta);
  }
  EXPECT_EQ(run.synth.size(), run.prompts.size() * static_cast<std::size_t>(cfg.filter.candidates_per_prompt));
  EXPECT_EQ(run.distill.size(), run.filtered.size() * static_cast<std::size_t>(cfg.filter.candidates_per_prompt));
}

TEST(Distillation, EvaluateRunMatchesStoredReport) {
  const auto again = pipeline::EvalReportToJson(pipeline::EvaluateRun(FinishedRun()));
  EXPECT_EQ(again, io::ReadJson(FinishedRun() / pipeline::paths::kEval));
  const auto r = pipeline::EvaluateRun(FinishedRun());
  for (const char* n : {"real", "synth", "filtered", "distill"}) EXPECT_NE(pipeline::FindDataset(r, n), nullptr) << n;
  // Standard-normal draws are a worse match to the held-out records than the
  // real training records are.
  ASSERT_TRUE(r.frechet_gaussian_baseline.has_value());
  EXPECT_GT(*r.frechet_gaussian_baseline, *pipeline::FindDataset(r, "real")->frechet_data);
}

TEST(Distillation, IdenticalRunsProduceIdenticalArtifacts) {
  const auto dir = Scratch("twin");
  pipeline::RunDistillation(Small(), dir);
  for (const char* p : {pipeline::paths::kFiltered, pipeline::paths::kDistill, pipeline::paths::kFilterReport,
                        pipeline::paths::kDiffusionReal, pipeline::paths::kDiffusionDistill, pipeline::paths::kEval,
                        pipeline::paths::kReId, pipeline::paths::kRetrieval, pipeline::paths::kAlign}) {
    EXPECT_EQ(Slurp(dir / p), Slurp(FinishedRun() / p)) << p;
  }
}

TEST(Distillation, ResumeAfterStopMatchesStraightRun) {
  const auto dir = Scratch("resume");
  auto m = pipeline::RunDistillation(Small(), dir, {}, "generate");
  EXPECT_EQ(m.last_completed, "generate");
  EXPECT_FALSE(m.Completed("filter"));
  m = pipeline::RunDistillation(Small(), dir);
  EXPECT_TRUE(m.Completed("evaluate"));
  for (const char* p : {pipeline::paths::kFiltered, pipeline::paths::kDistill, pipeline::paths::kEval}) {
    EXPECT_EQ(Slurp(dir / p), Slurp(FinishedRun() / p)) << p;
  }
}

TEST(Distillation, MissingOutputForcesRecompute) {
  const auto dir = Scratch("recompute");
  pipeline::RunDistillation(Small(), dir, {}, "filter");
  fs::remove(dir / pipeline::paths::kSynth);
  pipeline::RunDistillation(Small(), dir);
  EXPECT_EQ(Slurp(dir / pipeline::paths::kFiltered), Slurp(FinishedRun() / pipeline::paths::kFiltered));
}

TEST(Distillation, ConfigChangeInSameDirectoryRejected) {
  const auto dir = Scratch("conflict");
  pipeline::RunDistillation(Small(), dir, {}, "cohort");
  auto other = Small();
  other.base_seed = 8;
  EXPECT_THROW(pipeline::RunDistillation(other, dir), ConfigError);
}

TEST(Distillation, EvaluateNeedsFinishedStages) {
  const auto dir = Scratch("partial");
  pipeline::RunDistillation(Small(), dir, {}, "scorers");
  EXPECT_THROW(pipeline::EvaluateRun(dir), ConfigError);
  EXPECT_THROW(pipeline::EvaluateRun(Scratch("empty")), ConfigError);
}

TEST(Experiments, Table1Grid) {
  const auto dir = Scratch("table1");
  const auto rows = pipeline::RunTable1(Small(), dir);
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.samples, 16u);
    EXPECT_GE(r.reid_ratio, 0.0);
    EXPECT_LE(r.reid_ratio, 1.0);
    EXPECT_GE(r.frechet_data, 0.0);
    EXPECT_EQ(r.mode, r.conditioning == "conditional" ? "source" : "retrieval");
  }
  EXPECT_EQ(io::ReadJson(dir / "table1.json").at("rows").size(), 4u);
}

TEST(Experiments, SizeAblationFiles) {
  const auto dir = Scratch("sizes");
  const auto rows = pipeline::RunSizeAblation(Small(), dir);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_LT(rows[0].train_patients, rows[1].train_patients);
  for (const auto& r : rows) {
    const auto ratios = io::ReadCsv(dir / r.ratio_file);
    EXPECT_EQ(ratios.rows.size(), r.prompts);
    EXPECT_EQ(io::ReadCsv(dir / r.embedding_file).rows.size(), r.prompts);
  }
  EXPECT_THROW(pipeline::RunSizeAblation(Small(), dir, {0.0}), ConfigError);
}

TEST(Experiments, FilterEffectShiftsScoresDown) {
  const auto dir = Scratch("effect");
  fs::copy(FinishedRun(), dir, fs::copy_options::recursive);
  const auto e = pipeline::RunFilterEffect(Small(), dir);
  EXPECT_EQ(e.post.at_or_above_delta, 0u);
  EXPECT_LE(e.post.s_reid.count, e.pre.s_reid.count);
  EXPECT_LE(e.post.s_reid.mean, e.pre.s_reid.mean);
  EXPECT_TRUE(fs::exists(dir / "reports/filter_effect/summary.json"));
}

}  // namespace
}  // namespace privdistill
