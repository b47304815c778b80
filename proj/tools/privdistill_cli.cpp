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

// Command-line front end. Every subcommand works inside one run directory
// (--out) laid out as cohort/, models/, datasets/, reports/.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "privdistill.hpp"

namespace {

namespace fs = std::filesystem;
namespace pd = privdistill;
namespace pl = privdistill::pipeline;
using nlohmann::json;

struct Globals {
  std::string config = "default";
  std::optional<std::uint64_t> seed;
  std::string out = "run";
  bool quiet = false;
};

pl::PipelineConfig Config(const Globals& g) {
  auto cfg = pl::LoadConfig(g.config);
  if (g.seed) cfg.base_seed = *g.seed;
  cfg.Validate();
  return cfg;
}

pl::Logger MakeLogger(const Globals& g) {
  if (g.quiet) return {};
  return [](const std::string& m) { std::cerr << m << "\n"; };
}

void Say(const Globals& g, const std::string& m) {
  if (!g.quiet) std::cerr << m << "\n";
}

// Cohort from the run directory, generated and saved on first use.
pd::cohort::Cohort EnsureCohort(const pl::PipelineConfig& cfg, const fs::path& dir, const Globals& g) {
  const fs::path cdir = dir / "cohort";
  if (fs::exists(dir / pl::paths::kWorld) && fs::exists(dir / pl::paths::kRecords)) {
    auto c = pd::cohort::LoadCohort(cdir);
    pd::CheckDim(c.world.d(), cfg.world.dims.observation_dim, "cohort observation dim vs config");
    pd::CheckDim(c.world.L(), cfg.world.dims.label_count, "cohort label count vs config");
    return c;
  }
  Say(g, "generating cohort in " + cdir.string());
  auto c = pl::BuildCohort(cfg);
  pd::cohort::SaveCohort(c, cdir);
  return c;
}

pl::Scorers LoadScorers(const pd::cohort::Cohort& c, const fs::path& dir) {
  for (const char* p : {pl::paths::kReId, pl::paths::kRetrieval, pl::paths::kAlign}) {
    if (!fs::exists(dir / p)) {
      throw pd::ConfigError("missing " + (dir / p).string() + "; run `train reid|retrieval|align` first");
    }
  }
  pl::Scorers s{pd::identity::ReIdModel::Load(dir / pl::paths::kReId),
                pd::retrieval::RetrievalModel::Load(dir / pl::paths::kRetrieval),
                pd::alignment::AlignModel::Load(dir / pl::paths::kAlign),
                {}};
  pd::CheckDim(s.reid.data_dim(), c.world.d(), "re-id model input dim vs cohort");
  pd::CheckDim(s.retrieval.data_dim(), c.world.d(), "retrieval model input dim vs cohort");
  pd::CheckDim(s.align.data_dim(), c.world.d(), "alignment model input dim vs cohort");
  pd::CheckDim(s.align.label_dim(), c.world.L(), "alignment model label dim vs cohort");
  s.index = pd::retrieval::BuildIndex(s.retrieval, c.Records(pd::cohort::Split::kTrain), "train");
  return s;
}

std::vector<pd::diffusion::SynthRecord> LoadDataset(const std::string& path, const pd::cohort::Cohort& c) {
  if (!fs::exists(path)) throw pd::ConfigError("dataset not found: " + path);
  return pd::diffusion::LoadSynthDataset(path, c.world.L(), c.world.d());
}

void PrintJson(const json& j) { std::cout << j.dump(2) << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"privdistill: privacy distillation of generative models on a synthetic cohort"};
  // Global options may follow a subcommand.
  app.fallthrough();
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Config file (JSON) or 'default'");
  app.add_option("--seed", g.seed, "Override base_seed");
  app.add_option("--out", g.out, "Run directory");
  app.add_flag("--quiet", g.quiet, "Suppress progress output");

  // world gen
  auto* world = app.add_subcommand("world", "Synthetic world and cohort");
  world->require_subcommand(1);
  auto* world_gen = world->add_subcommand("gen", "Generate the cohort into <out>/cohort");
  bool print_default = false;
  world_gen->add_flag("--print-default-config", print_default, "Print the default config and exit");

  // train
  auto* train = app.add_subcommand("train", "Train one model");
  train->require_subcommand(1);
  auto* t_diff = train->add_subcommand("diffusion", "Diffusion model on the cohort or a synthetic dataset");
  std::string t_dataset, t_name = "diffusion_real";
  t_diff->add_option("--dataset", t_dataset, "Train on a synthetic CSV instead of the real train split");
  t_diff->add_option("--name", t_name, "Checkpoint name under models/");
  auto* t_reid = train->add_subcommand("reid", "Re-identification network");
  auto* t_ret = train->add_subcommand("retrieval", "Retrieval encoder");
  auto* t_align = train->add_subcommand("align", "Alignment model");
  auto* t_clf = train->add_subcommand("classifier", "Downstream multi-label classifier");
  std::string clf_dataset;
  t_clf->add_option("--dataset", clf_dataset, "Train on a synthetic CSV instead of the real train split");

  // sample
  auto* sample = app.add_subcommand("sample", "Sample a dataset from a diffusion checkpoint");
  std::string s_model, s_out = "datasets/synth.csv";
  int s_per_prompt = -1;
  std::size_t s_uncond = 0;
  double s_guidance = -1.0;
  sample->add_option("--model", s_model, "Diffusion checkpoint")->required();
  sample->add_option("--per-prompt", s_per_prompt, "Instances per prompt (default N_c)");
  sample->add_option("--unconditional", s_uncond, "Draw this many unconditional samples instead");
  sample->add_option("--guidance", s_guidance, "Guidance scale (default from config)");
  sample->add_option("--output", s_out, "Output CSV relative to --out");

  // score
  auto* score = app.add_subcommand("score", "Re-identification scores of a synthetic dataset");
  std::string sc_dataset, sc_mode;
  score->add_option("--dataset", sc_dataset, "Synthetic CSV")->required();
  score->add_option("--mode", sc_mode, "source|retrieval (default from config)");

  // filter
  auto* filter = app.add_subcommand("filter", "Filter a synthetic dataset");
  std::string f_dataset, f_model;
  filter->add_option("--dataset", f_dataset, "Synthetic CSV")->required();
  filter->add_option("--model", f_model, "Diffusion checkpoint used for resampling");

  // distill
  auto* distill = app.add_subcommand("distill", "Run the full distillation procedure (resumable)");
  std::string stop_after;
  distill->add_option("--stop-after", stop_after, "Stop after the named stage");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a run from its manifest, or one dataset against it");
  std::string e_dataset;
  eval->add_option("--dataset", e_dataset, "Evaluate this synthetic CSV against the run's scorers");

  // sweep-delta
  auto* sweep = app.add_subcommand("sweep-delta", "R_re-id as a function of the threshold");
  std::string sw_scores, sw_dataset, sw_mode;
  bool sw_audit = false;
  sweep->add_option("--scores", sw_scores, "CSV with record_id,score");
  sweep->add_option("--dataset", sw_dataset, "Synthetic CSV (scored first)");
  sweep->add_option("--mode", sw_mode, "source|retrieval (default from config)");
  sweep->add_flag("--audit", sw_audit, "Append the degenerate endpoints 0 and 1");

  // experiments
  auto* exp = app.add_subcommand("experiment", "Experiment recipes");
  exp->require_subcommand(1);
  auto* e_t1 = exp->add_subcommand("table1", "Pretraining x conditioning grid");
  auto* e_sizes = exp->add_subcommand("sizes", "Training-set size ablation");
  std::vector<double> fractions;
  e_sizes->add_option("--fractions", fractions, "Training fractions");
  auto* e_fe = exp->add_subcommand("filter-effect", "Score distributions before/after filtering");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const fs::path dir = g.out;
    if (world_gen->parsed() && print_default) {
      PrintJson(pl::ConfigToJson(Config(g)));
      return 0;
    }
    const auto cfg = Config(g);
    const auto log = MakeLogger(g);

    if (world_gen->parsed()) {
      const auto c = EnsureCohort(cfg, dir, g);
      PrintJson({{"train_records", c.Records(pd::cohort::Split::kTrain).size()},
                 {"test_records", c.Records(pd::cohort::Split::kTest).size()},
                 {"train_patients", c.Patients(pd::cohort::Split::kTrain).size()},
                 {"test_patients", c.Patients(pd::cohort::Split::kTest).size()}});
      return 0;
    }

    if (t_diff->parsed()) {
      const auto c = EnsureCohort(cfg, dir, g);
      auto data = t_dataset.empty()
                      ? pd::diffusion::ExamplesFromCohort(
                            pl::TrainingCohort(c, cfg.diffusion.fraction, cfg.base_seed), pd::cohort::Split::kTrain)
                      : pd::diffusion::ExamplesFromSynth(LoadDataset(t_dataset, c));
      auto init = pl::InitialModel(cfg, dir, true, nullptr);
      auto rng = pl::StageStream(cfg.base_seed, pd::StreamKey::kDiffusionTrain, t_dataset.empty() ? 1 : 2);
      const auto r = pd::diffusion::TrainDiffusion(data, c.world.L(), cfg.diffusion.train, rng, std::move(init),
                                                   cfg.Schedule());
      const fs::path out = dir / "models" / (t_name + ".json");
      r.model.Save(out);
      PrintJson({{"checkpoint", out.string()}, {"epoch_losses", r.epoch_losses}});
      return 0;
    }
    if (t_reid->parsed() || t_ret->parsed() || t_align->parsed()) {
      const auto c = EnsureCohort(cfg, dir, g);
      const auto train_recs = c.Records(pd::cohort::Split::kTrain);
      const auto test_recs = c.Records(pd::cohort::Split::kTest);
      json report;
      if (t_reid->parsed()) {
        auto rng = pl::StageStream(cfg.base_seed, pd::StreamKey::kReIdTrain);
        const auto r = pd::identity::TrainReId(train_recs, cfg.reid, rng);
        r.model.Save(dir / pl::paths::kReId);
        pd::identity::PairSampler held_out(test_recs);
        auto pairs_rng = pl::StageStream(cfg.base_seed, pd::StreamKey::kEvalPairs);
        const auto ev = pd::identity::EvalReId(r.model, test_recs, pd::identity::HeldOutPairs(held_out, pairs_rng));
        report = {{"accuracy", ev.accuracy}, {"auc", ev.auc}, {"pairs", ev.pairs}, {"epoch_losses", r.epoch_losses}};
      } else if (t_ret->parsed()) {
        auto rng = pl::StageStream(cfg.base_seed, pd::StreamKey::kRetrievalTrain);
        const auto r = pd::retrieval::TrainRetrieval(train_recs, cfg.retrieval, rng);
        if (!r.warning.empty()) Say(g, "warning: " + r.warning);
        r.model.Save(dir / pl::paths::kRetrieval);
        pd::retrieval::SaveIndex(pd::retrieval::BuildIndex(r.model, train_recs, "train"), dir / pl::paths::kIndex);
        const auto ev = pd::retrieval::EvalRetrieval(r.model, test_recs);
        report = {{"precision_at_1", ev.precision_at_1},
                  {"map_at_r", ev.map_at_r},
                  {"queries", ev.queries},
                  {"skipped_queries", ev.skipped_queries},
                  {"epoch_losses", r.epoch_losses}};
      } else {
        auto rng = pl::StageStream(cfg.base_seed, pd::StreamKey::kAlignTrain);
        const auto r = pd::alignment::TrainAlign(train_recs, cfg.align, rng);
        r.model.Save(dir / pl::paths::kAlign);
        auto gap_rng = pl::StageStream(cfg.base_seed, pd::StreamKey::kEvalPairs, 1);
        const auto gap = pd::alignment::MeasureAlignmentGap(r.model, test_recs, gap_rng);
        report = {{"matched_mean", gap.matched_mean},
                  {"mismatched_mean", gap.mismatched_mean},
                  {"epoch_losses", r.epoch_losses}};
      }
      PrintJson(report);
      return 0;
    }
    if (t_clf->parsed()) {
      const auto c = EnsureCohort(cfg, dir, g);
      const auto data = clf_dataset.empty() ? pd::diffusion::ExamplesFromCohort(c, pd::cohort::Split::kTrain)
                                            : pd::diffusion::ExamplesFromSynth(LoadDataset(clf_dataset, c));
      auto rng = pl::StageStream(cfg.base_seed, pd::StreamKey::kClassifierTrain);
      const auto m = pd::metrics::TrainClassifier(data, cfg.metrics.classifier, rng);
      pd::io::WriteJson(dir / "models" / "classifier.json", m.ToJson());
      const auto ev = pd::metrics::EvalClassifier(m, c.Records(pd::cohort::Split::kTest));
      json per = json::array();
      for (const auto& a : ev.per_label_auc) per.push_back(pd::metrics::OptionalJson(a));
      PrintJson({{"macro_auc", ev.macro_auc}, {"per_label_auc", per}});
      return 0;
    }

    if (sample->parsed()) {
      const auto c = EnsureCohort(cfg, dir, g);
      const auto model = pd::diffusion::DiffusionModel::Load(s_model);
      pd::CheckDim(model.data_dim, c.world.d(), "diffusion checkpoint data dim vs cohort");
      const int per = s_per_prompt > 0 ? s_per_prompt : cfg.filter.candidates_per_prompt;
      const auto prompts =
          s_uncond > 0 ? pd::diffusion::UnconditionalPrompts(s_uncond) : pl::PromptsFor(c, cfg);
      const auto data = pd::diffusion::GenerateDataset(model, prompts, s_uncond > 0 ? 1 : per,
                                                       pl::SampleBase(cfg.base_seed, 1),
                                                       s_guidance >= 0.0 ? s_guidance : cfg.diffusion.guidance);
      pd::diffusion::SaveSynthDataset(data, c.world.L(), c.world.d(), dir / s_out);
      PrintJson({{"dataset", (dir / s_out).string()}, {"samples", data.size()}});
      return 0;
    }

    if (score->parsed() || filter->parsed() || sweep->parsed() || (eval->parsed() && !e_dataset.empty())) {
      const auto c = EnsureCohort(cfg, dir, g);
      const auto prompts = pl::PromptsFor(c, cfg);
      auto fcfg = cfg.Filter();
      const std::string& mode = score->parsed() ? sc_mode : sw_mode;
      if (!mode.empty()) fcfg.mode = pd::filtering::ParseMatchMode(mode);

      if (sweep->parsed() && !sw_scores.empty()) {
        const auto table = pd::io::ReadCsv(sw_scores);
        std::vector<double> scores;
        for (std::size_t i = 0; i < table.rows.size(); ++i) {
          if (table.rows[i].size() != 2) throw pd::ParseError(table.Where(i) + ": expected record_id,score");
          scores.push_back(pd::io::ParseDouble(table.rows[i][1], table.Where(i)));
        }
        auto grid = cfg.metrics.delta_grid;
        if (sw_audit) {
          grid.insert(grid.begin(), 0.0);
          grid.push_back(1.0);
        }
        const auto curve = pd::metrics::SweepDelta(scores, grid);
        pd::metrics::WriteSweep(dir / "reports" / "sweep.csv", curve);
        PrintJson({{"curve", pl::SweepJson(curve)}});
        return 0;
      }

      const auto scorers = LoadScorers(c, dir);
      const auto ctx = pl::MakeContext(c, prompts, scorers, fcfg);
      const std::string& ds = score->parsed()    ? sc_dataset
                              : filter->parsed() ? f_dataset
                              : sweep->parsed()  ? sw_dataset
                                                 : e_dataset;
      if (ds.empty()) throw pd::ConfigError("one of --scores or --dataset is required");
      const auto data = LoadDataset(ds, c);

      if (filter->parsed()) {
        std::optional<pd::diffusion::DiffusionModel> resampler;
        if (!f_model.empty()) resampler = pd::diffusion::DiffusionModel::Load(f_model);
        const auto r = pd::filtering::FilterDataset(data, ctx, scorers.align, fcfg,
                                                    resampler ? &*resampler : nullptr);
        pd::diffusion::SaveSynthDataset(r.filtered, c.world.L(), c.world.d(), dir / pl::paths::kFiltered);
        pd::io::WriteJson(dir / pl::paths::kFilterReport, pd::filtering::ReportToJson(r.report));
        pd::filtering::WriteCandidateScores(dir / pl::paths::kCandidates, r.candidates);
        PrintJson(pd::filtering::ReportToJson(r.report));
        return 0;
      }
      const auto matches = pd::metrics::MatchAll(data, ctx, fcfg.mode);
      const auto scores = pd::metrics::ScoresOf(matches);
      if (score->parsed()) {
        std::vector<pd::identity::ScoreRow> rows;
        for (std::size_t i = 0; i < matches.size(); ++i) {
          rows.push_back({i, matches[i].real_record_id, matches[i].score});
        }
        pd::metrics::WriteScores(dir / "reports" / "scores.csv", scores);
        pd::identity::WriteScoreDump(dir / pl::paths::kReIdScores, rows);
        PrintJson({{"mode", pd::filtering::MatchModeName(fcfg.mode)},
                   {"delta", fcfg.delta},
                   {"samples", scores.size()},
                   {"reid_ratio", pd::metrics::RatioAtLeast(scores, fcfg.delta)}});
        return 0;
      }
      if (sweep->parsed()) {
        auto grid = cfg.metrics.delta_grid;
        if (sw_audit) {
          grid.insert(grid.begin(), 0.0);
          grid.push_back(1.0);
        }
        const auto curve = pd::metrics::SweepDelta(scores, grid);
        pd::metrics::WriteSweep(dir / "reports" / "sweep.csv", curve);
        PrintJson({{"curve", pl::SweepJson(curve)}});
        return 0;
      }
      // eval --dataset
      const auto test = c.Records(pd::cohort::Split::kTest);
      const pd::nn::Matrix real_test = pl::RecordMatrix(test);
      const pd::nn::Matrix x = pl::SynthMatrix(data);
      PrintJson({{"samples", data.size()},
                 {"reid_ratio_source",
                  pd::metrics::ReIdRatio(data, ctx, fcfg.delta, pd::filtering::MatchMode::kSource)},
                 {"reid_ratio_retrieval",
                  pd::metrics::ReIdRatio(data, ctx, fcfg.delta, pd::filtering::MatchMode::kRetrieval)},
                 {"frechet_data_space", pd::metrics::FrechetBetween(x, real_test)},
                 {"frechet_feature_space", pd::metrics::FrechetFeatureSpace(scorers.retrieval, x, real_test)}});
      return 0;
    }

    if (distill->parsed()) {
      const auto m = pl::RunDistillation(cfg, dir, log, stop_after);
      Say(g, "manifest: " + pl::ManifestPath(dir).string());
      if (m.Completed("evaluate")) {
        const auto report = pd::io::ReadJson(dir / pl::paths::kEval);
        json summary = json::array();
        for (const auto& d : report.at("datasets")) {
          summary.push_back({{"name", d.at("name")},
                             {"samples", d.at("samples")},
                             {"reid_ratio_source", d.at("reid_ratio_source")},
                             {"reid_ratio_retrieval", d.at("reid_ratio_retrieval")},
                             {"classifier_macro_auc", d.at("classifier_macro_auc")}});
        }
        PrintJson(summary);
      }
      return 0;
    }
    if (eval->parsed()) {
      const auto report = pl::EvaluateRun(dir);
      pd::io::WriteJson(dir / pl::paths::kEval, pl::EvalReportToJson(report));
      PrintJson(pl::EvalReportToJson(report));
      return 0;
    }

    if (e_t1->parsed()) {
      const auto rows = pl::RunTable1(cfg, dir / "table1", log);
      PrintJson(pl::Table1ToJson(rows));
      return 0;
    }
    if (e_sizes->parsed()) {
      pl::RunSizeAblation(cfg, dir / "sizes", fractions, log);
      PrintJson(pd::io::ReadJson(dir / "sizes" / "sizes.json"));
      return 0;
    }
    if (e_fe->parsed()) {
      pl::RunFilterEffect(cfg, dir, log);
      PrintJson(pd::io::ReadJson(dir / "reports" / "filter_effect" / "summary.json"));
      return 0;
    }
  } catch (const pd::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const pd::RuntimeFailure& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
