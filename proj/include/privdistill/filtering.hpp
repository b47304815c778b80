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

// Privacy filter. Each synthetic candidate is matched to a real record
// (its prompt's source record, its nearest real neighbour in retrieval
// space, or the stronger of both), scored for re-identification, and
// rejected when the score reaches delta. Per prompt, the surviving
// candidate with the highest alignment score is kept.

#ifndef PRIVDISTILL_FILTERING_HPP_
#define PRIVDISTILL_FILTERING_HPP_

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "privdistill/alignment.hpp"
#include "privdistill/cohort.hpp"
#include "privdistill/diffusion.hpp"
#include "privdistill/error.hpp"
#include "privdistill/identity.hpp"
#include "privdistill/io.hpp"
#include "privdistill/retrieval.hpp"

namespace privdistill::filtering {

using diffusion::SynthRecord;
using nn::Vector;

enum class MatchMode { kSource, kRetrieval, kStrict };

inline const char* MatchModeName(MatchMode m) {
  switch (m) {
    case MatchMode::kSource: return "source";
    case MatchMode::kRetrieval: return "retrieval";
    case MatchMode::kStrict: return "strict";
  }
  return "source";
}

inline MatchMode ParseMatchMode(const std::string& s) {
  if (s == "source") return MatchMode::kSource;
  if (s == "retrieval") return MatchMode::kRetrieval;
  if (s == "strict") return MatchMode::kStrict;
  throw ConfigError("unknown match mode '" + s + "'");
}

struct FilterConfig {
  double delta = 0.5;
  int candidates_per_prompt = 10;  // N_c
  MatchMode mode = MatchMode::kSource;
  int max_rounds = 3;
  identity::SimilarityKind similarity = identity::SimilarityKind::kReIdScore;
  double l2_tau = 1.0;
  double guidance = 2.0;        // used when resampling
  std::uint64_t resample_seed = 0;

  void Validate() const {
    if (delta < 0.0 || delta > 1.0) throw ConfigError("delta must be in [0,1]");
    if (candidates_per_prompt < 1) throw ConfigError("N_c must be at least 1");
    if (max_rounds < 1) throw ConfigError("max_rounds must be at least 1");
    if (!(l2_tau > 0.0)) throw ConfigError("l2 tau must be positive");
    if (guidance < 0.0) throw ConfigError("guidance must be non-negative");
  }

  identity::MemorisationPredicate Predicate() const { return {similarity, delta, l2_tau}; }
};

// Read-only view of what matching needs. `prompts` is indexed by
// prompt_index; `index` covers the real train records.
struct MatchContext {
  const cohort::Cohort* cohort = nullptr;
  const std::vector<diffusion::Prompt>* prompts = nullptr;
  const identity::ReIdModel* reid = nullptr;
  const retrieval::RetrievalModel* retrieval = nullptr;
  const retrieval::EmbeddingIndex* index = nullptr;
  identity::SimilarityKind similarity = identity::SimilarityKind::kReIdScore;
  double l2_tau = 1.0;

  double Score(const Vector& x_hat, int real_record_id) const {
    const auto& real = cohort->RecordById(real_record_id);
    if (similarity == identity::SimilarityKind::kReIdScore) return reid->Score(x_hat, real.x);
    return identity::L2Similarity(x_hat, real.x, l2_tau);
  }
};

struct Match {
  int real_record_id = -1;
  double score = 0.0;  // s_re-id (or the configured similarity)
};

inline int SourceRecord(const SynthRecord& s, const MatchContext& ctx) {
  if (s.prompt_index < 0) {
    throw ConfigError("unconditional sample cannot be matched in source mode");
  }
  if (ctx.prompts == nullptr || static_cast<std::size_t>(s.prompt_index) >= ctx.prompts->size()) {
    throw ConfigError("prompt " + std::to_string(s.prompt_index) + " is not in the prompt table");
  }
  const int id = (*ctx.prompts)[static_cast<std::size_t>(s.prompt_index)].source_record_id;
  if (id < 0) throw ConfigError("prompt " + std::to_string(s.prompt_index) + " has no source record");
  return id;
}

inline int RetrievedRecord(const SynthRecord& s, const MatchContext& ctx) {
  if (ctx.retrieval == nullptr || ctx.index == nullptr) {
    throw ConfigError("retrieval matching needs a retrieval model and an index of real records");
  }
  return ctx.index->Nearest(ctx.retrieval->Embed(s.x_hat), 1).front().id;
}

// Source: the prompt's real record. Retrieval: the nearest real train
// record in embedding space. Strict: whichever of the two scores higher.
inline Match MatchReal(const SynthRecord& s, const MatchContext& ctx, MatchMode mode) {
  if (ctx.cohort == nullptr || (ctx.similarity == identity::SimilarityKind::kReIdScore && ctx.reid == nullptr)) {
    throw ConfigError("matching needs a cohort and a re-identification model");
  }
  switch (mode) {
    case MatchMode::kSource: {
      const int id = SourceRecord(s, ctx);
      return {id, ctx.Score(s.x_hat, id)};
    }
    case MatchMode::kRetrieval: {
      const int id = RetrievedRecord(s, ctx);
      return {id, ctx.Score(s.x_hat, id)};
    }
    case MatchMode::kStrict: {
      const int src = SourceRecord(s, ctx);
      const int ret = RetrievedRecord(s, ctx);
      const Match a{src, ctx.Score(s.x_hat, src)};
      const Match b{ret, ctx.Score(s.x_hat, ret)};
      return b.score > a.score ? b : a;
    }
  }
  return {};
}

struct RerankCandidate {
  double s_align = 0.0;
  std::uint64_t sample_seed = 0;
};

// Index of the candidate with the highest s_align; ties go to the lower
// sample seed.
inline std::size_t RerankSelect(const std::vector<RerankCandidate>& candidates) {
  if (candidates.empty()) throw ConfigError("rerank_select needs at least one survivor");
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    const auto& b = candidates[best];
    if (c.s_align > b.s_align || (c.s_align == b.s_align && c.sample_seed < b.sample_seed)) best = i;
  }
  return best;
}

struct CandidateScore {
  int prompt_index = 0;
  int round = 0;
  std::uint64_t sample_seed = 0;
  int real_record_id = -1;
  double s_reid = 0.0;
  double s_align = 0.0;
  bool rejected = false;
};

struct PromptOutcome {
  int prompt_index = 0;
  std::size_t examined = 0;
  std::size_t rejected = 0;
  int rounds = 0;
  bool omitted = false;
  std::uint64_t chosen_seed = 0;
  int matched_record_id = -1;
  double s_reid = 0.0;
  double s_align = 0.0;
};

struct FilterReport {
  std::vector<PromptOutcome> prompts;
  std::size_t examined = 0;
  std::size_t rejected = 0;
  double rejection_rate = 0.0;
  std::vector<int> omitted_prompts;
  int max_rounds_used = 0;
  double delta = 0.0;
  MatchMode mode = MatchMode::kSource;
};

struct FilterResult {
  std::vector<SynthRecord> filtered;
  FilterReport report;
  std::vector<CandidateScore> candidates;  // every candidate examined, all rounds
};

// Groups candidates by prompt (ordered by prompt index), rejects those whose
// matched score reaches delta, and reranks survivors by s_align. A prompt
// with no survivor is resampled with fresh seeds up to max_rounds in total
// when `resampler` is given, and omitted otherwise.
inline FilterResult FilterDataset(const std::vector<SynthRecord>& synth, const MatchContext& ctx,
                                  const alignment::AlignModel& align, const FilterConfig& cfg,
                                  const diffusion::DiffusionModel* resampler = nullptr) {
  cfg.Validate();
  if (synth.empty()) throw ConfigError("cannot filter an empty synthetic dataset");
  std::map<int, std::vector<const SynthRecord*>> groups;
  for (const auto& s : synth) {
    if (s.prompt_index < 0 || !s.y) {
      throw ConfigError("filtering needs conditional samples grouped by prompt");
    }
    groups[s.prompt_index].push_back(&s);
  }
  FilterResult out;
  out.report.delta = cfg.delta;
  out.report.mode = cfg.mode;
  for (const auto& [prompt_index, initial] : groups) {
    PromptOutcome po;
    po.prompt_index = prompt_index;
    std::vector<SynthRecord> pool;
    for (const auto* s : initial) pool.push_back(*s);
    for (int round = 0; round < cfg.max_rounds; ++round) {
      if (round > 0) {
        if (resampler == nullptr) break;
        const auto& prompt = (*ctx.prompts)[static_cast<std::size_t>(prompt_index)];
        pool = diffusion::GenerateDataset(*resampler, {prompt}, cfg.candidates_per_prompt,
                                          cfg.resample_seed, cfg.guidance,
                                          round * cfg.candidates_per_prompt);
      }
      po.rounds = round + 1;
      std::vector<RerankCandidate> survivors;
      std::vector<std::size_t> survivor_pos;
      std::vector<Match> matches;
      for (std::size_t i = 0; i < pool.size(); ++i) {
        const auto& s = pool[i];
        const Match m = MatchReal(s, ctx, cfg.mode);
        const double s_align = align.Score(s.x_hat, *s.y);
        const bool rejected = m.score >= cfg.delta;
        out.candidates.push_back(
            {prompt_index, round, s.sample_seed, m.real_record_id, m.score, s_align, rejected});
        matches.push_back(m);
        ++po.examined;
        if (rejected) {
          ++po.rejected;
        } else {
          survivors.push_back({s_align, s.sample_seed});
          survivor_pos.push_back(i);
        }
      }
      if (!survivors.empty()) {
        const std::size_t pick = RerankSelect(survivors);
        const std::size_t pos = survivor_pos[pick];
        po.chosen_seed = pool[pos].sample_seed;
        po.matched_record_id = matches[pos].real_record_id;
        po.s_reid = matches[pos].score;
        po.s_align = survivors[pick].s_align;
        out.filtered.push_back(pool[pos]);
        break;
      }
    }
    if (po.matched_record_id < 0) {
      po.omitted = true;
      out.report.omitted_prompts.push_back(prompt_index);
    }
    out.report.examined += po.examined;
    out.report.rejected += po.rejected;
    out.report.max_rounds_used = std::max(out.report.max_rounds_used, po.rounds);
    out.report.prompts.push_back(po);
  }
  out.report.rejection_rate =
      static_cast<double>(out.report.rejected) / static_cast<double>(out.report.examined);
  return out;
}

inline nlohmann::json ReportToJson(const FilterReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& p : r.prompts) {
    rows.push_back({{"prompt_index", p.prompt_index},
                    {"examined", p.examined},
                    {"rejected", p.rejected},
                    {"rounds", p.rounds},
                    {"omitted", p.omitted},
                    {"chosen_seed", p.chosen_seed},
                    {"matched_record_id", p.matched_record_id},
                    {"s_reid", p.s_reid},
                    {"s_align", p.s_align}});
  }
  return {{"format", "privdistill.filter_report/1"},
          {"delta", r.delta},
          {"mode", MatchModeName(r.mode)},
          {"examined", r.examined},
          {"rejected", r.rejected},
          {"rejection_rate", r.rejection_rate},
          {"omitted_prompts", r.omitted_prompts},
          {"max_rounds_used", r.max_rounds_used},
          {"prompts", rows}};
}

inline void WriteCandidateScores(const std::filesystem::path& path,
                                 const std::vector<CandidateScore>& rows) {
  io::CsvWriter csv(path);
  csv.Row({"prompt_index", "round", "seed", "real_record_id", "s_reid", "s_align", "rejected"});
  for (const auto& c : rows) {
    csv.Row({std::to_string(c.prompt_index), std::to_string(c.round), std::to_string(c.sample_seed),
             std::to_string(c.real_record_id), io::FormatDouble(c.s_reid),
             io::FormatDouble(c.s_align), c.rejected ? "1" : "0"});
  }
}

}  // namespace privdistill::filtering

#endif  // PRIVDISTILL_FILTERING_HPP_
