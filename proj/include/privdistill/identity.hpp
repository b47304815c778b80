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

// Re-identification scorer: a siamese encoder whose two embeddings are
// merged as [|e1 - e2|, e1 * e2] (symmetric in the pair) and mapped by a
// small head to a same-patient logit.

#ifndef PRIVDISTILL_IDENTITY_HPP_
#define PRIVDISTILL_IDENTITY_HPP_

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <set>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "privdistill/cohort.hpp"
#include "privdistill/error.hpp"
#include "privdistill/io.hpp"
#include "privdistill/nn/adam.hpp"
#include "privdistill/nn/losses.hpp"
#include "privdistill/nn/network.hpp"
#include "privdistill/rng.hpp"
#include "privdistill/stats.hpp"

namespace privdistill::identity {

using nn::Matrix;
using nn::Vector;

inline constexpr int kEmbedDim = 32;

// Sigmoid clamped into the open interval (0, 1), so that thresholds 0 and 1
// are never reached even for saturated logits.
inline double OpenUnitSigmoid(double logit) {
  const double s = nn::Sigmoid(logit);
  return std::clamp(s, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
}

inline Matrix Merge(const Matrix& e1, const Matrix& e2) {
  Matrix m(2 * e1.rows(), e1.cols());
  m.topRows(e1.rows()) = (e1 - e2).cwiseAbs();
  m.bottomRows(e1.rows()) = e1.cwiseProduct(e2);
  return m;
}

struct ReIdModel {
  nn::Network encoder;  // d -> 64 -> 32
  nn::Network head;     // 64 -> 32 -> 1

  static ReIdModel Create(int data_dim, std::uint64_t seed) {
    ReIdModel m;
    m.encoder = nn::Network::Create(nn::Mlp({data_dim, 64, kEmbedDim}), DeriveSeed(seed, {1}));
    m.head = nn::Network::Create(nn::Mlp({2 * kEmbedDim, 32, 1}), DeriveSeed(seed, {2}));
    return m;
  }

  int data_dim() const { return encoder.input_dim(); }

  Vector Logits(const Matrix& a, const Matrix& b) const {
    CheckDim(a.rows(), data_dim(), "re-id input");
    CheckDim(b.rows(), data_dim(), "re-id input");
    CheckDim(b.cols(), a.cols(), "re-id pair batch");
    return head.Forward(Merge(encoder.Forward(a), encoder.Forward(b))).row(0).transpose();
  }

  Vector Scores(const Matrix& a, const Matrix& b) const {
    return Logits(a, b).unaryExpr([](double z) { return OpenUnitSigmoid(z); });
  }

  // s_re-id in (0, 1); symmetric in its arguments.
  double Score(const Vector& a, const Vector& b) const {
    return Scores(Matrix(a), Matrix(b))[0];
  }

  nlohmann::json ToJson() const {
    return {{"format", "privdistill.reid/1"},
            {"encoder", encoder.ToJson()},
            {"head", head.ToJson()}};
  }
  static ReIdModel FromJson(const nlohmann::json& doc) {
    try {
      if (doc.at("format") != "privdistill.reid/1") throw ParseError("unsupported re-id format");
      ReIdModel m{nn::Network::FromJson(doc.at("encoder")), nn::Network::FromJson(doc.at("head"))};
      CheckDim(m.head.input_dim(), 2 * m.encoder.output_dim(), "re-id head input");
      return m;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("re-id checkpoint: ") + e.what());
    }
  }
  void Save(const std::filesystem::path& p) const { io::WriteJson(p, ToJson()); }
  static ReIdModel Load(const std::filesystem::path& p) { return FromJson(io::ReadJson(p)); }
};

struct RecordPair {
  std::size_t first = 0;  // indices into the sampler's record list
  std::size_t second = 0;
  bool same = false;
};

inline bool SamePatient(const cohort::PatientRecord& a, const cohort::PatientRecord& b) {
  return a.patient_id == b.patient_id;
}

struct PairSamplingConfig {
  bool oversample_positives = true;
  // Share of positives in the emitted stream when oversampling.
  double positive_fraction = 0.5;
};

// Endless stream of labelled record pairs. Without oversampling, pairs are
// uniform over ordered pairs of distinct records, so positives are rare.
// With oversampling, positives are resampled to a fixed share of the
// stream using a deterministic quota; negatives stay uniform over
// cross-patient pairs.
class PairSampler {
 public:
  PairSampler(std::vector<const cohort::PatientRecord*> records, PairSamplingConfig cfg = {})
      : records_(std::move(records)), cfg_(cfg) {
    if (cfg_.positive_fraction < 0.0 || cfg_.positive_fraction > 1.0) {
      throw ConfigError("positive_fraction must be in [0,1]");
    }
    std::map<int, std::vector<std::size_t>> by_patient;
    for (std::size_t i = 0; i < records_.size(); ++i) {
      by_patient[records_[i]->patient_id].push_back(i);
    }
    if (by_patient.size() < 2) throw ConfigError("pair sampling needs at least 2 patients");
    for (const auto& [pid, idx] : by_patient) {
      for (std::size_t a = 0; a < idx.size(); ++a) {
        for (std::size_t b = a + 1; b < idx.size(); ++b) positives_.push_back({idx[a], idx[b], true});
      }
    }
    if (positives_.empty()) {
      throw ConfigError("no positive pair exists: every patient has a single record");
    }
  }

  const std::vector<const cohort::PatientRecord*>& records() const { return records_; }
  const std::vector<RecordPair>& positives() const { return positives_; }

  RecordPair Next(RngStream& rng) {
    if (!cfg_.oversample_positives) {
      const std::size_t a = rng.Index(records_.size());
      std::size_t b = rng.Index(records_.size() - 1);
      if (b >= a) ++b;
      return {a, b, SamePatient(*records_[a], *records_[b])};
    }
    const double f = cfg_.positive_fraction;
    const bool positive = std::floor(static_cast<double>(emitted_ + 1) * f) >
                          std::floor(static_cast<double>(emitted_) * f);
    ++emitted_;
    if (positive) {
      RecordPair p = positives_[rng.Index(positives_.size())];
      if (rng.Bernoulli(0.5)) std::swap(p.first, p.second);
      return p;
    }
    return NextNegative(rng);
  }

  RecordPair NextNegative(RngStream& rng) const {
    while (true) {
      const std::size_t a = rng.Index(records_.size());
      const std::size_t b = rng.Index(records_.size());
      if (!SamePatient(*records_[a], *records_[b])) return {a, b, false};
    }
  }

 private:
  std::vector<const cohort::PatientRecord*> records_;
  PairSamplingConfig cfg_;
  std::vector<RecordPair> positives_;
  std::size_t emitted_ = 0;
};

// Label-balanced set of distinct pairs: every positive pair (up to
// `max_per_class`) and as many distinct negatives.
inline std::vector<RecordPair> HeldOutPairs(const PairSampler& sampler, RngStream& rng,
                                            std::size_t max_per_class = 5000) {
  std::vector<RecordPair> out = sampler.positives();
  rng.Shuffle(out);
  if (out.size() > max_per_class) out.resize(max_per_class);
  const std::size_t n_pos = out.size();
  std::set<std::pair<std::size_t, std::size_t>> seen;
  while (out.size() < 2 * n_pos) {
    auto p = sampler.NextNegative(rng);
    if (seen.insert(std::minmax(p.first, p.second)).second) out.push_back(p);
  }
  return out;
}

struct TrainConfig {
  int epochs = 30;
  int pairs_per_epoch = 4096;
  int batch_size = 64;
  double learning_rate = 1e-3;
  PairSamplingConfig sampling;

  void Validate() const {
    if (epochs < 0 || pairs_per_epoch < 1 || batch_size < 1) {
      throw ConfigError("re-id epochs/pairs/batch invalid");
    }
    if (!(learning_rate > 0.0)) throw ConfigError("re-id learning rate must be positive");
  }
};

struct PairBatch {
  Matrix first;
  Matrix second;
  std::vector<bool> same;
};

inline PairBatch GatherPairs(const std::vector<const cohort::PatientRecord*>& records,
                             const std::vector<RecordPair>& pairs) {
  const int d = static_cast<int>(records.front()->x.size());
  PairBatch b{Matrix(d, static_cast<Eigen::Index>(pairs.size())),
              Matrix(d, static_cast<Eigen::Index>(pairs.size())), {}};
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    b.first.col(static_cast<Eigen::Index>(i)) = records[pairs[i].first]->x;
    b.second.col(static_cast<Eigen::Index>(i)) = records[pairs[i].second]->x;
    b.same.push_back(pairs[i].same);
  }
  return b;
}

struct ReIdGradients {
  double loss = 0.0;
  Vector encoder;
  Vector head;
};

// Binary cross-entropy of the same-patient logit over a pair batch.
inline ReIdGradients ReIdLossAndGradients(const ReIdModel& model, const PairBatch& batch) {
  nn::ForwardCache c1, c2, ch;
  const Matrix e1 = model.encoder.Forward(batch.first, &c1);
  const Matrix e2 = model.encoder.Forward(batch.second, &c2);
  const Matrix logits = model.head.Forward(Merge(e1, e2), &ch);
  Matrix labels(1, logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) labels(0, j) = batch.same[static_cast<std::size_t>(j)] ? 1.0 : 0.0;
  const auto loss = nn::BceLogits(logits, labels);
  const auto gh = model.head.Backward(ch, loss.grad);
  const auto k = e1.rows();
  const Matrix d_abs = gh.input.topRows(k);
  const Matrix d_prod = gh.input.bottomRows(k);
  const Matrix sign = (e1 - e2).unaryExpr([](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
  const Matrix d_e1 = d_abs.cwiseProduct(sign) + d_prod.cwiseProduct(e2);
  const Matrix d_e2 = -d_abs.cwiseProduct(sign) + d_prod.cwiseProduct(e1);
  ReIdGradients out;
  out.loss = loss.value;
  out.head = gh.params;
  out.encoder = model.encoder.Backward(c1, d_e1).params + model.encoder.Backward(c2, d_e2).params;
  return out;
}

struct ReIdTrainResult {
  ReIdModel model;
  std::vector<double> epoch_losses;
};

inline ReIdTrainResult TrainReId(const std::vector<const cohort::PatientRecord*>& records,
                                 const TrainConfig& cfg, RngStream& rng) {
  cfg.Validate();
  PairSampler sampler(records, cfg.sampling);
  ReIdTrainResult result{ReIdModel::Create(static_cast<int>(records.front()->x.size()), rng.NextU64()), {}};
  auto& m = result.model;
  const nn::AdamOptions opts{cfg.learning_rate};
  nn::AdamState enc_state(m.encoder.param_count(), opts);
  nn::AdamState head_state(m.head.param_count(), opts);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double total = 0.0;
    int seen = 0;
    while (seen < cfg.pairs_per_epoch) {
      const int n = std::min(cfg.batch_size, cfg.pairs_per_epoch - seen);
      std::vector<RecordPair> pairs;
      for (int i = 0; i < n; ++i) pairs.push_back(sampler.Next(rng));
      const auto g = ReIdLossAndGradients(m, GatherPairs(records, pairs));
      if (!std::isfinite(g.loss)) throw TrainingError("non-finite re-id loss at epoch " + std::to_string(epoch));
      nn::AdamStep(m.encoder.mutable_params(), g.encoder, enc_state);
      nn::AdamStep(m.head.mutable_params(), g.head, head_state);
      total += g.loss * n;
      seen += n;
    }
    result.epoch_losses.push_back(total / seen);
  }
  return result;
}

struct ReIdEval {
  double accuracy = 0.0;  // at threshold 0.5
  double auc = 0.0;
  std::size_t pairs = 0;
};

inline ReIdEval EvalReId(const ReIdModel& model,
                         const std::vector<const cohort::PatientRecord*>& records,
                         const std::vector<RecordPair>& pairs) {
  if (pairs.empty()) throw ConfigError("re-id evaluation needs at least one pair");
  const auto batch = GatherPairs(records, pairs);
  const Vector s = model.Scores(batch.first, batch.second);
  std::vector<double> scores(s.begin(), s.end());
  ReIdEval e;
  e.pairs = pairs.size();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    correct += ((scores[i] >= 0.5) == batch.same[i]) ? 1 : 0;
  }
  e.accuracy = static_cast<double>(correct) / static_cast<double>(pairs.size());
  e.auc = metrics::AucRank(scores, batch.same);
  return e;
}

enum class SimilarityKind { kReIdScore, kL2Similarity };

inline const char* SimilarityName(SimilarityKind k) {
  return k == SimilarityKind::kReIdScore ? "reid_score" : "l2_similarity";
}

inline SimilarityKind ParseSimilarity(const std::string& s) {
  if (s == "reid_score") return SimilarityKind::kReIdScore;
  if (s == "l2_similarity") return SimilarityKind::kL2Similarity;
  throw ConfigError("unknown similarity kind '" + s + "'");
}

// exp(-||a - b|| / tau), in (0, 1].
inline double L2Similarity(const Vector& a, const Vector& b, double tau = 1.0) {
  if (!(tau > 0.0)) throw ConfigError("l2 similarity temperature must be positive");
  CheckDim(b.size(), a.size(), "l2 similarity");
  return std::exp(-(a - b).norm() / tau);
}

// (l, delta)-memorisation: a real record x counts as memorised by a sample
// x_hat when l(x_hat, x) >= delta.
struct MemorisationPredicate {
  SimilarityKind kind = SimilarityKind::kReIdScore;
  double delta = 0.5;
  double tau = 1.0;

  void Validate() const {
    if (delta < 0.0 || delta > 1.0) throw ConfigError("delta must be in [0,1]");
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  }
};

inline double Similarity(const MemorisationPredicate& pred, const ReIdModel& model,
                         const Vector& x_hat, const Vector& x) {
  return pred.kind == SimilarityKind::kReIdScore ? model.Score(x_hat, x)
                                                 : L2Similarity(x_hat, x, pred.tau);
}

inline bool IsMemorised(const MemorisationPredicate& pred, const ReIdModel& model,
                        const Vector& x_hat, const Vector& x) {
  pred.Validate();
  return Similarity(pred, model, x_hat, x) >= pred.delta;
}

struct ScoreRow {
  std::size_t synth_record_id = 0;
  int real_record_id = 0;
  double s_reid = 0.0;
};

inline void WriteScoreDump(const std::filesystem::path& path, const std::vector<ScoreRow>& rows) {
  io::CsvWriter csv(path);
  csv.Row({"synth_record_id", "real_record_id", "s_reid"});
  for (const auto& r : rows) {
    csv.Row({std::to_string(r.synth_record_id), std::to_string(r.real_record_id),
             io::FormatDouble(r.s_reid)});
  }
}

}  // namespace privdistill::identity

#endif  // PRIVDISTILL_IDENTITY_HPP_
