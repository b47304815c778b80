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

#ifndef PRIVDISTILL_METRICS_HPP_
#define PRIVDISTILL_METRICS_HPP_

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "privdistill/cohort.hpp"
#include "privdistill/diffusion.hpp"
#include "privdistill/error.hpp"
#include "privdistill/filtering.hpp"
#include "privdistill/io.hpp"
#include "privdistill/nn/adam.hpp"
#include "privdistill/nn/losses.hpp"
#include "privdistill/nn/network.hpp"
#include "privdistill/retrieval.hpp"
#include "privdistill/stats.hpp"

namespace privdistill::metrics {

using diffusion::SynthRecord;

// Matched score of every sample; computed once and thresholded as needed.
inline std::vector<filtering::Match> MatchAll(const std::vector<SynthRecord>& samples,
                                              const filtering::MatchContext& ctx,
                                              filtering::MatchMode mode) {
  if (samples.empty()) throw ConfigError("re-identification ratio needs at least one sample");
  std::vector<filtering::Match> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(filtering::MatchReal(s, ctx, mode));
  return out;
}

inline double RatioAtLeast(const std::vector<double>& scores, double delta) {
  if (scores.empty()) throw ConfigError("re-identification ratio needs at least one score");
  const auto hits = std::count_if(scores.begin(), scores.end(), [delta](double s) { return s >= delta; });
  return static_cast<double>(hits) / static_cast<double>(scores.size());
}

inline std::vector<double> ScoresOf(const std::vector<filtering::Match>& matches) {
  std::vector<double> s;
  for (const auto& m : matches) s.push_back(m.score);
  return s;
}

// Fraction of samples whose matched real record scores s_re-id >= delta.
inline double ReIdRatio(const std::vector<SynthRecord>& samples, const filtering::MatchContext& ctx,
                        double delta, filtering::MatchMode mode) {
  if (delta < 0.0 || delta > 1.0) throw ConfigError("delta must be in [0,1]");
  return RatioAtLeast(ScoresOf(MatchAll(samples, ctx, mode)), delta);
}

// 0.05, 0.10, ..., 0.90.
inline std::vector<double> DefaultDeltaGrid() {
  std::vector<double> g;
  for (int k = 1; k <= 18; ++k) g.push_back(static_cast<double>(5 * k) / 100.0);
  return g;
}

struct SweepPoint {
  double delta = 0.0;
  double ratio = 0.0;
};

inline std::vector<SweepPoint> SweepDelta(const std::vector<double>& scores,
                                          const std::vector<double>& grid) {
  if (grid.empty()) throw ConfigError("delta grid is empty");
  if (!std::is_sorted(grid.begin(), grid.end())) throw ConfigError("delta grid must be ascending");
  std::vector<SweepPoint> curve;
  for (double d : grid) curve.push_back({d, RatioAtLeast(scores, d)});
  return curve;
}

inline void WriteSweep(const std::filesystem::path& path, const std::vector<SweepPoint>& curve) {
  io::CsvWriter csv(path);
  csv.Row({"delta", "ratio"});
  for (const auto& p : curve) csv.Row({io::FormatDouble(p.delta), io::FormatDouble(p.ratio)});
}

inline void WriteScores(const std::filesystem::path& path, const std::vector<double>& scores) {
  io::CsvWriter csv(path);
  csv.Row({"record_id", "score"});
  for (std::size_t i = 0; i < scores.size(); ++i) {
    csv.Row({std::to_string(i), io::FormatDouble(scores[i])});
  }
}

inline Matrix StackColumns(const std::vector<Vector>& v) {
  if (v.empty()) throw ConfigError("no vectors to stack");
  Matrix m(v.front().size(), static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    CheckDim(v[i].size(), m.rows(), "stacked vector");
    m.col(static_cast<Eigen::Index>(i)) = v[i];
  }
  return m;
}

inline double FrechetBetween(const Matrix& a, const Matrix& b) {
  return FrechetDistance(ComputeMoments(a), ComputeMoments(b));
}

// Frechet distance of retrieval-encoder features.
inline double FrechetFeatureSpace(const retrieval::RetrievalModel& model, const Matrix& a,
                                  const Matrix& b) {
  return FrechetBetween(model.Embed(a), model.Embed(b));
}

// Downstream multi-label classifier: d -> 64 -> L logits.
struct ClassifierModel {
  nn::Network net;
  std::vector<double> stage1_losses;
  std::vector<double> stage2_losses;

  Matrix Probabilities(const Matrix& x) const {
    CheckDim(x.rows(), net.input_dim(), "classifier input");
    return net.Forward(x).unaryExpr([](double z) { return nn::Sigmoid(z); });
  }

  nlohmann::json ToJson() const {
    return {{"format", "privdistill.classifier/1"},
            {"net", net.ToJson()},
            {"stage1_losses", stage1_losses},
            {"stage2_losses", stage2_losses}};
  }
  static ClassifierModel FromJson(const nlohmann::json& doc) {
    try {
      if (doc.at("format") != "privdistill.classifier/1") throw ParseError("unsupported classifier format");
      return {nn::Network::FromJson(doc.at("net")),
              doc.at("stage1_losses").get<std::vector<double>>(),
              doc.at("stage2_losses").get<std::vector<double>>()};
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("classifier checkpoint: ") + e.what());
    }
  }
};

struct ClassifierConfig {
  int epochs_stage1 = 5;  // cross-entropy
  int epochs_stage2 = 5;  // pairwise AUC surrogate
  int batch_size = 32;
  double learning_rate = 1e-3;
  double auc_margin = 1.0;
  int hidden = 64;

  void Validate() const {
    if (epochs_stage1 < 0 || epochs_stage2 < 0 || batch_size < 2 || hidden < 1) {
      throw ConfigError("classifier epochs/batch/hidden invalid");
    }
    if (!(learning_rate > 0.0)) throw ConfigError("classifier learning rate must be positive");
    if (auc_margin < 0.0) throw ConfigError("classifier AUC margin must be non-negative");
  }
};

struct ClassifierGradients {
  double loss = 0.0;
  Vector params;
  int used_labels = 0;
};

// Batch loss of the classifier network. Cross-entropy on logits, or the
// per-label pairwise surrogate on sigmoid scores averaged over labels that
// have both classes in the batch (used_labels == 0 means nothing to learn).
inline ClassifierGradients ClassifierLossAndGradients(const nn::Network& net, const Matrix& x,
                                                      const Matrix& y, bool auc_stage, double margin) {
  const Eigen::Index n = x.cols();
  const Eigen::Index L = y.rows();
  nn::ForwardCache cache;
  const Matrix logits = net.Forward(x, &cache);
  ClassifierGradients out;
  Matrix d_logits = Matrix::Zero(L, n);
  if (!auc_stage) {
    const auto bce = nn::BceLogits(logits, y);
    out.loss = bce.value;
    out.used_labels = static_cast<int>(L);
    d_logits = bce.grad;
  } else {
    const Matrix p = logits.unaryExpr([](double z) { return nn::Sigmoid(z); });
    for (Eigen::Index l = 0; l < L; ++l) {
      std::vector<Eigen::Index> pos, neg;
      for (Eigen::Index j = 0; j < n; ++j) (y(l, j) > 0.5 ? pos : neg).push_back(j);
      if (pos.empty() || neg.empty()) continue;
      Vector ps(static_cast<Eigen::Index>(pos.size())), ns(static_cast<Eigen::Index>(neg.size()));
      for (std::size_t i = 0; i < pos.size(); ++i) ps[static_cast<Eigen::Index>(i)] = p(l, pos[i]);
      for (std::size_t i = 0; i < neg.size(); ++i) ns[static_cast<Eigen::Index>(i)] = p(l, neg[i]);
      const auto s = nn::PairwiseAucSurrogate(ps, ns, margin);
      out.loss += s.value;
      for (std::size_t i = 0; i < pos.size(); ++i) {
        const double pv = p(l, pos[i]);
        d_logits(l, pos[i]) += s.grad_pos[static_cast<Eigen::Index>(i)] * pv * (1.0 - pv);
      }
      for (std::size_t i = 0; i < neg.size(); ++i) {
        const double pv = p(l, neg[i]);
        d_logits(l, neg[i]) += s.grad_neg[static_cast<Eigen::Index>(i)] * pv * (1.0 - pv);
      }
      ++out.used_labels;
    }
    if (out.used_labels == 0) return out;
    out.loss /= out.used_labels;
    d_logits /= out.used_labels;
  }
  out.params = net.Backward(cache, d_logits).params;
  return out;
}

// Stage 1 minimizes per-label BCE; stage 2 minimizes, per label, the
// squared-hinge pairwise surrogate over the batch's sigmoid scores.
inline ClassifierModel TrainClassifier(const std::vector<diffusion::TrainingExample>& data,
                                       const ClassifierConfig& cfg, RngStream& rng) {
  cfg.Validate();
  if (data.empty()) throw ConfigError("classifier needs a nonempty dataset");
  for (const auto& ex : data) {
    if (!ex.y) throw ConfigError("classifier training needs label vectors (dataset is unconditional)");
  }
  const int d = static_cast<int>(data.front().x.size());
  const int L = static_cast<int>(data.front().y->size());
  ClassifierModel model{nn::Network::Create(nn::Mlp({d, cfg.hidden, L}), rng.NextU64()), {}, {}};
  nn::AdamState state(model.net.param_count(), nn::AdamOptions{cfg.learning_rate});
  std::vector<std::size_t> order(data.size());
  for (int epoch = 0; epoch < cfg.epochs_stage1 + cfg.epochs_stage2; ++epoch) {
    const bool auc_stage = epoch >= cfg.epochs_stage1;
    std::iota(order.begin(), order.end(), 0);
    rng.Shuffle(order);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const auto n = static_cast<Eigen::Index>(end - start);
      Matrix x(d, n), y(L, n);
      for (std::size_t i = start; i < end; ++i) {
        CheckDim(data[order[i]].x.size(), d, "classifier record");
        x.col(static_cast<Eigen::Index>(i - start)) = data[order[i]].x;
        y.col(static_cast<Eigen::Index>(i - start)) = *data[order[i]].y;
      }
      const auto g = ClassifierLossAndGradients(model.net, x, y, auc_stage, cfg.auc_margin);
      if (g.used_labels == 0) continue;
      const double loss = g.loss;
      if (!std::isfinite(loss)) throw TrainingError("non-finite classifier loss");
      nn::AdamStep(model.net.mutable_params(), g.params, state);
      total += loss;
      ++batches;
    }
    (auc_stage ? model.stage2_losses : model.stage1_losses)
        .push_back(batches > 0 ? total / static_cast<double>(batches) : 0.0);
  }
  return model;
}

struct ClassifierEval {
  double macro_auc = 0.0;
  std::vector<std::optional<double>> per_label_auc;  // nullopt: single-class label, skipped
};

inline ClassifierEval EvalClassifierScores(const Matrix& scores, const Matrix& labels) {
  CheckDim(scores.rows(), labels.rows(), "classifier label count");
  CheckDim(scores.cols(), labels.cols(), "classifier record count");
  ClassifierEval e;
  double sum = 0.0;
  int used = 0;
  for (Eigen::Index l = 0; l < labels.rows(); ++l) {
    std::vector<double> s(scores.row(l).begin(), scores.row(l).end());
    std::vector<bool> y;
    for (Eigen::Index j = 0; j < labels.cols(); ++j) y.push_back(labels(l, j) > 0.5);
    const auto n_pos = std::count(y.begin(), y.end(), true);
    if (n_pos == 0 || n_pos == static_cast<long>(y.size())) {
      e.per_label_auc.push_back(std::nullopt);
      continue;
    }
    const double auc = AucRank(s, y);
    e.per_label_auc.push_back(auc);
    sum += auc;
    ++used;
  }
  if (used == 0) throw ConfigError("no label has both classes in the evaluation set");
  e.macro_auc = sum / used;
  return e;
}

inline ClassifierEval EvalClassifier(const ClassifierModel& model,
                                     const std::vector<const cohort::PatientRecord*>& records) {
  if (records.empty()) throw ConfigError("classifier evaluation needs records");
  const int d = static_cast<int>(records.front()->x.size());
  const int L = static_cast<int>(records.front()->y.size());
  Matrix x(d, static_cast<Eigen::Index>(records.size())), y(L, static_cast<Eigen::Index>(records.size()));
  for (std::size_t i = 0; i < records.size(); ++i) {
    x.col(static_cast<Eigen::Index>(i)) = records[i]->x;
    y.col(static_cast<Eigen::Index>(i)) = records[i]->y;
  }
  return EvalClassifierScores(model.Probabilities(x), y);
}

// One row of a distillation or experiment report.
struct DatasetReport {
  std::string name;
  std::size_t samples = 0;
  std::optional<double> reid_ratio_source;
  std::optional<double> reid_ratio_retrieval;
  std::optional<double> frechet_data;
  std::optional<double> frechet_feature;
  std::optional<double> classifier_macro_auc;
  std::vector<std::optional<double>> classifier_per_label_auc;
  std::optional<MeanStd> s_align;
};

inline nlohmann::json OptionalJson(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json DatasetReportToJson(const DatasetReport& r) {
  nlohmann::json per_label = nlohmann::json::array();
  for (const auto& a : r.classifier_per_label_auc) per_label.push_back(OptionalJson(a));
  nlohmann::json j{{"name", r.name},
                   {"samples", r.samples},
                   {"reid_ratio_source", OptionalJson(r.reid_ratio_source)},
                   {"reid_ratio_retrieval", OptionalJson(r.reid_ratio_retrieval)},
                   {"frechet_data_space", OptionalJson(r.frechet_data)},
                   {"frechet_feature_space", OptionalJson(r.frechet_feature)},
                   {"classifier_macro_auc", OptionalJson(r.classifier_macro_auc)},
                   {"classifier_per_label_auc", per_label}};
  if (r.s_align) {
    j["s_align_mean"] = r.s_align->mean;
    j["s_align_std"] = r.s_align->std;
  } else {
    j["s_align_mean"] = nullptr;
    j["s_align_std"] = nullptr;
  }
  return j;
}

}  // namespace privdistill::metrics

#endif  // PRIVDISTILL_METRICS_HPP_
