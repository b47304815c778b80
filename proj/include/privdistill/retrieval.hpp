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

// Retrieval embedder: the siamese encoder alone, trained with a margin
// contrastive loss, plus an exact Euclidean nearest-neighbour index and
// Precision@1 / mAP@R evaluation.

#ifndef PRIVDISTILL_RETRIEVAL_HPP_
#define PRIVDISTILL_RETRIEVAL_HPP_

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "privdistill/cohort.hpp"
#include "privdistill/error.hpp"
#include "privdistill/identity.hpp"
#include "privdistill/io.hpp"
#include "privdistill/nn/adam.hpp"
#include "privdistill/nn/losses.hpp"
#include "privdistill/nn/network.hpp"
#include "privdistill/rng.hpp"

namespace privdistill::retrieval {

using nn::Matrix;
using nn::Vector;

inline constexpr int kEmbedDim = 32;

struct RetrievalModel {
  nn::Network encoder;  // d -> 64 -> 32

  static RetrievalModel Create(int data_dim, std::uint64_t seed) {
    return {nn::Network::Create(nn::Mlp({data_dim, 64, kEmbedDim}), seed)};
  }

  int data_dim() const { return encoder.input_dim(); }

  Vector Embed(const Vector& x) const {
    CheckDim(x.size(), data_dim(), "retrieval input");
    return encoder.Forward(x);
  }
  Matrix Embed(const Matrix& x) const {
    CheckDim(x.rows(), data_dim(), "retrieval input");
    return encoder.Forward(x);
  }

  nlohmann::json ToJson() const {
    return {{"format", "privdistill.retrieval/1"}, {"encoder", encoder.ToJson()}};
  }
  static RetrievalModel FromJson(const nlohmann::json& doc) {
    try {
      if (doc.at("format") != "privdistill.retrieval/1") {
        throw ParseError("unsupported retrieval format");
      }
      return {nn::Network::FromJson(doc.at("encoder"))};
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("retrieval checkpoint: ") + e.what());
    }
  }
  void Save(const std::filesystem::path& p) const { io::WriteJson(p, ToJson()); }
  static RetrievalModel Load(const std::filesystem::path& p) { return FromJson(io::ReadJson(p)); }
};

struct Neighbor {
  int id = 0;
  double distance = 0.0;

  bool operator==(const Neighbor&) const = default;
};

// Rows of `embeddings` (n x 32) align with `ids`.
struct EmbeddingIndex {
  Matrix embeddings;
  std::vector<int> ids;
  std::string source;

  std::size_t size() const { return ids.size(); }

  // Exact k-NN by Euclidean distance; ties go to the smaller id.
  std::vector<Neighbor> Nearest(const Vector& query, std::size_t k) const {
    if (k < 1 || k > ids.size()) {
      throw ConfigError("k=" + std::to_string(k) + " outside [1, " + std::to_string(ids.size()) + "]");
    }
    CheckDim(query.size(), embeddings.cols(), "retrieval query");
    std::vector<Neighbor> all(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      all[i] = {ids[i], (embeddings.row(static_cast<Eigen::Index>(i)).transpose() - query).norm()};
    }
    auto before = [](const Neighbor& a, const Neighbor& b) {
      return a.distance < b.distance || (a.distance == b.distance && a.id < b.id);
    };
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), before);
    all.resize(k);
    return all;
  }
};

inline EmbeddingIndex BuildIndex(const RetrievalModel& model,
                                 const std::vector<const cohort::PatientRecord*>& records,
                                 std::string source = "train") {
  if (records.empty()) throw ConfigError("cannot index an empty record set");
  Matrix x(model.data_dim(), static_cast<Eigen::Index>(records.size()));
  EmbeddingIndex index;
  index.source = std::move(source);
  for (std::size_t i = 0; i < records.size(); ++i) {
    CheckDim(records[i]->x.size(), model.data_dim(), "indexed record");
    x.col(static_cast<Eigen::Index>(i)) = records[i]->x;
    index.ids.push_back(records[i]->record_id);
  }
  index.embeddings = model.Embed(x).transpose();
  return index;
}

inline void SaveIndex(const EmbeddingIndex& index, const std::filesystem::path& path) {
  io::CsvWriter csv(path);
  std::vector<std::string> header{"id"};
  for (Eigen::Index j = 0; j < index.embeddings.cols(); ++j) header.push_back("e" + std::to_string(j));
  csv.Row(header);
  for (std::size_t i = 0; i < index.ids.size(); ++i) {
    std::vector<std::string> row{std::to_string(index.ids[i])};
    for (Eigen::Index j = 0; j < index.embeddings.cols(); ++j) {
      row.push_back(io::FormatDouble(index.embeddings(static_cast<Eigen::Index>(i), j)));
    }
    csv.Row(row);
  }
}

inline EmbeddingIndex LoadIndex(const std::filesystem::path& path, std::string source = "train") {
  const auto table = io::ReadCsv(path);
  EmbeddingIndex index;
  index.source = std::move(source);
  const auto dim = static_cast<Eigen::Index>(table.header.size()) - 1;
  index.embeddings.resize(static_cast<Eigen::Index>(table.rows.size()), dim);
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& f = table.rows[i];
    CheckDim(static_cast<long>(f.size()), static_cast<long>(table.header.size()), table.Where(i));
    index.ids.push_back(static_cast<int>(io::ParseInt(f[0], table.Where(i))));
    for (Eigen::Index j = 0; j < dim; ++j) {
      index.embeddings(static_cast<Eigen::Index>(i), j) =
          io::ParseDouble(f[static_cast<std::size_t>(j + 1)], table.Where(i));
    }
  }
  return index;
}

struct TrainConfig {
  double margin = 1.0;
  int epochs = 30;
  int pairs_per_epoch = 4096;
  int batch_size = 64;
  double learning_rate = 1e-3;
  identity::PairSamplingConfig sampling;

  // Returns a warning for configurations that are valid but degenerate.
  std::string Validate() const {
    if (margin < 0.0) throw ConfigError("retrieval margin must be non-negative");
    if (epochs < 0 || pairs_per_epoch < 1 || batch_size < 1) {
      throw ConfigError("retrieval epochs/pairs/batch invalid");
    }
    if (!(learning_rate > 0.0)) throw ConfigError("retrieval learning rate must be positive");
    if (margin == 0.0) {
      return "retrieval margin is 0: negative pairs contribute no loss and embeddings collapse";
    }
    return {};
  }
};

struct RetrievalTrainResult {
  RetrievalModel model;
  std::vector<double> epoch_losses;
  std::string warning;
};

struct ContrastiveGradients {
  double loss = 0.0;
  Vector encoder;
};

inline ContrastiveGradients ContrastiveLossAndGradients(const RetrievalModel& model,
                                                        const identity::PairBatch& batch, double margin) {
  nn::ForwardCache c1, c2;
  const Matrix e1 = model.encoder.Forward(batch.first, &c1);
  const Matrix e2 = model.encoder.Forward(batch.second, &c2);
  const auto loss = nn::MarginContrastive(e1, e2, batch.same, margin);
  return {loss.value, model.encoder.Backward(c1, loss.grad_first).params +
                          model.encoder.Backward(c2, loss.grad_second).params};
}

inline double ContrastiveStep(RetrievalModel& model, nn::AdamState& state,
                              const identity::PairBatch& batch, double margin) {
  const auto g = ContrastiveLossAndGradients(model, batch, margin);
  nn::AdamStep(model.encoder.mutable_params(), g.encoder, state);
  return g.loss;
}

inline RetrievalTrainResult TrainRetrieval(const std::vector<const cohort::PatientRecord*>& records,
                                           const TrainConfig& cfg, RngStream& rng) {
  RetrievalTrainResult result{RetrievalModel{}, {}, cfg.Validate()};
  identity::PairSampler sampler(records, cfg.sampling);
  result.model = RetrievalModel::Create(static_cast<int>(records.front()->x.size()), rng.NextU64());
  nn::AdamState state(result.model.encoder.param_count(), nn::AdamOptions{cfg.learning_rate});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double total = 0.0;
    int seen = 0;
    while (seen < cfg.pairs_per_epoch) {
      const int n = std::min(cfg.batch_size, cfg.pairs_per_epoch - seen);
      std::vector<identity::RecordPair> pairs;
      for (int i = 0; i < n; ++i) pairs.push_back(sampler.Next(rng));
      const double loss =
          ContrastiveStep(result.model, state, identity::GatherPairs(records, pairs), cfg.margin);
      if (!std::isfinite(loss)) {
        throw TrainingError("non-finite retrieval loss at epoch " + std::to_string(epoch));
      }
      total += loss * n;
      seen += n;
    }
    result.epoch_losses.push_back(total / seen);
  }
  return result;
}

// AP@R for one query: `relevant` flags the ranked gallery, R is the number
// of relevant items in the whole gallery. Positions past R contribute 0.
inline double AveragePrecisionAtR(const std::vector<bool>& relevant) {
  const auto r = static_cast<std::size_t>(std::count(relevant.begin(), relevant.end(), true));
  if (r == 0) throw ConfigError("AP@R needs at least one relevant item");
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < r && i < relevant.size(); ++i) {
    if (relevant[i]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(r);
}

struct RetrievalEval {
  double precision_at_1 = 0.0;
  double map_at_r = 0.0;
  std::size_t queries = 0;
  std::size_t skipped_queries = 0;  // no same-patient item in the gallery
};

// Ranked relevance flags per query from a distance matrix. Query i's gallery
// is every other item; ties rank by smaller id.
inline RetrievalEval EvaluateRanking(const Matrix& distances, const std::vector<int>& ids,
                                     const std::vector<int>& groups) {
  const std::size_t n = ids.size();
  RetrievalEval e;
  double p1 = 0.0, map = 0.0;
  for (std::size_t q = 0; q < n; ++q) {
    std::vector<std::size_t> gallery;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != q) gallery.push_back(j);
    }
    std::sort(gallery.begin(), gallery.end(), [&](std::size_t a, std::size_t b) {
      const double da = distances(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(a));
      const double db = distances(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(b));
      return da < db || (da == db && ids[a] < ids[b]);
    });
    std::vector<bool> rel;
    for (std::size_t j : gallery) rel.push_back(groups[j] == groups[q]);
    if (std::find(rel.begin(), rel.end(), true) == rel.end()) {
      ++e.skipped_queries;
      continue;
    }
    p1 += rel.front() ? 1.0 : 0.0;
    map += AveragePrecisionAtR(rel);
    ++e.queries;
  }
  if (e.queries == 0) throw ConfigError("retrieval evaluation has no valid query");
  e.precision_at_1 = p1 / static_cast<double>(e.queries);
  e.map_at_r = map / static_cast<double>(e.queries);
  return e;
}

// Every record is a query against all other records of the set; queries
// without a same-patient gallery item are skipped and counted.
inline RetrievalEval EvalRetrieval(const RetrievalModel& model,
                                   const std::vector<const cohort::PatientRecord*>& records) {
  const auto index = BuildIndex(model, records, "eval");
  const auto n = static_cast<Eigen::Index>(records.size());
  Matrix dist(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      dist(i, j) = (index.embeddings.row(i) - index.embeddings.row(j)).norm();
    }
  }
  std::vector<int> groups;
  for (const auto* r : records) groups.push_back(r->patient_id);
  return EvaluateRanking(dist, index.ids, groups);
}

}  // namespace privdistill::retrieval

#endif  // PRIVDISTILL_RETRIEVAL_HPP_
