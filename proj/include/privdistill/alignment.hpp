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

// Two-tower alignment scorer: s_align is the cosine similarity between a
// record's data-tower embedding and its label vector's condition-tower
// embedding. Trained with a symmetric InfoNCE loss on unit-normalized
// embeddings.

#ifndef PRIVDISTILL_ALIGNMENT_HPP_
#define PRIVDISTILL_ALIGNMENT_HPP_

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "privdistill/cohort.hpp"
#include "privdistill/error.hpp"
#include "privdistill/io.hpp"
#include "privdistill/nn/adam.hpp"
#include "privdistill/nn/losses.hpp"
#include "privdistill/nn/network.hpp"
#include "privdistill/rng.hpp"

namespace privdistill::alignment {

using nn::Matrix;
using nn::Vector;

inline constexpr int kEmbedDim = 16;

struct AlignModel {
  nn::Network data_tower;  // d -> 32 -> 16
  nn::Network cond_tower;  // L -> 16 -> 16
  double temperature = 0.1;

  static AlignModel Create(int data_dim, int label_dim, double temperature, std::uint64_t seed) {
    if (!(temperature > 0.0)) throw ConfigError("alignment temperature must be positive");
    return {nn::Network::Create(nn::Mlp({data_dim, 32, kEmbedDim}), DeriveSeed(seed, {1})),
            nn::Network::Create(nn::Mlp({label_dim, 16, kEmbedDim}), DeriveSeed(seed, {2})),
            temperature};
  }

  int data_dim() const { return data_tower.input_dim(); }
  int label_dim() const { return cond_tower.input_dim(); }

  // Cosine similarity per column; throws on a zero-norm embedding.
  Vector Scores(const Matrix& x, const Matrix& y) const {
    CheckDim(x.rows(), data_dim(), "alignment data input");
    CheckDim(y.rows(), label_dim(), "alignment condition input");
    CheckDim(y.cols(), x.cols(), "alignment batch");
    const Matrix a = data_tower.Forward(x);
    const Matrix c = cond_tower.Forward(y);
    Vector s(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double na = a.col(j).norm();
      const double nc = c.col(j).norm();
      if (na == 0.0 || nc == 0.0) throw NumericError("degenerate (zero-norm) alignment embedding");
      s[j] = std::clamp(a.col(j).dot(c.col(j)) / (na * nc), -1.0, 1.0);
    }
    return s;
  }

  double Score(const Vector& x, const Vector& y) const { return Scores(Matrix(x), Matrix(y))[0]; }

  nlohmann::json ToJson() const {
    return {{"format", "privdistill.align/1"},
            {"temperature", temperature},
            {"data_tower", data_tower.ToJson()},
            {"cond_tower", cond_tower.ToJson()}};
  }
  static AlignModel FromJson(const nlohmann::json& doc) {
    try {
      if (doc.at("format") != "privdistill.align/1") throw ParseError("unsupported alignment format");
      AlignModel m{nn::Network::FromJson(doc.at("data_tower")),
                   nn::Network::FromJson(doc.at("cond_tower")), doc.at("temperature").get<double>()};
      CheckDim(m.cond_tower.output_dim(), m.data_tower.output_dim(), "alignment tower outputs");
      return m;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("alignment checkpoint: ") + e.what());
    }
  }
  void Save(const std::filesystem::path& p) const { io::WriteJson(p, ToJson()); }
  static AlignModel Load(const std::filesystem::path& p) { return FromJson(io::ReadJson(p)); }
};

struct TrainConfig {
  int epochs = 60;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double temperature = 0.1;

  void Validate() const {
    if (!(temperature > 0.0)) throw ConfigError("alignment temperature must be positive");
    if (batch_size < 2) throw ConfigError("alignment batch size must be at least 2");
    if (epochs < 0) throw ConfigError("alignment epochs must be non-negative");
    if (!(learning_rate > 0.0)) throw ConfigError("alignment learning rate must be positive");
  }
};

// Column-wise unit normalization and its backward map. During training a
// zero column (e.g. the all-zero label vector before the output bias has
// moved) maps to a zero vector and passes no gradient.
struct Normalized {
  Matrix unit;
  Vector norms;
};

inline Normalized NormalizeColumns(const Matrix& e) {
  Normalized n{e, e.colwise().norm().transpose()};
  for (Eigen::Index j = 0; j < e.cols(); ++j) {
    if (n.norms[j] > 0.0) n.unit.col(j) /= n.norms[j];
  }
  return n;
}

inline Matrix NormalizeBackward(const Normalized& n, const Matrix& d_unit) {
  Matrix d(d_unit.rows(), d_unit.cols());
  for (Eigen::Index j = 0; j < d.cols(); ++j) {
    if (n.norms[j] == 0.0) {
      d.col(j).setZero();
      continue;
    }
    const Vector u = n.unit.col(j);
    d.col(j) = (d_unit.col(j) - u * u.dot(d_unit.col(j))) / n.norms[j];
  }
  return d;
}

struct AlignGradients {
  double loss = 0.0;
  Vector data_tower;
  Vector cond_tower;
};

inline AlignGradients AlignLossAndGradients(const AlignModel& m, const Matrix& x, const Matrix& y) {
  nn::ForwardCache ca, cc;
  const auto na = NormalizeColumns(m.data_tower.Forward(x, &ca));
  const auto nc = NormalizeColumns(m.cond_tower.Forward(y, &cc));
  const auto loss = nn::InfoNce(na.unit, nc.unit, m.temperature, /*symmetric=*/true);
  return {loss.value, m.data_tower.Backward(ca, NormalizeBackward(na, loss.grad_first)).params,
          m.cond_tower.Backward(cc, NormalizeBackward(nc, loss.grad_second)).params};
}

struct AlignTrainResult {
  AlignModel model;
  std::vector<double> epoch_losses;
};

inline AlignTrainResult TrainAlign(const std::vector<const cohort::PatientRecord*>& records,
                                   const TrainConfig& cfg, RngStream& rng) {
  cfg.Validate();
  if (records.size() < 2) throw ConfigError("alignment training needs at least 2 records");
  const int d = static_cast<int>(records.front()->x.size());
  const int L = static_cast<int>(records.front()->y.size());
  if (L == 0) throw ConfigError("alignment training needs label vectors");
  AlignTrainResult result{AlignModel::Create(d, L, cfg.temperature, rng.NextU64()), {}};
  auto& m = result.model;
  const nn::AdamOptions opts{cfg.learning_rate};
  nn::AdamState sa(m.data_tower.param_count(), opts), sc(m.cond_tower.param_count(), opts);
  std::vector<std::size_t> order(records.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    rng.Shuffle(order);
    double total = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start + 2 <= order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      if (end - start < 2) break;
      Matrix x(d, static_cast<Eigen::Index>(end - start)), y(L, static_cast<Eigen::Index>(end - start));
      for (std::size_t i = start; i < end; ++i) {
        x.col(static_cast<Eigen::Index>(i - start)) = records[order[i]]->x;
        y.col(static_cast<Eigen::Index>(i - start)) = records[order[i]]->y;
      }
      const auto g = AlignLossAndGradients(m, x, y);
      if (!std::isfinite(g.loss)) {
        throw TrainingError("non-finite alignment loss at epoch " + std::to_string(epoch));
      }
      nn::AdamStep(m.data_tower.mutable_params(), g.data_tower, sa);
      nn::AdamStep(m.cond_tower.mutable_params(), g.cond_tower, sc);
      total += g.loss * static_cast<double>(end - start);
      seen += end - start;
    }
    result.epoch_losses.push_back(seen > 0 ? total / static_cast<double>(seen) : 0.0);
  }
  return result;
}

struct AlignmentGap {
  double matched_mean = 0.0;
  double mismatched_mean = 0.0;
};

// Matched pairs (x_i, y_i) versus mismatched pairs (x_i, y_j) where y_j is
// the label vector of another record with different labels.
inline AlignmentGap MeasureAlignmentGap(const AlignModel& m,
                                        const std::vector<const cohort::PatientRecord*>& records,
                                        RngStream& rng) {
  double matched = 0.0, mismatched = 0.0;
  std::size_t n_matched = 0, n_mismatched = 0;
  for (const auto* r : records) {
    matched += m.Score(r->x, r->y);
    ++n_matched;
    for (int attempt = 0; attempt < 32; ++attempt) {
      const auto* other = records[rng.Index(records.size())];
      if (other->y != r->y) {
        mismatched += m.Score(r->x, other->y);
        ++n_mismatched;
        break;
      }
    }
  }
  if (n_mismatched == 0) throw ConfigError("no mismatched label pairs available");
  return {matched / static_cast<double>(n_matched), mismatched / static_cast<double>(n_mismatched)};
}

struct AlignRow {
  std::size_t record_id = 0;
  int prompt_index = 0;
  double s_align = 0.0;
};

inline void WriteAlignDump(const std::filesystem::path& path, const std::vector<AlignRow>& rows) {
  io::CsvWriter csv(path);
  csv.Row({"record_id", "prompt_index", "s_align"});
  for (const auto& r : rows) {
    csv.Row({std::to_string(r.record_id), std::to_string(r.prompt_index), io::FormatDouble(r.s_align)});
  }
}

}  // namespace privdistill::alignment

#endif  // PRIVDISTILL_ALIGNMENT_HPP_
