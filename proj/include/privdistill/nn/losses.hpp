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

// Loss functions over column-major batches. Every loss is averaged over the
// batch and returns exact gradients with respect to its inputs.

#ifndef PRIVDISTILL_NN_LOSSES_HPP_
#define PRIVDISTILL_NN_LOSSES_HPP_

#include <algorithm>
#include <cmath>
#include <vector>

#include "privdistill/error.hpp"
#include "privdistill/nn/network.hpp"

namespace privdistill::nn {

struct LossValue {
  double value = 0.0;
  Matrix grad;
};

struct PairLossValue {
  double value = 0.0;
  Matrix grad_first;
  Matrix grad_second;
};

struct ScoreLossValue {
  double value = 0.0;
  Vector grad_pos;
  Vector grad_neg;
};

inline void RequireNonEmpty(Eigen::Index n, const char* what) {
  if (n == 0) throw ConfigError(std::string(what) + ": empty batch");
}

// Mean squared error over all entries.
inline LossValue Mse(const Matrix& pred, const Matrix& target) {
  RequireNonEmpty(pred.size(), "mse");
  CheckDim(pred.rows(), target.rows(), "mse rows");
  CheckDim(pred.cols(), target.cols(), "mse cols");
  const Matrix diff = pred - target;
  const double n = static_cast<double>(diff.size());
  return {diff.squaredNorm() / n, (2.0 / n) * diff};
}

// Binary cross-entropy on logits, mean over all entries.
inline LossValue BceLogits(const Matrix& logits, const Matrix& labels) {
  RequireNonEmpty(logits.size(), "bce_logits");
  CheckDim(logits.rows(), labels.rows(), "bce rows");
  CheckDim(logits.cols(), labels.cols(), "bce cols");
  const double n = static_cast<double>(logits.size());
  LossValue out{0.0, Matrix(logits.rows(), logits.cols())};
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      const double z = logits(i, j);
      const double y = labels(i, j);
      out.value += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
      out.grad(i, j) = (Sigmoid(z) - y) / n;
    }
  }
  out.value /= n;
  return out;
}

// Margin contrastive loss per pair: d^2 when same, max(0, margin - d)^2
// otherwise, with d the Euclidean distance between the two embeddings.
inline PairLossValue MarginContrastive(const Matrix& first, const Matrix& second,
                                       const std::vector<bool>& same, double margin) {
  RequireNonEmpty(first.cols(), "margin_contrastive");
  CheckDim(first.rows(), second.rows(), "margin_contrastive rows");
  CheckDim(first.cols(), second.cols(), "margin_contrastive cols");
  CheckDim(static_cast<long>(same.size()), first.cols(), "margin_contrastive labels");
  if (margin < 0.0) throw ConfigError("margin must be non-negative");
  const double n = static_cast<double>(first.cols());
  PairLossValue out{0.0, Matrix::Zero(first.rows(), first.cols()),
                    Matrix::Zero(first.rows(), first.cols())};
  for (Eigen::Index j = 0; j < first.cols(); ++j) {
    const Vector diff = first.col(j) - second.col(j);
    if (same[static_cast<std::size_t>(j)]) {
      out.value += diff.squaredNorm();
      out.grad_first.col(j) = (2.0 / n) * diff;
    } else {
      const double d = diff.norm();
      const double gap = margin - d;
      if (gap > 0.0) {
        out.value += gap * gap;
        // d/de1 (m - d)^2 = -2 (m - d) (e1 - e2) / d; zero subgradient at d = 0.
        if (d > 1e-12) out.grad_first.col(j) = (-2.0 * gap / (d * n)) * diff;
      }
    }
    out.grad_second.col(j) = -out.grad_first.col(j);
  }
  out.value /= n;
  return out;
}

// InfoNCE over paired columns of `first` and `second`: column i of each is
// a positive pair, every other column a negative. Logits are dot products
// divided by the temperature. With `symmetric`, the row-wise and
// column-wise softmax losses are averaged.
inline PairLossValue InfoNce(const Matrix& first, const Matrix& second, double temperature,
                             bool symmetric = true) {
  RequireNonEmpty(first.cols(), "info_nce");
  CheckDim(first.rows(), second.rows(), "info_nce rows");
  CheckDim(first.cols(), second.cols(), "info_nce cols");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  const Eigen::Index b = first.cols();
  const Matrix logits = (first.transpose() * second) / temperature;

  auto softmax_loss = [b](const Matrix& s, Matrix& d_s) {
    // Row i: -log softmax(s_i)_i.
    double value = 0.0;
    d_s.resize(b, b);
    for (Eigen::Index i = 0; i < b; ++i) {
      const double mx = s.row(i).maxCoeff();
      const Eigen::RowVectorXd e = (s.row(i).array() - mx).exp().matrix();
      const double z = e.sum();
      value += std::log(z) + mx - s(i, i);
      d_s.row(i) = e / z;
      d_s(i, i) -= 1.0;
    }
    d_s /= static_cast<double>(b);
    return value / static_cast<double>(b);
  };

  Matrix d_rows;
  double value = softmax_loss(logits, d_rows);
  Matrix d_logits = d_rows;
  if (symmetric) {
    Matrix d_cols_t;
    const double col_value = softmax_loss(logits.transpose(), d_cols_t);
    value = 0.5 * (value + col_value);
    d_logits = 0.5 * (d_rows + d_cols_t.transpose());
  }
  d_logits /= temperature;
  return {value, second * d_logits.transpose(), first * d_logits};
}

// Squared-hinge pairwise AUC surrogate: mean over all (pos, neg) pairs of
// max(0, margin - (pos - neg))^2.
inline ScoreLossValue PairwiseAucSurrogate(const Vector& pos, const Vector& neg, double margin) {
  RequireNonEmpty(pos.size(), "pairwise_auc_surrogate positives");
  RequireNonEmpty(neg.size(), "pairwise_auc_surrogate negatives");
  if (margin < 0.0) throw ConfigError("margin must be non-negative");
  const double n = static_cast<double>(pos.size() * neg.size());
  ScoreLossValue out{0.0, Vector::Zero(pos.size()), Vector::Zero(neg.size())};
  for (Eigen::Index i = 0; i < pos.size(); ++i) {
    for (Eigen::Index j = 0; j < neg.size(); ++j) {
      const double gap = margin - (pos[i] - neg[j]);
      if (gap > 0.0) {
        out.value += gap * gap;
        out.grad_pos[i] -= 2.0 * gap / n;
        out.grad_neg[j] += 2.0 * gap / n;
      }
    }
  }
  out.value /= n;
  return out;
}

}  // namespace privdistill::nn

#endif  // PRIVDISTILL_NN_LOSSES_HPP_
