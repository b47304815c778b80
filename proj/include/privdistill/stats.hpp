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

#ifndef PRIVDISTILL_STATS_HPP_
#define PRIVDISTILL_STATS_HPP_

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "privdistill/error.hpp"
#include "privdistill/nn/network.hpp"

namespace privdistill::metrics {

using nn::Matrix;
using nn::Vector;

// Mann-Whitney AUC with midranks for ties: the probability that a random
// positive outscores a random negative, ties counting one half.
inline double AucRank(const std::vector<double>& scores, const std::vector<bool>& labels) {
  CheckDim(static_cast<long>(labels.size()), static_cast<long>(scores.size()), "auc labels");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (bool l : labels) n_pos += l ? 1 : 0;
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ConfigError("AUC is undefined for a single-class input");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]]) pos_rank_sum += midrank;
    }
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

struct GaussianMoments {
  Vector mean;
  Matrix covariance;
};

// Sample mean and unbiased covariance of the columns of `samples` (dim x n).
inline GaussianMoments ComputeMoments(const Matrix& samples) {
  if (samples.cols() < 2) throw ConfigError("moments need at least 2 samples");
  GaussianMoments m;
  m.mean = samples.rowwise().mean();
  const Matrix centered = samples.colwise() - m.mean;
  m.covariance = centered * centered.transpose() / static_cast<double>(samples.cols() - 1);
  return m;
}

inline GaussianMoments ComputeMoments(const std::vector<Vector>& samples) {
  if (samples.size() < 2) throw ConfigError("moments need at least 2 samples");
  Matrix m(samples.front().size(), static_cast<Eigen::Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CheckDim(samples[i].size(), m.rows(), "moment sample");
    m.col(static_cast<Eigen::Index>(i)) = samples[i];
  }
  return ComputeMoments(m);
}

namespace detail {

inline constexpr double kEigenFloor = -1e-10;

// Symmetric PSD square root; eigenvalues in [kEigenFloor, 0) clamp to 0.
inline Matrix PsdSqrt(const Matrix& a, const char* what) {
  const Matrix sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  if (es.info() != Eigen::Success) throw NumericError(std::string(what) + ": eigensolver failed");
  Vector ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < kEigenFloor) {
      throw NumericError(std::string(what) + " is not positive semidefinite (eigenvalue " +
                         std::to_string(ev[i]) + ")");
    }
    ev[i] = std::sqrt(std::max(ev[i], 0.0));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

// ||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1^{1/2} S2 S1^{1/2})^{1/2}).
inline double FrechetDistance(const Vector& mu1, const Matrix& sigma1, const Vector& mu2,
                              const Matrix& sigma2) {
  const auto n = mu1.size();
  CheckDim(mu2.size(), n, "frechet mean");
  CheckDim(sigma1.rows(), n, "frechet covariance 1");
  CheckDim(sigma1.cols(), n, "frechet covariance 1");
  CheckDim(sigma2.rows(), n, "frechet covariance 2");
  CheckDim(sigma2.cols(), n, "frechet covariance 2");
  const Matrix root1 = detail::PsdSqrt(sigma1, "covariance 1");
  detail::PsdSqrt(sigma2, "covariance 2");
  const Matrix inner = root1 * sigma2 * root1;
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (inner + inner.transpose()),
                                           Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericError("frechet: eigensolver failed");
  double trace_sqrt = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double ev = es.eigenvalues()[i];
    if (ev < detail::kEigenFloor) {
      throw NumericError("frechet: covariance product has negative eigenvalue " +
                         std::to_string(ev));
    }
    trace_sqrt += std::sqrt(std::max(ev, 0.0));
  }
  const double fd =
      (mu1 - mu2).squaredNorm() + sigma1.trace() + sigma2.trace() - 2.0 * trace_sqrt;
  if (fd < -1e-8) throw NumericError("frechet distance is negative: " + std::to_string(fd));
  return std::max(fd, 0.0);
}

inline double FrechetDistance(const GaussianMoments& a, const GaussianMoments& b) {
  return FrechetDistance(a.mean, a.covariance, b.mean, b.covariance);
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};

inline MeanStd Summarize(const std::vector<double>& v) {
  MeanStd s;
  s.count = v.size();
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.std = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  return s;
}

}  // namespace privdistill::metrics

#endif  // PRIVDISTILL_STATS_HPP_
