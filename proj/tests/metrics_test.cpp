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

#include <Eigen/Eigenvalues>
#include <filesystem>

#include "oracles.hpp"
#include "privdistill.hpp"

namespace privdistill {
namespace {

using nn::Matrix;
using nn::Vector;

Matrix RandomSpd(RngStream& rng, int n, double jitter = 0.0) {
  Matrix a(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) a(i, j) = rng.Normal();
  }
  return a * a.transpose() / n + jitter * Matrix::Identity(n, n);
}

// tr((S1 S2)^{1/2}) from the (real, non-negative) eigenvalues of the
// non-symmetric product.
double TraceSqrtOfProduct(const Matrix& s1, const Matrix& s2) {
  Eigen::EigenSolver<Matrix> es(s1 * s2, false);
  double t = 0.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) t += std::sqrt(std::max(0.0, es.eigenvalues()[i].real()));
  return t;
}

TEST(ReIdRatio, CountsAtOrAboveDelta) {
  const std::vector<double> s{0.9, 0.4, 0.6, 0.1};
  EXPECT_EQ(metrics::RatioAtLeast(s, 0.5), 0.5);
  EXPECT_EQ(metrics::RatioAtLeast(s, 1.0), 0.0);
  EXPECT_EQ(metrics::RatioAtLeast(s, 0.0), 1.0);
  EXPECT_EQ(metrics::RatioAtLeast(s, 0.6), 0.5);
  EXPECT_THROW(metrics::RatioAtLeast({}, 0.5), ConfigError);
}

TEST(ReIdRatio, EndpointsWithRealScorer) {
  const auto world = cohort::GenerateWorld({}, 2);
  RngStream g(2);
  const auto c = cohort::GenerateCohort(world, 10, g);
  const auto prompts = diffusion::TrainingPrompts(c);
  const auto reid = identity::ReIdModel::Create(8, 1);
  filtering::MatchContext ctx{&c, &prompts, &reid, nullptr, nullptr, identity::SimilarityKind::kReIdScore, 1.0};
  std::vector<diffusion::SynthRecord> samples;
  for (const auto& p : prompts) samples.push_back({p.index, p.y, c.RecordById(p.source_record_id).x * 0.5, 0});
  EXPECT_EQ(metrics::ReIdRatio(samples, ctx, 0.0, filtering::MatchMode::kSource), 1.0);
  EXPECT_EQ(metrics::ReIdRatio(samples, ctx, 1.0, filtering::MatchMode::kSource), 0.0);
  EXPECT_THROW(metrics::ReIdRatio(samples, ctx, 1.1, filtering::MatchMode::kSource), ConfigError);
  EXPECT_THROW(metrics::ReIdRatio({}, ctx, 0.5, filtering::MatchMode::kSource), ConfigError);
}

TEST(Sweep, GridAndMonotone) {
  const auto grid = metrics::DefaultDeltaGrid();
  ASSERT_EQ(grid.size(), 18u);
  EXPECT_DOUBLE_EQ(grid.front(), 0.05);
  EXPECT_DOUBLE_EQ(grid.back(), 0.90);
  RngStream rng(3);
  std::vector<double> s;
  for (int i = 0; i < 500; ++i) s.push_back(rng.Uniform());
  const auto curve = metrics::SweepDelta(s, grid);
  for (std::size_t i = 1; i < curve.size(); ++i) EXPECT_LE(curve[i].ratio, curve[i - 1].ratio);
  auto audit = grid;
  audit.insert(audit.begin(), 0.0);
  audit.push_back(1.0);
  const auto a = metrics::SweepDelta(s, audit);
  EXPECT_EQ(a.front().ratio, 1.0);
  EXPECT_EQ(a.back().ratio, 0.0);
}

TEST(Sweep, SingleSampleStep) {
  const auto curve = metrics::SweepDelta({0.5}, metrics::DefaultDeltaGrid());
  for (const auto& p : curve) EXPECT_EQ(p.ratio, p.delta <= 0.5 ? 1.0 : 0.0) << p.delta;
  EXPECT_THROW(metrics::SweepDelta({0.5}, {0.5, 0.1}), ConfigError);
  EXPECT_THROW(metrics::SweepDelta({0.5}, {}), ConfigError);
}

TEST(Moments, HandValues) {
  Matrix pts(2, 2);
  pts << 0, 2, 0, 0;
  const auto m = metrics::ComputeMoments(pts);
  EXPECT_EQ(m.mean, (Vector(2) << 1, 0).finished());
  Matrix want(2, 2);
  want << 2, 0, 0, 0;
  EXPECT_EQ(m.covariance, want);
  const auto same = metrics::ComputeMoments(Matrix::Constant(3, 5, 0.7));
  EXPECT_TRUE((same.covariance.array() == 0.0).all());
  EXPECT_THROW(metrics::ComputeMoments(Matrix::Zero(3, 1)), ConfigError);
}

TEST(Moments, MonteCarloStandardNormal) {
  RngStream rng(4);
  Matrix x(3, 10000);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    for (int i = 0; i < 3; ++i) x(i, j) = rng.Normal();
  }
  const auto m = metrics::ComputeMoments(x);
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(m.mean[i], 0.0, 0.05);
    EXPECT_NEAR(m.covariance(i, i), 1.0, 0.1);
  }
}

TEST(Frechet, ClosedForms) {
  const Matrix i2 = Matrix::Identity(2, 2);
  EXPECT_NEAR(metrics::FrechetDistance(Vector::Zero(2), i2, (Vector(2) << 1, 0).finished(), i2), 1.0, 1e-12);
  EXPECT_NEAR(metrics::FrechetDistance(Vector::Zero(1), Matrix::Constant(1, 1, 4.0), Vector::Zero(1),
                                       Matrix::Constant(1, 1, 1.0)),
              1.0, 1e-12);
}

TEST(Frechet, IdentityAndSymmetryOnRandomGaussians) {
  RngStream rng(5);
  for (int k = 0; k < 50; ++k) {
    const int n = static_cast<int>(rng.UniformInt(1, 8));
    const Matrix s1 = RandomSpd(rng, n), s2 = RandomSpd(rng, n, 0.1);
    Vector m1(n), m2(n);
    for (int i = 0; i < n; ++i) {
      m1[i] = rng.Normal();
      m2[i] = rng.Normal();
    }
    EXPECT_LE(metrics::FrechetDistance(m1, s1, m1, s1), 1e-8);
    const double ab = metrics::FrechetDistance(m1, s1, m2, s2);
    EXPECT_NEAR(ab, metrics::FrechetDistance(m2, s2, m1, s1), 1e-8);
    const double oracle = (m1 - m2).squaredNorm() + s1.trace() + s2.trace() - 2.0 * TraceSqrtOfProduct(s1, s2);
    EXPECT_NEAR(ab, oracle, 1e-7 * std::max(1.0, oracle));
  }
}

TEST(Frechet, CommutingCovariancesReduce) {
  // Diagonal covariances: the trace term is sum (sqrt a - sqrt b)^2.
  const Vector a = (Vector(3) << 1.0, 4.0, 0.25).finished();
  const Vector b = (Vector(3) << 9.0, 1.0, 0.25).finished();
  const double want = 0.0 + (1 - 3) * (1 - 3) + (2 - 1) * (2 - 1) + 0.0;
  EXPECT_NEAR(metrics::FrechetDistance(Vector::Zero(3), a.asDiagonal().toDenseMatrix(), Vector::Zero(3),
                                       b.asDiagonal().toDenseMatrix()),
              want, 1e-12);
}

TEST(Frechet, NonPsdRejected) {
  Matrix bad = Matrix::Identity(2, 2);
  bad(1, 1) = -0.5;
  EXPECT_THROW(metrics::FrechetDistance(Vector::Zero(2), bad, Vector::Zero(2), Matrix::Identity(2, 2)), NumericError);
  // Tiny negative eigenvalues from round-off are clamped.
  Matrix almost = Matrix::Zero(2, 2);
  almost(0, 0) = 1.0;
  almost(1, 1) = -1e-12;
  EXPECT_NO_THROW(metrics::FrechetDistance(Vector::Zero(2), almost, Vector::Zero(2), Matrix::Identity(2, 2)));
}

TEST(Auc, SimpleCases) {
  EXPECT_EQ(metrics::AucRank({0.1, 0.2, 0.8, 0.9}, {false, false, true, true}), 1.0);
  EXPECT_EQ(metrics::AucRank({0.1, 0.2, 0.8, 0.9}, {true, true, false, false}), 0.0);
  EXPECT_EQ(metrics::AucRank({0.3, 0.3, 0.3, 0.3}, {true, false, true, false}), 0.5);
  EXPECT_THROW(metrics::AucRank({0.1, 0.2}, {true, true}), ConfigError);
}

TEST(Auc, ToyThreeByThree) {
  const std::vector<double> s{0.2, 0.7, 0.5, 0.5, 0.1, 0.9};
  const std::vector<bool> y{true, true, true, false, false, false};
  EXPECT_EQ(metrics::AucRank(s, y), testing::BruteForceAuc(s, y));
  EXPECT_DOUBLE_EQ(metrics::AucRank(s, y), (0 + 1 + 0 + 1 + 1 + 0 + 0.5 + 1 + 0) / 9.0);
}

TEST(Auc, MatchesPairCountingOnRandomInstances) {
  RngStream rng(6);
  for (int k = 0; k < 100; ++k) {
    const auto n = static_cast<std::size_t>(rng.UniformInt(2, 50));
    std::vector<double> s;
    std::vector<bool> y;
    for (std::size_t i = 0; i < n; ++i) {
      s.push_back(static_cast<double>(rng.UniformInt(0, 8)) / 8.0);
      y.push_back(rng.Bernoulli(0.5));
    }
    y[0] = true;
    y[1] = false;
    EXPECT_EQ(metrics::AucRank(s, y), testing::BruteForceAuc(s, y)) << k;
  }
}

TEST(ClassifierEval, PerfectAndSkippedLabels) {
  Matrix scores(2, 4), labels(2, 4);
  scores << 0.9, 0.8, 0.1, 0.2, 0.5, 0.5, 0.5, 0.5;
  labels << 1, 1, 0, 0, 1, 1, 1, 1;
  const auto e = metrics::EvalClassifierScores(scores, labels);
  EXPECT_EQ(e.macro_auc, 1.0);
  ASSERT_EQ(e.per_label_auc.size(), 2u);
  EXPECT_FALSE(e.per_label_auc[1].has_value());
  labels.row(0).setOnes();
  EXPECT_THROW(metrics::EvalClassifierScores(scores, labels), ConfigError);
}

TEST(ClassifierEval, RandomScoresNearHalf) {
  RngStream rng(7);
  Matrix scores(3, 1000), labels(3, 1000);
  for (int j = 0; j < 1000; ++j) {
    for (int l = 0; l < 3; ++l) {
      scores(l, j) = rng.Uniform();
      labels(l, j) = rng.Bernoulli(0.4) ? 1 : 0;
    }
  }
  EXPECT_NEAR(metrics::EvalClassifierScores(scores, labels).macro_auc, 0.5, 0.05);
}

TEST(Classifier, HugeMarginKeepsLossPositive) {
  const nn::Network net = nn::Network::Create(nn::Mlp({2, 4, 1}), 1);
  Matrix x(2, 4), y(1, 4);
  x << 1, 1, -1, -1, 1, -1, 1, -1;
  y << 1, 1, 0, 0;
  EXPECT_GT(metrics::ClassifierLossAndGradients(net, x, y, true, 100.0).loss, 0.0);
  // A batch where one label is single-class contributes nothing to that label.
  y << 1, 1, 1, 1;
  EXPECT_EQ(metrics::ClassifierLossAndGradients(net, x, y, true, 1.0).used_labels, 0);
}

TEST(Classifier, LabelFreeDatasetRejected) {
  std::vector<diffusion::TrainingExample> data{{Vector::Zero(8), std::nullopt}};
  RngStream rng(1);
  EXPECT_THROW(metrics::TrainClassifier(data, {}, rng), ConfigError);
}

TEST(Classifier, TrainedOnRealSplitReference) {
  const pipeline::PipelineConfig cfg;
  const auto c = pipeline::BuildCohort(cfg);
  RngStream rng(11);
  const auto model = metrics::TrainClassifier(diffusion::ExamplesFromCohort(c, cohort::Split::kTrain), cfg.metrics.classifier, rng);
  EXPECT_EQ(model.stage1_losses.size(), 5u);
  EXPECT_EQ(model.stage2_losses.size(), 5u);
  const auto e = metrics::EvalClassifier(model, c.Records(cohort::Split::kTest));
  // Reference value for seed 7 and classifier stream 11: 0.99 or better.
  EXPECT_GE(e.macro_auc, 0.95);
  RngStream again(11);
  const auto twin = metrics::TrainClassifier(diffusion::ExamplesFromCohort(c, cohort::Split::kTrain), cfg.metrics.classifier, again);
  EXPECT_EQ(twin.net.params(), model.net.params());
}

TEST(Report, JsonCarriesNulls) {
  metrics::DatasetReport r;
  r.name = "x";
  r.samples = 3;
  r.reid_ratio_source = 0.25;
  r.classifier_per_label_auc = {0.7, std::nullopt};
  const auto j = metrics::DatasetReportToJson(r);
  EXPECT_EQ(j.at("reid_ratio_source"), 0.25);
  EXPECT_TRUE(j.at("reid_ratio_retrieval").is_null());
  EXPECT_TRUE(j.at("classifier_per_label_auc")[1].is_null());
}

TEST(Summaries, MeanStd) {
  const auto s = metrics::Summarize({1.0, 2.0, 3.0});
  EXPECT_DOUBLE_EQ(s.mean, 2.0);
  EXPECT_DOUBLE_EQ(s.std, 1.0);
  EXPECT_EQ(s.count, 3u);
}

TEST(Dumps, SweepAndScoresCsv) {
  const auto dir = std::filesystem::temp_directory_path();
  metrics::WriteSweep(dir / "privdistill_sweep.csv", metrics::SweepDelta({0.2, 0.7}, {0.1, 0.5}));
  const auto t = io::ReadCsv(dir / "privdistill_sweep.csv");
  EXPECT_EQ(t.header, (std::vector<std::string>{"delta", "ratio"}));
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(io::ParseDouble(t.rows[1][1], "r"), 0.5);
  metrics::WriteScores(dir / "privdistill_scores.csv", {0.3});
  EXPECT_EQ(io::ReadCsv(dir / "privdistill_scores.csv").header, (std::vector<std::string>{"record_id", "score"}));
}

}  // namespace
}  // namespace privdistill
