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

// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.
// Thresholds are fixed here; a failing criterion stays failing.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gradient_suite.hpp"
#include "oracles.hpp"
#include "privdistill.hpp"

namespace {

namespace fs = std::filesystem;
namespace pd = privdistill;
namespace pl = privdistill::pipeline;
using nlohmann::json;
using pd::nn::Matrix;
using pd::nn::Vector;

using Clock = std::chrono::steady_clock;

double Seconds(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string Fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

double Median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Verdict {
  bool pass = true;
  std::string detail;
};

struct Seeded {
  std::uint64_t seed = 0;
  fs::path dir;
  double seconds = 0.0;
  pl::EvalReport report;
};

// ---------------------------------------------------------------------------

Verdict GradientSuite() {
  const auto t0 = Clock::now();
  const auto results = pd::testing::RunGradientSuite(12);
  const double secs = Seconds(t0);
  Verdict v;
  double worst = 0.0;
  std::string worst_name;
  for (const auto& r : results) {
    if (r.configurations < 10 || !(r.worst < 1e-4)) v.pass = false;
    if (!(r.worst <= worst)) {
      worst = r.worst;
      worst_name = r.name;
    }
  }
  if (secs >= 30.0) v.pass = false;
  v.detail = std::to_string(results.size()) + " pairings x 12 configs, worst rel err " + Fmt(worst) + " (" +
             worst_name + "), " + Fmt(secs, 3) + " s";
  return v;
}

Verdict NoisingMarginal() {
  const auto schedule = pd::diffusion::MakeSchedule();
  const int T = schedule.steps;
  constexpr int kDraws = 10000;
  constexpr int kDim = 8;
  pd::RngStream rng(20260001);
  Vector x0(kDim);
  for (int i = 0; i < kDim; ++i) x0[i] = rng.Uniform(-0.9, 0.9);
  Verdict v;
  double worst_z = 0.0, worst_var = 0.0;
  for (const int t : {1, T / 2, T}) {
    Matrix xs(kDim, kDraws);
    for (int j = 0; j < kDraws; ++j) {
      Vector eps(kDim);
      for (int i = 0; i < kDim; ++i) eps[i] = rng.Normal();
      xs.col(j) = pd::diffusion::ForwardDiffuse(x0, t, eps, schedule);
    }
    const double a = schedule.alpha_bar(t);
    const double var = 1.0 - a;
    for (int i = 0; i < kDim; ++i) {
      const double mean = xs.row(i).mean();
      const double sample_var = (xs.row(i).array() - mean).square().sum() / (kDraws - 1);
      const double z = std::abs(mean - std::sqrt(a) * x0[i]) / std::sqrt(var / kDraws);
      const double rel = std::abs(sample_var - var) / var;
      worst_z = std::max(worst_z, z);
      worst_var = std::max(worst_var, rel);
      if (z > 4.0 || rel > 0.05) v.pass = false;
    }
  }
  v.detail = "t in {1," + std::to_string(T / 2) + "," + std::to_string(T) + "}, 1e4 draws: worst mean z " +
             Fmt(worst_z, 3) + " (<=4), worst variance rel err " + Fmt(worst_var, 3) + " (<=0.05)";
  return v;
}

Verdict OracleEquivalence() {
  pd::RngStream rng(20260003);
  int auc_bad = 0, map_bad = 0, nn_bad = 0, map_checked = 0;
  for (int inst = 0; inst < 100; ++inst) {
    // AUC with forced ties.
    const auto n = static_cast<std::size_t>(rng.UniformInt(2, 50));
    std::vector<double> s;
    std::vector<bool> y;
    for (std::size_t i = 0; i < n; ++i) {
      s.push_back(static_cast<double>(rng.UniformInt(0, 10)) / 10.0);
      y.push_back(rng.Bernoulli(0.5));
    }
    y[0] = true;
    y[1] = false;
    if (pd::metrics::AucRank(s, y) != pd::testing::BruteForceAuc(s, y)) ++auc_bad;

    // mAP@R and P@1 on a random distance matrix with ties.
    const auto m = static_cast<std::size_t>(rng.UniformInt(2, 50));
    const auto groups_count = rng.UniformInt(1, std::max<std::int64_t>(1, static_cast<std::int64_t>(m) / 2));
    std::vector<int> ids, groups;
    for (std::size_t i = 0; i < m; ++i) {
      ids.push_back(static_cast<int>(m - i) * 7);
      groups.push_back(static_cast<int>(rng.UniformInt(0, groups_count - 1)));
    }
    std::vector<std::vector<double>> d(m, std::vector<double>(m, 0.0));
    Matrix dm(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        d[i][j] = i == j ? 0.0 : static_cast<double>(rng.UniformInt(1, 6));
        dm(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = d[i][j];
      }
    }
    const auto want = pd::testing::BruteForceRetrieval(d, ids, groups);
    if (want.queries > 0) {
      ++map_checked;
      const auto got = pd::retrieval::EvaluateRanking(dm, ids, groups);
      if (got.map_at_r != want.map_at_r || got.precision_at_1 != want.precision_at_1 ||
          got.queries != want.queries) {
        ++map_bad;
      }
    }

    // Nearest neighbours against an exhaustive sort, every k.
    const auto rows = static_cast<std::size_t>(rng.UniformInt(1, 50));
    const int dim = static_cast<int>(rng.UniformInt(1, 4));
    pd::retrieval::EmbeddingIndex idx;
    idx.embeddings.resize(static_cast<Eigen::Index>(rows), dim);
    for (std::size_t i = 0; i < rows; ++i) {
      for (int j = 0; j < dim; ++j) {
        idx.embeddings(static_cast<Eigen::Index>(i), j) = static_cast<double>(rng.UniformInt(-2, 2));
      }
      idx.ids.push_back(static_cast<int>(rows - i) * 3 + 1);
    }
    Vector q(dim);
    for (int j = 0; j < dim; ++j) q[j] = static_cast<double>(rng.UniformInt(-2, 2));
    const auto exhaustive = pd::testing::ExhaustiveSort(idx.embeddings, idx.ids, q);
    for (std::size_t k = 1; k <= rows; ++k) {
      const auto hits = idx.Nearest(q, k);
      bool same = hits.size() == k;
      for (std::size_t i = 0; same && i < k; ++i) {
        same = hits[i].id == exhaustive[i].first && hits[i].distance == exhaustive[i].second;
      }
      if (!same) {
        ++nn_bad;
        break;
      }
    }
  }
  Verdict v;
  v.pass = auc_bad == 0 && map_bad == 0 && nn_bad == 0;
  v.detail = "100 instances: auc mismatches " + std::to_string(auc_bad) + ", mAP@R/P@1 mismatches " +
             std::to_string(map_bad) + " of " + std::to_string(map_checked) + " rankable, nearest mismatches " +
             std::to_string(nn_bad);
  return v;
}

Verdict FrechetCorrectness() {
  pd::RngStream rng(20260004);
  double self = 0.0, asym = 0.0;
  for (int k = 0; k < 50; ++k) {
    const int n = static_cast<int>(rng.UniformInt(1, 16));
    Matrix a(n, 3 * n), b(n, 2 * n + 5);
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      for (int i = 0; i < n; ++i) a(i, j) = rng.Normal();
    }
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      for (int i = 0; i < n; ++i) b(i, j) = 0.5 + 2.0 * rng.Normal();
    }
    self = std::max(self, std::abs(pd::metrics::FrechetBetween(a, a)));
    asym = std::max(asym, std::abs(pd::metrics::FrechetBetween(a, b) - pd::metrics::FrechetBetween(b, a)));
  }
  const Matrix i2 = Matrix::Identity(2, 2);
  Vector shift(2);
  shift << 0.6, 0.8;
  const double c1 = pd::metrics::FrechetDistance(Vector::Zero(2), i2, shift, i2);
  const double c2 = pd::metrics::FrechetDistance(Vector::Zero(1), Matrix::Constant(1, 1, 4.0), Vector::Zero(1),
                                                 Matrix::Constant(1, 1, 1.0));
  Verdict v;
  v.pass = self <= 1e-8 && asym <= 1e-8 && std::abs(c1 - 1.0) <= 1e-6 && std::abs(c2 - 1.0) <= 1e-6;
  v.detail = "max FD(A,A) " + Fmt(self) + ", max asymmetry " + Fmt(asym) + ", shift case " + Fmt(c1, 12) +
             ", variance case " + Fmt(c2, 12);
  return v;
}

// Criterion 5 on one run: zero ratio after filtering, and survivors
// non-decreasing over a 3-point delta grid.
Verdict FilterExactness(const std::vector<Seeded>& runs) {
  Verdict v;
  std::ostringstream os;
  for (const auto& r : runs) {
    const auto s = pl::LoadRun(r.dir);
    const auto fcfg = s.cfg.Filter();
    const auto ctx = pl::MakeContext(*s.cohort, s.prompts, *s.scorers, fcfg);
    const double ratio = pd::metrics::ReIdRatio(s.filtered, ctx, fcfg.delta, fcfg.mode);
    if (ratio != 0.0) v.pass = false;
    std::vector<std::size_t> survivors;
    for (const double d : {0.25, 0.5, 0.75}) {
      auto cfg = fcfg;
      cfg.delta = d;
      cfg.max_rounds = 1;
      survivors.push_back(pd::filtering::FilterDataset(s.synth, ctx, s.scorers->align, cfg).filtered.size());
    }
    if (!std::is_sorted(survivors.begin(), survivors.end())) v.pass = false;
    os << " seed " << r.seed << ": ratio " << ratio << ", survivors@{.25,.5,.75} " << survivors[0] << "/"
       << survivors[1] << "/" << survivors[2] << ";";
  }
  v.detail = os.str();
  return v;
}

Verdict SweepMonotone(const std::vector<Seeded>& runs) {
  Verdict v;
  std::size_t curves = 0;
  for (const auto& r : runs) {
    for (const auto* curve : {&r.report.sweep_synth, &r.report.sweep_distill}) {
      ++curves;
      if (curve->empty() || curve->front().delta > 0.05 || curve->back().delta < 0.90) v.pass = false;
      for (std::size_t i = 1; i < curve->size(); ++i) {
        if ((*curve)[i].ratio > (*curve)[i - 1].ratio) v.pass = false;
      }
    }
  }
  v.detail = std::to_string(curves) + " curves (D_synth and D_distill per seed) over [0.05, 0.90]";
  if (!runs.empty()) {
    const auto& c = runs.front().report.sweep_synth;
    v.detail += "; seed " + std::to_string(runs.front().seed) + " D_synth " + Fmt(c.front().ratio) + " -> " +
                Fmt(c.back().ratio);
  }
  return v;
}

Verdict ScorerQuality() {
  const pl::PipelineConfig cfg;
  const auto t0 = Clock::now();
  const auto c = pl::BuildCohort(cfg);
  const auto [sc, q] = pl::TrainScorers(c, cfg);
  const double secs = Seconds(t0);
  Verdict v;
  const bool reid = q.reid.auc >= 0.98 && q.reid.accuracy >= 0.95;
  const bool ret = q.retrieval.precision_at_1 >= 0.90 && q.retrieval.map_at_r >= 0.85;
  v.pass = reid && ret && secs < 180.0;
  v.detail = "re-id AUC " + Fmt(q.reid.auc) + " (>=0.98) acc " + Fmt(q.reid.accuracy) +
             " (>=0.95); retrieval P@1 " + Fmt(q.retrieval.precision_at_1) + " (>=0.90) mAP@R " +
             Fmt(q.retrieval.map_at_r) + " (>=0.85); " + Fmt(secs, 3) + " s (<180)";
  return v;
}

Verdict EndToEnd(const std::vector<Seeded>& runs) {
  std::vector<double> synth_src, distill_src, synth_ret, distill_ret, auc_real, auc_synth, auc_distill;
  double slowest = 0.0;
  for (const auto& r : runs) {
    const auto* real = pl::FindDataset(r.report, "real");
    const auto* synth = pl::FindDataset(r.report, "synth");
    const auto* distill = pl::FindDataset(r.report, "distill");
    synth_src.push_back(synth->reid_ratio_source.value_or(NAN));
    distill_src.push_back(distill->reid_ratio_source.value_or(NAN));
    synth_ret.push_back(synth->reid_ratio_retrieval.value_or(NAN));
    distill_ret.push_back(distill->reid_ratio_retrieval.value_or(NAN));
    auc_real.push_back(real->classifier_macro_auc.value_or(NAN));
    auc_synth.push_back(synth->classifier_macro_auc.value_or(NAN));
    auc_distill.push_back(distill->classifier_macro_auc.value_or(NAN));
    slowest = std::max(slowest, r.seconds);
  }
  const double rs = Median(synth_src), rd = Median(distill_src);
  const double ar = Median(auc_real), as = Median(auc_synth), ad = Median(auc_distill);
  Verdict v;
  const bool privacy = rd <= (2.0 / 3.0) * rs;
  const bool ordering = ar >= as && as >= ad - 0.03;
  v.pass = privacy && ordering && ad >= 0.70 && slowest < 900.0;
  v.detail = "median over " + std::to_string(runs.size()) + " seeds: R_re-id source synth " + Fmt(rs) +
             " distill " + Fmt(rd) + " (need <= " + Fmt(2.0 / 3.0 * rs) + ")" + (privacy ? "" : " FAIL") +
             "; retrieval-mode synth " + Fmt(Median(synth_ret)) + " distill " + Fmt(Median(distill_ret)) +
             "; macro-AUC real " + Fmt(ar) + " synth " + Fmt(as) + " distill " + Fmt(ad) +
             (ordering ? "" : " ordering FAIL") + "; slowest run " + Fmt(slowest, 3) + " s";
  return v;
}

Verdict FilterEffect(const std::vector<Seeded>& runs) {
  Verdict v;
  std::ostringstream os;
  for (const auto& r : runs) {
    const auto s = pl::LoadRun(r.dir);
    const auto e = pl::RunFilterEffect(s.cfg, r.dir);
    if (!(e.post.s_align.mean >= e.pre.s_align.mean) || e.post.at_or_above_delta != 0) v.pass = false;
    os << " seed " << r.seed << ": s_align " << Fmt(e.pre.s_align.mean) << " -> " << Fmt(e.post.s_align.mean)
       << ", post count >= delta " << e.post.at_or_above_delta << ";";
  }
  v.detail = os.str();
  return v;
}

Verdict Determinism(const Seeded& first, const fs::path& twin_dir) {
  fs::remove_all(twin_dir);
  auto cfg = pl::PipelineConfig{};
  cfg.base_seed = first.seed;
  pl::RunDistillation(cfg, twin_dir);
  Verdict v;
  std::vector<std::string> differ;
  for (const char* p : {pl::paths::kFiltered, pl::paths::kSynth, pl::paths::kDistill, pl::paths::kEval,
                        pl::paths::kFilterReport, pl::paths::kScorers, pl::paths::kReId, pl::paths::kRetrieval,
                        pl::paths::kAlign, pl::paths::kDiffusionReal, pl::paths::kDiffusionDistill}) {
    if (!fs::exists(first.dir / p) || Slurp(first.dir / p) != Slurp(twin_dir / p)) differ.push_back(p);
  }
  v.pass = differ.empty();
  v.detail = "seed " + std::to_string(first.seed) + " rerun: ";
  if (differ.empty()) {
    v.detail += "filtered ids, reports and checkpoints byte-identical";
  } else {
    for (const auto& d : differ) v.detail += d + " ";
    v.detail += "differ";
  }
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"privdistill acceptance run"};
  std::string out = "acceptance_runs";
  int seeds = 5;
  std::uint64_t first_seed = 7;
  app.add_option("--out", out, "Directory for the seeded runs");
  app.add_option("--seeds", seeds, "Number of seeded end-to-end runs")->check(CLI::PositiveNumber);
  app.add_option("--first-seed", first_seed, "Base seed of the first run");
  CLI11_PARSE(app, argc, argv);

  std::vector<std::pair<std::string, Verdict>> results;
  auto record = [&](int n, const std::string& name, const std::function<Verdict()>& fn) {
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    std::cout << "criterion " << n << " [" << name << "]: " << (v.pass ? "PASS" : "FAIL") << " | " << v.detail
              << std::endl;
    results.push_back({name, v});
  };

  record(1, "gradient suite", GradientSuite);
  record(2, "noising marginal", NoisingMarginal);
  record(3, "oracle equivalence", OracleEquivalence);
  record(4, "frechet correctness", FrechetCorrectness);

  // Seeded default runs shared by criteria 5, 6, 8, 9 and 10.
  std::vector<Seeded> runs;
  std::string run_error;
  try {
    for (int k = 0; k < seeds; ++k) {
      Seeded r;
      r.seed = first_seed + static_cast<std::uint64_t>(k);
      r.dir = fs::path(out) / ("seed" + std::to_string(r.seed));
      fs::remove_all(r.dir);
      pl::PipelineConfig cfg;
      cfg.base_seed = r.seed;
      const auto t0 = Clock::now();
      pl::RunDistillation(cfg, r.dir);
      r.seconds = Seconds(t0);
      r.report = pl::EvaluateRun(r.dir);
      std::cout << "  run seed " << r.seed << " finished in " << Fmt(r.seconds, 3) << " s" << std::endl;
      runs.push_back(std::move(r));
    }
  } catch (const std::exception& e) {
    run_error = e.what();
  }
  auto need_runs = [&](const std::function<Verdict()>& fn) {
    return [&, fn]() -> Verdict {
      if (!run_error.empty()) return {false, "distillation run failed: " + run_error};
      return fn();
    };
  };

  record(5, "filter exactness", need_runs([&] { return FilterExactness(runs); }));
  record(6, "sweep monotonicity", need_runs([&] { return SweepMonotone(runs); }));
  record(7, "scorer quality", ScorerQuality);
  record(8, "end-to-end distillation", need_runs([&] { return EndToEnd(runs); }));
  record(9, "filter effect", need_runs([&] { return FilterEffect(runs); }));
  record(10, "determinism", need_runs([&] { return Determinism(runs.front(), fs::path(out) / "determinism_twin"); }));

  int failed = 0;
  json summary = json::array();
  for (const auto& [name, v] : results) {
    failed += v.pass ? 0 : 1;
    summary.push_back({{"criterion", name}, {"pass", v.pass}, {"detail", v.detail}});
  }
  fs::create_directories(out);
  pd::io::WriteJson(fs::path(out) / "acceptance_summary.json", summary);
  std::cout << (failed == 0 ? "ALL PASS" : std::to_string(failed) + " criteria FAILED") << std::endl;
  return failed == 0 ? 0 : 1;
}
