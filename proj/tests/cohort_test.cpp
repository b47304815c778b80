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

#include <filesystem>
#include <fstream>
#include <sstream>

#include "privdistill.hpp"

namespace privdistill {
namespace {

using cohort::Cohort;
using cohort::PatientRecord;
using cohort::Split;
using cohort::WorldDims;
using nn::Vector;

namespace fs = std::filesystem;

fs::path TempDir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("privdistill_cohort_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string Slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void Spit(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

Cohort DefaultCohort(int patients, std::uint64_t seed) {
  const auto world = cohort::GenerateWorld(WorldDims{}, seed);
  RngStream rng(seed, StreamKey::kCohort);
  return cohort::GenerateCohort(world, patients, rng);
}

// Ten patients with exactly four records each.
Cohort FourRecordCohort() {
  Cohort c;
  c.world = cohort::GenerateWorld(WorldDims{}, 3);
  int id = 0;
  for (int p = 0; p < 10; ++p) {
    for (int r = 0; r < 4; ++r) {
      PatientRecord rec;
      rec.patient_id = p;
      rec.record_id = id++;
      rec.y = Vector::Zero(3);
      rec.x = Vector::Zero(8);
      c.records.push_back(rec);
    }
  }
  return c;
}

TEST(World, SameSeedIdentical) {
  const auto a = cohort::GenerateWorld(WorldDims{}, 42);
  const auto b = cohort::GenerateWorld(WorldDims{}, 42);
  EXPECT_EQ(a.mixing, b.mixing);
  EXPECT_EQ(a.label_effect, b.label_effect);
  EXPECT_EQ(a.propensity, b.propensity);
}

TEST(World, DifferentSeedsDiffer) {
  const auto a = cohort::GenerateWorld(WorldDims{}, 1);
  const auto b = cohort::GenerateWorld(WorldDims{}, 2);
  EXPECT_TRUE((a.mixing.array() != b.mixing.array()).all());
}

TEST(World, ZeroIdentityGivesHalfPropensity) {
  WorldDims dims;
  dims.identity_dim = 1;
  const auto w = cohort::GenerateWorld(dims, 5);
  EXPECT_EQ(w.LabelPropensity(Vector::Zero(1), 0), 0.5);
}

TEST(World, InvalidDimsRejected) {
  WorldDims dims;
  dims.observation_dim = 0;
  EXPECT_THROW(cohort::GenerateWorld(dims, 1), ConfigError);
  dims = {};
  dims.flip_prob = 1.5;
  EXPECT_THROW(cohort::GenerateWorld(dims, 1), ConfigError);
}

TEST(Cohort, NoiseFreeRecordsOfSameLabelsCoincide) {
  WorldDims dims;
  dims.record_noise = 0.0;
  dims.flip_prob = 0.0;
  const auto world = cohort::GenerateWorld(dims, 8);
  RngStream rng(8);
  const auto c = cohort::GenerateCohort(world, 200, rng);
  int compared = 0;
  for (std::size_t i = 0; i < c.records.size(); ++i) {
    for (std::size_t j = i + 1; j < c.records.size(); ++j) {
      const auto& a = c.records[i];
      const auto& b = c.records[j];
      if (a.patient_id == b.patient_id && a.y == b.y) {
        EXPECT_EQ(a.x, b.x);
        ++compared;
      }
    }
  }
  EXPECT_GT(compared, 0);
}

TEST(Cohort, EntriesInsideOpenUnitInterval) {
  const auto c = DefaultCohort(300, 4);
  for (const auto& r : c.records) {
    EXPECT_LT(r.x.cwiseAbs().maxCoeff(), 1.0);
    EXPECT_EQ(r.x.size(), 8);
    EXPECT_TRUE(((r.y.array() == 0.0) || (r.y.array() == 1.0)).all());
  }
}

TEST(Cohort, SamePatientPairsCloser) {
  const auto c = DefaultCohort(500, 7);
  double same = 0, diff = 0;
  long n_same = 0, n_diff = 0;
  for (std::size_t i = 0; i < c.records.size(); ++i) {
    for (std::size_t j = i + 1; j < c.records.size(); ++j) {
      const double d = (c.records[i].x - c.records[j].x).norm();
      if (c.records[i].patient_id == c.records[j].patient_id) {
        same += d;
        ++n_same;
      } else {
        diff += d;
        ++n_diff;
      }
    }
  }
  ASSERT_GT(n_same, 0);
  EXPECT_LT(same / n_same, diff / n_diff);
}

TEST(Cohort, RecordCountsWithinBounds) {
  const auto c = DefaultCohort(100, 2);
  std::map<int, int> counts;
  for (const auto& r : c.records) ++counts[r.patient_id];
  EXPECT_EQ(counts.size(), 100u);
  for (const auto& [p, n] : counts) {
    EXPECT_GE(n, 1);
    EXPECT_LE(n, 4);
  }
}

TEST(Split, NoCrossoverMeansDisjoint) {
  auto c = DefaultCohort(100, 3);
  RngStream rng(1);
  c = cohort::SplitCohort(c, 0.8, 0.0, rng);
  EXPECT_TRUE(cohort::CrossoverPatients(c).empty());
  EXPECT_EQ(c.Patients(Split::kTrain).size(), 80u);
}

TEST(Split, FloorRuleOnTrainFraction) {
  auto c = DefaultCohort(100, 3);
  RngStream rng(2);
  c = cohort::SplitCohort(c, 0.9, 0.0, rng);
  EXPECT_EQ(c.Patients(Split::kTrain).size(), 90u);
  EXPECT_EQ(c.Patients(Split::kTest).size(), 10u);
  auto d = DefaultCohort(7, 3);
  RngStream rng2(2);
  d = cohort::SplitCohort(d, 0.5, 0.0, rng2);
  EXPECT_EQ(d.Patients(Split::kTrain).size(), 3u);
}

TEST(Split, CrossoverPatientHalfRetagged) {
  RngStream rng(5);
  const auto c = cohort::SplitCohort(FourRecordCohort(), 0.5, 1.0, rng);
  const auto crossover = cohort::CrossoverPatients(c);
  EXPECT_EQ(crossover.size(), 5u);
  for (int p : crossover) {
    int train = 0, test = 0;
    for (const auto& r : c.records) {
      if (r.patient_id != p) continue;
      (r.split == Split::kTrain ? train : test)++;
    }
    EXPECT_EQ(train, 2);
    EXPECT_EQ(test, 2);
  }
}

TEST(Split, BadFractionsRejected) {
  RngStream rng(5);
  EXPECT_THROW(cohort::SplitCohort(FourRecordCohort(), 1.2, 0.0, rng), ConfigError);
  EXPECT_THROW(cohort::SplitCohort(FourRecordCohort(), 0.5, -0.1, rng), ConfigError);
}

TEST(Subset, FullFractionIsIdentity) {
  RngStream split_rng(1);
  const auto c = cohort::SplitCohort(DefaultCohort(100, 3), 0.9, 0.1, split_rng);
  RngStream rng(4);
  const auto s = cohort::SubsetFraction(c, 1.0, rng);
  ASSERT_EQ(s.records.size(), c.records.size());
  for (std::size_t i = 0; i < s.records.size(); ++i) EXPECT_EQ(s.records[i].record_id, c.records[i].record_id);
}

TEST(Subset, HalfOfHundredPatients) {
  RngStream split_rng(1);
  const auto c = cohort::SplitCohort(DefaultCohort(125, 3), 0.8, 0.0, split_rng);
  ASSERT_EQ(c.Patients(Split::kTrain).size(), 100u);
  RngStream rng(4);
  const auto s = cohort::SubsetFraction(c, 0.5, rng);
  EXPECT_EQ(s.Patients(Split::kTrain).size(), 50u);
  EXPECT_EQ(s.Records(Split::kTest).size(), c.Records(Split::kTest).size());
}

TEST(Subset, SmallerFractionsNest) {
  RngStream split_rng(1);
  const auto c = cohort::SplitCohort(DefaultCohort(200, 3), 0.9, 0.0, split_rng);
  RngStream a(9), b(9);
  const auto small = cohort::SubsetFraction(c, 0.1, a).Patients(Split::kTrain);
  const auto big = cohort::SubsetFraction(c, 0.5, b).Patients(Split::kTrain);
  EXPECT_EQ(small.size(), 18u);
  for (int p : small) EXPECT_TRUE(big.contains(p));
}

TEST(Persistence, RoundTripIsValueIdentical) {
  RngStream split_rng(1);
  const auto c = cohort::SplitCohort(DefaultCohort(50, 6), 0.9, 0.2, split_rng);
  const auto dir = TempDir("roundtrip");
  cohort::SaveCohort(c, dir);
  const auto back = cohort::LoadCohort(dir);
  EXPECT_EQ(back.world.mixing, c.world.mixing);
  EXPECT_EQ(back.world.label_effect, c.world.label_effect);
  EXPECT_EQ(back.world.propensity, c.world.propensity);
  ASSERT_EQ(back.records.size(), c.records.size());
  for (std::size_t i = 0; i < c.records.size(); ++i) {
    EXPECT_EQ(back.records[i].patient_id, c.records[i].patient_id);
    EXPECT_EQ(back.records[i].record_id, c.records[i].record_id);
    EXPECT_EQ(back.records[i].split, c.records[i].split);
    EXPECT_EQ(back.records[i].y, c.records[i].y);
    EXPECT_EQ(back.records[i].x, c.records[i].x);
  }
}

TEST(Persistence, TruncatedFileNamesRow) {
  const auto c = DefaultCohort(20, 6);
  const auto dir = TempDir("truncated");
  cohort::SaveCohort(c, dir);
  std::string text = Slurp(dir / "records.csv");
  text.resize(text.size() - 5);
  Spit(dir / "records.csv", text);
  const auto rows = static_cast<int>(c.records.size()) + 1;
  try {
    cohort::LoadCohort(dir);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("row " + std::to_string(rows)), std::string::npos) << e.what();
  }
}

TEST(Persistence, MissingRowsDetected) {
  const auto c = DefaultCohort(20, 6);
  const auto dir = TempDir("short");
  cohort::SaveCohort(c, dir);
  std::string text = Slurp(dir / "records.csv");
  text.resize(text.rfind('\n', text.size() - 2) + 1);
  Spit(dir / "records.csv", text);
  EXPECT_THROW(cohort::LoadCohort(dir), ParseError);
}

TEST(Persistence, ShortRowIsDimensionError) {
  const auto c = DefaultCohort(20, 6);
  const auto dir = TempDir("shortrow");
  cohort::SaveCohort(c, dir);
  std::string text = Slurp(dir / "records.csv");
  const auto second_line_end = text.find('\n', text.find('\n') + 1);
  const auto last_comma = text.rfind(',', second_line_end);
  text.erase(last_comma, second_line_end - last_comma);
  Spit(dir / "records.csv", text);
  try {
    cohort::LoadCohort(dir);
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("d=8"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace privdistill
