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

// Synthetic patient cohort: patients carry an identity latent u, records
// carry a binary label vector y (the conditioning prompt) and an observation
// x = tanh(A u + B y + sigma * eps).

#ifndef PRIVDISTILL_COHORT_HPP_
#define PRIVDISTILL_COHORT_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "privdistill/error.hpp"
#include "privdistill/io.hpp"
#include "privdistill/nn/network.hpp"
#include "privdistill/rng.hpp"

namespace privdistill::cohort {

using nn::Matrix;
using nn::Vector;

enum class Split { kTrain, kTest };

inline const char* SplitName(Split s) { return s == Split::kTrain ? "train" : "test"; }

struct WorldDims {
  int observation_dim = 8;  // d
  int identity_dim = 4;     // k
  int label_count = 3;      // L
  double record_noise = 0.1;
  double flip_prob = 0.1;
  int max_records = 4;

  void Validate() const {
    if (observation_dim <= 0 || identity_dim <= 0 || label_count <= 0 || max_records <= 0) {
      throw ConfigError("world dimensions must be positive");
    }
    if (record_noise < 0.0) throw ConfigError("record noise must be non-negative");
    if (flip_prob < 0.0 || flip_prob > 1.0) throw ConfigError("flip_prob must be in [0,1]");
  }
};

struct WorldParams {
  std::uint64_t seed = 0;
  WorldDims dims;
  Matrix mixing;          // A, d x k
  Matrix label_effect;    // B, d x L
  Matrix propensity;      // w, L x k, unit rows

  int d() const { return dims.observation_dim; }
  int k() const { return dims.identity_dim; }
  int L() const { return dims.label_count; }

  // P(y_l = 1 | u) before record-level flips.
  double LabelPropensity(const Vector& u, int l) const {
    return nn::Sigmoid(propensity.row(l).dot(u));
  }

  Vector Observe(const Vector& u, const Vector& y, const Vector& noise) const {
    Vector z = mixing * u + label_effect * y + dims.record_noise * noise;
    return z.array().tanh().matrix();
  }
};

struct PatientRecord {
  int patient_id = 0;
  int record_id = 0;
  Vector y;  // entries in {0, 1}
  Vector x;  // entries in (-1, 1)
  Split split = Split::kTrain;
};

struct Cohort {
  WorldParams world;
  std::vector<PatientRecord> records;

  std::vector<const PatientRecord*> Records(Split split) const {
    std::vector<const PatientRecord*> out;
    for (const auto& r : records) {
      if (r.split == split) out.push_back(&r);
    }
    return out;
  }

  std::set<int> Patients(Split split) const {
    std::set<int> out;
    for (const auto& r : records) {
      if (r.split == split) out.insert(r.patient_id);
    }
    return out;
  }

  std::set<int> Patients() const {
    std::set<int> out;
    for (const auto& r : records) out.insert(r.patient_id);
    return out;
  }

  const PatientRecord& RecordById(int record_id) const {
    // Record ids are assigned sequentially at generation; subsets keep ids.
    auto it = std::lower_bound(records.begin(), records.end(), record_id,
                               [](const PatientRecord& r, int id) { return r.record_id < id; });
    if (it == records.end() || it->record_id != record_id) {
      throw ConfigError("unknown record id " + std::to_string(record_id));
    }
    return *it;
  }
};

inline WorldParams GenerateWorld(const WorldDims& dims, std::uint64_t seed) {
  dims.Validate();
  WorldParams w;
  w.seed = seed;
  w.dims = dims;
  RngStream rng(seed, static_cast<std::uint64_t>(StreamKey::kWorld));
  const double a_scale = 1.0 / std::sqrt(static_cast<double>(dims.identity_dim));
  w.mixing.resize(dims.observation_dim, dims.identity_dim);
  for (int i = 0; i < dims.observation_dim; ++i) {
    for (int j = 0; j < dims.identity_dim; ++j) w.mixing(i, j) = a_scale * rng.Normal();
  }
  w.label_effect.resize(dims.observation_dim, dims.label_count);
  for (int i = 0; i < dims.observation_dim; ++i) {
    for (int j = 0; j < dims.label_count; ++j) w.label_effect(i, j) = rng.Normal();
  }
  w.propensity.resize(dims.label_count, dims.identity_dim);
  for (int l = 0; l < dims.label_count; ++l) {
    double norm = 0.0;
    do {
      for (int j = 0; j < dims.identity_dim; ++j) w.propensity(l, j) = rng.Normal();
      norm = w.propensity.row(l).norm();
    } while (norm < 1e-12);
    w.propensity.row(l) /= norm;
  }
  return w;
}

// Every record starts in the train split; see SplitCohort.
inline Cohort GenerateCohort(const WorldParams& world, int patient_count, RngStream& rng) {
  if (patient_count < 2) throw ConfigError("a cohort needs at least 2 patients");
  Cohort c;
  c.world = world;
  const int k = world.k();
  const int L = world.L();
  const int d = world.d();
  int next_record = 0;
  for (int p = 0; p < patient_count; ++p) {
    Vector u(k);
    for (int j = 0; j < k; ++j) u[j] = rng.Normal();
    Vector base(L);
    for (int l = 0; l < L; ++l) base[l] = rng.Bernoulli(world.LabelPropensity(u, l)) ? 1.0 : 0.0;
    const int n_records = static_cast<int>(rng.UniformInt(1, world.dims.max_records));
    for (int r = 0; r < n_records; ++r) {
      PatientRecord rec;
      rec.patient_id = p;
      rec.record_id = next_record++;
      rec.y = base;
      for (int l = 0; l < L; ++l) {
        if (rng.Bernoulli(world.dims.flip_prob)) rec.y[l] = 1.0 - rec.y[l];
      }
      Vector eps(d);
      for (int i = 0; i < d; ++i) eps[i] = rng.Normal();
      rec.x = world.Observe(u, rec.y, eps);
      c.records.push_back(std::move(rec));
    }
  }
  return c;
}

// Partitions patients into train and test. floor(train_patient_frac * P)
// patients go to train. Among test patients with at least two records,
// floor(crossover_frac * test_count) are chosen as crossover patients and
// their first ceil(n/2) records are moved to train.
inline Cohort SplitCohort(Cohort cohort, double train_patient_frac, double crossover_frac,
                          RngStream& rng) {
  if (train_patient_frac < 0.0 || train_patient_frac > 1.0 || crossover_frac < 0.0 ||
      crossover_frac > 1.0) {
    throw ConfigError("split fractions must be in [0,1]");
  }
  const std::set<int> ids = cohort.Patients();
  if (ids.size() < 2) throw ConfigError("cannot split a cohort with fewer than 2 patients");
  std::vector<int> order(ids.begin(), ids.end());
  rng.Shuffle(order);
  const auto n_train = static_cast<std::size_t>(
      std::floor(train_patient_frac * static_cast<double>(order.size()) + 1e-9));
  std::set<int> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));

  std::map<int, int> counts;
  for (const auto& r : cohort.records) ++counts[r.patient_id];
  const std::size_t n_test = order.size() - n_train;
  const auto n_cross = static_cast<std::size_t>(
      std::floor(crossover_frac * static_cast<double>(n_test) + 1e-9));
  std::set<int> crossover;
  for (std::size_t i = n_train; i < order.size() && crossover.size() < n_cross; ++i) {
    if (counts[order[i]] >= 2) crossover.insert(order[i]);
  }

  std::map<int, int> moved;
  for (auto& r : cohort.records) {
    if (train.contains(r.patient_id)) {
      r.split = Split::kTrain;
    } else if (crossover.contains(r.patient_id)) {
      const int quota = (counts[r.patient_id] + 1) / 2;
      r.split = moved[r.patient_id] < quota ? Split::kTrain : Split::kTest;
      if (r.split == Split::kTrain) ++moved[r.patient_id];
    } else {
      r.split = Split::kTest;
    }
  }
  return cohort;
}

// Patients that appear in both splits.
inline std::set<int> CrossoverPatients(const Cohort& cohort) {
  const auto train = cohort.Patients(Split::kTrain);
  std::set<int> out;
  for (int p : cohort.Patients(Split::kTest)) {
    if (train.contains(p)) out.insert(p);
  }
  return out;
}

// Keeps ceil(fraction * n) whole train patients, chosen as a prefix of one
// random permutation so that smaller fractions nest inside larger ones for
// the same stream. Test records are untouched.
inline Cohort SubsetFraction(const Cohort& cohort, double fraction, RngStream& rng) {
  if (!(fraction > 0.0) || fraction > 1.0) throw ConfigError("fraction must be in (0,1]");
  const auto ids = cohort.Patients(Split::kTrain);
  std::vector<int> order(ids.begin(), ids.end());
  rng.Shuffle(order);
  const auto n = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(order.size()) - 1e-9));
  if (n == 0) throw ConfigError("fraction selects no patients");
  const std::set<int> keep(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
  Cohort out;
  out.world = cohort.world;
  for (const auto& r : cohort.records) {
    if (r.split == Split::kTest || keep.contains(r.patient_id)) out.records.push_back(r);
  }
  return out;
}

inline nlohmann::json MatrixToJson(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index j = 0; j < m.cols(); ++j) row[static_cast<std::size_t>(j)] = m(i, j);
    rows.push_back(row);
  }
  return rows;
}

inline Matrix MatrixFromJson(const nlohmann::json& rows, long n_rows, long n_cols,
                             const std::string& what) {
  CheckDim(static_cast<long>(rows.size()), n_rows, what + " rows");
  Matrix m(n_rows, n_cols);
  for (long i = 0; i < n_rows; ++i) {
    CheckDim(static_cast<long>(rows[i].size()), n_cols, what + " cols");
    for (long j = 0; j < n_cols; ++j) m(i, j) = rows[i][j].get<double>();
  }
  return m;
}

inline nlohmann::json WorldToJson(const WorldParams& w) {
  return {{"format", "privdistill.world/1"},
          {"seed", w.seed},
          {"d", w.d()},
          {"k", w.k()},
          {"L", w.L()},
          {"sigma_rec", w.dims.record_noise},
          {"flip_prob", w.dims.flip_prob},
          {"r_max", w.dims.max_records},
          {"A", MatrixToJson(w.mixing)},
          {"B", MatrixToJson(w.label_effect)},
          {"w", MatrixToJson(w.propensity)}};
}

inline WorldParams WorldFromJson(const nlohmann::json& doc) {
  try {
    if (doc.at("format") != "privdistill.world/1") throw ParseError("unsupported world format");
    WorldParams w;
    w.seed = doc.at("seed").get<std::uint64_t>();
    w.dims.observation_dim = doc.at("d").get<int>();
    w.dims.identity_dim = doc.at("k").get<int>();
    w.dims.label_count = doc.at("L").get<int>();
    w.dims.record_noise = doc.at("sigma_rec").get<double>();
    w.dims.flip_prob = doc.at("flip_prob").get<double>();
    w.dims.max_records = doc.at("r_max").get<int>();
    w.dims.Validate();
    w.mixing = MatrixFromJson(doc.at("A"), w.d(), w.k(), "world A");
    w.label_effect = MatrixFromJson(doc.at("B"), w.d(), w.L(), "world B");
    w.propensity = MatrixFromJson(doc.at("w"), w.L(), w.k(), "world w");
    return w;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("world manifest: ") + e.what());
  }
}

inline std::vector<std::string> CohortHeader(int L, int d) {
  std::vector<std::string> h{"patient_id", "record_id", "split"};
  for (int l = 0; l < L; ++l) h.push_back("y" + std::to_string(l));
  for (int i = 0; i < d; ++i) h.push_back("x" + std::to_string(i));
  return h;
}

// Writes <dir>/records.csv and the world manifest <dir>/world.json.
inline void SaveCohort(const Cohort& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = WorldToJson(c.world);
  manifest["record_count"] = c.records.size();
  io::WriteJson(dir / "world.json", manifest);
  io::CsvWriter csv(dir / "records.csv");
  csv.Row(CohortHeader(c.world.L(), c.world.d()));
  for (const auto& r : c.records) {
    std::vector<std::string> row{std::to_string(r.patient_id), std::to_string(r.record_id),
                                 SplitName(r.split)};
    for (Eigen::Index l = 0; l < r.y.size(); ++l) row.push_back(r.y[l] != 0.0 ? "1" : "0");
    for (Eigen::Index i = 0; i < r.x.size(); ++i) row.push_back(io::FormatDouble(r.x[i]));
    csv.Row(row);
  }
}

inline Cohort LoadCohort(const std::filesystem::path& dir) {
  const auto manifest = io::ReadJson(dir / "world.json");
  Cohort c;
  c.world = WorldFromJson(manifest);
  const int L = c.world.L();
  const int d = c.world.d();
  const auto table = io::ReadCsv(dir / "records.csv");
  const auto expected = CohortHeader(L, d);
  if (table.header != expected) {
    throw DimensionError((dir / "records.csv").string() + ": header has " +
                         std::to_string(table.header.size()) + " columns but manifest (L=" +
                         std::to_string(L) + ", d=" + std::to_string(d) + ") implies " +
                         std::to_string(expected.size()));
  }
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& f = table.rows[i];
    if (f.size() != expected.size()) {
      throw DimensionError(table.Where(i) + " has " + std::to_string(f.size()) +
                           " fields; manifest (L=" + std::to_string(L) + ", d=" +
                           std::to_string(d) + ") implies " + std::to_string(expected.size()));
    }
    PatientRecord r;
    r.patient_id = static_cast<int>(io::ParseInt(f[0], table.Where(i)));
    r.record_id = static_cast<int>(io::ParseInt(f[1], table.Where(i)));
    if (f[2] == "train") {
      r.split = Split::kTrain;
    } else if (f[2] == "test") {
      r.split = Split::kTest;
    } else {
      throw ParseError(table.Where(i) + ": unknown split '" + f[2] + "'");
    }
    r.y.resize(L);
    for (int l = 0; l < L; ++l) {
      const auto v = io::ParseInt(f[3 + l], table.Where(i));
      if (v != 0 && v != 1) throw ParseError(table.Where(i) + ": label must be 0 or 1");
      r.y[l] = static_cast<double>(v);
    }
    r.x.resize(d);
    for (int j = 0; j < d; ++j) r.x[j] = io::ParseDouble(f[3 + L + j], table.Where(i));
    if (!c.records.empty() && r.record_id <= c.records.back().record_id) {
      throw ParseError(table.Where(i) + ": record ids must be strictly increasing");
    }
    c.records.push_back(std::move(r));
  }
  if (manifest.contains("record_count") &&
      manifest["record_count"].get<std::size_t>() != c.records.size()) {
    throw ParseError((dir / "records.csv").string() + ": truncated after row " +
                     std::to_string(table.rows.size() + 1) + " (manifest lists " +
                     std::to_string(manifest["record_count"].get<std::size_t>()) +
                     " records, file has " + std::to_string(c.records.size()) + ")");
  }
  return c;
}

}  // namespace privdistill::cohort

#endif  // PRIVDISTILL_COHORT_HPP_
