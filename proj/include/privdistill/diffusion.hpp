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

// Conditional DDPM in data space with classifier-free guidance.
//
// The denoiser sees [x_t, time embedding (16), condition embedding (8)] and
// predicts the noise. Conditions are binary label vectors mapped through a
// learned linear embedder; the unconditional branch uses a learned null
// embedding. Guidance blends the two noise estimates as
//   eps_hat = eps_u + g * (eps_c - eps_u),
// so g = 1 is purely conditional and g = 1 + w recovers the (1 + w) form.

#ifndef PRIVDISTILL_DIFFUSION_HPP_
#define PRIVDISTILL_DIFFUSION_HPP_

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "privdistill/cohort.hpp"
#include "privdistill/error.hpp"
#include "privdistill/io.hpp"
#include "privdistill/nn/adam.hpp"
#include "privdistill/nn/losses.hpp"
#include "privdistill/nn/network.hpp"
#include "privdistill/parallel.hpp"
#include "privdistill/rng.hpp"

namespace privdistill::diffusion {

using nn::Matrix;
using nn::Vector;

inline constexpr int kTimeEmbedDim = 16;
inline constexpr int kCondEmbedDim = 8;

struct NoiseSchedule {
  int steps = 0;
  double beta_first = 0.0;
  double beta_last = 0.0;
  std::vector<double> betas;       // betas[t - 1] for t in 1..T
  std::vector<double> alpha_bars;  // alpha_bars[t], alpha_bars[0] = 1

  double beta(int t) const { return betas.at(static_cast<std::size_t>(t - 1)); }
  double alpha_bar(int t) const { return alpha_bars.at(static_cast<std::size_t>(t)); }
};

// Linear betas from beta_first to beta_last; alpha_bar is their cumulative
// product of (1 - beta).
inline NoiseSchedule MakeSchedule(int steps = 100, double beta_first = 1e-4,
                                  double beta_last = 0.02) {
  if (steps < 2) throw ConfigError("schedule needs T >= 2");
  if (!(beta_first > 0.0) || !(beta_first <= beta_last) || !(beta_last < 1.0)) {
    throw ConfigError("schedule needs 0 < beta_1 <= beta_T < 1");
  }
  NoiseSchedule s;
  s.steps = steps;
  s.beta_first = beta_first;
  s.beta_last = beta_last;
  s.alpha_bars.push_back(1.0);
  for (int t = 1; t <= steps; ++t) {
    const double frac = static_cast<double>(t - 1) / static_cast<double>(steps - 1);
    const double beta = beta_first + frac * (beta_last - beta_first);
    s.betas.push_back(beta);
    s.alpha_bars.push_back(s.alpha_bars.back() * (1.0 - beta));
  }
  return s;
}

inline Vector ForwardDiffuse(const Vector& x0, double alpha_bar, const Vector& noise) {
  CheckDim(noise.size(), x0.size(), "forward_diffuse noise");
  return std::sqrt(alpha_bar) * x0 + std::sqrt(1.0 - alpha_bar) * noise;
}

// x_t = sqrt(a_t) x0 + sqrt(1 - a_t) eps. t = 0 returns x0.
inline Vector ForwardDiffuse(const Vector& x0, int t, const Vector& noise,
                             const NoiseSchedule& schedule) {
  if (t < 0 || t > schedule.steps) {
    throw ConfigError("timestep " + std::to_string(t) + " outside [0, " +
                      std::to_string(schedule.steps) + "]");
  }
  return ForwardDiffuse(x0, schedule.alpha_bar(t), noise);
}

// Sinusoidal embedding: sin/cos pairs at geometrically spaced frequencies.
inline Vector TimeEmbedding(int t) {
  Vector e(kTimeEmbedDim);
  constexpr int half = kTimeEmbedDim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    e[i] = std::sin(t * freq);
    e[half + i] = std::cos(t * freq);
  }
  return e;
}

struct Architecture {
  int hidden = 128;
  int hidden_layers = 2;
};

struct DiffusionModel {
  nn::Network denoiser;
  nn::Network cond_embedder;
  Vector null_embedding;
  NoiseSchedule schedule;
  double p_uncond = 0.1;
  int data_dim = 0;
  int label_dim = 0;

  static DiffusionModel Create(int data_dim, int label_dim, const NoiseSchedule& schedule,
                               double p_uncond = 0.1, Architecture arch = {},
                               std::uint64_t seed = 0) {
    if (data_dim <= 0 || label_dim <= 0) throw ConfigError("diffusion dims must be positive");
    if (p_uncond < 0.0 || p_uncond > 1.0) throw ConfigError("p_uncond must be in [0,1]");
    if (arch.hidden <= 0 || arch.hidden_layers < 1) throw ConfigError("bad denoiser architecture");
    std::vector<nn::LayerSpec> layers;
    int in = data_dim + kTimeEmbedDim + kCondEmbedDim;
    for (int i = 0; i < arch.hidden_layers; ++i) {
      layers.push_back({in, arch.hidden, nn::Activation::kRelu});
      in = arch.hidden;
    }
    layers.push_back({in, data_dim, nn::Activation::kLinear});
    DiffusionModel m;
    m.denoiser = nn::Network::Create(std::move(layers), DeriveSeed(seed, {1}));
    m.cond_embedder = nn::Network::Create({{label_dim, kCondEmbedDim, nn::Activation::kLinear}},
                                          DeriveSeed(seed, {2}));
    m.null_embedding = Vector::Zero(kCondEmbedDim);
    m.schedule = schedule;
    m.p_uncond = p_uncond;
    m.data_dim = data_dim;
    m.label_dim = label_dim;
    return m;
  }

  Vector EmbedCondition(const std::optional<Vector>& y) const {
    if (!y) return null_embedding;
    CheckDim(y->size(), label_dim, "condition label vector");
    return cond_embedder.Forward(*y);
  }

  // Noise prediction for a batch at a shared timestep.
  Matrix PredictNoise(const Matrix& x_t, int t, const Matrix& cond_embed) const {
    const Vector temb = TimeEmbedding(t);
    Matrix in(data_dim + kTimeEmbedDim + kCondEmbedDim, x_t.cols());
    in.topRows(data_dim) = x_t;
    in.middleRows(data_dim, kTimeEmbedDim) = temb.replicate(1, x_t.cols());
    in.bottomRows(kCondEmbedDim) = cond_embed;
    return denoiser.Forward(in);
  }

  nlohmann::json ToJson() const {
    return {{"format", "privdistill.diffusion/1"},
            {"data_dim", data_dim},
            {"label_dim", label_dim},
            {"p_uncond", p_uncond},
            {"schedule",
             {{"T", schedule.steps}, {"beta_1", schedule.beta_first}, {"beta_T", schedule.beta_last}}},
            {"time_embedding_dim", kTimeEmbedDim},
            {"condition_embedding_dim", kCondEmbedDim},
            {"denoiser", denoiser.ToJson()},
            {"cond_embedder", cond_embedder.ToJson()},
            {"null_embedding", std::vector<double>(null_embedding.begin(), null_embedding.end())}};
  }

  static DiffusionModel FromJson(const nlohmann::json& doc) {
    try {
      if (doc.at("format") != "privdistill.diffusion/1") {
        throw ParseError("unsupported diffusion checkpoint format");
      }
      DiffusionModel m;
      m.data_dim = doc.at("data_dim").get<int>();
      m.label_dim = doc.at("label_dim").get<int>();
      m.p_uncond = doc.at("p_uncond").get<double>();
      const auto& s = doc.at("schedule");
      m.schedule = MakeSchedule(s.at("T").get<int>(), s.at("beta_1").get<double>(),
                                s.at("beta_T").get<double>());
      m.denoiser = nn::Network::FromJson(doc.at("denoiser"));
      m.cond_embedder = nn::Network::FromJson(doc.at("cond_embedder"));
      const auto ne = doc.at("null_embedding").get<std::vector<double>>();
      CheckDim(static_cast<long>(ne.size()), kCondEmbedDim, "null embedding");
      m.null_embedding = Eigen::Map<const Vector>(ne.data(), kCondEmbedDim);
      CheckDim(m.denoiser.input_dim(), m.data_dim + kTimeEmbedDim + kCondEmbedDim,
               "denoiser input");
      CheckDim(m.denoiser.output_dim(), m.data_dim, "denoiser output");
      CheckDim(m.cond_embedder.input_dim(), m.label_dim, "condition embedder input");
      return m;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("diffusion checkpoint: ") + e.what());
    }
  }

  void Save(const std::filesystem::path& path) const { io::WriteJson(path, ToJson()); }
  static DiffusionModel Load(const std::filesystem::path& path) {
    return FromJson(io::ReadJson(path));
  }
};

struct TrainingExample {
  Vector x;
  std::optional<Vector> y;
};

inline std::vector<TrainingExample> ExamplesFromCohort(const cohort::Cohort& c,
                                                       cohort::Split split = cohort::Split::kTrain) {
  std::vector<TrainingExample> out;
  for (const auto* r : c.Records(split)) out.push_back({r->x, r->y});
  return out;
}

// One minibatch of noising draws. Draw order per example: t, then d
// normals, then the condition-dropout uniform (always drawn).
struct NoisedBatch {
  std::vector<std::size_t> examples;
  std::vector<int> timesteps;
  std::vector<bool> use_null;
  Matrix noise;  // d x B
  Matrix x_t;    // d x B
};

inline NoisedBatch DrawBatch(const std::vector<TrainingExample>& data,
                             const std::vector<std::size_t>& indices, const DiffusionModel& model,
                             RngStream& rng) {
  const auto b = static_cast<Eigen::Index>(indices.size());
  NoisedBatch batch;
  batch.examples = indices;
  batch.noise.resize(model.data_dim, b);
  batch.x_t.resize(model.data_dim, b);
  for (Eigen::Index j = 0; j < b; ++j) {
    const auto& ex = data[indices[static_cast<std::size_t>(j)]];
    const int t = static_cast<int>(rng.UniformInt(1, model.schedule.steps));
    for (int i = 0; i < model.data_dim; ++i) batch.noise(i, j) = rng.Normal();
    const bool drop = rng.Bernoulli(model.p_uncond);
    batch.timesteps.push_back(t);
    batch.use_null.push_back(drop || !ex.y.has_value());
    batch.x_t.col(j) = ForwardDiffuse(ex.x, model.schedule.alpha_bar(t), batch.noise.col(j));
  }
  return batch;
}

struct BatchGradients {
  double loss = 0.0;
  Vector denoiser;
  Vector embedder;
  Vector null_embedding;
};

// Mean squared error between predicted and true noise.
inline BatchGradients EvaluateBatch(const DiffusionModel& model,
                                    const std::vector<TrainingExample>& data,
                                    const NoisedBatch& batch, bool want_gradients = true) {
  const int d = model.data_dim;
  const auto b = static_cast<Eigen::Index>(batch.examples.size());
  Matrix in(d + kTimeEmbedDim + kCondEmbedDim, b);
  in.topRows(d) = batch.x_t;
  std::vector<Eigen::Index> cond_cols;
  for (Eigen::Index j = 0; j < b; ++j) {
    in.block(d, j, kTimeEmbedDim, 1) = TimeEmbedding(batch.timesteps[static_cast<std::size_t>(j)]);
    if (!batch.use_null[static_cast<std::size_t>(j)]) cond_cols.push_back(j);
  }
  Matrix labels(model.label_dim, static_cast<Eigen::Index>(cond_cols.size()));
  for (std::size_t c = 0; c < cond_cols.size(); ++c) {
    labels.col(static_cast<Eigen::Index>(c)) =
        *data[batch.examples[static_cast<std::size_t>(cond_cols[c])]].y;
  }
  nn::ForwardCache embed_cache;
  Matrix cond_embed;
  if (!cond_cols.empty()) cond_embed = model.cond_embedder.Forward(labels, &embed_cache);
  for (Eigen::Index j = 0; j < b; ++j) in.block(d + kTimeEmbedDim, j, kCondEmbedDim, 1) = model.null_embedding;
  for (std::size_t c = 0; c < cond_cols.size(); ++c) {
    in.block(d + kTimeEmbedDim, cond_cols[c], kCondEmbedDim, 1) =
        cond_embed.col(static_cast<Eigen::Index>(c));
  }

  nn::ForwardCache cache;
  const Matrix pred = model.denoiser.Forward(in, &cache);
  const auto loss = nn::Mse(pred, batch.noise);
  BatchGradients out;
  out.loss = loss.value;
  if (!want_gradients) return out;
  const auto g = model.denoiser.Backward(cache, loss.grad);
  out.denoiser = g.params;
  out.null_embedding = Vector::Zero(kCondEmbedDim);
  out.embedder = Vector::Zero(static_cast<Eigen::Index>(model.cond_embedder.param_count()));
  const Matrix d_embed = g.input.bottomRows(kCondEmbedDim);
  Matrix d_cond(kCondEmbedDim, static_cast<Eigen::Index>(cond_cols.size()));
  std::size_t c = 0;
  for (Eigen::Index j = 0; j < b; ++j) {
    if (c < cond_cols.size() && cond_cols[c] == j) {
      d_cond.col(static_cast<Eigen::Index>(c++)) = d_embed.col(j);
    } else {
      out.null_embedding += d_embed.col(j);
    }
  }
  if (!cond_cols.empty()) out.embedder = model.cond_embedder.Backward(embed_cache, d_cond).params;
  return out;
}

struct TrainConfig {
  int epochs = 200;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double p_uncond = 0.1;
  Architecture architecture;

  void Validate() const {
    if (epochs < 0 || batch_size < 1) throw ConfigError("diffusion epochs/batch invalid");
    if (!(learning_rate > 0.0)) throw ConfigError("diffusion learning rate must be positive");
    if (p_uncond < 0.0 || p_uncond > 1.0) throw ConfigError("p_uncond must be in [0,1]");
  }
};

struct TrainResult {
  DiffusionModel model;
  std::vector<double> epoch_losses;
  std::optional<double> first_step_loss;
};

// Minimizes the noise-prediction objective with Adam. With `init`, training
// continues from those weights (warm start); otherwise a fresh model is
// created from `rng`.
inline TrainResult TrainDiffusion(const std::vector<TrainingExample>& data, int label_dim,
                                  const TrainConfig& cfg, RngStream& rng,
                                  std::optional<DiffusionModel> init = std::nullopt,
                                  const NoiseSchedule& schedule = MakeSchedule()) {
  cfg.Validate();
  if (data.empty()) throw ConfigError("cannot train diffusion on an empty dataset");
  const int d = static_cast<int>(data.front().x.size());
  for (const auto& ex : data) {
    CheckDim(ex.x.size(), d, "diffusion training record");
    if (ex.y) CheckDim(ex.y->size(), label_dim, "diffusion training labels");
    if ((ex.x.array().abs() >= 1.0).any()) {
      throw ConfigError("diffusion training records must lie in (-1, 1)");
    }
  }
  TrainResult result;
  if (init) {
    CheckDim(init->data_dim, d, "warm-start model data dim");
    CheckDim(init->label_dim, label_dim, "warm-start model label dim");
    result.model = std::move(*init);
    result.model.p_uncond = cfg.p_uncond;
  } else {
    result.model = DiffusionModel::Create(d, label_dim, schedule, cfg.p_uncond, cfg.architecture,
                                          rng.NextU64());
  }
  auto& model = result.model;
  const nn::AdamOptions opts{cfg.learning_rate};
  nn::AdamState den_state(model.denoiser.param_count(), opts);
  nn::AdamState emb_state(model.cond_embedder.param_count(), opts);
  nn::AdamState null_state(kCondEmbedDim, opts);

  std::vector<std::size_t> order(data.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    rng.Shuffle(order);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
      const auto batch = DrawBatch(data, idx, model, rng);
      const auto g = EvaluateBatch(model, data, batch);
      if (!std::isfinite(g.loss)) {
        throw TrainingError("non-finite diffusion loss at epoch " + std::to_string(epoch));
      }
      if (!result.first_step_loss) result.first_step_loss = g.loss;
      nn::AdamStep(model.denoiser.mutable_params(), g.denoiser, den_state);
      nn::AdamStep(model.cond_embedder.mutable_params(), g.embedder, emb_state);
      nn::AdamStep(model.null_embedding, g.null_embedding, null_state);
      total += g.loss * static_cast<double>(idx.size());
      count += idx.size();
    }
    result.epoch_losses.push_back(total / static_cast<double>(count));
  }
  return result;
}

// Ancestral sampling for a batch of requests, one random stream per column.
// Each column's trajectory depends only on its own stream, so batching and
// ordering never change a sample.
inline Matrix SampleBatch(const DiffusionModel& model, const std::vector<std::optional<Vector>>& conditions,
                          double guidance, std::vector<RngStream>& streams) {
  if (guidance < 0.0) throw ConfigError("guidance must be non-negative");
  CheckDim(static_cast<long>(streams.size()), static_cast<long>(conditions.size()), "sample streams");
  const int d = model.data_dim;
  const auto b = static_cast<Eigen::Index>(conditions.size());
  Matrix x(d, b);
  Matrix null_embed = model.null_embedding.replicate(1, b);
  Matrix cond_embed(kCondEmbedDim, b);
  bool any_cond = false;
  for (Eigen::Index j = 0; j < b; ++j) {
    const auto& c = conditions[static_cast<std::size_t>(j)];
    cond_embed.col(j) = model.EmbedCondition(c);
    any_cond = any_cond || c.has_value();
    for (int i = 0; i < d; ++i) x(i, j) = streams[static_cast<std::size_t>(j)].Normal();
  }
  const bool need_uncond = !any_cond || guidance != 1.0;
  const bool need_cond = any_cond && guidance != 0.0;
  for (int t = model.schedule.steps; t >= 1; --t) {
    Matrix eps_u, eps_c;
    if (need_uncond) eps_u = model.PredictNoise(x, t, null_embed);
    if (need_cond) eps_c = model.PredictNoise(x, t, cond_embed);
    const double beta = model.schedule.beta(t);
    const double coef = beta / std::sqrt(1.0 - model.schedule.alpha_bar(t));
    const double scale = 1.0 / std::sqrt(1.0 - beta);
    for (Eigen::Index j = 0; j < b; ++j) {
      Vector eps_hat;
      if (!conditions[static_cast<std::size_t>(j)].has_value() || guidance == 0.0) {
        eps_hat = eps_u.col(j);
      } else if (guidance == 1.0) {
        eps_hat = eps_c.col(j);
      } else {
        eps_hat = eps_u.col(j) + guidance * (eps_c.col(j) - eps_u.col(j));
      }
      x.col(j) = scale * (x.col(j) - coef * eps_hat);
      if (t > 1) {
        const double sigma = std::sqrt(beta);
        auto& rng = streams[static_cast<std::size_t>(j)];
        for (int i = 0; i < d; ++i) x(i, j) += sigma * rng.Normal();
      }
    }
  }
  // Samples are clipped into the open data range so they remain valid
  // training records.
  constexpr double kEdge = 1.0 - 1e-6;
  return x.cwiseMax(-kEdge).cwiseMin(kEdge);
}

inline Vector Sample(const DiffusionModel& model, const std::optional<Vector>& condition,
                     double guidance, RngStream& rng) {
  std::vector<RngStream> streams{rng};
  const Matrix out = SampleBatch(model, {condition}, guidance, streams);
  rng = streams.front();
  return out.col(0);
}

// A generation request. Conditional prompts carry labels and (for training
// prompts) the id of the real record they were taken from.
struct Prompt {
  int index = 0;
  std::optional<Vector> y;
  int source_record_id = -1;
};

// Prompt i is the label vector of the i-th train record.
inline std::vector<Prompt> TrainingPrompts(const cohort::Cohort& c, std::size_t limit = SIZE_MAX) {
  std::vector<Prompt> out;
  for (const auto* r : c.Records(cohort::Split::kTrain)) {
    if (out.size() >= limit) break;
    out.push_back({static_cast<int>(out.size()), r->y, r->record_id});
  }
  return out;
}

inline std::vector<Prompt> UnconditionalPrompts(std::size_t n) {
  std::vector<Prompt> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({static_cast<int>(i), std::nullopt, -1});
  return out;
}

struct SynthRecord {
  int prompt_index = -1;  // -1 for unconditional samples
  std::optional<Vector> y;
  Vector x_hat;
  std::uint64_t sample_seed = 0;
};

inline std::uint64_t SampleSeed(std::uint64_t base_seed, int prompt_index, int instance) {
  return DeriveSeed(base_seed, {static_cast<std::uint64_t>(StreamKey::kSample),
                                static_cast<std::uint64_t>(prompt_index),
                                static_cast<std::uint64_t>(instance)});
}

// Draws `per_prompt` samples for every prompt. Sample (i, j) is seeded by
// hash(base_seed, prompt index i, instance j), independent of order.
inline std::vector<SynthRecord> GenerateDataset(const DiffusionModel& model,
                                                const std::vector<Prompt>& prompts, int per_prompt,
                                                std::uint64_t base_seed, double guidance,
                                                int instance_offset = 0) {
  if (per_prompt < 1) throw ConfigError("N_c must be at least 1");
  std::vector<SynthRecord> out;
  out.reserve(prompts.size() * static_cast<std::size_t>(per_prompt));
  for (const auto& p : prompts) {
    for (int j = 0; j < per_prompt; ++j) {
      SynthRecord r;
      r.prompt_index = p.y ? p.index : -1;
      r.y = p.y;
      r.sample_seed = SampleSeed(base_seed, p.index, instance_offset + j);
      out.push_back(std::move(r));
    }
  }
  constexpr std::size_t kChunk = 128;
  const std::size_t chunks = (out.size() + kChunk - 1) / kChunk;
  ParallelFor(chunks, [&](std::size_t c) {
    const std::size_t lo = c * kChunk;
    const std::size_t hi = std::min(out.size(), lo + kChunk);
    std::vector<std::optional<Vector>> conds;
    std::vector<RngStream> streams;
    for (std::size_t i = lo; i < hi; ++i) {
      conds.push_back(out[i].y);
      streams.emplace_back(out[i].sample_seed);
    }
    const Matrix x = SampleBatch(model, conds, guidance, streams);
    for (std::size_t i = lo; i < hi; ++i) out[i].x_hat = x.col(static_cast<Eigen::Index>(i - lo));
  });
  return out;
}

inline std::vector<TrainingExample> ExamplesFromSynth(const std::vector<SynthRecord>& records) {
  std::vector<TrainingExample> out;
  for (const auto& r : records) out.push_back({r.x_hat, r.y});
  return out;
}

inline void SaveSynthDataset(const std::vector<SynthRecord>& records, int label_dim, int data_dim,
                             const std::filesystem::path& path) {
  io::CsvWriter csv(path);
  std::vector<std::string> header{"prompt_index", "seed"};
  for (int l = 0; l < label_dim; ++l) header.push_back("y" + std::to_string(l));
  for (int i = 0; i < data_dim; ++i) header.push_back("x" + std::to_string(i));
  csv.Row(header);
  for (const auto& r : records) {
    CheckDim(r.x_hat.size(), data_dim, "synthetic record");
    std::vector<std::string> row{std::to_string(r.prompt_index), std::to_string(r.sample_seed)};
    for (int l = 0; l < label_dim; ++l) {
      row.push_back(r.y ? ((*r.y)[l] != 0.0 ? "1" : "0") : "");
    }
    for (int i = 0; i < data_dim; ++i) row.push_back(io::FormatDouble(r.x_hat[i]));
    csv.Row(row);
  }
}

inline std::vector<SynthRecord> LoadSynthDataset(const std::filesystem::path& path, int label_dim,
                                                 int data_dim) {
  const auto table = io::ReadCsv(path);
  const std::size_t expected = 2 + static_cast<std::size_t>(label_dim + data_dim);
  if (table.header.size() != expected) {
    throw DimensionError(path.string() + ": header has " + std::to_string(table.header.size()) +
                         " columns, expected " + std::to_string(expected) + " for L=" +
                         std::to_string(label_dim) + ", d=" + std::to_string(data_dim));
  }
  std::vector<SynthRecord> out;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& f = table.rows[i];
    if (f.size() != expected) {
      throw DimensionError(table.Where(i) + " has " + std::to_string(f.size()) +
                           " fields, expected " + std::to_string(expected));
    }
    SynthRecord r;
    r.prompt_index = static_cast<int>(io::ParseInt(f[0], table.Where(i)));
    std::uint64_t seed = 0;
    auto [ptr, ec] = std::from_chars(f[1].data(), f[1].data() + f[1].size(), seed);
    if (ec != std::errc() || ptr != f[1].data() + f[1].size()) {
      throw ParseError(table.Where(i) + ": bad seed '" + f[1] + "'");
    }
    r.sample_seed = seed;
    if (r.prompt_index >= 0) {
      Vector y(label_dim);
      for (int l = 0; l < label_dim; ++l) {
        y[l] = static_cast<double>(io::ParseInt(f[2 + static_cast<std::size_t>(l)], table.Where(i)));
      }
      r.y = y;
    }
    r.x_hat.resize(data_dim);
    for (int j = 0; j < data_dim; ++j) {
      r.x_hat[j] = io::ParseDouble(f[2 + static_cast<std::size_t>(label_dim + j)], table.Where(i));
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace privdistill::diffusion

#endif  // PRIVDISTILL_DIFFUSION_HPP_
