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

// Dense feed-forward networks with exact reverse-mode gradients.
//
// Parameters live in one flat vector in canonical order: layer-major, and
// within a layer the weight matrix (out_dim x in_dim, row-major) followed by
// the bias vector. Batches are column-major: one sample per column.

#ifndef PRIVDISTILL_NN_NETWORK_HPP_
#define PRIVDISTILL_NN_NETWORK_HPP_

#include <Eigen/Dense>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "privdistill/error.hpp"
#include "privdistill/rng.hpp"

namespace privdistill::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMatrixMap =
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstRowMatrixMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

enum class Activation { kLinear, kRelu, kTanh, kSigmoid };

inline std::string_view ActivationName(Activation a) {
  switch (a) {
    case Activation::kLinear: return "linear";
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kSigmoid: return "sigmoid";
  }
  return "linear";
}

inline Activation ParseActivation(std::string_view name) {
  if (name == "linear") return Activation::kLinear;
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  if (name == "sigmoid") return Activation::kSigmoid;
  throw ParseError("unknown activation '" + std::string(name) + "'");
}

// Numerically stable logistic function.
inline double Sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct LayerSpec {
  int in_dim = 0;
  int out_dim = 0;
  Activation activation = Activation::kLinear;

  bool operator==(const LayerSpec&) const = default;
};

// Per-layer values recorded by a forward pass; consumed by Backward.
struct ForwardCache {
  std::uint64_t revision = 0;
  std::vector<Matrix> inputs;  // input to layer l, in_dim x batch
  std::vector<Matrix> pre;     // pre-activation of layer l, out_dim x batch
};

struct Gradients {
  Vector params;  // summed over the batch, canonical order
  Matrix input;   // dL/dx, in_dim x batch
};

class Network {
 public:
  Network() = default;

  // Xavier-uniform weights, zero biases.
  static Network Create(std::vector<LayerSpec> layers, std::uint64_t seed) {
    Network net(std::move(layers), seed);
    RngStream rng(seed, static_cast<std::uint64_t>(StreamKey::kNetInit));
    for (std::size_t l = 0; l < net.layers_.size(); ++l) {
      const auto& spec = net.layers_[l];
      const double limit = std::sqrt(6.0 / (spec.in_dim + spec.out_dim));
      auto w = net.mutable_weight(l);
      for (int o = 0; o < spec.out_dim; ++o) {
        for (int i = 0; i < spec.in_dim; ++i) w(o, i) = rng.Uniform(-limit, limit);
      }
    }
    return net;
  }

  static Network FromParams(std::vector<LayerSpec> layers, Vector params,
                            std::uint64_t seed) {
    Network net(std::move(layers), seed);
    CheckDim(params.size(), static_cast<long>(net.param_count()), "network parameters");
    net.params_ = std::move(params);
    return net;
  }

  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::uint64_t seed() const { return seed_; }
  int input_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim; }
  int output_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim; }
  std::size_t param_count() const { return static_cast<std::size_t>(params_.size()); }
  std::uint64_t revision() const { return revision_; }

  const Vector& params() const { return params_; }

  // Any cache recorded before this call becomes stale.
  Vector& mutable_params() {
    revision_ = NextRevision();
    return params_;
  }

  void set_params(const Vector& p) {
    CheckDim(p.size(), params_.size(), "network parameters");
    mutable_params() = p;
  }

  ConstRowMatrixMap weight(std::size_t l) const {
    return ConstRowMatrixMap(params_.data() + offsets_[l], layers_[l].out_dim,
                             layers_[l].in_dim);
  }
  Eigen::Map<const Vector> bias(std::size_t l) const {
    return Eigen::Map<const Vector>(
        params_.data() + offsets_[l] + layers_[l].out_dim * layers_[l].in_dim,
        layers_[l].out_dim);
  }
  RowMatrixMap mutable_weight(std::size_t l) {
    revision_ = NextRevision();
    return RowMatrixMap(params_.data() + offsets_[l], layers_[l].out_dim,
                        layers_[l].in_dim);
  }
  Eigen::Map<Vector> mutable_bias(std::size_t l) {
    revision_ = NextRevision();
    return Eigen::Map<Vector>(
        params_.data() + offsets_[l] + layers_[l].out_dim * layers_[l].in_dim,
        layers_[l].out_dim);
  }

  // Batched forward pass. Each column is evaluated independently with the
  // same kernel, so a sample's output does not depend on its batch mates.
  Matrix Forward(const Matrix& x, ForwardCache* cache = nullptr) const {
    CheckDim(x.rows(), input_dim(), "network input");
    if (cache != nullptr) {
      cache->revision = revision_;
      cache->inputs.assign(layers_.size(), Matrix());
      cache->pre.assign(layers_.size(), Matrix());
    }
    Matrix a = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto w = weight(l);
      const auto b = bias(l);
      Matrix z(layers_[l].out_dim, a.cols());
      for (Eigen::Index j = 0; j < a.cols(); ++j) {
        z.col(j).noalias() = w * a.col(j);
        z.col(j) += b;
      }
      if (cache != nullptr) {
        cache->inputs[l] = std::move(a);
        cache->pre[l] = z;
      }
      a = Activate(z, layers_[l].activation);
    }
    return a;
  }

  Vector Forward(const Vector& x) const {
    Matrix out = Forward(Matrix(x));
    return out.col(0);
  }

  // Exact gradients of sum_j <dL/dy_j, y_j> with respect to parameters and
  // inputs, given the cache of the matching forward call.
  Gradients Backward(const ForwardCache& cache, const Matrix& dy) const {
    if (cache.revision != revision_ || cache.pre.size() != layers_.size()) {
      throw ConfigError("stale or mismatched forward cache");
    }
    CheckDim(dy.rows(), output_dim(), "output gradient rows");
    CheckDim(dy.cols(), cache.pre.back().cols(), "output gradient batch");
    Gradients g;
    g.params = Vector::Zero(params_.size());
    Matrix delta = dy;
    for (std::size_t li = layers_.size(); li-- > 0;) {
      const auto& spec = layers_[li];
      const Matrix& z = cache.pre[li];
      delta = delta.cwiseProduct(Derivative(z, spec.activation));
      RowMatrixMap gw(g.params.data() + offsets_[li], spec.out_dim, spec.in_dim);
      gw.noalias() = delta * cache.inputs[li].transpose();
      Eigen::Map<Vector>(g.params.data() + offsets_[li] + spec.out_dim * spec.in_dim,
                         spec.out_dim) = delta.rowwise().sum();
      delta = weight(li).transpose() * delta;
    }
    g.input = std::move(delta);
    return g;
  }

  // Checkpoint document: manifest plus parameters as nested arrays.
  nlohmann::json ToJson() const {
    nlohmann::json layers = nlohmann::json::array();
    nlohmann::json params = nlohmann::json::array();
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      layers.push_back({{"in", layers_[l].in_dim},
                        {"out", layers_[l].out_dim},
                        {"activation", ActivationName(layers_[l].activation)}});
      nlohmann::json rows = nlohmann::json::array();
      const auto w = weight(l);
      for (int o = 0; o < layers_[l].out_dim; ++o) {
        std::vector<double> row(w.row(o).begin(), w.row(o).end());
        rows.push_back(row);
      }
      const auto b = bias(l);
      params.push_back({{"weight", rows}, {"bias", std::vector<double>(b.begin(), b.end())}});
    }
    return {{"format", "privdistill.network/1"},
            {"manifest", {{"layers", layers}, {"seed", seed_},
                          {"param_count", param_count()},
                          {"created_by", "privdistill 0.1.0"}}},
            {"params", params}};
  }

  static Network FromJson(const nlohmann::json& doc) {
    try {
      if (doc.at("format") != "privdistill.network/1") {
        throw ParseError("unsupported network format");
      }
      const auto& manifest = doc.at("manifest");
      std::vector<LayerSpec> layers;
      for (const auto& l : manifest.at("layers")) {
        layers.push_back({l.at("in").get<int>(), l.at("out").get<int>(),
                          ParseActivation(l.at("activation").get<std::string>())});
      }
      Network net(std::move(layers), manifest.at("seed").get<std::uint64_t>());
      const auto& params = doc.at("params");
      CheckDim(static_cast<long>(params.size()), static_cast<long>(net.layers_.size()),
               "checkpoint layer count");
      for (std::size_t l = 0; l < net.layers_.size(); ++l) {
        const auto& spec = net.layers_[l];
        const auto& rows = params[l].at("weight");
        CheckDim(static_cast<long>(rows.size()), spec.out_dim, "checkpoint weight rows");
        auto w = net.mutable_weight(l);
        for (int o = 0; o < spec.out_dim; ++o) {
          CheckDim(static_cast<long>(rows[o].size()), spec.in_dim, "checkpoint weight cols");
          for (int i = 0; i < spec.in_dim; ++i) w(o, i) = rows[o][i].get<double>();
        }
        const auto& bias = params[l].at("bias");
        CheckDim(static_cast<long>(bias.size()), spec.out_dim, "checkpoint bias");
        auto b = net.mutable_bias(l);
        for (int o = 0; o < spec.out_dim; ++o) b[o] = bias[o].get<double>();
      }
      return net;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("network checkpoint: ") + e.what());
    }
  }

  static Matrix Activate(const Matrix& z, Activation act) {
    switch (act) {
      case Activation::kLinear: return z;
      case Activation::kRelu: return z.cwiseMax(0.0);
      case Activation::kTanh: return z.array().tanh().matrix();
      case Activation::kSigmoid: return z.unaryExpr([](double v) { return Sigmoid(v); });
    }
    return z;
  }

  static Matrix Derivative(const Matrix& z, Activation act) {
    switch (act) {
      case Activation::kLinear: return Matrix::Ones(z.rows(), z.cols());
      case Activation::kRelu:
        return z.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
      case Activation::kTanh:
        return z.unaryExpr([](double v) {
          const double t = std::tanh(v);
          return 1.0 - t * t;
        });
      case Activation::kSigmoid:
        return z.unaryExpr([](double v) {
          const double s = Sigmoid(v);
          return s * (1.0 - s);
        });
    }
    return Matrix::Ones(z.rows(), z.cols());
  }

 private:
  Network(std::vector<LayerSpec> layers, std::uint64_t seed)
      : layers_(std::move(layers)), seed_(seed), revision_(NextRevision()) {
    if (layers_.empty()) throw ConfigError("network needs at least one layer");
    std::size_t total = 0;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& s = layers_[l];
      if (s.in_dim <= 0 || s.out_dim <= 0) {
        throw ConfigError("layer " + std::to_string(l) + " has a non-positive dimension");
      }
      if (l > 0 && layers_[l - 1].out_dim != s.in_dim) {
        throw ConfigError("layer " + std::to_string(l) + " input " +
                          std::to_string(s.in_dim) + " does not chain with previous output " +
                          std::to_string(layers_[l - 1].out_dim));
      }
      offsets_.push_back(total);
      total += static_cast<std::size_t>(s.in_dim) * s.out_dim + s.out_dim;
    }
    params_ = Vector::Zero(static_cast<Eigen::Index>(total));
  }

  static std::uint64_t NextRevision() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
  }

  std::vector<LayerSpec> layers_;
  std::vector<std::size_t> offsets_;
  Vector params_;
  std::uint64_t seed_ = 0;
  std::uint64_t revision_ = 0;
};

// Convenience for the common "hidden relu layers, linear output" shape.
inline std::vector<LayerSpec> Mlp(std::initializer_list<int> dims,
                                  Activation hidden = Activation::kRelu,
                                  Activation output = Activation::kLinear) {
  std::vector<int> d(dims);
  if (d.size() < 2) throw ConfigError("an MLP needs at least input and output dims");
  std::vector<LayerSpec> layers;
  for (std::size_t i = 0; i + 1 < d.size(); ++i) {
    layers.push_back({d[i], d[i + 1], i + 2 == d.size() ? output : hidden});
  }
  return layers;
}

}  // namespace privdistill::nn

#endif  // PRIVDISTILL_NN_NETWORK_HPP_
