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

#ifndef PRIVDISTILL_NN_ADAM_HPP_
#define PRIVDISTILL_NN_ADAM_HPP_

#include <cmath>
#include <cstdint>
#include <string>

#include "privdistill/error.hpp"
#include "privdistill/nn/network.hpp"

namespace privdistill::nn {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamOptions options;
  Vector first_moment;
  Vector second_moment;
  std::int64_t step = 0;

  AdamState() = default;
  AdamState(std::size_t n, AdamOptions opts)
      : options(opts),
        first_moment(Vector::Zero(static_cast<Eigen::Index>(n))),
        second_moment(Vector::Zero(static_cast<Eigen::Index>(n))) {}
};

// Bias-corrected Adam update, in place.
inline void AdamStep(Vector& params, const Vector& grads, AdamState& state) {
  CheckDim(grads.size(), params.size(), "adam gradient");
  CheckDim(state.first_moment.size(), params.size(), "adam state");
  if (!grads.allFinite()) {
    Eigen::Index bad = 0;
    for (; bad < grads.size() && std::isfinite(grads[bad]); ++bad) {}
    throw TrainingError("non-finite gradient at parameter " + std::to_string(bad) +
                        " (step " + std::to_string(state.step + 1) + ")");
  }
  const auto& o = state.options;
  ++state.step;
  state.first_moment = o.beta1 * state.first_moment + (1.0 - o.beta1) * grads;
  state.second_moment =
      o.beta2 * state.second_moment + (1.0 - o.beta2) * grads.cwiseProduct(grads);
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  params.array() -= o.learning_rate * (state.first_moment.array() / c1) /
                    ((state.second_moment.array() / c2).sqrt() + o.epsilon);
}

// A network bundled with its optimizer state.
struct Trainable {
  Network net;
  AdamState adam;

  Trainable(Network n, AdamOptions opts) : net(std::move(n)), adam(net.param_count(), opts) {}

  void Step(const Vector& grads) { AdamStep(net.mutable_params(), grads, adam); }
};

}  // namespace privdistill::nn

#endif  // PRIVDISTILL_NN_ADAM_HPP_
