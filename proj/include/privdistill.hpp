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

// Umbrella header.
#ifndef PRIVDISTILL_PRIVDISTILL_HPP_
#define PRIVDISTILL_PRIVDISTILL_HPP_

#include "privdistill/alignment.hpp"
#include "privdistill/cohort.hpp"
#include "privdistill/diffusion.hpp"
#include "privdistill/error.hpp"
#include "privdistill/filtering.hpp"
#include "privdistill/identity.hpp"
#include "privdistill/io.hpp"
#include "privdistill/metrics.hpp"
#include "privdistill/nn/adam.hpp"
#include "privdistill/nn/losses.hpp"
#include "privdistill/nn/network.hpp"
#include "privdistill/parallel.hpp"
#include "privdistill/pipeline.hpp"
#include "privdistill/retrieval.hpp"
#include "privdistill/rng.hpp"
#include "privdistill/stats.hpp"

#endif  // PRIVDISTILL_PRIVDISTILL_HPP_
