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

#ifndef PRIVDISTILL_RNG_HPP_
#define PRIVDISTILL_RNG_HPP_

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>
#include <utility>
#include <vector>

namespace privdistill {

inline constexpr std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Order-sensitive mix of a seed with a sequence of integer keys.
inline constexpr std::uint64_t DeriveSeed(std::uint64_t seed,
                                          std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = SplitMix64(seed);
  for (std::uint64_t k : keys) h = SplitMix64(h ^ SplitMix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

// Named stream keys so that stages never share draws by accident.
enum class StreamKey : std::uint64_t {
  kWorld = 1,
  kCohort,
  kSplit,
  kSubset,
  kDiffusionTrain,
  kSample,
  kReIdTrain,
  kRetrievalTrain,
  kAlignTrain,
  kClassifierTrain,
  kFilterResample,
  kEvalPairs,
  kPretrain,
  kNetInit,
};

// Deterministic random stream. Draws are produced from mt19937_64 with
// hand-written transforms so sequences do not depend on the standard
// library's distribution implementations.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t key = 0)
      : seed_(seed), key_(key), engine_(DeriveSeed(seed, {key})) {}
  RngStream(std::uint64_t seed, StreamKey key) : RngStream(seed, static_cast<std::uint64_t>(key)) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t key() const { return key_; }

  // Independent child stream; the parent's position is not consulted.
  RngStream Substream(std::uint64_t key) const {
    return RngStream(DeriveSeed(seed_, {key_, key}), 0);
  }
  RngStream Substream(StreamKey key) const {
    return Substream(static_cast<std::uint64_t>(key));
  }

  std::uint64_t NextU64() { return engine_(); }

  // Uniform in [0, 1).
  double Uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }

  // Uniform integer in [lo, hi] (inclusive), unbiased by rejection.
  std::int64_t UniformInt(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(engine_());
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % span);
    std::uint64_t r;
    do {
      r = engine_();
    } while (r >= limit);
    return lo + static_cast<std::int64_t>(r % span);
  }

  std::size_t Index(std::size_t n) {
    return static_cast<std::size_t>(UniformInt(0, static_cast<std::int64_t>(n) - 1));
  }

  bool Bernoulli(double p) { return Uniform() < p; }

  // Standard normal via Box-Muller; the second variate is cached.
  double Normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = Uniform();
    } while (u1 <= 0.0);
    const double u2 = Uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  template <typename T>
  void Shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[Index(i)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace privdistill

#endif  // PRIVDISTILL_RNG_HPP_
