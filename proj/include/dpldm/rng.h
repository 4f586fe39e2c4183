// Copyright 2026 The dpldm Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DPLDM_RNG_H_
#define DPLDM_RNG_H_

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>

namespace dpldm {

// Domain tags that keep derived streams for different purposes disjoint.
enum class StreamTag : std::uint64_t {
  kInit = 1,
  kPoisson = 2,
  kDataNoise = 3,
  kDpNoise = 4,
  kSampler = 5,
  kLabelDrop = 6,
  kShuffle = 7,
  kDocGen = 8,
  kTemplate = 9,
  kLayoutPick = 10,
  kFeatures = 11,
  kClassifier = 12,
};

// Seeded generator. Streams are derived from (seed, tag, counters...) by
// hashing, so the values drawn for, say, sample 17 of step 3 do not depend
// on how work was split across threads.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  static Rng Stream(std::uint64_t seed, StreamTag tag,
                    std::initializer_list<std::uint64_t> counters = {});

  double Normal() { return normal_(engine_); }
  double Uniform() { return uniform_(engine_); }
  // Inclusive range.
  int UniformInt(int lo, int hi);
  bool Bernoulli(double p) { return p >= 1.0 || (p > 0.0 && Uniform() < p); }
  void FillNormal(std::span<double> out);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

std::uint64_t MixSeed(std::uint64_t a, std::uint64_t b);

}  // namespace dpldm

#endif  // DPLDM_RNG_H_
