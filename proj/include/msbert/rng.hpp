// Copyright 2026 The msbert Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>

namespace msbert {

// SplitMix64 generator with named sub-streams.
//
// Stream rule: `derive(name)` seeds a child from the *root seed* of this
// generator (never from its current position) mixed with the FNV-1a hash of
// `name`. Consumers therefore never perturb each other: the masking stream
// is the same whether or not a dropout stream was ever drawn from.
//
// Streams used across the library:
//   "init"      parameter initialization (sub-derived per component)
//   "dropout"   dropout masks during training
//   "masking"   dynamic whole-word masking
//   "shuffle"   epoch order of training examples
//   "split"     dataset partitioning
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), state_(seed) {}

  Rng derive(std::string_view stream) const;
  Rng derive(std::uint64_t index) const;

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  // Uniform integer in [0, n) without modulo bias; n must be > 0.
  std::size_t uniform_index(std::size_t n);
  // Standard normal via Box-Muller (no cached second value).
  double normal();
  // Normal(0, stddev) resampled until |x| <= 2 * stddev.
  double truncated_normal(double stddev);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = uniform_index(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
};

std::uint64_t fnv1a64(std::string_view text);

}  // namespace msbert
