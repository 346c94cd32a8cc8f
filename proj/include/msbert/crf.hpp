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
#include <span>
#include <vector>

#include "msbert/autodiff.hpp"
#include "msbert/rng.hpp"
#include "msbert/tensor.hpp"

namespace msbert {

// transitions[i][j] scores moving from label i to label j.
struct CrfParams {
  Tensor transitions;  // [K x K]
  Tensor start;        // [K]
  Tensor end;          // [K]

  std::size_t num_labels() const { return start.size(); }
  void validate() const;
};

// Adds `crf.transitions`, `crf.start`, `crf.end`, uniform in [-0.1, 0.1].
void add_crf_params(ParamStore& store, std::size_t num_labels, Rng& rng, int group = 1);
CrfParams crf_params(const ParamStore& store);

double path_score(const Tensor& emissions, std::span<const int> labels, const CrfParams& params);
double log_partition(const Tensor& emissions, const CrfParams& params);
double nll(const Tensor& emissions, std::span<const int> labels, const CrfParams& params);

struct ViterbiResult {
  std::vector<int> labels;
  double score = 0.0;
};

// Ties go to the lowest label index at each backtrack step.
ViterbiResult viterbi(const Tensor& emissions, const CrfParams& params);

// Differentiable negative log-likelihood of `labels`.
Var crf_nll(Var emissions, Var transitions, Var start, Var end, std::span<const int> labels);

}  // namespace msbert
