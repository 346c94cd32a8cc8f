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
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "msbert/autodiff.hpp"

namespace msbert {

struct GradCheckReport {
  // max over coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|)
  double max_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

// Central-difference check of a scalar function of free tensors. `f` receives
// one leaf Var per entry of `params`, in order.
using TensorLoss = std::function<Var(Tape&, std::span<const Var>)>;
GradCheckReport grad_check(const TensorLoss& f, std::vector<Tensor> params,
                           double h = 1e-5);

// Same check over every coordinate of every tensor in a ParamStore. `f` binds
// the parameters it uses through Tape::param. Parameter values are restored
// before returning and gradients are left zeroed.
using StoreLoss = std::function<Var(Tape&, ParamStore&)>;
GradCheckReport grad_check(const StoreLoss& f, ParamStore& params,
                           double h = 1e-5);

}  // namespace msbert
