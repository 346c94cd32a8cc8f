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
#include <map>
#include <span>
#include <string>

#include "json.hpp"
#include "msbert/autodiff.hpp"

namespace msbert {

struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-6;
  double weight_decay = 1e-2;
  double peak_lr = 1e-4;
  double warmup_ratio = 0.048;
  std::size_t total_steps = 1;

  void validate() const;
  std::size_t warmup_steps() const;
  bool operator==(const OptimizerConfig&) const = default;
};

void to_json(nlohmann::json& j, const OptimizerConfig& c);
void from_json(const nlohmann::json& j, OptimizerConfig& c);

// Linear 0 -> peak over warmup_steps(), then linear peak -> 0 at total_steps.
// Scales with `peak` when given instead of cfg.peak_lr.
double lr_at(std::size_t step, const OptimizerConfig& cfg);
double lr_at(std::size_t step, const OptimizerConfig& cfg, double peak);

// AdamW with decoupled weight decay; tensors whose `decay` flag is false are
// never decayed.
class AdamW {
 public:
  struct Moments {
    Tensor m;
    Tensor v;
  };

  explicit AdamW(const OptimizerConfig& cfg) : cfg_(cfg) {}

  // One update with a single learning rate for every tensor.
  void step(ParamStore& params, double lr);
  // One update where lr_by_group[p.group] is used for each tensor.
  void step(ParamStore& params, std::span<const double> lr_by_group);

  std::size_t steps_taken() const { return t_; }
  const std::map<std::string, Moments>& state() const { return state_; }

 private:
  OptimizerConfig cfg_;
  std::size_t t_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace msbert
