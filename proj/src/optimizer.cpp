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

#include "msbert/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "msbert/error.hpp"

namespace msbert {

void OptimizerConfig::validate() const {
  if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0)) {
    throw Error("optimizer: betas must lie in (0, 1)");
  }
  if (!(eps > 0.0)) throw Error("optimizer: eps must be > 0");
  if (!(weight_decay >= 0.0)) throw Error("optimizer: weight_decay must be >= 0");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) {
    throw Error("optimizer: warmup_ratio must lie in [0, 1)");
  }
  if (!(peak_lr >= 0.0)) throw Error("optimizer: peak_lr must be >= 0");
  if (total_steps == 0) throw Error("optimizer: total_steps must be >= 1");
}

std::size_t OptimizerConfig::warmup_steps() const {
  return static_cast<std::size_t>(std::floor(warmup_ratio * static_cast<double>(total_steps)));
}

void to_json(nlohmann::json& j, const OptimizerConfig& c) {
  j = nlohmann::json{{"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"eps", c.eps},
                     {"weight_decay", c.weight_decay},
                     {"peak_lr", c.peak_lr},
                     {"warmup_ratio", c.warmup_ratio},
                     {"total_steps", c.total_steps}};
}

void from_json(const nlohmann::json& j, OptimizerConfig& c) {
  j.at("beta1").get_to(c.beta1);
  j.at("beta2").get_to(c.beta2);
  j.at("eps").get_to(c.eps);
  j.at("weight_decay").get_to(c.weight_decay);
  j.at("peak_lr").get_to(c.peak_lr);
  j.at("warmup_ratio").get_to(c.warmup_ratio);
  j.at("total_steps").get_to(c.total_steps);
}

double lr_at(std::size_t step, const OptimizerConfig& cfg) { return lr_at(step, cfg, cfg.peak_lr); }

double lr_at(std::size_t step, const OptimizerConfig& cfg, double peak) {
  if (step > cfg.total_steps) {
    throw Error("lr_at: step " + std::to_string(step) + " outside [0, " +
                std::to_string(cfg.total_steps) + "]");
  }
  const std::size_t warm = cfg.warmup_steps();
  if (step < warm) return peak * static_cast<double>(step) / static_cast<double>(warm);
  if (step == warm) return peak;
  return peak * static_cast<double>(cfg.total_steps - step) /
         static_cast<double>(cfg.total_steps - warm);
}

void AdamW::step(ParamStore& params, double lr) {
  int max_group = 0;
  for (const auto& [name, p] : params) max_group = std::max(max_group, p.group);
  const std::vector<double> lrs(static_cast<std::size_t>(max_group) + 1, lr);
  step(params, lrs);
}

void AdamW::step(ParamStore& params, std::span<const double> lr_by_group) {
  for (const auto& [name, p] : params) {
    if (p.group < 0 || static_cast<std::size_t>(p.group) >= lr_by_group.size()) {
      throw Error("adamw: no learning rate for group " + std::to_string(p.group) + " of " +
                  name);
    }
    if (p.grad.empty()) continue;
    if (p.grad.shape() != p.value.shape()) {
      throw Error("adamw: gradient shape mismatch for " + name);
    }
    if (!all_finite(p.grad)) throw Error("adamw: non-finite gradient in " + name);
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& [name, p] : params) {
    const double lr = lr_by_group[static_cast<std::size_t>(p.group)];
    auto [it, fresh] = state_.try_emplace(name);
    Moments& s = it->second;
    if (fresh || s.m.shape() != p.value.shape()) {
      s.m = Tensor::zeros_like(p.value);
      s.v = Tensor::zeros_like(p.value);
    }
    if (p.decay && cfg_.weight_decay != 0.0) {
      const double shrink = 1.0 - lr * cfg_.weight_decay;
      for (double& w : p.value.values()) w *= shrink;
    }
    const bool has_grad = !p.grad.empty();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = has_grad ? p.grad[i] : 0.0;
      s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g;
      s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g * g;
      const double m_hat = s.m[i] / c1;
      const double v_hat = s.v[i] / c2;
      p.value[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
  }
}

}  // namespace msbert
