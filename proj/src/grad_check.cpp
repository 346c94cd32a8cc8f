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

#include "msbert/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "msbert/error.hpp"

namespace msbert {
namespace {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

void update(GradCheckReport& report, double err, const std::string& name,
            std::size_t index) {
  ++report.coordinates;
  if (err > report.max_error) {
    report.max_error = err;
    report.worst_tensor = name;
    report.worst_index = index;
  }
}

double checked(double value) {
  if (!std::isfinite(value)) throw Error("grad_check: function value is not finite");
  return value;
}

}  // namespace

GradCheckReport grad_check(const TensorLoss& f, std::vector<Tensor> params,
                           double h) {
  auto evaluate = [&](bool with_grad, std::vector<Tensor>* grads) {
    Tape tape;
    std::vector<Var> leaves;
    for (const Tensor& p : params) leaves.push_back(tape.leaf(p));
    Var out = f(tape, leaves);
    const double value = checked(out.value().item());
    if (with_grad) {
      tape.backward(out);
      for (const Var& leaf : leaves) {
        grads->push_back(tape.has_grad(leaf.id()) ? tape.grad(leaf)
                                                  : Tensor::zeros_like(leaf.value()));
      }
    }
    return value;
  };

  std::vector<Tensor> analytic;
  evaluate(true, &analytic);

  GradCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      const double saved = params[k][i];
      params[k][i] = saved + h;
      const double up = evaluate(false, nullptr);
      params[k][i] = saved - h;
      const double down = evaluate(false, nullptr);
      params[k][i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      update(report, relative_error(analytic[k][i], numeric),
             "arg" + std::to_string(k), i);
    }
  }
  return report;
}

GradCheckReport grad_check(const StoreLoss& f, ParamStore& params, double h) {
  params.zero_grad();
  {
    Tape tape;
    Var out = f(tape, params);
    checked(out.value().item());
    tape.backward(out);
  }
  auto evaluate = [&]() {
    Tape tape;
    return checked(f(tape, params).value().item());
  };

  GradCheckReport report;
  for (auto& [name, p] : params) {
    const Tensor analytic = p.grad;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + h;
      const double up = evaluate();
      p.value[i] = saved - h;
      const double down = evaluate();
      p.value[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      update(report, relative_error(analytic[i], numeric), name, i);
    }
  }
  params.zero_grad();
  return report;
}

}  // namespace msbert
