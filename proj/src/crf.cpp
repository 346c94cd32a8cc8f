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

#include "msbert/crf.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "msbert/error.hpp"

namespace msbert {
namespace {

void check_shapes(const Tensor& e, const Tensor& trans, const Tensor& start, const Tensor& end) {
  const std::size_t k = start.size();
  if (k == 0 || start.rank() != 1 || end.shape() != start.shape() ||
      trans.shape() != Shape{k, k}) {
    throw Error("crf: bad parameter shapes transitions " + shape_string(trans.shape()) +
                ", start " + shape_string(start.shape()) + ", end " + shape_string(end.shape()));
  }
  if (e.rank() != 2 || e.rows() == 0 || e.cols() != k) {
    throw Error("crf: emissions " + shape_string(e.shape()) + " do not match " +
                std::to_string(k) + " labels");
  }
}

void check_labels(std::span<const int> labels, std::size_t n, std::size_t k) {
  if (labels.size() != n) {
    throw Error("crf: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                " positions");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw Error("crf: label " + std::to_string(y) + " out of range [0, " + std::to_string(k) +
                  ")");
    }
  }
}

double score_of(const Tensor& e, std::span<const int> y, const Tensor& trans, const Tensor& start,
                const Tensor& end) {
  // Same summation order as the forward recursion.
  double s = start[y[0]] + e.at(0, y[0]);
  for (std::size_t t = 1; t < y.size(); ++t) s = s + trans.at(y[t - 1], y[t]) + e.at(t, y[t]);
  return s + end[y.back()];
}

// alpha[t][j]: log-sum over prefixes ending in j at t, emission at t included.
Tensor forward(const Tensor& e, const Tensor& trans, const Tensor& start) {
  const std::size_t n = e.rows(), k = e.cols();
  Tensor alpha({n, k});
  for (std::size_t j = 0; j < k; ++j) alpha.at(0, j) = start[j] + e.at(0, j);
  std::vector<double> terms(k);
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t i = 0; i < k; ++i) terms[i] = alpha.at(t - 1, i) + trans.at(i, j);
      alpha.at(t, j) = log_sum_exp(terms) + e.at(t, j);
    }
  }
  return alpha;
}

// beta[t][i]: log-sum over suffixes after t given label i at t, end score included.
Tensor backward_scores(const Tensor& e, const Tensor& trans, const Tensor& end) {
  const std::size_t n = e.rows(), k = e.cols();
  Tensor beta({n, k});
  for (std::size_t i = 0; i < k; ++i) beta.at(n - 1, i) = end[i];
  std::vector<double> terms(k);
  for (std::size_t t = n - 1; t-- > 0;) {
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        terms[j] = trans.at(i, j) + e.at(t + 1, j) + beta.at(t + 1, j);
      }
      beta.at(t, i) = log_sum_exp(terms);
    }
  }
  return beta;
}

double finish(const Tensor& alpha, const Tensor& end) {
  const std::size_t n = alpha.rows(), k = alpha.cols();
  std::vector<double> terms(k);
  for (std::size_t j = 0; j < k; ++j) terms[j] = alpha.at(n - 1, j) + end[j];
  return log_sum_exp(terms);
}

}  // namespace

void CrfParams::validate() const {
  check_shapes(Tensor({1, start.size()}), transitions, start, end);
  if (!all_finite(transitions) || !all_finite(start) || !all_finite(end)) {
    throw Error("crf: non-finite parameters");
  }
}

void add_crf_params(ParamStore& store, std::size_t k, Rng& rng, int group) {
  if (k == 0) throw Error("crf: need at least one label");
  auto uniform = [&](Shape shape) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = (2.0 * rng.uniform() - 1.0) * 0.1;
    return t;
  };
  store.add("crf.transitions", uniform({k, k}), group);
  store.add("crf.start", uniform({k}), group);
  store.add("crf.end", uniform({k}), group);
}

CrfParams crf_params(const ParamStore& store) {
  return {store.at("crf.transitions").value, store.at("crf.start").value,
          store.at("crf.end").value};
}

double path_score(const Tensor& e, std::span<const int> labels, const CrfParams& p) {
  check_shapes(e, p.transitions, p.start, p.end);
  check_labels(labels, e.rows(), p.num_labels());
  return score_of(e, labels, p.transitions, p.start, p.end);
}

double log_partition(const Tensor& e, const CrfParams& p) {
  check_shapes(e, p.transitions, p.start, p.end);
  return finish(forward(e, p.transitions, p.start), p.end);
}

double nll(const Tensor& e, std::span<const int> labels, const CrfParams& p) {
  return log_partition(e, p) - path_score(e, labels, p);
}

ViterbiResult viterbi(const Tensor& e, const CrfParams& p) {
  check_shapes(e, p.transitions, p.start, p.end);
  const std::size_t n = e.rows(), k = e.cols();
  Tensor delta({n, k});
  std::vector<std::vector<int>> back(n, std::vector<int>(k, 0));
  for (std::size_t j = 0; j < k; ++j) delta.at(0, j) = p.start[j] + e.at(0, j);
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t j = 0; j < k; ++j) {
      double best = -std::numeric_limits<double>::infinity();
      int arg = 0;
      for (std::size_t i = 0; i < k; ++i) {
        const double v = delta.at(t - 1, i) + p.transitions.at(i, j);
        if (v > best) best = v, arg = static_cast<int>(i);
      }
      delta.at(t, j) = best + e.at(t, j);
      back[t][j] = arg;
    }
  }
  double best = -std::numeric_limits<double>::infinity();
  int last = 0;
  for (std::size_t j = 0; j < k; ++j) {
    const double v = delta.at(n - 1, j) + p.end[j];
    if (v > best) best = v, last = static_cast<int>(j);
  }
  ViterbiResult result;
  result.labels.assign(n, 0);
  result.labels[n - 1] = last;
  for (std::size_t t = n - 1; t > 0; --t) {
    result.labels[t - 1] = back[t][static_cast<std::size_t>(result.labels[t])];
  }
  result.score = score_of(e, result.labels, p.transitions, p.start, p.end);
  return result;
}

Var crf_nll(Var emissions, Var transitions, Var start, Var end, std::span<const int> labels) {
  const Tensor& e = emissions.value();
  const Tensor& tr = transitions.value();
  const Tensor& st = start.value();
  const Tensor& en = end.value();
  check_shapes(e, tr, st, en);
  const std::size_t n = e.rows(), k = e.cols();
  check_labels(labels, n, k);

  Tensor alpha = forward(e, tr, st);
  const double log_z = finish(alpha, en);
  const double value = log_z - score_of(e, labels, tr, st, en);
  std::vector<int> y(labels.begin(), labels.end());

  const std::size_t ei = emissions.id(), ti = transitions.id(), si = start.id(), ni = end.id();
  return emissions.tape().record(
      Tensor::scalar(value), {emissions, transitions, start, end},
      [=, alpha = std::move(alpha), y = std::move(y)](Tape& tp, std::size_t self) {
        const double g = tp.grad_of(self).item();
        const Tensor& ev = tp.value(ei);
        const Tensor& trv = tp.value(ti);
        const Tensor beta = backward_scores(ev, trv, tp.value(ni));
        if (tp.needs_grad(ei)) {
          Tensor& ge = tp.grad_of(ei);
          for (std::size_t t = 0; t < n; ++t) {
            for (std::size_t j = 0; j < k; ++j) {
              ge.at(t, j) += g * std::exp(alpha.at(t, j) + beta.at(t, j) - log_z);
            }
            ge.at(t, static_cast<std::size_t>(y[t])) -= g;
          }
        }
        if (tp.needs_grad(si)) {
          Tensor& gs = tp.grad_of(si);
          for (std::size_t j = 0; j < k; ++j) {
            gs[j] += g * std::exp(alpha.at(0, j) + beta.at(0, j) - log_z);
          }
          gs[static_cast<std::size_t>(y[0])] -= g;
        }
        if (tp.needs_grad(ni)) {
          Tensor& gn = tp.grad_of(ni);
          for (std::size_t j = 0; j < k; ++j) {
            gn[j] += g * std::exp(alpha.at(n - 1, j) + beta.at(n - 1, j) - log_z);
          }
          gn[static_cast<std::size_t>(y[n - 1])] -= g;
        }
        if (tp.needs_grad(ti)) {
          Tensor& gt = tp.grad_of(ti);
          for (std::size_t t = 0; t + 1 < n; ++t) {
            for (std::size_t i = 0; i < k; ++i) {
              for (std::size_t j = 0; j < k; ++j) {
                gt.at(i, j) += g * std::exp(alpha.at(t, i) + trv.at(i, j) + ev.at(t + 1, j) +
                                            beta.at(t + 1, j) - log_z);
              }
            }
            gt.at(static_cast<std::size_t>(y[t]), static_cast<std::size_t>(y[t + 1])) -= g;
          }
        }
      });
}

}  // namespace msbert
