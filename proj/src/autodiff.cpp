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

#include "msbert/autodiff.hpp"

#include "msbert/error.hpp"

namespace msbert {

bool default_decay_for(const std::string& name) {
  auto ends_with = [&](std::string_view suffix) {
    return name.size() >= suffix.size() &&
           name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return !(ends_with(".bias") || ends_with(".gain"));
}

Parameter& ParamStore::add(const std::string& name, Tensor value, int group) {
  if (params_.contains(name)) throw Error("params: duplicate tensor " + name);
  Parameter p;
  p.grad = Tensor::zeros_like(value);
  p.value = std::move(value);
  p.group = group;
  p.decay = default_decay_for(name);
  return params_.emplace(name, std::move(p)).first->second;
}

Parameter& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("params: no tensor named " + name);
  return it->second;
}

const Parameter& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("params: no tensor named " + name);
  return it->second;
}

bool ParamStore::contains(const std::string& name) const {
  return params_.contains(name);
}

void ParamStore::erase(const std::string& name) { params_.erase(name); }

std::size_t ParamStore::scalar_count() const {
  std::size_t total = 0;
  for (const auto& [name, p] : params_) total += p.value.size();
  return total;
}

void ParamStore::zero_grad() {
  for (auto& [name, p] : params_) {
    if (p.grad.shape() != p.value.shape()) {
      p.grad = Tensor::zeros_like(p.value);
    } else {
      p.grad.fill(0.0);
    }
  }
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, p] : params_) out.push_back(name);
  return out;
}

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, nullptr, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, nullptr, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return Var(this, it->second);
  nodes_.push_back(Node{p.value, {}, true, &p, {}});
  const std::size_t id = nodes_.size() - 1;
  bound_.emplace(&p, id);
  return Var(this, id);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs,
                 Backward backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, Backward backward) {
  bool tracked = false;
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw Error("tape: input recorded on another tape");
    tracked = tracked || nodes_[in.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, tracked, nullptr,
                        tracked ? std::move(backward) : Backward{}});
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_of(std::size_t id) {
  Node& node = nodes_[id];
  if (node.grad.empty() && !node.value.empty()) {
    node.grad = Tensor::zeros_like(node.value);
  }
  return node.grad;
}

const Tensor& Tape::grad(Var v) const {
  const Node& node = nodes_[v.id()];
  if (node.grad.empty()) {
    throw Error("tape: node " + std::to_string(v.id()) + " received no gradient");
  }
  return node.grad;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw Error("tape: loss recorded on another tape");
  if (loss.value().size() != 1) {
    throw Error("tape: backward needs a scalar loss, got " +
                shape_string(loss.shape()));
  }
  if (!nodes_[loss.id()].requires_grad) return;
  grad_of(loss.id())[0] += 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (node.grad.empty()) continue;
    if (node.backward) node.backward(*this, id);
    if (node.param != nullptr) {
      Parameter& p = *node.param;
      if (p.grad.shape() != p.value.shape()) p.grad = Tensor::zeros_like(p.value);
      for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += node.grad[i];
    }
  }
}

}  // namespace msbert
