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
#include <string>
#include <vector>

#include "json.hpp"
#include "msbert/autodiff.hpp"
#include "msbert/ops.hpp"
#include "msbert/rng.hpp"
#include "msbert/tensor.hpp"
#include "msbert/wordpiece.hpp"

namespace msbert {

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t hidden_dim = 128;
  std::size_t num_layers = 4;
  std::size_t num_heads = 4;
  std::size_t ff_dim = 512;
  std::size_t max_positions = 128;
  double dropout_rate = 0.1;
  double layer_norm_eps = 1e-12;

  void validate() const;

  // L=4, d=128, heads=4, ff=512, P=128.
  static EncoderConfig desk(std::size_t vocab_size);
  // BERT-base shapes: L=12, d=768, heads=12, ff=3072, P=512.
  static EncoderConfig base(std::size_t vocab_size);

  bool operator==(const EncoderConfig&) const = default;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

// Closed-form scalar count of the encoder tensors (no task heads).
std::size_t encoder_param_count(const EncoderConfig& config);

// Adds `embeddings.*` and `layer.{i}.*` tensors to `store`.
void add_encoder_params(ParamStore& store, const EncoderConfig& config, Rng& rng);
ParamStore init_params(const EncoderConfig& config, std::uint64_t seed);

bool is_encoder_param(const std::string& name);

struct EncodeTrace {
  // attention[layer][head]: [len x len] probabilities.
  std::vector<std::vector<Tensor>> attention;
};

// Per-piece contextual embeddings [len x hidden]. Positions with
// attention_mask == 0 are never attended to.
Var encode(Tape& tape, ParamStore& params, const EncoderConfig& config,
           std::span<const int> piece_ids, std::span<const int> attention_mask,
           Mode mode, Rng& dropout_rng, EncodeTrace* trace = nullptr);
Var encode(Tape& tape, ParamStore& params, const EncoderConfig& config,
           const TokenizedSequence& seq, Mode mode, Rng& dropout_rng,
           EncodeTrace* trace = nullptr);

// Eval-mode convenience; does not touch gradients.
Tensor encode_eval(const ParamStore& params, const EncoderConfig& config,
                   const TokenizedSequence& seq, EncodeTrace* trace = nullptr);

struct BiLstmConfig {
  std::size_t num_layers = 2;
  std::size_t hidden_per_direction = 300;
  double inter_layer_dropout = 0.2;

  void validate() const;
  bool operator==(const BiLstmConfig&) const = default;
};

void to_json(nlohmann::json& j, const BiLstmConfig& c);
void from_json(const nlohmann::json& j, BiLstmConfig& c);

std::size_t bilstm_param_count(const BiLstmConfig& config, std::size_t input_dim);

// Adds `{prefix}.l{i}.{fwd,bwd}.{input.weight,recurrent.weight,bias}`.
// Gate order within the 4H columns: input, forget, cell, output.
void add_bilstm_params(ParamStore& store, const BiLstmConfig& config,
                       std::size_t input_dim, Rng& rng, int group = 1,
                       const std::string& prefix = "bilstm");

// One direction of an LSTM over the rows of x, zero initial state.
Var lstm(Var x, Var input_weight, Var recurrent_weight, Var bias, bool reverse);

// [len x 2H]: forward states then backward states per row.
Var bilstm(Var inputs, const BiLstmConfig& config, ParamStore& params, Mode mode,
           Rng& dropout_rng, const std::string& prefix = "bilstm");

}  // namespace msbert
