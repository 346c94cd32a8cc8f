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
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "msbert/autodiff.hpp"
#include "msbert/encoder.hpp"
#include "msbert/error.hpp"
#include "msbert/optimizer.hpp"
#include "msbert/rng.hpp"
#include "msbert/wordpiece.hpp"

namespace msbert {

inline constexpr int kIgnoreIndex = -100;

// Concatenates documents in order into sequences of exactly max_len pieces:
// [CLS] opens each sequence (when prepend_cls), [SEP] closes every document,
// documents overflow into the next sequence, and only the last sequence is
// [PAD]-filled. Word ids restart at 0 in each packed sequence.
std::vector<TokenizedSequence> pack_corpus(std::span<const TokenizedSequence> docs,
                                           const Vocabulary& vocab, std::size_t max_len,
                                           bool prepend_cls = true);

struct MaskingConfig {
  double mask_prob = 0.15;
  // Of the selected pieces: replaced by [MASK], by a random regular id, kept.
  double mask_fraction = 0.8;
  double random_fraction = 0.1;

  void validate() const;
  bool operator==(const MaskingConfig&) const = default;
};

void to_json(nlohmann::json& j, const MaskingConfig& c);
void from_json(const nlohmann::json& j, MaskingConfig& c);

struct MaskingOutcome {
  std::vector<int> piece_ids;
  // Original id at target positions, kIgnoreIndex elsewhere.
  std::vector<int> targets;
  std::vector<int> selected_words;
  std::size_t words_total = 0;
  std::size_t masked = 0;
  std::size_t randomized = 0;
  std::size_t kept = 0;

  std::size_t target_count() const { return masked + randomized + kept; }
};

// Dynamic whole-word masking: every word (all pieces with the same
// non-negative word id) is selected independently with mask_prob.
MaskingOutcome apply_dwwm(const TokenizedSequence& seq, const Vocabulary& vocab,
                          const MaskingConfig& cfg, Rng& rng);

struct PretrainConfig {
  EncoderConfig encoder;
  OptimizerConfig optimizer;
  MaskingConfig masking;
  std::size_t max_len = 128;
  std::size_t batch_size = 8;
  std::size_t log_every = 50;
  // Validation pseudo-perplexity every eval_every steps (0 = never).
  std::size_t eval_every = 0;
  bool prepend_cls = true;
  bool tie_weights = false;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const PretrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const PretrainConfig& c);
void from_json(const nlohmann::json& j, PretrainConfig& c);

// `mlm.transform.*`, `mlm.norm.*`, `mlm.decoder.*` (decoder weight omitted
// when tied to the token embeddings).
void add_mlm_head(ParamStore& store, const EncoderConfig& config, bool tie_weights, Rng& rng);

// Mean cross-entropy over target positions of one masked sequence, scaled by
// `weight`. Returns an invalid Var when there are no targets.
Var mlm_loss(Tape& tape, ParamStore& params, const PretrainConfig& cfg,
             const MaskingOutcome& masked, std::span<const int> attention_mask, Mode mode,
             Rng& dropout_rng, double weight = 1.0);

// exp(mean cross-entropy over masked targets) under the masking draw of
// Rng(seed); eval mode.
double pseudo_perplexity(std::span<const TokenizedSequence> split, const ParamStore& params,
                         const PretrainConfig& cfg, const Vocabulary& vocab,
                         std::uint64_t seed);

struct TraceRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::optional<double> ppl;
};

nlohmann::json to_json_line(const TraceRecord& r);

struct PretrainHooks {
  std::function<void(const TraceRecord&)> on_record;
  // Called after each validation evaluation.
  std::function<void(std::size_t step, const ParamStore&, double ppl)> on_eval;
};

class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t step, std::size_t restored_step)
      : Error("pretrain: loss diverged at step " + std::to_string(step) +
              "; parameters restored from step " + std::to_string(restored_step)),
        step_(step),
        restored_step_(restored_step) {}
  std::size_t step() const { return step_; }
  std::size_t restored_step() const { return restored_step_; }

 private:
  std::size_t step_;
  std::size_t restored_step_;
};

// Creates encoder and MLM head parameters from cfg.seed.
ParamStore init_pretraining_params(const PretrainConfig& cfg);

// Runs cfg.optimizer.total_steps updates on `params` in place. On a
// non-finite loss the last good snapshot is restored and DivergenceError is
// thrown.
std::vector<TraceRecord> mlm_train(ParamStore& params, std::span<const TokenizedSequence> train,
                                   std::span<const TokenizedSequence> valid,
                                   const Vocabulary& vocab, const PretrainConfig& cfg,
                                   const PretrainHooks& hooks = {});

// The i-th word of the synthetic lexicon shared by the synthetic corpora.
std::string synthetic_word(std::size_t i);

// Lines of a document-level copy-pattern grammar: each document walks a
// cycle of `word_types` distinct words, so every word is fixed by either
// neighbour.
std::vector<std::string> synthetic_copy_corpus(std::size_t documents, std::size_t word_types,
                                               std::size_t min_words, std::size_t max_words,
                                               Rng& rng);

}  // namespace msbert
