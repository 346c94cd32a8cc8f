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
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "msbert/autodiff.hpp"
#include "msbert/data_io.hpp"
#include "msbert/encoder.hpp"
#include "msbert/evaluation.hpp"
#include "msbert/normalizer.hpp"
#include "msbert/rng.hpp"
#include "msbert/wordpiece.hpp"

namespace msbert {

// BIO tags B-e1, I-e1, ..., B-ek, I-ek, O.
class LabelScheme {
 public:
  LabelScheme() : tags_{"O"} {}
  explicit LabelScheme(std::vector<std::string> entity_types);

  const std::vector<std::string>& entity_types() const { return types_; }
  const std::vector<std::string>& tags() const { return tags_; }
  std::size_t size() const { return tags_.size(); }
  int outside() const { return static_cast<int>(tags_.size()) - 1; }

  // Throws for tags outside the scheme.
  int index(std::string_view tag) const;
  const std::string& tag(int index) const;

 private:
  std::vector<std::string> types_;
  std::vector<std::string> tags_;
};

enum class TaskKind { ner, rc, cls };
enum class TaggerVariant { linear, crf, bilstm_crf };

TaskKind parse_task(std::string_view name);
TaggerVariant parse_variant(std::string_view name);
std::string to_string(TaskKind task);
std::string to_string(TaggerVariant variant);

struct TaskModelConfig {
  TaskKind task = TaskKind::ner;
  TaggerVariant variant = TaggerVariant::linear;
  EncoderConfig encoder;
  BiLstmConfig bilstm;
  // NER: the entity types. RC / CLS: the class labels.
  std::vector<std::string> labels;

  void validate() const;
  // Width of the output layer.
  std::size_t num_outputs() const;
  // Width of the vectors fed to the output layer.
  std::size_t head_input_dim() const;
};

void to_json(nlohmann::json& j, const TaskModelConfig& c);
void from_json(const nlohmann::json& j, TaskModelConfig& c);

struct TaskModel {
  TaskModelConfig config;
  ParamStore params;
  Vocabulary vocab;
  MappingTable table;

  LabelScheme scheme() const;
};

// Fresh encoder plus task layers: `head.weight` [in x out], `head.bias`,
// optional `bilstm.*` and `crf.*` (group 1). Randomness from Rng(seed).
TaskModel build_model(const TaskModelConfig& config, Vocabulary vocab, MappingTable table,
                      std::uint64_t seed);
TaskModel build_tagger(TaggerVariant variant, const EncoderConfig& encoder,
                       const LabelScheme& scheme, Vocabulary vocab, MappingTable table,
                       std::uint64_t seed, const BiLstmConfig& bilstm = {});

// Copies the encoder tensors of a pretrained parameter set into `model`.
void load_encoder(TaskModel& model, const ParamStore& pretrained);

void save_model(const std::filesystem::path& dir, const TaskModel& model);
TaskModel load_model(const std::filesystem::path& dir);

// Pieces of whitespace tokens; every token keeps at least one piece and its
// token index as word id. No framing.
TokenizedSequence tokenize_words(std::span<const std::string> tokens, const Vocabulary& vocab,
                                 const MappingTable& table);

struct MarkedSequence {
  TokenizedSequence seq;
  std::size_t e1 = 0;  // index of [E1]
  std::size_t e2 = 0;  // index of [E2]
};

// Wraps the pieces of token spans `head` and `tail` (inclusive, via word_ids)
// with [E1] [/E1] and [E2] [/E2]. Markers get word id kNoWord.
MarkedSequence insert_markers(const TokenizedSequence& pieces,
                              std::pair<std::size_t, std::size_t> head,
                              std::pair<std::size_t, std::size_t> tail, const Vocabulary& vocab);
MarkedSequence insert_markers(const RelationInstance& instance, const Vocabulary& vocab,
                              const MappingTable& table);
// Drops the four marker pieces.
TokenizedSequence remove_markers(const TokenizedSequence& seq, const Vocabulary& vocab);

// Model inputs: framed pieces and the rows whose vectors reach the head.
struct Example {
  TokenizedSequence seq;
  std::vector<std::size_t> rows;
  // One class index per row (NER) or a single class (RC / CLS).
  std::vector<int> targets;
  // NER: number of whitespace tokens; tokens beyond rows.size() were cut.
  std::size_t num_tokens = 0;
};

Example make_ner_example(const TaskModel& model, std::span<const std::string> tokens,
                         std::span<const std::string> tags = {});
Example make_rc_example(const TaskModel& model, const RelationInstance& instance,
                        bool with_label = true);
Example make_cls_example(const TaskModel& model, std::string_view text,
                         std::optional<std::string_view> label = std::nullopt);

// Training loss of one example (sum over supervised rows for the softmax
// heads, sequence NLL for the CRF heads).
Var example_loss(Tape& tape, TaskModel& model, const Example& ex, Mode mode, Rng& dropout_rng);

// Output-layer scores [rows x outputs] (RC: [1 x outputs]); eval mode.
Tensor example_scores(const TaskModel& model, const Example& ex);

// Per-token BIO tags; tokens cut by truncation are tagged O.
std::vector<std::string> tag(const TaskModel& model, std::span<const std::string> tokens);

struct ClassPrediction {
  std::string label;
  std::vector<double> probabilities;  // in config.labels order
};

ClassPrediction classify_relation(const TaskModel& model, const RelationInstance& instance);
ClassPrediction classify_text(const TaskModel& model, std::string_view text);

struct FinetuneConfig {
  double head_lr = 3e-4;
  double encoder_lr = 5e-5;
  std::size_t batch_size = 16;
  double warmup_ratio = 0.1;
  std::size_t epochs = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  void validate() const;
  bool operator==(const FinetuneConfig&) const = default;
};

void to_json(nlohmann::json& j, const FinetuneConfig& c);
void from_json(const nlohmann::json& j, FinetuneConfig& c);

// One task's data; only the member matching the model task is read.
struct TaskData {
  std::vector<TaggedSentence> ner;
  std::vector<RelationInstance> rc;
  std::vector<TextRecord> cls;

  std::size_t size(TaskKind task) const;
};

struct EvalOptions {
  // Entity types for the NER macro average (all scheme types when unset).
  std::optional<std::vector<std::string>> macro_types;
};

struct TaskReport {
  F1Report f1;
  // Selection score: micro-F1 (NER / RC) or binary F1 of the second label
  // (two-class CLS; micro-F1 otherwise).
  double score = 0.0;
  std::vector<std::vector<std::string>> predictions;

  nlohmann::json to_json() const;
};

TaskReport evaluate_task(const TaskModel& model, const TaskData& data,
                         const EvalOptions& options = {});

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double valid_score = 0.0;
  bool best = false;
};

nlohmann::json to_json_line(const EpochRecord& r);

struct FinetuneHooks {
  // Called after each optimizer update with the learning rate of each group.
  std::function<void(std::size_t step, double loss, double encoder_lr, double head_lr)> on_step;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct FinetuneResult {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
  double best_score = 0.0;
};

// Trains every weight; group 0 (encoder) at encoder_lr, group 1 at head_lr,
// linear warmup then linear decay over all updates. The parameters of the
// best validation epoch (earliest on ties) are kept.
FinetuneResult finetune(TaskModel& model, const TaskData& train, const TaskData& valid,
                        const FinetuneConfig& cfg, std::uint64_t seed,
                        const FinetuneHooks& hooks = {}, const EvalOptions& options = {});

struct SeedRun {
  std::uint64_t seed = 0;
  FinetuneResult result;
  TaskReport test;
  TaskModel model;
};

struct SeedSummary {
  std::vector<SeedRun> runs;
  double mean_valid = 0.0;
  double mean_test_micro = 0.0;
  double mean_test_macro = 0.0;
};

// Fine-tunes one fresh model per seed and averages the scores. `make_model`
// builds the starting model for a seed.
SeedSummary finetune_seeds(const std::function<TaskModel(std::uint64_t)>& make_model,
                           const TaskData& train, const TaskData& valid, const TaskData& test,
                           const FinetuneConfig& cfg, std::span<const std::uint64_t> seeds,
                           const EvalOptions& options = {});

struct GridResult {
  double encoder_lr = 0.0;
  std::vector<std::pair<double, SeedSummary>> candidates;
  // Index into candidates.
  std::size_t best = 0;
};

// Runs finetune_seeds for each encoder rate and keeps the one with the
// highest mean validation score (first on ties).
GridResult encoder_lr_grid(const std::function<TaskModel(std::uint64_t)>& make_model,
                           const TaskData& train, const TaskData& valid, const TaskData& test,
                           FinetuneConfig cfg, std::span<const double> encoder_lrs,
                           std::span<const std::uint64_t> seeds, const EvalOptions& options = {});

struct Preset {
  std::string name;
  TaskKind task = TaskKind::ner;
  // NER entity types or class labels.
  std::vector<std::string> labels;
  // NER types entering the macro average.
  std::vector<std::string> macro_types;
  std::size_t epochs = 1;
  // Used when the data directory has a single file to split.
  std::vector<double> split_ratios;
};

const std::vector<Preset>& presets();
const Preset& find_preset(std::string_view name);

// Planted NER: sentences of syllable words where a word's class fixes its
// entity type and adjacent same-type words form one entity. `noise` is the
// probability of replacing a word with a random filler word.
std::vector<TaggedSentence> synthetic_ner(std::size_t sentences, std::size_t min_words,
                                          std::size_t max_words, double noise, Rng& rng);
std::vector<std::string> synthetic_ner_types();

// Directed relations between two marked spans. With c(w) = lexicon index
// mod 3 of a span's first word: "same" when c(head) == c(tail), "forward"
// when c(head) < c(tail), "backward" otherwise.
std::vector<RelationInstance> synthetic_relations(std::size_t instances, Rng& rng);
std::vector<std::string> synthetic_relation_labels();

// Two-class documents: label 1 when the first lexicon word occurs.
std::vector<TextRecord> synthetic_classification(std::size_t documents, Rng& rng);

}  // namespace msbert
