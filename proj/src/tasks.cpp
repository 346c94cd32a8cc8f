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

#include "msbert/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "msbert/crf.hpp"
#include "msbert/error.hpp"
#include "msbert/ops.hpp"
#include "msbert/optimizer.hpp"
#include "msbert/pretraining.hpp"

namespace msbert {

LabelScheme::LabelScheme(std::vector<std::string> entity_types) : types_(std::move(entity_types)) {
  std::set<std::string> seen;
  for (const auto& t : types_) {
    if (t.empty() || t == "O") throw Error("label scheme: invalid entity type '" + t + "'");
    if (!seen.insert(t).second) throw Error("label scheme: duplicate entity type '" + t + "'");
  }
  tags_.clear();
  for (const auto& t : types_) {
    tags_.push_back("B-" + t);
    tags_.push_back("I-" + t);
  }
  tags_.push_back("O");
}

int LabelScheme::index(std::string_view tag) const {
  const auto it = std::find(tags_.begin(), tags_.end(), tag);
  if (it == tags_.end()) throw Error("label scheme: unknown tag '" + std::string(tag) + "'");
  return static_cast<int>(it - tags_.begin());
}

const std::string& LabelScheme::tag(int index) const {
  if (index < 0 || static_cast<std::size_t>(index) >= tags_.size()) {
    throw Error("label scheme: tag index " + std::to_string(index) + " out of range");
  }
  return tags_[static_cast<std::size_t>(index)];
}

TaskKind parse_task(std::string_view name) {
  if (name == "ner") return TaskKind::ner;
  if (name == "rc") return TaskKind::rc;
  if (name == "cls") return TaskKind::cls;
  throw Error("unknown task '" + std::string(name) + "' (expected ner, rc or cls)");
}

TaggerVariant parse_variant(std::string_view name) {
  if (name == "linear") return TaggerVariant::linear;
  if (name == "crf") return TaggerVariant::crf;
  if (name == "bilstm_crf") return TaggerVariant::bilstm_crf;
  throw Error("unknown tagger variant '" + std::string(name) +
              "' (expected linear, crf or bilstm_crf)");
}

std::string to_string(TaskKind task) {
  switch (task) {
    case TaskKind::ner: return "ner";
    case TaskKind::rc: return "rc";
    case TaskKind::cls: return "cls";
  }
  return "?";
}

std::string to_string(TaggerVariant variant) {
  switch (variant) {
    case TaggerVariant::linear: return "linear";
    case TaggerVariant::crf: return "crf";
    case TaggerVariant::bilstm_crf: return "bilstm_crf";
  }
  return "?";
}

namespace {

bool uses_crf(const TaskModelConfig& c) {
  return c.task == TaskKind::ner && c.variant != TaggerVariant::linear;
}

bool uses_bilstm(const TaskModelConfig& c) {
  return c.task == TaskKind::ner && c.variant == TaggerVariant::bilstm_crf;
}

int label_index(const std::vector<std::string>& labels, std::string_view label) {
  const auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) throw Error("unknown label '" + std::string(label) + "'");
  return static_cast<int>(it - labels.begin());
}

}  // namespace

void TaskModelConfig::validate() const {
  encoder.validate();
  if (uses_bilstm(*this)) bilstm.validate();
  if (task == TaskKind::ner) {
    LabelScheme check(labels);
  } else {
    if (labels.size() < 2) throw Error("task model: at least two class labels required");
    std::set<std::string> seen(labels.begin(), labels.end());
    if (seen.size() != labels.size()) throw Error("task model: duplicate class label");
  }
}

std::size_t TaskModelConfig::num_outputs() const {
  return task == TaskKind::ner ? 2 * labels.size() + 1 : labels.size();
}

std::size_t TaskModelConfig::head_input_dim() const {
  if (uses_bilstm(*this)) return 2 * bilstm.hidden_per_direction;
  return task == TaskKind::rc ? 2 * encoder.hidden_dim : encoder.hidden_dim;
}

void to_json(nlohmann::json& j, const TaskModelConfig& c) {
  j = {{"task", to_string(c.task)},
       {"variant", to_string(c.variant)},
       {"encoder", c.encoder},
       {"bilstm", c.bilstm},
       {"labels", c.labels}};
}

void from_json(const nlohmann::json& j, TaskModelConfig& c) {
  c.task = parse_task(j.at("task").get<std::string>());
  c.variant = parse_variant(j.at("variant").get<std::string>());
  j.at("encoder").get_to(c.encoder);
  j.at("bilstm").get_to(c.bilstm);
  j.at("labels").get_to(c.labels);
}

LabelScheme TaskModel::scheme() const {
  if (config.task != TaskKind::ner) throw Error("task model: label scheme exists for ner only");
  return LabelScheme(config.labels);
}

TaskModel build_model(const TaskModelConfig& config, Vocabulary vocab, MappingTable table,
                      std::uint64_t seed) {
  config.validate();
  if (config.encoder.vocab_size != vocab.size()) {
    throw Error("task model: encoder vocab_size " + std::to_string(config.encoder.vocab_size) +
                " differs from vocabulary size " + std::to_string(vocab.size()));
  }
  if (config.task == TaskKind::rc) {
    for (auto m : {"[E1]", "[/E1]", "[E2]", "[/E2]"}) vocab.special_id(m);
  }
  TaskModel model{config, {}, std::move(vocab), std::move(table)};
  const Rng root(seed);
  Rng init = root.derive("init");
  add_encoder_params(model.params, config.encoder, init);
  Rng head = root.derive("head");
  if (uses_bilstm(config)) {
    add_bilstm_params(model.params, config.bilstm, config.encoder.hidden_dim, head, 1);
  }
  Tensor w({config.head_input_dim(), config.num_outputs()});
  for (double& v : w.values()) v = head.truncated_normal(0.02);
  model.params.add("head.weight", std::move(w), 1);
  model.params.add("head.bias", Tensor({config.num_outputs()}), 1);
  if (uses_crf(config)) add_crf_params(model.params, config.num_outputs(), head, 1);
  return model;
}

TaskModel build_tagger(TaggerVariant variant, const EncoderConfig& encoder,
                       const LabelScheme& scheme, Vocabulary vocab, MappingTable table,
                       std::uint64_t seed, const BiLstmConfig& bilstm) {
  TaskModelConfig c;
  c.task = TaskKind::ner;
  c.variant = variant;
  c.encoder = encoder;
  c.bilstm = bilstm;
  c.labels = scheme.entity_types();
  return build_model(c, std::move(vocab), std::move(table), seed);
}

void load_encoder(TaskModel& model, const ParamStore& pretrained) {
  const auto copied = load_params_into(model.params, pretrained, is_encoder_param);
  std::size_t expected = 0;
  for (const auto& [name, p] : model.params) expected += is_encoder_param(name) ? 1 : 0;
  if (copied.size() != expected) {
    throw Error("load encoder: checkpoint provides " + std::to_string(copied.size()) + " of " +
                std::to_string(expected) + " encoder tensors");
  }
}

void save_model(const std::filesystem::path& dir, const TaskModel& model) {
  Checkpoint c;
  c.config = model.config;
  c.scheme = model.config.task == TaskKind::ner ? nlohmann::json(model.scheme().tags())
                                                : nlohmann::json(model.config.labels);
  c.params = model.params;
  c.vocab = model.vocab;
  c.table = model.table;
  save_checkpoint(dir, c);
}

TaskModel load_model(const std::filesystem::path& dir) {
  Checkpoint c = load_checkpoint(dir);
  if (!c.config.is_object() || !c.config.contains("task")) {
    throw Error("load model: " + dir.string() + " is not a task model checkpoint");
  }
  TaskModelConfig config = c.config.get<TaskModelConfig>();
  TaskModel model = build_model(config, c.vocab, c.table, 0);
  for (const auto& [name, p] : c.params) {
    if (!model.params.contains(name)) throw Error("load model: unexpected tensor " + name);
  }
  for (const auto& [name, p] : model.params) {
    if (!c.params.contains(name)) throw Error("load model: missing tensor " + name);
  }
  load_params_into(model.params, c.params);
  return model;
}

TokenizedSequence tokenize_words(std::span<const std::string> tokens, const Vocabulary& vocab,
                                 const MappingTable& table) {
  TokenizedSequence out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::size_t before = out.size();
    for (const auto& w : split_whitespace(normalize(tokens[i], table))) {
      for (int id : tokenize_word(w, vocab)) out.push(id, static_cast<int>(i));
    }
    if (out.size() == before) out.push(vocab.unk_id(), static_cast<int>(i));
  }
  return out;
}

MarkedSequence insert_markers(const TokenizedSequence& pieces,
                              std::pair<std::size_t, std::size_t> head,
                              std::pair<std::size_t, std::size_t> tail, const Vocabulary& vocab) {
  std::size_t num_tokens = 0;
  for (int w : pieces.word_ids) {
    if (w >= 0) num_tokens = std::max(num_tokens, static_cast<std::size_t>(w) + 1);
  }
  validate_spans(head, tail, num_tokens);
  auto first_piece = [&](std::size_t word) {
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      if (pieces.word_ids[i] == static_cast<int>(word)) return i;
    }
    throw Error("insert markers: token " + std::to_string(word) + " has no pieces");
  };
  auto last_piece = [&](std::size_t word) {
    for (std::size_t i = pieces.size(); i-- > 0;) {
      if (pieces.word_ids[i] == static_cast<int>(word)) return i;
    }
    throw Error("insert markers: token " + std::to_string(word) + " has no pieces");
  };
  const std::size_t hs = first_piece(head.first), he = last_piece(head.second);
  const std::size_t ts = first_piece(tail.first), te = last_piece(tail.second);
  const int e1 = vocab.special_id("[E1]"), e1c = vocab.special_id("[/E1]");
  const int e2 = vocab.special_id("[E2]"), e2c = vocab.special_id("[/E2]");

  MarkedSequence out;
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    if (i == hs) {
      out.e1 = out.seq.size();
      out.seq.push(e1, kNoWord);
    }
    if (i == ts) {
      out.e2 = out.seq.size();
      out.seq.push(e2, kNoWord);
    }
    out.seq.push(pieces.piece_ids[i], pieces.word_ids[i], pieces.attention_mask[i]);
    if (i == he) out.seq.push(e1c, kNoWord);
    if (i == te) out.seq.push(e2c, kNoWord);
  }
  return out;
}

MarkedSequence insert_markers(const RelationInstance& instance, const Vocabulary& vocab,
                              const MappingTable& table) {
  validate_spans(instance.head, instance.tail, instance.tokens.size());
  return insert_markers(tokenize_words(instance.tokens, vocab, table), instance.head,
                        instance.tail, vocab);
}

TokenizedSequence remove_markers(const TokenizedSequence& seq, const Vocabulary& vocab) {
  const std::set<int> markers{vocab.special_id("[E1]"), vocab.special_id("[/E1]"),
                              vocab.special_id("[E2]"), vocab.special_id("[/E2]")};
  TokenizedSequence out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (!markers.count(seq.piece_ids[i])) {
      out.push(seq.piece_ids[i], seq.word_ids[i], seq.attention_mask[i]);
    }
  }
  return out;
}

namespace {

// [CLS] seq[start, start + count) [SEP]
TokenizedSequence frame(const TokenizedSequence& seq, std::size_t start, std::size_t count,
                        const Vocabulary& vocab) {
  TokenizedSequence out;
  out.push(vocab.cls_id(), kNoWord);
  for (std::size_t i = start; i < start + count; ++i) {
    out.push(seq.piece_ids[i], seq.word_ids[i], seq.attention_mask[i]);
  }
  out.push(vocab.sep_id(), kNoWord);
  return out;
}

std::size_t piece_budget(const TaskModel& model) {
  return model.config.encoder.max_positions - 2;
}

void require_task(const TaskModel& model, TaskKind task, const char* what) {
  if (model.config.task != task) {
    throw Error(std::string(what) + ": model was built for task " + to_string(model.config.task));
  }
}

}  // namespace

Example make_ner_example(const TaskModel& model, std::span<const std::string> tokens,
                         std::span<const std::string> tags) {
  require_task(model, TaskKind::ner, "tag");
  if (!tags.empty() && tags.size() != tokens.size()) {
    throw Error("tag: " + std::to_string(tags.size()) + " tags for " +
                std::to_string(tokens.size()) + " tokens");
  }
  const TokenizedSequence pieces = tokenize_words(tokens, model.vocab, model.table);
  const std::size_t kept = std::min(pieces.size(), piece_budget(model));
  Example ex;
  ex.seq = frame(pieces, 0, kept, model.vocab);
  ex.num_tokens = tokens.size();
  int last_word = kNoWord;
  for (std::size_t i = 0; i < ex.seq.size(); ++i) {
    const int w = ex.seq.word_ids[i];
    if (w >= 0 && w != last_word) {
      ex.rows.push_back(i);
      last_word = w;
    }
  }
  if (!tags.empty()) {
    const LabelScheme scheme = model.scheme();
    for (std::size_t r = 0; r < ex.rows.size(); ++r) ex.targets.push_back(scheme.index(tags[r]));
  }
  return ex;
}

Example make_rc_example(const TaskModel& model, const RelationInstance& instance,
                        bool with_label) {
  require_task(model, TaskKind::rc, "relate");
  const MarkedSequence marked = insert_markers(instance, model.vocab, model.table);
  const std::size_t n = marked.seq.size(), cap = piece_budget(model);
  std::size_t start = 0, count = n;
  if (n > cap) {
    const int e1c = model.vocab.special_id("[/E1]"), e2c = model.vocab.special_id("[/E2]");
    std::size_t hi = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const int id = marked.seq.piece_ids[i];
      if (id == e1c || id == e2c) hi = i;
    }
    const std::size_t lo = std::min(marked.e1, marked.e2);
    if (hi - lo + 1 > cap) {
      throw Error("relate: marked spans need " + std::to_string(hi - lo + 1) +
                  " pieces, more than the " + std::to_string(cap) + " available");
    }
    start = std::min(lo, n - cap);
    count = cap;
  }
  Example ex;
  ex.seq = frame(marked.seq, start, count, model.vocab);
  ex.rows = {marked.e1 - start + 1, marked.e2 - start + 1};
  ex.num_tokens = instance.tokens.size();
  if (with_label) ex.targets = {label_index(model.config.labels, instance.label)};
  return ex;
}

Example make_cls_example(const TaskModel& model, std::string_view text,
                         std::optional<std::string_view> label) {
  require_task(model, TaskKind::cls, "classify");
  const TokenizedSequence pieces = tokenize(normalize(text, model.table), model.vocab);
  if (pieces.empty()) throw Error("classify: empty text");
  Example ex;
  ex.seq = frame(pieces, 0, std::min(pieces.size(), piece_budget(model)), model.vocab);
  ex.rows = {0};
  ex.num_tokens = split_whitespace(text).size();
  if (label) ex.targets = {label_index(model.config.labels, *label)};
  return ex;
}

namespace {

Var head_scores(Tape& tape, TaskModel& model, const Example& ex, Mode mode, Rng& rng) {
  const TaskModelConfig& c = model.config;
  Var h = encode(tape, model.params, c.encoder, ex.seq, mode, rng);
  if (uses_bilstm(c)) {
    h = bilstm(h, c.bilstm, model.params, mode, rng);
  }
  h = dropout(h, c.encoder.dropout_rate, rng, mode);
  Var x = gather_rows(h, ex.rows);
  if (c.task == TaskKind::rc) x = reshape(x, {1, 2 * c.encoder.hidden_dim});
  return linear(x, tape.param(model.params.at("head.weight")),
                tape.param(model.params.at("head.bias")));
}

}  // namespace

Var example_loss(Tape& tape, TaskModel& model, const Example& ex, Mode mode, Rng& dropout_rng) {
  if (ex.rows.empty()) return Var();
  const std::size_t expected = model.config.task == TaskKind::ner ? ex.rows.size() : 1;
  if (ex.targets.size() != expected) throw Error("example loss: example has no labels");
  Var scores = head_scores(tape, model, ex, mode, dropout_rng);
  if (uses_crf(model.config)) {
    return crf_nll(scores, tape.param(model.params.at("crf.transitions")),
                   tape.param(model.params.at("crf.start")),
                   tape.param(model.params.at("crf.end")), ex.targets);
  }
  return scale(cross_entropy(scores, ex.targets), static_cast<double>(ex.targets.size()));
}

Tensor example_scores(const TaskModel& model, const Example& ex) {
  Tape tape;
  Rng unused(0);
  // Eval mode never writes to the parameters; binding needs a mutable handle.
  auto& mutable_model = const_cast<TaskModel&>(model);
  return head_scores(tape, mutable_model, ex, Mode::eval, unused).value();
}

std::vector<std::string> tag(const TaskModel& model, std::span<const std::string> tokens) {
  if (tokens.empty()) {
    require_task(model, TaskKind::ner, "tag");
    return {};
  }
  const Example ex = make_ner_example(model, tokens);
  const LabelScheme scheme = model.scheme();
  std::vector<std::string> out;
  if (!ex.rows.empty()) {
    const Tensor scores = example_scores(model, ex);
    if (uses_crf(model.config)) {
      for (int k : viterbi(scores, crf_params(model.params)).labels) out.push_back(scheme.tag(k));
    } else {
      for (std::size_t r = 0; r < scores.rows(); ++r) {
        const auto row = scores.row(r);
        const auto best = std::max_element(row.begin(), row.end()) - row.begin();
        out.push_back(scheme.tag(static_cast<int>(best)));
      }
    }
  }
  out.resize(tokens.size(), "O");
  return out;
}

namespace {

ClassPrediction predict_class(const TaskModel& model, const Example& ex) {
  const Tensor probs = softmax(example_scores(model, ex), 1);
  ClassPrediction p;
  p.probabilities.assign(probs.values().begin(), probs.values().end());
  const auto best = std::max_element(p.probabilities.begin(), p.probabilities.end()) -
                    p.probabilities.begin();
  p.label = model.config.labels[static_cast<std::size_t>(best)];
  return p;
}

}  // namespace

ClassPrediction classify_relation(const TaskModel& model, const RelationInstance& instance) {
  return predict_class(model, make_rc_example(model, instance, false));
}

ClassPrediction classify_text(const TaskModel& model, std::string_view text) {
  return predict_class(model, make_cls_example(model, text));
}

void FinetuneConfig::validate() const {
  if (!(head_lr > 0.0) || !(encoder_lr > 0.0)) throw Error("finetune: learning rates must be positive");
  if (batch_size == 0) throw Error("finetune: batch_size must be positive");
  if (!(warmup_ratio >= 0.0 && warmup_ratio <= 1.0)) throw Error("finetune: warmup_ratio must be in [0, 1]");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw Error("finetune: betas must be in [0, 1)");
  }
  if (!(eps > 0.0)) throw Error("finetune: eps must be positive");
  if (!(weight_decay >= 0.0)) throw Error("finetune: weight_decay must be non-negative");
}

void to_json(nlohmann::json& j, const FinetuneConfig& c) {
  j = {{"head_lr", c.head_lr},         {"encoder_lr", c.encoder_lr}, {"batch_size", c.batch_size},
       {"warmup_ratio", c.warmup_ratio}, {"epochs", c.epochs},         {"beta1", c.beta1},
       {"beta2", c.beta2},             {"eps", c.eps},               {"weight_decay", c.weight_decay}};
}

void from_json(const nlohmann::json& j, FinetuneConfig& c) {
  j.at("head_lr").get_to(c.head_lr);
  j.at("encoder_lr").get_to(c.encoder_lr);
  j.at("batch_size").get_to(c.batch_size);
  j.at("warmup_ratio").get_to(c.warmup_ratio);
  j.at("epochs").get_to(c.epochs);
  j.at("beta1").get_to(c.beta1);
  j.at("beta2").get_to(c.beta2);
  j.at("eps").get_to(c.eps);
  j.at("weight_decay").get_to(c.weight_decay);
}

std::size_t TaskData::size(TaskKind task) const {
  switch (task) {
    case TaskKind::ner: return ner.size();
    case TaskKind::rc: return rc.size();
    case TaskKind::cls: return cls.size();
  }
  return 0;
}

nlohmann::json TaskReport::to_json() const {
  nlohmann::json j = f1.to_json();
  j["score"] = score;
  return j;
}

TaskReport evaluate_task(const TaskModel& model, const TaskData& data, const EvalOptions& options) {
  TaskReport report;
  const auto& labels = model.config.labels;
  switch (model.config.task) {
    case TaskKind::ner: {
      std::vector<std::vector<std::string>> gold;
      for (const auto& s : data.ner) {
        gold.push_back(s.tags);
        report.predictions.push_back(tag(model, s.tokens));
      }
      report.f1 = entity_f1(gold, report.predictions,
                            options.macro_types ? options.macro_types : std::optional(labels));
      report.score = report.f1.micro_f1;
      break;
    }
    case TaskKind::rc:
    case TaskKind::cls: {
      std::vector<std::string> gold, pred;
      const bool rc = model.config.task == TaskKind::rc;
      const std::size_t n = rc ? data.rc.size() : data.cls.size();
      for (std::size_t i = 0; i < n; ++i) {
        const std::string& g = rc ? data.rc[i].label : data.cls[i].label;
        label_index(labels, g);
        gold.push_back(g);
        pred.push_back(rc ? classify_relation(model, data.rc[i]).label
                          : classify_text(model, data.cls[i].text).label);
        report.predictions.push_back({pred.back()});
      }
      report.f1 = multiclass_f1(gold, pred);
      report.score = report.f1.micro_f1;
      if (!rc && labels.size() == 2) {
        std::vector<int> g01, p01;
        for (std::size_t i = 0; i < n; ++i) {
          g01.push_back(gold[i] == labels[1] ? 1 : 0);
          p01.push_back(pred[i] == labels[1] ? 1 : 0);
        }
        report.score = binary_f1(g01, p01);
      }
      break;
    }
  }
  return report;
}

nlohmann::json to_json_line(const EpochRecord& r) {
  return {{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"valid_score", r.valid_score},
          {"best", r.best}};
}

namespace {

std::vector<Example> training_examples(const TaskModel& model, const TaskData& data) {
  std::vector<Example> out;
  switch (model.config.task) {
    case TaskKind::ner:
      for (const auto& s : data.ner) {
        Example ex = make_ner_example(model, s.tokens, s.tags);
        if (!ex.rows.empty()) out.push_back(std::move(ex));
      }
      break;
    case TaskKind::rc:
      for (const auto& r : data.rc) out.push_back(make_rc_example(model, r));
      break;
    case TaskKind::cls:
      for (const auto& r : data.cls) out.push_back(make_cls_example(model, r.text, r.label));
      break;
  }
  return out;
}

}  // namespace

FinetuneResult finetune(TaskModel& model, const TaskData& train, const TaskData& valid,
                        const FinetuneConfig& cfg, std::uint64_t seed, const FinetuneHooks& hooks,
                        const EvalOptions& options) {
  cfg.validate();
  model.config.validate();
  const TaskKind task = model.config.task;
  if (train.size(task) == 0) throw Error("finetune: empty training split");
  if (valid.size(task) == 0) throw Error("finetune: empty validation split");
  const std::vector<Example> examples = training_examples(model, train);
  if (examples.empty()) throw Error("finetune: no supervised examples in training split");

  FinetuneResult result;
  if (cfg.epochs == 0) return result;

  const std::size_t per_epoch = (examples.size() + cfg.batch_size - 1) / cfg.batch_size;
  OptimizerConfig oc;
  oc.beta1 = cfg.beta1;
  oc.beta2 = cfg.beta2;
  oc.eps = cfg.eps;
  oc.weight_decay = cfg.weight_decay;
  oc.peak_lr = cfg.head_lr;
  oc.warmup_ratio = cfg.warmup_ratio;
  oc.total_steps = per_epoch * cfg.epochs;
  AdamW adam(oc);

  const Rng root(seed);
  Rng shuffle_rng = root.derive("shuffle");
  Rng dropout_rng = root.derive("dropout");
  const bool crf = uses_crf(model.config);

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::map<std::string, Tensor> best;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < per_epoch; ++b, ++step) {
      const std::size_t lo = b * cfg.batch_size;
      const std::size_t hi = std::min(lo + cfg.batch_size, order.size());
      double denom = 0.0;
      for (std::size_t i = lo; i < hi; ++i) {
        denom += crf ? 1.0 : static_cast<double>(examples[order[i]].targets.size());
      }
      model.params.zero_grad();
      double loss = 0.0;
      for (std::size_t i = lo; i < hi; ++i) {
        Tape tape;
        Var l = example_loss(tape, model, examples[order[i]], Mode::train, dropout_rng);
        l = scale(l, 1.0 / denom);
        tape.backward(l);
        loss += l.value().item();
      }
      if (!std::isfinite(loss)) {
        throw Error("finetune: non-finite loss at step " + std::to_string(step + 1));
      }
      const double lrs[2] = {lr_at(step, oc, cfg.encoder_lr), lr_at(step, oc, cfg.head_lr)};
      adam.step(model.params, lrs);
      epoch_loss += loss;
      if (hooks.on_step) hooks.on_step(step + 1, loss, lrs[0], lrs[1]);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(per_epoch);
    rec.valid_score = evaluate_task(model, valid, options).score;
    if (result.best_epoch == 0 || rec.valid_score > result.best_score) {
      rec.best = true;
      result.best_epoch = epoch;
      result.best_score = rec.valid_score;
      best.clear();
      for (const auto& [name, p] : model.params) best.emplace(name, p.value);
    }
    result.epochs.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
  }
  for (auto& [name, p] : model.params) {
    p.value = best.at(name);
    p.grad = Tensor();
  }
  return result;
}

SeedSummary finetune_seeds(const std::function<TaskModel(std::uint64_t)>& make_model,
                           const TaskData& train, const TaskData& valid, const TaskData& test,
                           const FinetuneConfig& cfg, std::span<const std::uint64_t> seeds,
                           const EvalOptions& options) {
  if (seeds.empty()) throw Error("finetune: no seeds");
  SeedSummary s;
  for (std::uint64_t seed : seeds) {
    SeedRun run{seed, {}, {}, make_model(seed)};
    run.result = finetune(run.model, train, valid, cfg, seed, {}, options);
    if (test.size(run.model.config.task) > 0) run.test = evaluate_task(run.model, test, options);
    s.mean_valid += run.result.best_score;
    s.mean_test_micro += run.test.f1.micro_f1;
    s.mean_test_macro += run.test.f1.macro_f1;
    s.runs.push_back(std::move(run));
  }
  const double n = static_cast<double>(seeds.size());
  s.mean_valid /= n;
  s.mean_test_micro /= n;
  s.mean_test_macro /= n;
  return s;
}

GridResult encoder_lr_grid(const std::function<TaskModel(std::uint64_t)>& make_model,
                           const TaskData& train, const TaskData& valid, const TaskData& test,
                           FinetuneConfig cfg, std::span<const double> encoder_lrs,
                           std::span<const std::uint64_t> seeds, const EvalOptions& options) {
  if (encoder_lrs.empty()) throw Error("finetune grid: no encoder learning rates");
  GridResult g;
  for (double lr : encoder_lrs) {
    cfg.encoder_lr = lr;
    g.candidates.emplace_back(lr, finetune_seeds(make_model, train, valid, test, cfg, seeds, options));
    if (g.candidates.back().second.mean_valid > g.candidates[g.best].second.mean_valid) {
      g.best = g.candidates.size() - 1;
    }
  }
  g.encoder_lr = g.candidates[g.best].first;
  return g;
}

const std::vector<Preset>& presets() {
  static const std::vector<Preset> all = [] {
    std::vector<Preset> p;
    const std::vector<std::string> matscholar{"MAT", "SPL", "DSC", "PRO", "APL", "SMT", "CMT"};
    p.push_back({"matscholar", TaskKind::ner, matscholar, matscholar, 15, {}});
    const std::vector<std::string> sofc{"MATERIAL", "EXPERIMENT", "VALUE", "DEVICE"};
    p.push_back({"sofc", TaskKind::ner, sofc, sofc, 20, {}});
    std::vector<std::string> slot{"anode_material",       "cathode_material",
                                  "conductivity",         "current_density",
                                  "degradation_rate",     "device",
                                  "electrolyte_material", "fuel_used",
                                  "interlayer_material",  "open_circuit_voltage",
                                  "power_density",        "resistance",
                                  "support_material",     "time_of_operation",
                                  "voltage",              "working_temperature",
                                  "thickness"};
    const std::vector<std::string> slot_macro = slot;
    slot.push_back("experiment_evoking_word");
    p.push_back({"sofc-slot", TaskKind::ner, slot, slot_macro, 40, {}});
    const std::vector<std::string> mspt{
        "recipe_target",     "solvent_material", "atmospheric_material", "recipe_precursor",
        "participant_material", "apparatus_of",  "condition_of",         "descriptor_of",
        "number_of",         "amount_of",        "apparatus_attr_of",    "brand_of",
        "core_of",           "property_of",      "type_of",              "next_operation"};
    p.push_back({"mspt", TaskKind::rc, mspt, {}, 10, {}});
    p.push_back({"glass", TaskKind::cls, {"0", "1"}, {}, 10, {0.6, 0.2, 0.2}});
    return p;
  }();
  return all;
}

const Preset& find_preset(std::string_view name) {
  for (const auto& p : presets()) {
    if (p.name == name) return p;
  }
  std::string known;
  for (const auto& p : presets()) known += (known.empty() ? "" : ", ") + p.name;
  throw Error("unknown preset '" + std::string(name) + "' (known: " + known + ")");
}

namespace {

// Word types 0..7 of the synthetic lexicon and their entity classes.
constexpr std::size_t kLexicon = 8;
const char* const kNerClass[kLexicon] = {"MAT", "MAT", nullptr, "VAL", nullptr, "DEV", "DEV", nullptr};

}  // namespace

std::vector<std::string> synthetic_ner_types() { return {"MAT", "VAL", "DEV"}; }

std::vector<TaggedSentence> synthetic_ner(std::size_t sentences, std::size_t min_words,
                                          std::size_t max_words, double noise, Rng& rng) {
  if (min_words == 0 || max_words < min_words) {
    throw Error("synthetic ner: need 1 <= min_words <= max_words");
  }
  if (!(noise >= 0.0 && noise <= 1.0)) throw Error("synthetic ner: noise must be in [0, 1]");
  std::vector<TaggedSentence> out;
  for (std::size_t s = 0; s < sentences; ++s) {
    const std::size_t len = min_words + rng.uniform_index(max_words - min_words + 1);
    // Sentences open at an entity boundary, never on a continuation word.
    std::size_t w = rng.uniform_index(kLexicon);
    while (kNerClass[w] && kNerClass[w] == kNerClass[(w + kLexicon - 1) % kLexicon]) {
      w = rng.uniform_index(kLexicon);
    }
    TaggedSentence sent;
    const char* prev = nullptr;
    for (std::size_t k = 0; k < len; ++k) {
      std::size_t type = w;
      if (noise > 0.0 && rng.uniform() < noise) type = rng.uniform_index(kLexicon);
      const char* cls = kNerClass[type];
      sent.tokens.push_back(synthetic_word(type));
      if (!cls) {
        sent.tags.push_back("O");
      } else {
        sent.tags.push_back(std::string(prev == cls ? "I-" : "B-") + cls);
      }
      prev = cls;
      w = (w + 1) % kLexicon;
    }
    out.push_back(std::move(sent));
  }
  return out;
}

std::vector<std::string> synthetic_relation_labels() { return {"same", "forward", "backward"}; }

std::vector<RelationInstance> synthetic_relations(std::size_t instances, Rng& rng) {
  const auto labels = synthetic_relation_labels();
  std::vector<RelationInstance> out;
  for (std::size_t n = 0; n < instances; ++n) {
    RelationInstance r;
    const std::size_t len = 6 + rng.uniform_index(7);
    for (std::size_t k = 0; k < len; ++k) r.tokens.push_back(synthetic_word(rng.uniform_index(kLexicon)));
    // Two disjoint spans of one or two tokens.
    for (;;) {
      const std::size_t a = rng.uniform_index(len), b = rng.uniform_index(len);
      const std::size_t la = std::min<std::size_t>(1 + rng.uniform_index(2), len - a);
      const std::size_t lb = std::min<std::size_t>(1 + rng.uniform_index(2), len - b);
      r.head = {a, a + la - 1};
      r.tail = {b, b + lb - 1};
      if (r.head.second < r.tail.first || r.tail.second < r.head.first) break;
    }
    auto cls = [&](std::size_t token) {
      for (std::size_t t = 0; t < kLexicon; ++t) {
        if (r.tokens[token] == synthetic_word(t)) return t % 3;
      }
      return std::size_t{0};
    };
    const std::size_t a = cls(r.head.first), b = cls(r.tail.first);
    r.label = a == b ? labels[0] : a < b ? labels[1] : labels[2];
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<TextRecord> synthetic_classification(std::size_t documents, Rng& rng) {
  std::vector<TextRecord> out;
  const std::string cue = synthetic_word(0);
  for (std::size_t d = 0; d < documents; ++d) {
    const std::size_t len = 4 + rng.uniform_index(9);
    std::string text;
    bool positive = false;
    for (std::size_t k = 0; k < len; ++k) {
      const std::string w = synthetic_word(rng.uniform_index(kLexicon));
      positive = positive || w == cue;
      text += (k ? " " : "") + w;
    }
    out.push_back({text, positive ? "1" : "0"});
  }
  return out;
}

}  // namespace msbert
