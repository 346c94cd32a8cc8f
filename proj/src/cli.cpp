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


#include "msbert/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "msbert/data_io.hpp"
#include "msbert/error.hpp"
#include "msbert/evaluation.hpp"
#include "msbert/normalizer.hpp"
#include "msbert/pretraining.hpp"
#include "msbert/tasks.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace msbert {

namespace {

void overlay_into(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object()) throw Error("config: " + (path.empty() ? "top level" : path) + " must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw Error("config: unknown key '" + key + "'");
    json& slot = base[it.key()];
    if (slot.is_object()) {
      overlay_into(slot, it.value(), key);
    } else if (slot.is_null() || slot.type() == it.value().type() ||
               (slot.is_number() && it.value().is_number())) {
      slot = it.value();
    } else {
      throw Error("config: key '" + key + "' expects " + std::string(slot.type_name()) + ", got " +
                  it.value().type_name());
    }
  }
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

std::vector<std::string> read_lines(const fs::path& path) {
  auto in = open_in(path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

std::vector<std::string> documents_of(const fs::path& path) {
  std::vector<std::string> docs;
  for (auto& line : read_lines(path)) {
    if (!split_whitespace(line).empty()) docs.push_back(std::move(line));
  }
  return docs;
}

json read_json(const fs::path& path) {
  auto in = open_in(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(path.string() + ": invalid JSON: " + e.what());
  }
}

json resolve(json defaults, const std::string& config_path) {
  if (config_path.empty()) return defaults;
  try {
    return overlay_config(defaults, read_json(config_path));
  } catch (const Error& e) {
    throw Error(config_path + ": " + e.what());
  }
}

template <typename T>
T read_as(const json& j, const std::string& what) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw Error("config: bad " + what + ": " + e.what());
  }
}

// The resolved settings of a run, written next to its outputs.
void write_run_config(const fs::path& path, const std::string& subcommand, const json& io,
                      const json& config) {
  json j = {{"subcommand", subcommand}, {"io", io}, {"config", config}};
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

fs::path beside(const fs::path& output) {
  return output.parent_path() / (output.filename().string() + ".run_config.json");
}

void write_text(const std::string& output, const std::string& text, std::ostream& out) {
  if (output.empty()) {
    out << text;
  } else {
    auto file = open_out(output);
    file << text;
  }
}

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

struct Io {
  std::map<std::string, std::string> paths;
  json to_json() const {
    json j = json::object();
    for (const auto& [k, v] : paths) {
      if (!v.empty()) j[k] = v;
    }
    return j;
  }
};

// ---- normalize ----

struct NormalizeArgs {
  std::string input, output, mapping, config;
};

void cmd_normalize(const NormalizeArgs& a, std::ostream&) {
  json cfg = resolve({{"mapping", ""}}, a.config);
  if (!a.mapping.empty()) cfg["mapping"] = a.mapping;
  const std::string mapping = read_as<std::string>(cfg["mapping"], "mapping");
  const MappingTable table =
      load_mapping(mapping.empty() ? std::nullopt : std::optional<fs::path>(mapping));
  std::ostringstream text;
  for (const auto& line : read_lines(a.input)) text << normalize(line, table) << '\n';
  auto out = open_out(a.output);
  out << text.str();
  write_run_config(beside(a.output), "normalize", {{"input", a.input}, {"output", a.output}}, cfg);
}

// ---- vocab-train ----

struct VocabTrainArgs {
  std::string input, output, config;
  std::optional<std::size_t> size, min_freq;
};

void cmd_vocab_train(const VocabTrainArgs& a, std::ostream& out) {
  json cfg = resolve({{"size", 0}, {"min_freq", 1}}, a.config);
  if (a.size) cfg["size"] = *a.size;
  if (a.min_freq) cfg["min_freq"] = *a.min_freq;
  const auto size = read_as<std::size_t>(cfg["size"], "size");
  if (size == 0) throw Error("vocabulary size required (--size)");
  const auto lines = documents_of(a.input);
  const Vocabulary vocab = train_vocab(lines, size, read_as<std::size_t>(cfg["min_freq"], "min_freq"));
  vocab.save(a.output);
  write_run_config(beside(a.output), "vocab-train", {{"input", a.input}, {"output", a.output}}, cfg);
  out << "vocab " << vocab.size() << " entries -> " << a.output << '\n';
}

// ---- vocab-overlap ----

struct OverlapArgs {
  std::string a, b, output;
};

void cmd_vocab_overlap(const OverlapArgs& a, std::ostream& out) {
  const double v = vocab_overlap(Vocabulary::load(a.a), Vocabulary::load(a.b));
  write_text(a.output, fixed4(v) + "\n", out);
  if (!a.output.empty()) {
    write_run_config(beside(a.output), "vocab-overlap", {{"a", a.a}, {"b", a.b}, {"output", a.output}},
                     json::object());
  }
}

// ---- corpus-stats ----

struct StatsArgs {
  std::string input, vocab, output;
  bool totals_only = false;
};

void cmd_corpus_stats(const StatsArgs& a, std::ostream& out) {
  const auto docs = documents_of(a.input);
  const CorpusStats stats = corpus_stats(docs, Vocabulary::load(a.vocab));
  json j = stats.to_json();
  if (a.totals_only) j.erase("per_document");
  write_text(a.output, j.dump() + "\n", out);
  if (!a.output.empty()) {
    write_run_config(beside(a.output), "corpus-stats",
                     {{"input", a.input}, {"vocab", a.vocab}, {"output", a.output}},
                     {{"totals_only", a.totals_only}});
  }
}

// ---- pretrain ----

struct PretrainArgs {
  std::string corpus, valid, vocab, mapping, output, config, size = "tiny";
  std::optional<std::size_t> steps;
  std::optional<std::uint64_t> seed;
};

PretrainConfig sized_pretrain_config(const std::string& size) {
  PretrainConfig c;
  if (size == "tiny") {
    c.encoder.hidden_dim = 32;
    c.encoder.num_layers = 2;
    c.encoder.num_heads = 2;
    c.encoder.ff_dim = 64;
    c.encoder.max_positions = 32;
    c.max_len = 32;
    c.batch_size = 8;
    c.optimizer.peak_lr = 3e-3;
    c.optimizer.total_steps = 3000;
    c.eval_every = 250;
  } else if (size == "desk") {
    c.encoder = EncoderConfig::desk(0);
    c.max_len = 128;
    c.optimizer.total_steps = 10000;
    c.eval_every = 1000;
  } else if (size == "base") {
    c.encoder = EncoderConfig::base(0);
    c.max_len = 512;
    c.batch_size = 256;
    c.optimizer.total_steps = 100000;
    c.eval_every = 5000;
  } else {
    throw Error("unknown size '" + size + "' (tiny, desk, base)");
  }
  return c;
}

void cmd_pretrain(const PretrainArgs& a, std::ostream& out) {
  json defaults = sized_pretrain_config(a.size);
  defaults["valid_fraction"] = 0.05;
  defaults["mapping"] = "";
  json cfg = resolve(defaults, a.config);
  if (a.steps) cfg["optimizer"]["total_steps"] = *a.steps;
  if (a.seed) cfg["seed"] = *a.seed;
  if (!a.mapping.empty()) cfg["mapping"] = a.mapping;

  const Vocabulary vocab = Vocabulary::load(a.vocab);
  const auto given = read_as<std::size_t>(cfg["encoder"]["vocab_size"], "encoder.vocab_size");
  if (given != 0 && given != vocab.size()) {
    throw Error("encoder.vocab_size " + std::to_string(given) + " differs from vocabulary size " +
                std::to_string(vocab.size()));
  }
  cfg["encoder"]["vocab_size"] = vocab.size();
  const auto pc = read_as<PretrainConfig>(cfg, "pretrain config");
  pc.validate();
  const auto fraction = read_as<double>(cfg["valid_fraction"], "valid_fraction");
  const std::string mapping = read_as<std::string>(cfg["mapping"], "mapping");
  const MappingTable table =
      load_mapping(mapping.empty() ? std::nullopt : std::optional<fs::path>(mapping));

  auto tokenize_all = [&](const std::vector<std::string>& docs) {
    std::vector<TokenizedSequence> seqs;
    seqs.reserve(docs.size());
    for (const auto& d : docs) seqs.push_back(tokenize(d, vocab));
    return seqs;
  };
  const auto docs = documents_of(a.corpus);
  if (docs.empty()) throw Error(a.corpus + ": empty corpus");
  std::vector<TokenizedSequence> train_docs, valid_docs;
  if (!a.valid.empty()) {
    train_docs = tokenize_all(docs);
    valid_docs = tokenize_all(documents_of(a.valid));
  } else {
    if (!(fraction >= 0.0 && fraction < 1.0)) throw Error("valid_fraction must be in [0, 1)");
    const std::vector<double> ratios = {1.0 - fraction, fraction};
    const auto parts = split_indices(docs.size(), ratios, pc.seed);
    const auto all = tokenize_all(docs);
    for (std::size_t i : parts[0]) train_docs.push_back(all[i]);
    for (std::size_t i : parts[1]) valid_docs.push_back(all[i]);
  }
  const auto train = pack_corpus(train_docs, vocab, pc.max_len, pc.prepend_cls);
  const auto valid = pack_corpus(valid_docs, vocab, pc.max_len, pc.prepend_cls);

  ParamStore params = init_pretraining_params(pc);
  std::ostringstream trace;
  PretrainHooks hooks;
  hooks.on_record = [&](const TraceRecord& r) { trace << to_json_line(r).dump() << '\n'; };
  const auto records = mlm_train(params, train, valid, vocab, pc, hooks);

  Checkpoint ck;
  ck.config = json(pc);
  ck.params = std::move(params);
  ck.vocab = vocab;
  ck.table = table;
  save_checkpoint(a.output, ck);
  {
    auto file = open_out(fs::path(a.output) / "trace.jsonl");
    file << trace.str();
  }
  write_run_config(fs::path(a.output) / "run_config.json", "pretrain",
                   {{"corpus", a.corpus}, {"valid", a.valid}, {"vocab", a.vocab}, {"output", a.output}},
                   cfg);
  std::optional<double> ppl;
  for (const auto& r : records) {
    if (r.ppl) ppl = r.ppl;
  }
  out << "pretrain " << pc.optimizer.total_steps << " steps, " << train.size() << " train / "
      << valid.size() << " valid sequences";
  if (ppl) out << ", final ppl " << fixed4(*ppl);
  out << " -> " << a.output << '\n';
}

// ---- finetune ----

struct FinetuneArgs {
  std::string preset, task, variant, train, valid, test, data, init, vocab, mapping, output, config;
  std::vector<std::uint64_t> seeds;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<double> encoder_lr;
};

json finetune_defaults(const std::string& preset_name) {
  json d = {{"task", "ner"},
            {"variant", "crf"},
            {"labels", json::array()},
            {"macro_types", nullptr},
            {"encoder", EncoderConfig::desk(0)},
            {"bilstm", BiLstmConfig{}},
            {"finetune", FinetuneConfig{}},
            {"seeds", {1, 2, 3}},
            {"split_ratios", nullptr},
            {"split_seed", 0},
            {"mapping", ""}};
  if (!preset_name.empty()) {
    const Preset& p = find_preset(preset_name);
    d["task"] = to_string(p.task);
    d["labels"] = p.labels;
    if (!p.macro_types.empty()) d["macro_types"] = p.macro_types;
    d["finetune"]["epochs"] = p.epochs;
    if (!p.split_ratios.empty()) d["split_ratios"] = p.split_ratios;
  }
  return d;
}

TaskData load_task_data(TaskKind task, const std::string& path,
                        std::span<const std::string> allowed_tags) {
  TaskData d;
  switch (task) {
    case TaskKind::ner: d.ner = load_conll(path, allowed_tags); break;
    case TaskKind::rc: d.rc = load_relations(path); break;
    case TaskKind::cls: d.cls = load_classification(path); break;
  }
  if (d.size(task) == 0) throw Error(path + ": no records");
  return d;
}

TaskData subset(const TaskData& d, TaskKind task, const std::vector<std::size_t>& idx) {
  TaskData out;
  for (std::size_t i : idx) {
    switch (task) {
      case TaskKind::ner: out.ner.push_back(d.ner[i]); break;
      case TaskKind::rc: out.rc.push_back(d.rc[i]); break;
      case TaskKind::cls: out.cls.push_back(d.cls[i]); break;
    }
  }
  return out;
}

std::vector<std::string> infer_labels(TaskKind task, const TaskData& d) {
  std::set<std::string> seen;
  if (task == TaskKind::ner) {
    for (const auto& s : d.ner) {
      for (const auto& t : s.tags) {
        if (t == "O") continue;
        if (t.size() < 3 || (t[0] != 'B' && t[0] != 'I') || t[1] != '-') {
          throw Error("training data: tag '" + t + "' is not BIO");
        }
        seen.insert(t.substr(2));
      }
    }
  } else if (task == TaskKind::rc) {
    for (const auto& r : d.rc) seen.insert(r.label);
  } else {
    for (const auto& r : d.cls) seen.insert(r.label);
  }
  return {seen.begin(), seen.end()};
}

void cmd_finetune(const FinetuneArgs& a, std::ostream& out) {
  json cfg = resolve(finetune_defaults(a.preset), a.config);
  if (!a.task.empty()) cfg["task"] = a.task;
  if (!a.variant.empty()) cfg["variant"] = a.variant;
  if (!a.seeds.empty()) cfg["seeds"] = a.seeds;
  if (a.seed) cfg["seeds"] = {*a.seed};
  if (a.epochs) cfg["finetune"]["epochs"] = *a.epochs;
  if (a.encoder_lr) cfg["finetune"]["encoder_lr"] = *a.encoder_lr;
  if (!a.mapping.empty()) cfg["mapping"] = a.mapping;

  const TaskKind task = parse_task(read_as<std::string>(cfg["task"], "task"));
  const TaggerVariant variant = parse_variant(read_as<std::string>(cfg["variant"], "variant"));
  const auto fc = read_as<FinetuneConfig>(cfg["finetune"], "finetune");
  fc.validate();
  const auto seeds = read_as<std::vector<std::uint64_t>>(cfg["seeds"], "seeds");
  if (seeds.empty()) throw Error("at least one seed required");
  auto labels = read_as<std::vector<std::string>>(cfg["labels"], "labels");

  if (a.data.empty() && a.train.empty()) {
    throw Error(a.preset.empty() ? "training data required (--train/--valid or --data)"
                                 : "preset '" + a.preset +
                                       "' needs user data files (--train/--valid or --data)");
  }
  std::vector<std::string> allowed;
  if (task == TaskKind::ner && !labels.empty()) allowed = LabelScheme(labels).tags();
  TaskData train, valid, test;
  if (!a.data.empty()) {
    if (!a.train.empty() || !a.valid.empty() || !a.test.empty()) {
      throw Error("--data excludes --train/--valid/--test");
    }
    if (cfg["split_ratios"].is_null()) throw Error("--data needs split_ratios in the config or preset");
    const auto ratios = read_as<std::vector<double>>(cfg["split_ratios"], "split_ratios");
    if (ratios.size() != 3) throw Error("split_ratios must list train, valid and test fractions");
    const TaskData all = load_task_data(task, a.data, allowed);
    const auto parts = split_indices(all.size(task), ratios,
                                     read_as<std::uint64_t>(cfg["split_seed"], "split_seed"));
    train = subset(all, task, parts[0]);
    valid = subset(all, task, parts[1]);
    test = subset(all, task, parts[2]);
  } else {
    if (a.valid.empty()) throw Error("--valid required with --train");
    train = load_task_data(task, a.train, allowed);
    valid = load_task_data(task, a.valid, allowed);
    if (!a.test.empty()) test = load_task_data(task, a.test, allowed);
  }
  if (labels.empty()) {
    labels = infer_labels(task, train);
    cfg["labels"] = labels;
  }

  TaskModelConfig mc;
  mc.task = task;
  mc.variant = task == TaskKind::ner ? variant : TaggerVariant::linear;
  mc.bilstm = read_as<BiLstmConfig>(cfg["bilstm"], "bilstm");
  mc.labels = labels;

  std::optional<Checkpoint> pretrained;
  Vocabulary vocab;
  MappingTable table;
  if (!a.init.empty()) {
    pretrained = load_checkpoint(a.init);
    if (!pretrained->config.contains("encoder")) throw Error(a.init + ": no encoder config");
    mc.encoder = read_as<EncoderConfig>(pretrained->config["encoder"], "checkpoint encoder");
    vocab = pretrained->vocab;
    table = pretrained->table;
    cfg["encoder"] = mc.encoder;
  } else {
    if (a.vocab.empty()) throw Error("--vocab required without --init");
    vocab = Vocabulary::load(a.vocab);
    const std::string mapping = read_as<std::string>(cfg["mapping"], "mapping");
    table = load_mapping(mapping.empty() ? std::nullopt : std::optional<fs::path>(mapping));
    cfg["encoder"]["vocab_size"] = vocab.size();
    mc.encoder = read_as<EncoderConfig>(cfg["encoder"], "encoder");
  }
  mc.validate();

  EvalOptions options;
  if (!cfg["macro_types"].is_null()) {
    options.macro_types = read_as<std::vector<std::string>>(cfg["macro_types"], "macro_types");
  }

  const fs::path dir = a.output;
  fs::create_directories(dir);
  auto steps_log = open_out(dir / "steps.jsonl");
  auto epochs_log = open_out(dir / "epochs.jsonl");
  json runs = json::array();
  double mean_valid = 0.0, mean_micro = 0.0, mean_macro = 0.0;
  for (std::uint64_t seed : seeds) {
    TaskModel model = build_model(mc, vocab, table, seed);
    if (pretrained) load_encoder(model, pretrained->params);
    FinetuneHooks hooks;
    hooks.on_step = [&](std::size_t step, double loss, double enc_lr, double head_lr) {
      steps_log << json{{"seed", seed}, {"step", step}, {"loss", loss}, {"encoder_lr", enc_lr},
                        {"head_lr", head_lr}}
                       .dump()
                << '\n';
    };
    hooks.on_epoch = [&](const EpochRecord& r) {
      json line = to_json_line(r);
      line["seed"] = seed;
      epochs_log << line.dump() << '\n';
    };
    const FinetuneResult res = finetune(model, train, valid, fc, seed, hooks, options);
    save_model(dir / ("seed-" + std::to_string(seed)), model);
    json run = {{"seed", seed}, {"best_epoch", res.best_epoch}, {"best_valid", res.best_score}};
    out << "seed " << seed << ": best epoch " << res.best_epoch << ", valid " << fixed4(res.best_score);
    mean_valid += res.best_score / seeds.size();
    if (test.size(task) > 0) {
      const TaskReport report = evaluate_task(model, test, options);
      run["test"] = report.to_json();
      mean_micro += report.f1.micro_f1 / seeds.size();
      mean_macro += report.f1.macro_f1 / seeds.size();
      out << ", test micro " << fixed4(report.f1.micro_f1) << " macro " << fixed4(report.f1.macro_f1);
    }
    out << '\n';
    runs.push_back(std::move(run));
  }
  json summary = {{"task", to_string(task)}, {"runs", runs}, {"mean_valid", mean_valid}};
  if (test.size(task) > 0) {
    summary["mean_test_micro_f1"] = mean_micro;
    summary["mean_test_macro_f1"] = mean_macro;
  }
  {
    auto file = open_out(dir / "summary.json");
    file << summary.dump(2) << '\n';
  }
  write_run_config(dir / "run_config.json", "finetune",
                   {{"train", a.train}, {"valid", a.valid}, {"test", a.test}, {"data", a.data},
                    {"init", a.init}, {"vocab", a.vocab}, {"output", a.output}, {"preset", a.preset}},
                   cfg);
  out << "mean over " << seeds.size() << " seeds: valid " << fixed4(mean_valid);
  if (test.size(task) > 0) out << ", test micro " << fixed4(mean_micro) << " macro " << fixed4(mean_macro);
  out << '\n';
}

// ---- tag / classify / relate ----

struct PredictArgs {
  std::string model, input, output, format;
};

TaskModel load_task_model(const std::string& dir, TaskKind expected) {
  TaskModel m = load_model(dir);
  if (m.config.task != expected) {
    throw Error(dir + ": model is a " + to_string(m.config.task) + " model, not " + to_string(expected));
  }
  return m;
}

void finish_prediction(const PredictArgs& a, const std::string& name, const std::string& text,
                       std::ostream& out) {
  write_text(a.output, text, out);
  if (!a.output.empty()) {
    write_run_config(beside(a.output), name,
                     {{"model", a.model}, {"input", a.input}, {"output", a.output}},
                     {{"format", a.format}});
  }
}

void cmd_tag(const PredictArgs& a, std::ostream& out) {
  const TaskModel model = load_task_model(a.model, TaskKind::ner);
  std::vector<TaggedSentence> sentences;
  if (a.format == "conll") {
    for (auto& s : load_conll(a.input)) sentences.push_back({std::move(s.tokens), {}});
  } else if (a.format == "lines") {
    for (const auto& line : read_lines(a.input)) {
      auto tokens = split_whitespace(line);
      if (!tokens.empty()) sentences.push_back({std::move(tokens), {}});
    }
  } else {
    throw Error("unknown input format '" + a.format + "' (lines, conll)");
  }
  for (auto& s : sentences) s.tags = tag(model, s.tokens);
  std::ostringstream text;
  write_conll(text, sentences);
  finish_prediction(a, "tag", text.str(), out);
}

json probabilities_json(const TaskModel& model, const ClassPrediction& p) {
  json probs = json::object();
  for (std::size_t i = 0; i < p.probabilities.size(); ++i) probs[model.config.labels[i]] = p.probabilities[i];
  return probs;
}

void cmd_classify(const PredictArgs& a, std::ostream& out) {
  const TaskModel model = load_task_model(a.model, TaskKind::cls);
  std::vector<std::string> texts;
  if (a.format == "jsonl") {
    for (auto& r : load_classification(a.input, false)) texts.push_back(std::move(r.text));
  } else if (a.format == "lines") {
    for (auto& line : read_lines(a.input)) {
      if (!split_whitespace(line).empty()) texts.push_back(std::move(line));
    }
  } else {
    throw Error("unknown input format '" + a.format + "' (jsonl, lines)");
  }
  std::ostringstream text;
  for (const auto& t : texts) {
    const ClassPrediction p = classify_text(model, t);
    text << json{{"text", t}, {"label", p.label}, {"probabilities", probabilities_json(model, p)}}.dump()
         << '\n';
  }
  finish_prediction(a, "classify", text.str(), out);
}

void cmd_relate(const PredictArgs& a, std::ostream& out) {
  const TaskModel model = load_task_model(a.model, TaskKind::rc);
  std::ostringstream text;
  for (auto r : load_relations(a.input, false)) {
    const ClassPrediction p = classify_relation(model, r);
    r.label = p.label;
    json j = to_json(r);
    j["probabilities"] = probabilities_json(model, p);
    text << j.dump() << '\n';
  }
  finish_prediction(a, "relate", text.str(), out);
}

// ---- evaluate ----

struct EvaluateArgs {
  std::string task = "ner", input, gold, pred, format = "text", positive, output;
  std::vector<std::string> macro_types;
  bool strict = false;
};

// token gold pred per line, blank line between sentences.
void parse_three_column(const fs::path& path, std::vector<std::vector<std::string>>& gold,
                        std::vector<std::vector<std::string>>& pred) {
  std::vector<std::string> g, p;
  std::size_t number = 0;
  auto flush = [&] {
    if (g.empty()) return;
    gold.push_back(std::move(g));
    pred.push_back(std::move(p));
    g.clear();
    p.clear();
  };
  for (const auto& line : read_lines(path)) {
    ++number;
    const auto cols = split_whitespace(line);
    if (cols.empty()) {
      flush();
      continue;
    }
    if (cols.size() != 3) {
      throw Error(path.string() + ":" + std::to_string(number) + ": expected 3 columns, got " +
                  std::to_string(cols.size()));
    }
    g.push_back(cols[1]);
    p.push_back(cols[2]);
  }
  flush();
}

std::vector<std::string> labels_of(const fs::path& path) {
  std::vector<std::string> labels;
  std::size_t number = 0;
  for (const auto& line : read_lines(path)) {
    ++number;
    if (split_whitespace(line).empty()) continue;
    const std::string at = path.string() + ":" + std::to_string(number) + ": ";
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(at + "invalid JSON: " + e.what());
    }
    if (!j.is_object() || !j.contains("label")) throw Error(at + "missing 'label'");
    if (j["label"].is_number_integer()) {
      labels.push_back(std::to_string(j["label"].get<long long>()));
    } else if (j["label"].is_string()) {
      labels.push_back(j["label"].get<std::string>());
    } else {
      throw Error(at + "'label' must be a string or an integer");
    }
  }
  return labels;
}

void cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  if (a.format != "text" && a.format != "json") throw Error("unknown format '" + a.format + "' (text, json)");
  const TaskKind task = parse_task(a.task);
  F1Report report;
  std::optional<double> binary;
  if (task == TaskKind::ner) {
    std::vector<std::vector<std::string>> gold, pred;
    if (!a.input.empty()) {
      if (!a.gold.empty() || !a.pred.empty()) throw Error("--input excludes --gold/--pred");
      parse_three_column(a.input, gold, pred);
    } else {
      if (a.gold.empty() || a.pred.empty()) throw Error("--input or both --gold and --pred required");
      const auto g = load_conll(a.gold), p = load_conll(a.pred);
      if (g.size() != p.size()) {
        throw Error("gold has " + std::to_string(g.size()) + " sentences, predictions " +
                    std::to_string(p.size()));
      }
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (g[i].tokens != p[i].tokens) throw Error("sentence " + std::to_string(i + 1) + ": tokens differ");
        gold.push_back(g[i].tags);
        pred.push_back(p[i].tags);
      }
    }
    std::optional<std::vector<std::string>> macro;
    if (!a.macro_types.empty()) macro = a.macro_types;
    report = entity_f1(gold, pred, macro, a.strict ? BioMode::strict : BioMode::conll);
  } else {
    if (a.gold.empty() || a.pred.empty()) throw Error("--gold and --pred required");
    const auto gold = labels_of(a.gold), pred = labels_of(a.pred);
    if (gold.size() != pred.size()) {
      throw Error("gold has " + std::to_string(gold.size()) + " records, predictions " +
                  std::to_string(pred.size()));
    }
    report = multiclass_f1(gold, pred);
    if (!a.positive.empty()) {
      std::vector<int> g, p;
      for (const auto& l : gold) g.push_back(l == a.positive);
      for (const auto& l : pred) p.push_back(l == a.positive);
      binary = binary_f1(g, p);
    }
  }
  std::string text;
  if (a.format == "json") {
    json j = report.to_json();
    if (binary) j["binary_f1"] = *binary;
    text = j.dump(2) + "\n";
  } else {
    text = report.to_text();
    if (binary) text += "binary-f1 (" + a.positive + ") " + fixed4(*binary) + "\n";
  }
  write_text(a.output, text, out);
  if (!a.output.empty()) {
    write_run_config(beside(a.output), "evaluate",
                     {{"input", a.input}, {"gold", a.gold}, {"pred", a.pred}, {"output", a.output}},
                     {{"task", a.task},
                      {"format", a.format},
                      {"strict", a.strict},
                      {"macro_types", a.macro_types},
                      {"positive", a.positive}});
  }
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

}  // namespace

json overlay_config(const json& base, const json& patch) {
  json out = base;
  overlay_into(out, patch, "");
  return out;
}

json CorpusStats::to_json() const {
  json per = json::array();
  for (const auto& [w, p] : per_document) per.push_back({{"words", w}, {"pieces", p}});
  return {{"documents", documents}, {"words", words}, {"pieces", pieces}, {"per_document", per}};
}

CorpusStats corpus_stats(std::span<const std::string> lines, const Vocabulary& vocab) {
  CorpusStats s;
  for (const auto& line : lines) {
    const auto words = split_whitespace(line);
    if (words.empty()) continue;
    std::size_t pieces = 0;
    for (const auto& w : words) pieces += tokenize_word(w, vocab).size();
    ++s.documents;
    s.words += words.size();
    s.pieces += pieces;
    s.per_document.emplace_back(words.size(), pieces);
  }
  if (s.documents == 0) throw Error("corpus-stats: empty corpus");
  return s;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"msbert: materials-science BERT pipeline"};
  app.name("msbert");
  app.require_subcommand(1);

  NormalizeArgs norm;
  auto* normalize_cmd = app.add_subcommand("normalize", "Normalize a corpus, one document per line");
  normalize_cmd->add_option("--input", norm.input, "Raw text file")->required();
  normalize_cmd->add_option("--output", norm.output, "Normalized text file")->required();
  normalize_cmd->add_option("--mapping", norm.mapping, "Symbol mapping table (U+XXXX<TAB>text)");
  normalize_cmd->add_option("--config", norm.config, "JSON config overlay");

  VocabTrainArgs vt;
  auto* vocab_train_cmd = app.add_subcommand("vocab-train", "Train a WordPiece vocabulary");
  vocab_train_cmd->add_option("--input", vt.input, "Normalized corpus")->required();
  vocab_train_cmd->add_option("--output", vt.output, "vocab.txt to write")->required();
  vocab_train_cmd->add_option("--size", vt.size, "Target vocabulary size");
  vocab_train_cmd->add_option("--min-freq", vt.min_freq, "Minimum pair frequency");
  vocab_train_cmd->add_option("--config", vt.config, "JSON config overlay");

  OverlapArgs ov;
  auto* overlap_cmd = app.add_subcommand("vocab-overlap", "Fraction of the first vocabulary found in the second");
  overlap_cmd->add_option("a", ov.a, "First vocab.txt")->required();
  overlap_cmd->add_option("b", ov.b, "Second vocab.txt")->required();
  overlap_cmd->add_option("--output", ov.output, "Write the result here instead of stdout");

  StatsArgs st;
  auto* stats_cmd = app.add_subcommand("corpus-stats", "Document, word and piece counts");
  stats_cmd->add_option("--input", st.input, "Normalized corpus")->required();
  stats_cmd->add_option("--vocab", st.vocab, "vocab.txt")->required();
  stats_cmd->add_option("--output", st.output, "Write the report here instead of stdout");
  stats_cmd->add_flag("--totals-only", st.totals_only, "Omit per-document counts");

  PretrainArgs pt;
  auto* pretrain_cmd = app.add_subcommand("pretrain", "Masked-LM pretraining from scratch");
  pretrain_cmd->add_option("--corpus", pt.corpus, "Normalized corpus")->required();
  pretrain_cmd->add_option("--vocab", pt.vocab, "vocab.txt")->required();
  pretrain_cmd->add_option("--output", pt.output, "Checkpoint directory")->required();
  pretrain_cmd->add_option("--valid", pt.valid, "Validation corpus (default: held-out fraction)");
  pretrain_cmd->add_option("--mapping", pt.mapping, "Symbol mapping table stored with the checkpoint");
  pretrain_cmd->add_option("--size", pt.size, "Model size: tiny, desk or base")->capture_default_str();
  pretrain_cmd->add_option("--steps", pt.steps, "Optimizer updates");
  pretrain_cmd->add_option("--seed", pt.seed, "Seed for every random draw");
  pretrain_cmd->add_option("--config", pt.config, "JSON config overlay");

  FinetuneArgs ft;
  auto* finetune_cmd = app.add_subcommand("finetune", "Fine-tune a tagger or classifier over seeds");
  finetune_cmd->add_option("--preset", ft.preset, "matscholar, sofc, sofc-slot, mspt or glass");
  finetune_cmd->add_option("--task", ft.task, "ner, rc or cls");
  finetune_cmd->add_option("--variant", ft.variant, "linear, crf or bilstm_crf (ner)");
  finetune_cmd->add_option("--train", ft.train, "Training file");
  finetune_cmd->add_option("--valid", ft.valid, "Validation file");
  finetune_cmd->add_option("--test", ft.test, "Test file");
  finetune_cmd->add_option("--data", ft.data, "Single file split by split_ratios");
  finetune_cmd->add_option("--init", ft.init, "Pretrained checkpoint (default: random init)");
  finetune_cmd->add_option("--vocab", ft.vocab, "vocab.txt for random init");
  finetune_cmd->add_option("--mapping", ft.mapping, "Symbol mapping table for random init");
  finetune_cmd->add_option("--output", ft.output, "Output directory")->required();
  finetune_cmd->add_option("--seeds", ft.seeds, "Comma-separated seeds")->delimiter(',');
  finetune_cmd->add_option("--seed", ft.seed, "Single seed");
  finetune_cmd->add_option("--epochs", ft.epochs, "Epochs");
  finetune_cmd->add_option("--encoder-lr", ft.encoder_lr, "Peak learning rate of the encoder");
  finetune_cmd->add_option("--config", ft.config, "JSON config overlay");

  PredictArgs tg{"", "", "", "lines"};
  auto* tag_cmd = app.add_subcommand("tag", "Tag sentences; CoNLL output");
  tag_cmd->add_option("--model", tg.model, "Fine-tuned NER model directory")->required();
  tag_cmd->add_option("--input", tg.input, "Sentences")->required();
  tag_cmd->add_option("--input-format", tg.format, "lines (one sentence per line) or conll")
      ->capture_default_str();
  tag_cmd->add_option("--output", tg.output, "Write here instead of stdout");

  PredictArgs cl{"", "", "", "jsonl"};
  auto* classify_cmd = app.add_subcommand("classify", "Classify documents; JSON lines output");
  classify_cmd->add_option("--model", cl.model, "Fine-tuned classification model directory")->required();
  classify_cmd->add_option("--input", cl.input, "Documents")->required();
  classify_cmd->add_option("--input-format", cl.format, "jsonl ({\"text\": ...}) or lines")
      ->capture_default_str();
  classify_cmd->add_option("--output", cl.output, "Write here instead of stdout");

  PredictArgs rl{"", "", "", "jsonl"};
  auto* relate_cmd = app.add_subcommand("relate", "Classify marked relations; JSON lines output");
  relate_cmd->add_option("--model", rl.model, "Fine-tuned relation model directory")->required();
  relate_cmd->add_option("--input", rl.input, "Relation JSON lines (label optional)")->required();
  relate_cmd->add_option("--output", rl.output, "Write here instead of stdout");

  EvaluateArgs ev;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Micro/macro F1 of predictions against gold");
  evaluate_cmd->add_option("--task", ev.task, "ner, rc or cls")->capture_default_str();
  evaluate_cmd->add_option("--input", ev.input, "NER: token gold pred per line");
  evaluate_cmd->add_option("--gold", ev.gold, "Gold file (CoNLL or JSON lines)");
  evaluate_cmd->add_option("--pred", ev.pred, "Predicted file (CoNLL or JSON lines)");
  evaluate_cmd->add_option("--format", ev.format, "text or json")->capture_default_str();
  evaluate_cmd->add_option("--macro-types", ev.macro_types, "Comma-separated macro classes (ner)")
      ->delimiter(',');
  evaluate_cmd->add_flag("--strict", ev.strict, "Reject I- tags that open an entity");
  evaluate_cmd->add_option("--positive", ev.positive, "Also report binary F1 for this label (rc, cls)");
  evaluate_cmd->add_option("--output", ev.output, "Write the report here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    const CLI::App* target = &app;
    for (const auto* sub : app.get_subcommands()) target = sub;
    out << target->help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    const CLI::App* target = &app;
    for (const auto* sub : app.get_subcommands()) target = sub;
    err << "msbert: usage error: " << one_line(e.what()) << '\n' << target->help();
    return 2;
  }

  const CLI::App* chosen = app.get_subcommands().front();
  try {
    if (chosen == normalize_cmd) cmd_normalize(norm, out);
    else if (chosen == vocab_train_cmd) cmd_vocab_train(vt, out);
    else if (chosen == overlap_cmd) cmd_vocab_overlap(ov, out);
    else if (chosen == stats_cmd) cmd_corpus_stats(st, out);
    else if (chosen == pretrain_cmd) cmd_pretrain(pt, out);
    else if (chosen == finetune_cmd) cmd_finetune(ft, out);
    else if (chosen == tag_cmd) cmd_tag(tg, out);
    else if (chosen == classify_cmd) cmd_classify(cl, out);
    else if (chosen == relate_cmd) cmd_relate(rl, out);
    else cmd_evaluate(ev, out);
  } catch (const std::exception& e) {
    err << "msbert: error: " << chosen->get_name() << ": " << one_line(e.what()) << '\n';
    return 1;
  }
  return 0;
}

}  // namespace msbert
