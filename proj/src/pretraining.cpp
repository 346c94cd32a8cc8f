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

#include "msbert/pretraining.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "msbert/ops.hpp"

namespace msbert {

std::vector<TokenizedSequence> pack_corpus(std::span<const TokenizedSequence> docs,
                                           const Vocabulary& vocab, std::size_t max_len,
                                           bool prepend_cls) {
  if (docs.empty()) throw Error("pack_corpus: empty corpus");
  const std::size_t overhead = prepend_cls ? 1 : 0;
  if (max_len <= overhead) {
    throw Error("pack_corpus: max_len " + std::to_string(max_len) + " too small");
  }
  const int cls = vocab.cls_id(), sep = vocab.sep_id(), pad = vocab.pad_id();

  std::vector<TokenizedSequence> out;
  TokenizedSequence cur;
  int next_word = 0;
  int last_source = kNoWord;
  auto open = [&] {
    cur = TokenizedSequence{};
    next_word = 0;
    last_source = kNoWord;
    if (prepend_cls) cur.push(cls, kNoWord);
  };
  auto flush_if_full = [&] {
    if (cur.size() == max_len) {
      out.push_back(std::move(cur));
      open();
    }
  };
  open();
  for (const auto& doc : docs) {
    if (doc.word_ids.size() != doc.piece_ids.size()) {
      throw Error("pack_corpus: document without word ids");
    }
    for (std::size_t i = 0; i < doc.size(); ++i) {
      const int source = doc.word_ids[i];
      if (source == kNoWord) {
        cur.push(doc.piece_ids[i], kNoWord);
      } else {
        if (source != last_source || cur.size() == overhead) {
          last_source = source;
          ++next_word;
        }
        cur.push(doc.piece_ids[i], next_word - 1);
      }
      flush_if_full();
    }
    cur.push(sep, kNoWord);
    last_source = kNoWord;
    flush_if_full();
  }
  if (cur.size() > overhead) {
    while (cur.size() < max_len) cur.push(pad, kNoWord, 0);
    out.push_back(std::move(cur));
  }
  return out;
}

void MaskingConfig::validate() const {
  if (!(mask_prob > 0.0 && mask_prob <= 1.0)) {
    throw Error("masking: mask_prob must lie in (0, 1]");
  }
  if (!(mask_fraction >= 0.0 && random_fraction >= 0.0 &&
        mask_fraction + random_fraction <= 1.0)) {
    throw Error("masking: mask_fraction + random_fraction must lie in [0, 1]");
  }
}

void to_json(nlohmann::json& j, const MaskingConfig& c) {
  j = nlohmann::json{{"mask_prob", c.mask_prob},
                     {"mask_fraction", c.mask_fraction},
                     {"random_fraction", c.random_fraction}};
}

void from_json(const nlohmann::json& j, MaskingConfig& c) {
  j.at("mask_prob").get_to(c.mask_prob);
  j.at("mask_fraction").get_to(c.mask_fraction);
  j.at("random_fraction").get_to(c.random_fraction);
}

MaskingOutcome apply_dwwm(const TokenizedSequence& seq, const Vocabulary& vocab,
                          const MaskingConfig& cfg, Rng& rng) {
  cfg.validate();
  if (seq.word_ids.size() != seq.piece_ids.size()) {
    throw Error("apply_dwwm: sequence has no word ids");
  }
  const auto& regular = vocab.regular_ids();
  if (regular.empty()) throw Error("apply_dwwm: vocabulary has no regular entries");
  const int mask = vocab.mask_id();

  MaskingOutcome out;
  out.piece_ids = seq.piece_ids;
  out.targets.assign(seq.size(), kIgnoreIndex);
  int current = kNoWord;
  bool selected = false;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const int word = seq.word_ids[i];
    const int piece = seq.piece_ids[i];
    if (word < 0 || vocab.is_special(piece)) continue;
    if (word != current) {
      current = word;
      ++out.words_total;
      selected = rng.uniform() < cfg.mask_prob;
      if (selected) out.selected_words.push_back(word);
    }
    if (!selected) continue;
    out.targets[i] = piece;
    const double u = rng.uniform();
    if (u < cfg.mask_fraction) {
      out.piece_ids[i] = mask;
      ++out.masked;
    } else if (u < cfg.mask_fraction + cfg.random_fraction) {
      out.piece_ids[i] = regular[rng.uniform_index(regular.size())];
      ++out.randomized;
    } else {
      ++out.kept;
    }
  }
  return out;
}

void PretrainConfig::validate() const {
  encoder.validate();
  optimizer.validate();
  masking.validate();
  if (max_len < 2) throw Error("pretrain: max_len must be >= 2");
  if (max_len > encoder.max_positions) {
    throw Error("pretrain: max_len " + std::to_string(max_len) + " exceeds max_positions " +
                std::to_string(encoder.max_positions));
  }
  if (batch_size == 0) throw Error("pretrain: batch_size must be >= 1");
  if (log_every == 0) throw Error("pretrain: log_every must be >= 1");
}

void to_json(nlohmann::json& j, const PretrainConfig& c) {
  j = nlohmann::json{{"encoder", c.encoder},         {"optimizer", c.optimizer},
                     {"masking", c.masking},         {"max_len", c.max_len},
                     {"batch_size", c.batch_size},   {"log_every", c.log_every},
                     {"eval_every", c.eval_every},   {"prepend_cls", c.prepend_cls},
                     {"tie_weights", c.tie_weights}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, PretrainConfig& c) {
  j.at("encoder").get_to(c.encoder);
  j.at("optimizer").get_to(c.optimizer);
  j.at("masking").get_to(c.masking);
  j.at("max_len").get_to(c.max_len);
  j.at("batch_size").get_to(c.batch_size);
  j.at("log_every").get_to(c.log_every);
  j.at("eval_every").get_to(c.eval_every);
  j.at("prepend_cls").get_to(c.prepend_cls);
  j.at("tie_weights").get_to(c.tie_weights);
  j.at("seed").get_to(c.seed);
}

void add_mlm_head(ParamStore& store, const EncoderConfig& c, bool tie_weights, Rng& rng) {
  const std::size_t d = c.hidden_dim;
  auto truncated = [&](Shape shape) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = rng.truncated_normal(0.02);
    return t;
  };
  store.add("mlm.transform.weight", truncated({d, d}));
  store.add("mlm.transform.bias", Tensor({d}));
  store.add("mlm.norm.gain", Tensor({d}, 1.0));
  store.add("mlm.norm.bias", Tensor({d}));
  if (!tie_weights) store.add("mlm.decoder.weight", truncated({d, c.vocab_size}));
  store.add("mlm.decoder.bias", Tensor({c.vocab_size}));
}

Var mlm_loss(Tape& tape, ParamStore& params, const PretrainConfig& cfg,
             const MaskingOutcome& masked, std::span<const int> attention_mask, Mode mode,
             Rng& dropout_rng, double weight) {
  std::vector<std::size_t> rows;
  std::vector<int> targets;
  for (std::size_t i = 0; i < masked.targets.size(); ++i) {
    if (masked.targets[i] != kIgnoreIndex) {
      rows.push_back(i);
      targets.push_back(masked.targets[i]);
    }
  }
  if (rows.empty()) return {};
  Var h = encode(tape, params, cfg.encoder, masked.piece_ids, attention_mask, mode, dropout_rng);
  Var x = gather_rows(h, rows);
  x = gelu(linear(x, tape.param(params.at("mlm.transform.weight")),
                  tape.param(params.at("mlm.transform.bias"))));
  x = layer_norm(x, tape.param(params.at("mlm.norm.gain")), tape.param(params.at("mlm.norm.bias")),
                 cfg.encoder.layer_norm_eps);
  Var bias = tape.param(params.at("mlm.decoder.bias"));
  Var logits = cfg.tie_weights
                   ? add_row(matmul_nt(x, tape.param(params.at("embeddings.token"))), bias)
                   : linear(x, tape.param(params.at("mlm.decoder.weight")), bias);
  Var loss = cross_entropy(logits, targets);
  return weight == 1.0 ? loss : scale(loss, weight);
}

double pseudo_perplexity(std::span<const TokenizedSequence> split, const ParamStore& params,
                         const PretrainConfig& cfg, const Vocabulary& vocab, std::uint64_t seed) {
  if (split.empty()) throw Error("pseudo_perplexity: empty split");
  Rng rng(seed);
  Rng unused(0);
  auto& store = const_cast<ParamStore&>(params);
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& seq : split) {
    MaskingOutcome m = apply_dwwm(seq, vocab, cfg.masking, rng);
    const std::size_t n = m.target_count();
    if (n == 0) continue;
    Tape tape;
    Var loss = mlm_loss(tape, store, cfg, m, seq.attention_mask, Mode::eval, unused,
                        static_cast<double>(n));
    total += loss.value().item();
    count += n;
  }
  if (count == 0) throw Error("pseudo_perplexity: no masked targets in split");
  return std::exp(total / static_cast<double>(count));
}

nlohmann::json to_json_line(const TraceRecord& r) {
  nlohmann::json j{{"step", r.step}, {"loss", r.loss}, {"lr", r.lr}};
  if (r.ppl) j["ppl"] = *r.ppl;
  return j;
}

ParamStore init_pretraining_params(const PretrainConfig& cfg) {
  cfg.validate();
  ParamStore params;
  Rng rng = Rng(cfg.seed).derive("init");
  add_encoder_params(params, cfg.encoder, rng);
  add_mlm_head(params, cfg.encoder, cfg.tie_weights, rng);
  return params;
}

namespace {

std::map<std::string, Tensor> snapshot(const ParamStore& params) {
  std::map<std::string, Tensor> out;
  for (const auto& [name, p] : params) out.emplace(name, p.value);
  return out;
}

void restore(ParamStore& params, const std::map<std::string, Tensor>& snap) {
  for (auto& [name, p] : params) p.value = snap.at(name);
}

bool params_finite(const ParamStore& params) {
  for (const auto& [name, p] : params) {
    if (!all_finite(p.value)) return false;
  }
  return true;
}

bool grads_finite(const ParamStore& params) {
  for (const auto& [name, p] : params) {
    if (!p.grad.empty() && !all_finite(p.grad)) return false;
  }
  return true;
}

}  // namespace

std::vector<TraceRecord> mlm_train(ParamStore& params, std::span<const TokenizedSequence> train,
                                   std::span<const TokenizedSequence> valid,
                                   const Vocabulary& vocab, const PretrainConfig& cfg,
                                   const PretrainHooks& hooks) {
  cfg.validate();
  if (train.empty()) throw Error("pretrain: empty training corpus");
  if (cfg.encoder.vocab_size != vocab.size()) {
    throw Error("pretrain: encoder vocab_size " + std::to_string(cfg.encoder.vocab_size) +
                " differs from vocabulary size " + std::to_string(vocab.size()));
  }
  const Rng root(cfg.seed);
  Rng dropout_rng = root.derive("dropout");
  Rng masking_rng = root.derive("masking");
  Rng shuffle_rng = root.derive("shuffle");
  const std::uint64_t eval_seed = root.derive("eval").next_u64();

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  AdamW adam(cfg.optimizer);
  std::vector<TraceRecord> trace;
  auto good = snapshot(params);
  std::size_t good_step = 0;
  double interval_loss = 0.0;
  std::size_t interval_steps = 0;

  for (std::size_t step = 0; step < cfg.optimizer.total_steps; ++step) {
    const double lr = lr_at(step, cfg.optimizer);
    std::vector<std::size_t> batch;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        shuffle_rng.shuffle(std::span<std::size_t>(order));
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }
    std::vector<MaskingOutcome> masked;
    std::size_t targets = 0;
    for (std::size_t idx : batch) {
      masked.push_back(apply_dwwm(train[idx], vocab, cfg.masking, masking_rng));
      targets += masked.back().target_count();
    }

    params.zero_grad();
    double loss = 0.0;
    try {
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const std::size_t n = masked[b].target_count();
        if (n == 0) continue;
        Tape tape;
        Var l = mlm_loss(tape, params, cfg, masked[b], train[batch[b]].attention_mask,
                         Mode::train, dropout_rng,
                         static_cast<double>(n) / static_cast<double>(targets));
        tape.backward(l);
        loss += l.value().item();
      }
    } catch (const Error&) {
      // Numeric kernels reject NaN inputs; anything else is a real error.
      if (params_finite(params)) throw;
      loss = std::numeric_limits<double>::quiet_NaN();
    }
    if (!std::isfinite(loss) || !grads_finite(params)) {
      restore(params, good);
      throw DivergenceError(step + 1, good_step);
    }
    adam.step(params, lr);
    interval_loss += loss;
    ++interval_steps;

    const std::size_t done = step + 1;
    const bool last = done == cfg.optimizer.total_steps;
    const bool eval_now = cfg.eval_every > 0 && !valid.empty() &&
                          (done % cfg.eval_every == 0 || last);
    if (done % cfg.log_every == 0 || last || eval_now) {
      TraceRecord r{done, interval_loss / static_cast<double>(interval_steps), lr, std::nullopt};
      interval_loss = 0.0;
      interval_steps = 0;
      if (eval_now) {
        r.ppl = pseudo_perplexity(valid, params, cfg, vocab, eval_seed);
        if (!std::isfinite(*r.ppl)) {
          restore(params, good);
          throw DivergenceError(done, good_step);
        }
      }
      good = snapshot(params);
      good_step = done;
      if (r.ppl && hooks.on_eval) hooks.on_eval(done, params, *r.ppl);
      trace.push_back(r);
      if (hooks.on_record) hooks.on_record(r);
    }
  }
  return trace;
}

std::string synthetic_word(std::size_t i) {
  static constexpr const char* kSyllables[] = {"ka", "lo", "mi", "ne", "su", "ti", "ra", "vo"};
  constexpr std::size_t kCount = std::size(kSyllables);
  std::string w = kSyllables[i % kCount];
  w += kSyllables[(3 * i + 1) % kCount];
  for (std::size_t v = i / kCount; v > 0; v /= kCount) w += kSyllables[(v - 1) % kCount];
  return w;
}

std::vector<std::string> synthetic_copy_corpus(std::size_t documents, std::size_t word_types,
                                               std::size_t min_words, std::size_t max_words,
                                               Rng& rng) {
  if (word_types < 2 || min_words == 0 || max_words < min_words) {
    throw Error("synthetic corpus: need >= 2 word types and 1 <= min_words <= max_words");
  }
  std::vector<std::string> words;
  for (std::size_t i = 0; i < word_types; ++i) words.push_back(synthetic_word(i));
  std::vector<std::string> lines;
  for (std::size_t d = 0; d < documents; ++d) {
    const std::size_t len = min_words + rng.uniform_index(max_words - min_words + 1);
    std::size_t w = rng.uniform_index(word_types);
    std::string line;
    for (std::size_t k = 0; k < len; ++k) {
      if (k > 0) line += ' ';
      line += words[w];
      w = (w + 1) % word_types;
    }
    lines.push_back(std::move(line));
  }
  return lines;
}

}  // namespace msbert
