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

#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "msbert/error.hpp"
#include "msbert/pretraining.hpp"

namespace msbert {
namespace {

Vocabulary small_vocab() {
  std::vector<std::string> e(kSpecialTokens.begin(), kSpecialTokens.end());
  for (std::string w : {"a", "b", "c", "d", "##x", "##y"}) e.push_back(w);
  return Vocabulary(std::move(e));
}

// Document of `n` pieces, words of length 1..3 with ids 9.. cycling.
TokenizedSequence doc_of(std::size_t n, Rng& rng) {
  TokenizedSequence d;
  int word = 0;
  while (d.size() < n) {
    const std::size_t len = std::min<std::size_t>(1 + rng.uniform_index(3), n - d.size());
    for (std::size_t k = 0; k < len; ++k) d.push(k == 0 ? 9 : 13, word);
    ++word;
  }
  return d;
}

// Flat stream of pieces and separators cut into (max_len - 1) chunks behind [CLS].
std::vector<std::vector<int>> packing_oracle(const std::vector<TokenizedSequence>& docs,
                                             std::size_t max_len) {
  std::vector<int> stream;
  for (const auto& d : docs) {
    stream.insert(stream.end(), d.piece_ids.begin(), d.piece_ids.end());
    stream.push_back(3);
  }
  std::vector<std::vector<int>> out;
  for (std::size_t i = 0; i < stream.size(); i += max_len - 1) {
    std::vector<int> seq{2};
    for (std::size_t k = i; k < std::min(stream.size(), i + max_len - 1); ++k) {
      seq.push_back(stream[k]);
    }
    seq.resize(max_len, 0);
    out.push_back(seq);
  }
  return out;
}

TEST(PackCorpus, ThreeDocumentExample) {
  Rng rng(1);
  auto vocab = small_vocab();
  std::vector<TokenizedSequence> docs{doc_of(120, rng), doc_of(500, rng), doc_of(900, rng)};
  auto packed = pack_corpus(docs, vocab, 512);
  ASSERT_EQ(packed.size(), 3u);
  EXPECT_EQ(packed.size(), static_cast<std::size_t>(std::ceil((1520.0 + 3.0) / 511.0)));
  const auto& first = packed[0];
  EXPECT_EQ(first.piece_ids[0], vocab.cls_id());
  EXPECT_EQ(first.piece_ids[121], vocab.sep_id());
  // 1 + 120 + 1 + 390 = 512: the first 390 pieces of the second document follow.
  for (std::size_t k = 0; k < 390; ++k) EXPECT_EQ(first.piece_ids[122 + k], docs[1].piece_ids[k]);
  std::vector<std::vector<int>> got;
  for (const auto& s : packed) got.push_back(s.piece_ids);
  EXPECT_EQ(got, packing_oracle(docs, 512));
}

TEST(PackCorpus, UnderfullAndExactFit) {
  Rng rng(2);
  auto vocab = small_vocab();
  std::vector<TokenizedSequence> one{doc_of(5, rng)};
  auto packed = pack_corpus(one, vocab, 512);
  ASSERT_EQ(packed.size(), 1u);
  EXPECT_EQ(std::count(packed[0].piece_ids.begin(), packed[0].piece_ids.end(), vocab.pad_id()),
            505);
  EXPECT_EQ(std::count(packed[0].attention_mask.begin(), packed[0].attention_mask.end(), 0), 505);

  std::vector<TokenizedSequence> exact{doc_of(510, rng)};
  packed = pack_corpus(exact, vocab, 512);
  ASSERT_EQ(packed.size(), 1u);
  EXPECT_EQ(std::count(packed[0].piece_ids.begin(), packed[0].piece_ids.end(), vocab.pad_id()), 0);
  EXPECT_EQ(packed[0].piece_ids.back(), vocab.sep_id());
}

TEST(PackCorpus, EmptyCorpusIsError) {
  std::vector<TokenizedSequence> none;
  EXPECT_THROW(pack_corpus(none, small_vocab(), 16), Error);
}

TEST(PackCorpus, FuzzAgainstOracle) {
  Rng rng(3);
  auto vocab = small_vocab();
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t max_len = 4 + rng.uniform_index(30);
    std::vector<TokenizedSequence> docs;
    std::size_t pieces = 0;
    for (std::size_t d = 0, n = 1 + rng.uniform_index(6); d < n; ++d) {
      docs.push_back(doc_of(1 + rng.uniform_index(40), rng));
      pieces += docs.back().size();
    }
    auto packed = pack_corpus(docs, vocab, max_len);
    auto oracle = packing_oracle(docs, max_len);
    ASSERT_EQ(packed.size(), oracle.size());
    ASSERT_EQ(packed.size(), (pieces + docs.size() + max_len - 2) / (max_len - 1));
    for (std::size_t s = 0; s < packed.size(); ++s) {
      const auto& seq = packed[s];
      ASSERT_EQ(seq.piece_ids, oracle[s]);
      ASSERT_EQ(seq.size(), max_len);
      ASSERT_EQ(seq.word_ids.size(), max_len);
      EXPECT_EQ(std::count(seq.piece_ids.begin(), seq.piece_ids.end(), vocab.mask_id()), 0);
      if (s + 1 < packed.size()) {
        EXPECT_EQ(std::count(seq.piece_ids.begin(), seq.piece_ids.end(), vocab.pad_id()), 0);
      }
      // Word ids: specials carry kNoWord; the rest start at 0 and step by one.
      int last = -1;
      for (std::size_t i = 0; i < max_len; ++i) {
        if (vocab.is_special(seq.piece_ids[i])) {
          EXPECT_EQ(seq.word_ids[i], kNoWord);
        } else {
          EXPECT_TRUE(seq.word_ids[i] == last || seq.word_ids[i] == last + 1);
          last = seq.word_ids[i];
        }
      }
    }
  }
}

TEST(PackCorpus, WordsKeepTheirPieces) {
  auto vocab = small_vocab();
  TokenizedSequence d;
  d.push(9, 0);
  d.push(13, 0);
  d.push(10, 1);
  d.push(11, 2);
  d.push(14, 2);
  d.push(14, 2);
  std::vector<TokenizedSequence> docs{d, d};
  auto packed = pack_corpus(docs, vocab, 32);
  ASSERT_EQ(packed.size(), 1u);
  EXPECT_EQ(std::vector<int>(packed[0].word_ids.begin(), packed[0].word_ids.begin() + 15),
            (std::vector<int>{kNoWord, 0, 0, 1, 2, 2, 2, kNoWord, 3, 3, 4, 5, 5, 5, kNoWord}));
}

TokenizedSequence packed_example(Rng& rng, const Vocabulary& vocab) {
  std::vector<TokenizedSequence> docs{doc_of(20, rng), doc_of(30, rng)};
  return pack_corpus(docs, vocab, 64)[0];
}

TEST(Dwwm, SaturationTargetsEveryWordPiece) {
  Rng rng(4);
  auto vocab = small_vocab();
  auto seq = packed_example(rng, vocab);
  MaskingConfig cfg;
  cfg.mask_prob = 1.0;
  auto m = apply_dwwm(seq, vocab, cfg, rng);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (vocab.is_special(seq.piece_ids[i])) {
      EXPECT_EQ(m.targets[i], kIgnoreIndex);
      EXPECT_EQ(m.piece_ids[i], seq.piece_ids[i]);
    } else {
      EXPECT_EQ(m.targets[i], seq.piece_ids[i]);
    }
  }
  EXPECT_EQ(m.selected_words.size(), m.words_total);
  EXPECT_EQ(m.target_count(), 50u);
}

TEST(Dwwm, WholeWordsAndSpecialsFuzz) {
  Rng rng(5);
  auto vocab = small_vocab();
  MaskingConfig cfg;
  for (int trial = 0; trial < 500; ++trial) {
    auto seq = packed_example(rng, vocab);
    auto m = apply_dwwm(seq, vocab, cfg, rng);
    ASSERT_EQ(m.piece_ids.size(), seq.size());
    std::set<int> selected(m.selected_words.begin(), m.selected_words.end());
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const bool special = vocab.is_special(seq.piece_ids[i]);
      if (special) {
        ASSERT_EQ(m.targets[i], kIgnoreIndex);
        ASSERT_EQ(m.piece_ids[i], seq.piece_ids[i]);
        continue;
      }
      const bool chosen = selected.count(seq.word_ids[i]) > 0;
      ASSERT_EQ(m.targets[i] != kIgnoreIndex, chosen);
      if (!chosen) ASSERT_EQ(m.piece_ids[i], seq.piece_ids[i]);
      if (m.piece_ids[i] != seq.piece_ids[i] && m.piece_ids[i] != vocab.mask_id()) {
        ASSERT_FALSE(vocab.is_special(m.piece_ids[i]));
      }
    }
  }
}

TEST(Dwwm, MissingWordIdsIsError) {
  auto vocab = small_vocab();
  TokenizedSequence seq;
  seq.push(9, 0);
  seq.word_ids.clear();
  Rng rng(6);
  EXPECT_THROW(apply_dwwm(seq, vocab, MaskingConfig{}, rng), Error);
}

TEST(Dwwm, Deterministic) {
  auto vocab = small_vocab();
  Rng g(7);
  auto seq = packed_example(g, vocab);
  Rng a(8), b(8);
  auto x = apply_dwwm(seq, vocab, MaskingConfig{}, a);
  auto y = apply_dwwm(seq, vocab, MaskingConfig{}, b);
  EXPECT_EQ(x.piece_ids, y.piece_ids);
  EXPECT_EQ(x.targets, y.targets);
}

TEST(LrAt, Schedule) {
  OptimizerConfig cfg;
  cfg.peak_lr = 1e-4;
  cfg.warmup_ratio = 0.1;
  cfg.total_steps = 1000;
  EXPECT_EQ(cfg.warmup_steps(), 100u);
  EXPECT_EQ(lr_at(0, cfg), 0.0);
  EXPECT_EQ(lr_at(100, cfg), 1e-4);
  EXPECT_EQ(lr_at(1000, cfg), 0.0);
  EXPECT_NEAR(lr_at(50, cfg), 5e-5, 1e-20);
  EXPECT_NEAR(lr_at(550, cfg), 5e-5, 1e-20);
  EXPECT_THROW(lr_at(1001, cfg), Error);
  double prev = 0.0;
  for (std::size_t s = 0; s <= 100; ++s) {
    EXPECT_GE(lr_at(s, cfg), prev);
    prev = lr_at(s, cfg);
  }
  for (std::size_t s = 101; s <= 1000; ++s) {
    EXPECT_LE(lr_at(s, cfg), prev);
    prev = lr_at(s, cfg);
  }
}

TEST(AdamW, ZeroGradientNoDecayIsFixedPoint) {
  OptimizerConfig cfg;
  cfg.weight_decay = 0.0;
  ParamStore store;
  store.add("w", Tensor::vector({1.5, -2.0}));
  store.zero_grad();
  AdamW opt(cfg);
  for (int i = 0; i < 3; ++i) opt.step(store, 0.1);
  EXPECT_EQ(store.at("w").value, Tensor::vector({1.5, -2.0}));
}

TEST(AdamW, FirstStepByHand) {
  OptimizerConfig cfg;
  cfg.weight_decay = 0.0;
  ParamStore store;
  store.add("w", Tensor::vector({1.0}));
  store.at("w").grad = Tensor::vector({1.0});
  AdamW opt(cfg);
  opt.step(store, 0.1);
  // m = 0.1, v = 0.02; m_hat = 1, v_hat = 1.
  const double m_hat = (1 - 0.9) * 1.0 / (1 - 0.9);
  const double v_hat = (1 - 0.98) * 1.0 / (1 - 0.98);
  EXPECT_NEAR(store.at("w").value[0], 1.0 - 0.1 * m_hat / (std::sqrt(v_hat) + 1e-6), 1e-15);
  // Second step with g = 0.5.
  store.at("w").grad = Tensor::vector({0.5});
  const double before = store.at("w").value[0];
  opt.step(store, 0.1);
  const double m2 = 0.9 * 0.1 + 0.1 * 0.5, v2 = 0.98 * 0.02 + 0.02 * 0.25;
  const double expect = before - 0.1 * (m2 / (1 - 0.81)) / (std::sqrt(v2 / (1 - 0.9604)) + 1e-6);
  EXPECT_NEAR(store.at("w").value[0], expect, 1e-15);
}

TEST(AdamW, PureDecayAndExclusions) {
  OptimizerConfig cfg;
  cfg.weight_decay = 0.01;
  ParamStore store;
  store.add("layer.0.ffn.inner.weight", Tensor::vector({2.0}));
  store.add("layer.0.ffn.inner.bias", Tensor::vector({2.0}));
  store.add("layer.0.ffn.norm.gain", Tensor::vector({2.0}));
  store.zero_grad();
  AdamW opt(cfg);
  double expect = 2.0;
  for (int i = 0; i < 5; ++i) {
    opt.step(store, 0.5);
    expect *= (1.0 - 0.5 * 0.01);
  }
  EXPECT_EQ(store.at("layer.0.ffn.inner.weight").value[0], expect);
  EXPECT_EQ(store.at("layer.0.ffn.inner.bias").value[0], 2.0);
  EXPECT_EQ(store.at("layer.0.ffn.norm.gain").value[0], 2.0);
}

TEST(AdamW, NonFiniteGradientNamesTensor) {
  ParamStore store;
  store.add("head.weight", Tensor::vector({1.0}));
  store.at("head.weight").grad = Tensor::vector({std::nan("")});
  AdamW opt(OptimizerConfig{});
  try {
    opt.step(store, 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("head.weight"), std::string::npos);
  }
  EXPECT_EQ(store.at("head.weight").value[0], 1.0);
}

TEST(AdamW, GroupLearningRates) {
  ParamStore store;
  store.add("a.weight", Tensor::vector({1.0}), 0);
  store.add("b.weight", Tensor::vector({1.0}), 1);
  for (auto& [n, p] : store) p.grad = Tensor::vector({1.0});
  OptimizerConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt(cfg);
  const double lrs[] = {0.0, 0.1};
  opt.step(store, lrs);
  EXPECT_EQ(store.at("a.weight").value[0], 1.0);
  EXPECT_LT(store.at("b.weight").value[0], 0.95);
  const double one[] = {0.1};
  EXPECT_THROW(opt.step(store, one), Error);
}

struct TinySetup {
  Vocabulary vocab;
  std::vector<TokenizedSequence> train, valid;
  PretrainConfig cfg;
};

TinySetup tiny_setup(std::size_t steps) {
  Rng rng(9);
  auto lines = synthetic_copy_corpus(60, 6, 4, 10, rng);
  TinySetup s{train_vocab(lines, 40), {}, {}, {}};
  std::vector<TokenizedSequence> docs;
  for (const auto& l : lines) docs.push_back(tokenize(l, s.vocab));
  s.train = pack_corpus(std::span(docs).first(50), s.vocab, 16);
  s.valid = pack_corpus(std::span(docs).subspan(50), s.vocab, 16);
  auto& c = s.cfg;
  c.encoder.vocab_size = s.vocab.size();
  c.encoder.hidden_dim = 8;
  c.encoder.num_layers = 1;
  c.encoder.num_heads = 2;
  c.encoder.ff_dim = 16;
  c.encoder.max_positions = 16;
  c.max_len = 16;
  c.batch_size = 4;
  c.optimizer.total_steps = steps;
  c.optimizer.peak_lr = 3e-3;
  c.log_every = 5;
  c.eval_every = 10;
  c.seed = 11;
  return s;
}

TEST(MlmTrain, ZeroLearningRateLeavesParametersUntouched) {
  auto s = tiny_setup(1);
  s.cfg.optimizer.peak_lr = 0.0;
  auto params = init_pretraining_params(s.cfg);
  auto before = params;
  mlm_train(params, s.train, s.valid, s.vocab, s.cfg);
  for (const auto& [name, p] : before) EXPECT_EQ(params.at(name).value, p.value) << name;
}

TEST(MlmTrain, ReproducibleTrace) {
  auto s = tiny_setup(20);
  auto a = init_pretraining_params(s.cfg);
  auto b = init_pretraining_params(s.cfg);
  auto ta = mlm_train(a, s.train, s.valid, s.vocab, s.cfg);
  auto tb = mlm_train(b, s.train, s.valid, s.vocab, s.cfg);
  ASSERT_EQ(ta.size(), 4u);
  for (std::size_t i = 0; i < ta.size(); ++i) {
    EXPECT_EQ(to_json_line(ta[i]).dump(), to_json_line(tb[i]).dump());
  }
  EXPECT_TRUE(ta[1].ppl.has_value());
  EXPECT_FALSE(ta[0].ppl.has_value());
  for (const auto& [name, p] : a) EXPECT_EQ(b.at(name).value, p.value);
}

TEST(MlmTrain, InitialLossNearLogV) {
  auto s = tiny_setup(1);
  auto params = init_pretraining_params(s.cfg);
  const double ppl = pseudo_perplexity(s.valid, params, s.cfg, s.vocab, 1);
  EXPECT_NEAR(std::log(ppl), std::log(static_cast<double>(s.vocab.size())),
              0.05 * std::log(static_cast<double>(s.vocab.size())));
}

TEST(MlmTrain, DivergenceRestoresSnapshot) {
  auto s = tiny_setup(30);
  auto params = init_pretraining_params(s.cfg);
  int evals = 0;
  PretrainHooks hooks;
  std::map<std::string, Tensor> at_ten;
  hooks.on_eval = [&](std::size_t step, const ParamStore& ps, double) {
    ++evals;
    if (step == 10) {
      for (const auto& [n, p] : ps) at_ten.emplace(n, p.value);
      // Poison a parameter so the next step's loss is NaN.
      const_cast<ParamStore&>(ps).at("mlm.decoder.bias").value[9] = std::nan("");
    }
  };
  try {
    mlm_train(params, s.train, s.valid, s.vocab, s.cfg, hooks);
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.step(), 11u);
    EXPECT_EQ(e.restored_step(), 10u);
  }
  for (const auto& [n, v] : at_ten) EXPECT_EQ(params.at(n).value, v) << n;
}

TEST(PseudoPerplexity, UniformOverFourClasses) {
  auto s = tiny_setup(1);
  auto params = init_pretraining_params(s.cfg);
  auto& w = params.at("mlm.decoder.weight").value;
  w.fill(0.0);
  auto& b = params.at("mlm.decoder.bias").value;
  b.fill(-1e4);
  // Four live classes; every target must be among them.
  std::set<int> live;
  for (const auto& seq : s.valid) {
    for (int id : seq.piece_ids) {
      if (!s.vocab.is_special(id)) live.insert(id);
    }
  }
  ASSERT_GE(live.size(), 1u);
  std::vector<int> classes(live.begin(), live.end());
  while (classes.size() < 4) {
    for (int id : s.vocab.regular_ids()) {
      if (!live.count(id) && classes.size() < 4) {
        classes.push_back(id);
        live.insert(id);
      }
    }
  }
  if (classes.size() == 4) {
    for (int id : classes) b[static_cast<std::size_t>(id)] = 0.0;
    EXPECT_NEAR(pseudo_perplexity(s.valid, params, s.cfg, s.vocab, 2), 4.0, 1e-9);
  }
  EXPECT_THROW(pseudo_perplexity(std::span<const TokenizedSequence>{}, params, s.cfg, s.vocab, 2),
               Error);
}

TEST(PretrainConfig, JsonRoundTrip) {
  auto s = tiny_setup(7);
  nlohmann::json j = s.cfg;
  EXPECT_EQ(j.get<PretrainConfig>(), s.cfg);
}

TEST(SyntheticCorpus, CyclicSuccessors) {
  Rng rng(12);
  auto lines = synthetic_copy_corpus(20, 5, 3, 8, rng);
  ASSERT_EQ(lines.size(), 20u);
  std::map<std::string, std::string> next;
  for (const auto& l : lines) {
    auto words = split_whitespace(l);
    EXPECT_GE(words.size(), 3u);
    EXPECT_LE(words.size(), 8u);
    for (std::size_t i = 0; i + 1 < words.size(); ++i) {
      auto [it, fresh] = next.emplace(words[i], words[i + 1]);
      EXPECT_EQ(it->second, words[i + 1]);
    }
  }
  EXPECT_LE(next.size(), 5u);
}

}  // namespace
}  // namespace msbert
