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

#include <algorithm>
#include <filesystem>
#include <sstream>

#include <gtest/gtest.h>

#include "msbert/error.hpp"
#include "msbert/rng.hpp"
#include "msbert/wordpiece.hpp"

namespace msbert {
namespace {

Vocabulary with_specials(std::vector<std::string> extra) {
  std::vector<std::string> e(kSpecialTokens.begin(), kSpecialTokens.end());
  e.insert(e.end(), extra.begin(), extra.end());
  return Vocabulary(std::move(e));
}

std::vector<std::string> pieces(const TokenizedSequence& s, const Vocabulary& v) {
  std::vector<std::string> out;
  for (int id : s.piece_ids) out.push_back(v.entry(id));
  return out;
}

std::vector<int> ids(const Vocabulary& v, std::vector<std::string> names) {
  std::vector<int> out;
  for (const auto& n : names) out.push_back(*v.lookup(n));
  return out;
}

TEST(Vocabulary, SpecialSlotsAreFixed) {
  Vocabulary v;
  EXPECT_EQ(v.pad_id(), 0);
  EXPECT_EQ(v.unk_id(), 1);
  EXPECT_EQ(v.cls_id(), 2);
  EXPECT_EQ(v.sep_id(), 3);
  EXPECT_EQ(v.mask_id(), 4);
  EXPECT_EQ(v.special_id("[/E2]"), 8);
  EXPECT_TRUE(v.regular_ids().empty());
}

TEST(Vocabulary, LookupInvertsEntry) {
  Vocabulary v = with_specials({"glass", "##es", "form", "##ing"});
  for (std::size_t i = 0; i < v.size(); ++i) {
    EXPECT_EQ(*v.lookup(v.entry(static_cast<int>(i))), static_cast<int>(i));
  }
  EXPECT_THROW(v.entry(static_cast<int>(v.size())), Error);
  EXPECT_THROW(v.entry(-1), Error);
}

TEST(Vocabulary, RejectsDuplicatesAndEmpty) {
  EXPECT_THROW(with_specials({"a", "a"}), Error);
  EXPECT_THROW(with_specials({""}), Error);
}

TEST(Vocabulary, FileRoundTrip) {
  Vocabulary v = with_specials({"glass", "##es", "é"});
  auto path = std::filesystem::temp_directory_path() / "msbert_vocab_test.txt";
  v.save(path);
  EXPECT_EQ(Vocabulary::load(path), v);
  std::filesystem::remove(path);
}

TEST(Tokenize, GreedyExample) {
  Vocabulary v = with_specials({"glass", "##es", "form", "##ing"});
  auto s = tokenize("glasses forming", v);
  EXPECT_EQ(pieces(s, v), (std::vector<std::string>{"glass", "##es", "form", "##ing"}));
  EXPECT_EQ(s.word_ids, (std::vector<int>{0, 0, 1, 1}));
  EXPECT_EQ(s.attention_mask, (std::vector<int>{1, 1, 1, 1}));
}

TEST(Tokenize, EmptyAndUnknown) {
  Vocabulary v = with_specials({"glass"});
  EXPECT_TRUE(tokenize("", v).empty());
  auto s = tokenize("zzz", v);
  EXPECT_EQ(s.piece_ids, (std::vector<int>{v.unk_id()}));
  EXPECT_EQ(s.word_ids, (std::vector<int>{0}));
}

TEST(Tokenize, PartialCoverIsUnknown) {
  Vocabulary v = with_specials({"glass"});
  auto s = tokenize("glassy glass", v);
  EXPECT_EQ(s.piece_ids, (std::vector<int>{v.unk_id(), *v.lookup("glass")}));
  EXPECT_EQ(s.word_ids, (std::vector<int>{0, 1}));
}

TEST(Tokenize, OverlongWordIsUnknown) {
  Vocabulary v = with_specials({"a", "##a"});
  EXPECT_EQ(tokenize_word(std::string(100, 'a'), v).size(), 100u);
  EXPECT_EQ(tokenize_word(std::string(101, 'a'), v), (std::vector<int>{v.unk_id()}));
  EXPECT_EQ(tokenize_word("aaa", v, 2), (std::vector<int>{v.unk_id()}));
}

TEST(Tokenize, MultibyteCharactersCountOnce) {
  Vocabulary v = with_specials({"é", "##é"});
  EXPECT_EQ(tokenize_word("ééé", v, 3).size(), 3u);
}

TEST(Detokenize, Examples) {
  Vocabulary v = with_specials({"glass", "##es", "form", "##ing"});
  EXPECT_EQ(detokenize(ids(v, {"glass", "##es"}), v), "glasses");
  EXPECT_EQ(detokenize(std::vector<int>{}, v), "");
  EXPECT_EQ(detokenize(ids(v, {"[CLS]", "form", "##ing", "[SEP]"}), v), "forming");
  EXPECT_EQ(detokenize(ids(v, {"glass", "form", "##ing"}), v), "glass forming");
  EXPECT_THROW(detokenize(std::vector<int>{99}, v), Error);
}

TEST(Overlap, Examples) {
  Vocabulary a = with_specials({"w", "x", "y", "z"});
  Vocabulary b = with_specials({"y", "z", "q"});
  EXPECT_DOUBLE_EQ(vocab_overlap(a, b), 0.5);
  EXPECT_DOUBLE_EQ(vocab_overlap(b, a), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(vocab_overlap(a, a), 1.0);
  EXPECT_DOUBLE_EQ(vocab_overlap(a, with_specials({"p", "##w"})), 0.0);
  EXPECT_THROW(vocab_overlap(Vocabulary(), a), Error);
}

TEST(TrainVocab, RepeatedWordBecomesEntry) {
  std::vector<std::string> corpus(20, "aaab");
  Vocabulary v = train_vocab(corpus, 100);
  EXPECT_TRUE(v.contains("aaab"));
  EXPECT_EQ(tokenize_word("aaab", v), (std::vector<int>{*v.lookup("aaab")}));
}

TEST(TrainVocab, FrequentWordMergesBeforeSuffix) {
  std::vector<std::string> corpus{"glass glass glasses"};
  Vocabulary v = train_vocab(corpus, 100);
  ASSERT_TRUE(v.contains("glass"));
  const int glass = *v.lookup("glass");
  if (auto es = v.lookup("##es")) EXPECT_LT(glass, *es);
  if (auto e = v.lookup("glasse")) EXPECT_LT(glass, *e);
}

TEST(TrainVocab, AlphabetFollowsSpecials) {
  std::vector<std::string> corpus{"ba ab"};
  Vocabulary v = train_vocab(corpus, 14);
  EXPECT_EQ(v.entry(9), "##a");
  EXPECT_EQ(v.entry(10), "##b");
  EXPECT_EQ(v.entry(11), "a");
  EXPECT_EQ(v.entry(12), "b");
  EXPECT_EQ(v.size(), 14u);
}

TEST(TrainVocab, Errors) {
  std::vector<std::string> empty{"", "   "};
  EXPECT_THROW(train_vocab(empty, 100), Error);
  std::vector<std::string> corpus{"ab"};
  // specials (9) + {a, ##b} = 11
  EXPECT_THROW(train_vocab(corpus, 11), Error);
  EXPECT_NO_THROW(train_vocab(corpus, 12));
}

TEST(TrainVocab, MinFreqStopsEarly) {
  std::vector<std::string> corpus{"ab cd cd"};
  Vocabulary v = train_vocab(corpus, 100, 2);
  EXPECT_TRUE(v.contains("cd"));
  EXPECT_FALSE(v.contains("ab"));
}

std::vector<std::string> random_corpus(Rng& rng, std::size_t lines) {
  const std::string letters = "abcdeé";
  std::vector<std::string> words;
  for (int w = 0; w < 40; ++w) {
    std::string word;
    const auto len = 1 + rng.uniform_index(8);
    for (std::size_t k = 0; k < len; ++k) {
      const auto c = rng.uniform_index(6);
      word += c == 5 ? std::string("é") : std::string(1, letters[c]);
    }
    words.push_back(word);
  }
  std::vector<std::string> corpus;
  for (std::size_t l = 0; l < lines; ++l) {
    std::string line;
    const auto n = 1 + rng.uniform_index(10);
    for (std::size_t k = 0; k < n; ++k) {
      if (!line.empty()) line += ' ';
      // Skewed word frequencies.
      line += words[std::min(rng.uniform_index(40), rng.uniform_index(40))];
    }
    corpus.push_back(line);
  }
  return corpus;
}

TEST(TrainVocab, Deterministic) {
  Rng rng(7);
  auto corpus = random_corpus(rng, 200);
  EXPECT_EQ(train_vocab(corpus, 80), train_vocab(corpus, 80));
  std::istringstream in([&] {
    std::string joined;
    for (const auto& l : corpus) joined += l + "\n";
    return joined;
  }());
  EXPECT_EQ(train_vocab(in, 80), train_vocab(corpus, 80));
}

TEST(TrainVocab, RoundTripOverTrainingText) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    auto corpus = random_corpus(rng, 100);
    Vocabulary v = train_vocab(corpus, 60 + 10 * seed);
    for (const auto& line : corpus) {
      auto seq = tokenize(line, v);
      EXPECT_EQ(std::count(seq.piece_ids.begin(), seq.piece_ids.end(), v.unk_id()), 0);
      EXPECT_EQ(detokenize(seq, v), line);
      EXPECT_TRUE(std::is_sorted(seq.word_ids.begin(), seq.word_ids.end()));
      for (int id : seq.piece_ids) EXPECT_LT(static_cast<std::size_t>(id), v.size());
    }
  }
}

TEST(Tokenize, NoLongerMatchAtAnyPieceStart) {
  Rng rng(11);
  auto corpus = random_corpus(rng, 100);
  Vocabulary v = train_vocab(corpus, 70);
  for (const auto& line : corpus) {
    for (const auto& word : split_whitespace(line)) {
      auto ids = tokenize_word(word, v);
      std::size_t start = 0;
      for (std::size_t p = 0; p < ids.size(); ++p) {
        std::string text = v.entry(ids[p]);
        if (p > 0) text = text.substr(2);
        const std::size_t end = start + text.size();
        ASSERT_EQ(word.compare(start, text.size(), text), 0);
        for (std::size_t longer = word.size(); longer > end; --longer) {
          std::string candidate = (p > 0 ? "##" : "") + word.substr(start, longer - start);
          if (v.contains(candidate)) {
            // Only whole-codepoint prefixes can be vocabulary entries.
            ADD_FAILURE() << "longer match " << candidate << " skipped in " << word;
          }
        }
        start = end;
      }
      EXPECT_EQ(start, word.size());
    }
  }
}

}  // namespace
}  // namespace msbert
