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

#include <array>
#include <cstddef>
#include <filesystem>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace msbert {

// Special tokens. Vocabularies built here place them at ids 0..8 in this
// order; loaded vocabularies may hold them anywhere (found by name).
inline constexpr std::array<std::string_view, 9> kSpecialTokens = {
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[E1]", "[/E1]", "[E2]", "[/E2]"};

inline constexpr std::string_view kContinuation = "##";

// Word index assigned to special pieces.
inline constexpr int kNoWord = -1;

class Vocabulary {
 public:
  // Only the special tokens.
  Vocabulary();
  explicit Vocabulary(std::vector<std::string> entries);

  static Vocabulary load(const std::filesystem::path& path);
  static Vocabulary parse(std::istream& in);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return entries_.size(); }
  const std::string& entry(int id) const;
  const std::vector<std::string>& entries() const { return entries_; }
  std::optional<int> lookup(std::string_view piece) const;
  bool contains(std::string_view piece) const { return lookup(piece).has_value(); }
  // Id of a special token; throws when the vocabulary lacks it.
  int special_id(std::string_view token) const;
  bool is_special(int id) const;

  int pad_id() const { return special_id("[PAD]"); }
  int unk_id() const { return special_id("[UNK]"); }
  int cls_id() const { return special_id("[CLS]"); }
  int sep_id() const { return special_id("[SEP]"); }
  int mask_id() const { return special_id("[MASK]"); }

  // Every id that is not a special token, ascending.
  const std::vector<int>& regular_ids() const { return regular_ids_; }

  bool operator==(const Vocabulary& other) const { return entries_ == other.entries_; }

 private:
  std::vector<std::string> entries_;
  std::unordered_map<std::string, int> index_;
  std::vector<int> regular_ids_;
  std::vector<bool> special_;
};

struct TokenizedSequence {
  std::vector<int> piece_ids;
  // Source whitespace-word index per piece; kNoWord for special pieces.
  std::vector<int> word_ids;
  std::vector<int> attention_mask;

  std::size_t size() const { return piece_ids.size(); }
  bool empty() const { return piece_ids.empty(); }
  void push(int piece, int word, int mask = 1) {
    piece_ids.push_back(piece);
    word_ids.push_back(word);
    attention_mask.push_back(mask);
  }
  bool operator==(const TokenizedSequence&) const = default;
};

// Uncased WordPiece training by iterative pair merging. The pair merged at
// each step maximizes freq(pair) / (freq(left) * freq(right)); ties prefer the
// more frequent pair, then the lexicographically smaller (left, right).
// Training stops at `target_size` entries or when no pair occurs at least
// `min_freq` times. Input lines are expected to be normalized already.
Vocabulary train_vocab(std::span<const std::string> lines, std::size_t target_size,
                       std::size_t min_freq = 1);
Vocabulary train_vocab(std::istream& corpus, std::size_t target_size,
                       std::size_t min_freq = 1);

// Greedy longest-match-first pieces of one word. Words longer than
// `max_word_chars` codepoints, or with no full cover, become a single [UNK].
std::vector<int> tokenize_word(std::string_view word, const Vocabulary& vocab,
                               std::size_t max_word_chars = 100);

// Whitespace split followed by tokenize_word; no [CLS]/[SEP] framing.
TokenizedSequence tokenize(std::string_view text, const Vocabulary& vocab,
                           std::size_t max_word_chars = 100);

std::string detokenize(std::span<const int> piece_ids, const Vocabulary& vocab);
std::string detokenize(const TokenizedSequence& seq, const Vocabulary& vocab);

// |regular(a) ∩ regular(b)| / |regular(a)|, exact string match including
// "##" prefixes. Asymmetric: the denominator is the first vocabulary.
double vocab_overlap(const Vocabulary& a, const Vocabulary& b);

std::vector<std::string> split_whitespace(std::string_view text);

}  // namespace msbert
