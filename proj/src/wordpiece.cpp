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

#include "msbert/wordpiece.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "msbert/error.hpp"
#include "msbert/utf8.hpp"

namespace msbert {
namespace {

bool is_special_name(std::string_view s) {
  return std::find(kSpecialTokens.begin(), kSpecialTokens.end(), s) != kSpecialTokens.end();
}

bool is_continuation(std::string_view piece) {
  return piece.size() > kContinuation.size() && piece.starts_with(kContinuation);
}

std::string strip_continuation(std::string_view piece) {
  return std::string(is_continuation(piece) ? piece.substr(kContinuation.size()) : piece);
}

}  // namespace

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  auto space = [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
  };
  while (i < text.size()) {
    while (i < text.size() && space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !space(text[i])) ++i;
    if (i > start) words.emplace_back(text.substr(start, i - start));
  }
  return words;
}

Vocabulary::Vocabulary()
    : Vocabulary(std::vector<std::string>(kSpecialTokens.begin(), kSpecialTokens.end())) {}

Vocabulary::Vocabulary(std::vector<std::string> entries) : entries_(std::move(entries)) {
  special_.resize(entries_.size());
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].empty()) {
      throw Error("vocabulary: empty entry at id " + std::to_string(i));
    }
    if (!index_.emplace(entries_[i], static_cast<int>(i)).second) {
      throw Error("vocabulary: duplicate entry '" + entries_[i] + "' at id " +
                  std::to_string(i));
    }
    special_[i] = is_special_name(entries_[i]);
    if (!special_[i]) regular_ids_.push_back(static_cast<int>(i));
  }
}

Vocabulary Vocabulary::parse(std::istream& in) {
  std::vector<std::string> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    entries.push_back(line);
  }
  return Vocabulary(std::move(entries));
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("vocabulary: cannot open " + path.string());
  return parse(in);
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("vocabulary: cannot write " + path.string());
  for (const auto& e : entries_) out << e << '\n';
}

const std::string& Vocabulary::entry(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= entries_.size()) {
    throw Error("vocabulary: id " + std::to_string(id) + " out of range (size " +
                std::to_string(entries_.size()) + ")");
  }
  return entries_[static_cast<std::size_t>(id)];
}

std::optional<int> Vocabulary::lookup(std::string_view piece) const {
  auto it = index_.find(std::string(piece));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::special_id(std::string_view token) const {
  auto id = lookup(token);
  if (!id) throw Error("vocabulary: missing special token " + std::string(token));
  return *id;
}

bool Vocabulary::is_special(int id) const {
  return id >= 0 && static_cast<std::size_t>(id) < special_.size() &&
         special_[static_cast<std::size_t>(id)];
}

Vocabulary train_vocab(std::span<const std::string> lines, std::size_t target_size,
                       std::size_t min_freq) {
  std::map<std::string, std::size_t> word_counts;
  for (const auto& line : lines) {
    for (auto& w : split_whitespace(line)) ++word_counts[w];
  }
  if (word_counts.empty()) throw Error("vocab-train: empty corpus");

  // Initial units: first character as-is, later characters with "##".
  std::set<std::string> alphabet;
  std::vector<std::vector<std::string>> split_words;
  std::vector<std::size_t> counts;
  for (const auto& [word, count] : word_counts) {
    const auto cuts = utf8::boundaries(word);
    std::vector<std::string> units;
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
      std::string unit = word.substr(cuts[k], cuts[k + 1] - cuts[k]);
      if (k > 0) unit = std::string(kContinuation) + unit;
      alphabet.insert(unit);
      units.push_back(std::move(unit));
    }
    split_words.push_back(std::move(units));
    counts.push_back(count);
  }
  const std::size_t floor_size = kSpecialTokens.size() + alphabet.size();
  if (target_size <= floor_size) {
    throw Error("vocab-train: target size " + std::to_string(target_size) +
                " must exceed specials + alphabet (" + std::to_string(floor_size) + ")");
  }

  std::vector<std::string> entries(kSpecialTokens.begin(), kSpecialTokens.end());
  std::unordered_map<std::string, int> ids;
  for (std::size_t i = 0; i < entries.size(); ++i) ids.emplace(entries[i], static_cast<int>(i));
  auto intern = [&](const std::string& unit) {
    auto [it, inserted] = ids.emplace(unit, static_cast<int>(entries.size()));
    if (inserted) entries.push_back(unit);
    return it->second;
  };
  for (const auto& unit : alphabet) intern(unit);

  std::vector<std::vector<int>> words;
  for (const auto& units : split_words) {
    std::vector<int> w;
    for (const auto& u : units) w.push_back(ids.at(u));
    words.push_back(std::move(w));
  }

  using Pair = std::pair<int, int>;
  while (entries.size() < target_size) {
    std::vector<std::size_t> unit_freq(entries.size(), 0);
    std::map<Pair, std::size_t> pair_freq;
    for (std::size_t w = 0; w < words.size(); ++w) {
      const auto& units = words[w];
      for (std::size_t k = 0; k < units.size(); ++k) {
        unit_freq[static_cast<std::size_t>(units[k])] += counts[w];
        if (k + 1 < units.size()) pair_freq[{units[k], units[k + 1]}] += counts[w];
      }
    }

    // Scores compared exactly: f1 / (a1 b1) > f2 / (a2 b2) <=> f1 a2 b2 > f2 a1 b1.
    const Pair* best = nullptr;
    std::size_t best_freq = 0;
    unsigned __int128 best_den = 1;
    for (const auto& [pair, freq] : pair_freq) {
      if (freq < min_freq) continue;
      const unsigned __int128 den =
          static_cast<unsigned __int128>(unit_freq[static_cast<std::size_t>(pair.first)]) *
          unit_freq[static_cast<std::size_t>(pair.second)];
      bool better = best == nullptr;
      if (!better) {
        const unsigned __int128 lhs = static_cast<unsigned __int128>(freq) * best_den;
        const unsigned __int128 rhs = static_cast<unsigned __int128>(best_freq) * den;
        if (lhs != rhs) {
          better = lhs > rhs;
        } else if (freq != best_freq) {
          better = freq > best_freq;
        } else {
          const auto& cur = std::tie(entries[static_cast<std::size_t>(pair.first)],
                                     entries[static_cast<std::size_t>(pair.second)]);
          const auto& inc = std::tie(entries[static_cast<std::size_t>(best->first)],
                                     entries[static_cast<std::size_t>(best->second)]);
          better = cur < inc;
        }
      }
      if (better) {
        best = &pair;
        best_freq = freq;
        best_den = den;
      }
    }
    if (best == nullptr) break;

    const Pair merge = *best;
    const std::string merged = entries[static_cast<std::size_t>(merge.first)] +
                               strip_continuation(entries[static_cast<std::size_t>(merge.second)]);
    const int merged_id = intern(merged);
    for (auto& units : words) {
      std::vector<int> next;
      next.reserve(units.size());
      for (std::size_t k = 0; k < units.size(); ++k) {
        if (k + 1 < units.size() && units[k] == merge.first && units[k + 1] == merge.second) {
          next.push_back(merged_id);
          ++k;
        } else {
          next.push_back(units[k]);
        }
      }
      units = std::move(next);
    }
  }
  return Vocabulary(std::move(entries));
}

Vocabulary train_vocab(std::istream& corpus, std::size_t target_size, std::size_t min_freq) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(corpus, line)) lines.push_back(line);
  return train_vocab(lines, target_size, min_freq);
}

std::vector<int> tokenize_word(std::string_view word, const Vocabulary& vocab,
                               std::size_t max_word_chars) {
  const auto cuts = utf8::boundaries(word);
  const std::size_t chars = cuts.size() - 1;
  if (chars == 0) return {};
  if (chars > max_word_chars) return {vocab.unk_id()};
  std::vector<int> pieces;
  std::size_t start = 0;
  std::string candidate;
  while (start < chars) {
    std::optional<int> match;
    std::size_t end = chars;
    for (; end > start; --end) {
      candidate.clear();
      if (start > 0) candidate = kContinuation;
      candidate.append(word.substr(cuts[start], cuts[end] - cuts[start]));
      if ((match = vocab.lookup(candidate))) break;
    }
    if (!match) return {vocab.unk_id()};
    pieces.push_back(*match);
    start = end;
  }
  return pieces;
}

TokenizedSequence tokenize(std::string_view text, const Vocabulary& vocab,
                           std::size_t max_word_chars) {
  TokenizedSequence seq;
  int word = 0;
  for (const auto& w : split_whitespace(text)) {
    for (int piece : tokenize_word(w, vocab, max_word_chars)) seq.push(piece, word);
    ++word;
  }
  return seq;
}

std::string detokenize(std::span<const int> piece_ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : piece_ids) {
    const std::string& piece = vocab.entry(id);
    if (vocab.is_special(id)) continue;
    if (is_continuation(piece)) {
      out.append(piece, kContinuation.size());
    } else {
      if (!out.empty()) out.push_back(' ');
      out.append(piece);
    }
  }
  return out;
}

std::string detokenize(const TokenizedSequence& seq, const Vocabulary& vocab) {
  return detokenize(seq.piece_ids, vocab);
}

double vocab_overlap(const Vocabulary& a, const Vocabulary& b) {
  if (a.regular_ids().empty() || b.regular_ids().empty()) {
    throw Error("vocab-overlap: both vocabularies need non-special entries");
  }
  std::size_t shared = 0;
  for (int id : a.regular_ids()) {
    const auto other = b.lookup(a.entry(id));
    if (other && !b.is_special(*other)) ++shared;
  }
  return static_cast<double>(shared) / static_cast<double>(a.regular_ids().size());
}

}  // namespace msbert
