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

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "msbert/autodiff.hpp"
#include "msbert/normalizer.hpp"
#include "msbert/rng.hpp"
#include "msbert/wordpiece.hpp"

namespace msbert {

struct TaggedSentence {
  std::vector<std::string> tokens;
  std::vector<std::string> tags;
  bool operator==(const TaggedSentence&) const = default;
};

// Throws when a span is reversed, reaches past `num_tokens` or the two
// spans share a token.
void validate_spans(std::pair<std::size_t, std::size_t> head,
                    std::pair<std::size_t, std::size_t> tail, std::size_t num_tokens);

// Inclusive token-index spans over whitespace tokens.
struct RelationInstance {
  std::vector<std::string> tokens;
  std::pair<std::size_t, std::size_t> head;
  std::pair<std::size_t, std::size_t> tail;
  std::string label;

  // Throws when a span is reversed, out of range or the spans overlap.
  void validate() const;
  bool operator==(const RelationInstance&) const = default;
};

struct TextRecord {
  std::string text;
  std::string label;
  bool operator==(const TextRecord&) const = default;
};

// token<TAB or space>tag per line, blank line between sentences. When
// `allowed_tags` is non-empty every tag must be one of them.
std::vector<TaggedSentence> load_conll(const std::filesystem::path& path,
                                       std::span<const std::string> allowed_tags = {});
std::vector<TaggedSentence> parse_conll(std::istream& in, const std::string& origin,
                                        std::span<const std::string> allowed_tags = {});
void write_conll(std::ostream& out, std::span<const TaggedSentence> sentences);

// JSON lines {tokens, head: [i, j], tail: [k, l], label}. Without
// `require_label` the label may be absent (left empty).
std::vector<RelationInstance> load_relations(const std::filesystem::path& path,
                                             bool require_label = true);
std::vector<RelationInstance> parse_relations(std::istream& in, const std::string& origin,
                                              bool require_label = true);
nlohmann::json to_json(const RelationInstance& r);

// JSON lines {text, label}; integer labels are kept as their decimal string.
std::vector<TextRecord> load_classification(const std::filesystem::path& path,
                                            bool require_label = true);
std::vector<TextRecord> parse_classification(std::istream& in, const std::string& origin,
                                             bool require_label = true);

// Largest-remainder partition sizes; ratios must sum to 1 within 1e-9.
std::vector<std::size_t> split_sizes(std::size_t n, std::span<const double> ratios);

// Seeded shuffle cut into split_sizes() chunks; each chunk lists its record
// indices in ascending order.
std::vector<std::vector<std::size_t>> split_indices(std::size_t n, std::span<const double> ratios,
                                                    std::uint64_t seed);

template <typename T>
std::vector<std::vector<T>> split(std::span<const T> records, std::span<const double> ratios,
                                  std::uint64_t seed) {
  std::vector<std::vector<T>> parts;
  for (const auto& idx : split_indices(records.size(), ratios, seed)) {
    auto& part = parts.emplace_back();
    part.reserve(idx.size());
    for (std::size_t i : idx) part.push_back(records[i]);
  }
  return parts;
}

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  // Free-form model description (encoder config, task, variant ...).
  nlohmann::json config;
  // Label list of the task head, or null.
  nlohmann::json scheme;
  ParamStore params;
  Vocabulary vocab;
  MappingTable table;
};

// Directory with manifest.json, params.bin (little-endian float32),
// vocab.txt and mapping.tsv. Written to a temporary sibling and renamed.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Copies every checkpoint tensor accepted by `filter` into `target`, which
// must already hold a tensor of the same name and shape. Returns the copied
// names.
std::vector<std::string> load_params_into(
    ParamStore& target, const ParamStore& source,
    const std::function<bool(const std::string&)>& filter = {});

}  // namespace msbert
