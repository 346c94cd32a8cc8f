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

#include <filesystem>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace msbert {

struct MappingEntry {
  char32_t source;
  // Zero or more ASCII characters; " " sends a stray symbol to whitespace.
  std::string replacement;
};

// Codepoint substitution table applied after lowercasing.
//
// Accepted tables are idempotent by construction: replacements are lowercase
// printable ASCII (or space) and never contain a codepoint that is itself a
// source in the table.
class MappingTable {
 public:
  MappingTable() = default;

  // The symbols known to need mapping in materials-science text: fullwidth
  // percent/greater-than/equals, much-greater-than, vulgar three-quarters
  // (and the fraction slash NFKD turns it into), and box-like glyphs that
  // carry no meaning.
  static MappingTable builtin();

  // Parses `U+XXXX<TAB>replacement` lines; `#` starts a comment line.
  static MappingTable parse(std::istream& in, const std::string& origin = "<stream>");
  static MappingTable load(const std::filesystem::path& path);

  const std::vector<MappingEntry>& entries() const { return entries_; }
  const std::string* find(char32_t source) const;
  bool empty() const { return entries_.empty(); }
  std::string to_tsv() const;

 private:
  void insert(char32_t source, std::string replacement, std::size_t line,
              const std::string& origin);
  void check_closed(const std::string& origin) const;

  std::vector<MappingEntry> entries_;
  std::vector<std::size_t> lines_;
  std::unordered_map<char32_t, std::size_t> index_;
};

// Loads `path` when given, otherwise the built-in table.
MappingTable load_mapping(const std::optional<std::filesystem::path>& path);

// Runs, in order: NFKD with combining marks removed, control/format
// characters to space, lowercase, table substitution, whitespace collapse and
// trim. Total, deterministic and idempotent.
std::string normalize(std::string_view text, const MappingTable& table);

}  // namespace msbert
