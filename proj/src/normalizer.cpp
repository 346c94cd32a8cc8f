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

#include "msbert/normalizer.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include "msbert/error.hpp"
#include "msbert/utf8.hpp"

namespace msbert {
namespace {

std::string at_line(const std::string& origin, std::size_t line) {
  return origin + ":" + std::to_string(line) + ": ";
}

char32_t parse_codepoint(std::string_view field, const std::string& where) {
  if (field.size() < 3 || (field.substr(0, 2) != "U+" && field.substr(0, 2) != "u+")) {
    throw Error(where + "expected U+XXXX, got '" + std::string(field) + "'");
  }
  const std::string_view hex = field.substr(2);
  if (hex.size() < 4 || hex.size() > 6) {
    throw Error(where + "codepoint needs 4 to 6 hex digits: '" + std::string(field) + "'");
  }
  char32_t cp = 0;
  for (char c : hex) {
    int digit;
    if (c >= '0' && c <= '9') digit = c - '0';
    else if (c >= 'a' && c <= 'f') digit = c - 'a' + 10;
    else if (c >= 'A' && c <= 'F') digit = c - 'A' + 10;
    else throw Error(where + "malformed codepoint '" + std::string(field) + "'");
    cp = cp * 16 + static_cast<char32_t>(digit);
  }
  if (cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
    throw Error(where + "not a Unicode scalar value: '" + std::string(field) + "'");
  }
  return cp;
}

const icu::Normalizer2& nfkd() {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* instance = icu::Normalizer2::getNFKDInstance(status);
  if (U_FAILURE(status) || instance == nullptr) {
    throw Error(std::string("normalize: ICU NFKD unavailable: ") + u_errorName(status));
  }
  return *instance;
}

// Stage 1: compatibility decomposition with combining marks dropped.
std::u32string decompose(const std::u32string& text) {
  icu::UnicodeString us = icu::UnicodeString::fromUTF32(
      reinterpret_cast<const UChar32*>(text.data()), static_cast<int32_t>(text.size()));
  UErrorCode status = U_ZERO_ERROR;
  icu::UnicodeString decomposed = nfkd().normalize(us, status);
  if (U_FAILURE(status)) {
    throw Error(std::string("normalize: NFKD failed: ") + u_errorName(status));
  }
  std::u32string out;
  out.reserve(static_cast<std::size_t>(decomposed.length()));
  for (int32_t i = 0; i < decomposed.length();) {
    const UChar32 cp = decomposed.char32At(i);
    i = decomposed.moveIndex32(i, 1);
    if (u_charType(cp) == U_NON_SPACING_MARK) continue;
    out.push_back(static_cast<char32_t>(cp));
  }
  return out;
}

bool is_control(char32_t cp) {
  const auto type = u_charType(static_cast<UChar32>(cp));
  return type == U_CONTROL_CHAR || type == U_FORMAT_CHAR || cp == 0xFFFD;
}

bool is_space(char32_t cp) {
  return cp == U' ' || u_isUWhiteSpace(static_cast<UChar32>(cp));
}

// Stages 1-3. Lowercasing can produce characters with a compatibility
// decomposition (e.g. some Greek and letterlike symbols), so the
// decompose/lowercase pair repeats until nothing changes.
std::u32string canonical(std::u32string text) {
  for (int round = 0; round < 4; ++round) {
    text = decompose(text);
    bool changed = false;
    for (char32_t& cp : text) {
      if (is_control(cp)) {
        cp = U' ';
        continue;
      }
      const auto lower = static_cast<char32_t>(u_tolower(static_cast<UChar32>(cp)));
      if (lower != cp) {
        cp = lower;
        changed = true;
      }
    }
    if (!changed) break;
  }
  return text;
}

}  // namespace

MappingTable MappingTable::builtin() {
  static const char* kTable =
      "# fullwidth and relational symbols\n"
      "U+FF05\t%\n"
      "U+FF1E\t>\n"
      "U+226B\t>>\n"
      "U+FF1D\t=\n"
      "# vulgar fraction; NFKD yields 3 U+2044 4\n"
      "U+00BE\t3/4\n"
      "U+2044\t/\n"
      "# glyphs with no meaning in running text\n"
      "U+25A1\t \n"
      "U+2296\t \n"
      "U+22A0\t \n";
  std::istringstream in(kTable);
  return parse(in, "<builtin>");
}

MappingTable MappingTable::parse(std::istream& in, const std::string& origin) {
  MappingTable table;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw Error(at_line(origin, number) + "expected U+XXXX<TAB>replacement");
    }
    const char32_t source = parse_codepoint(std::string_view(line).substr(0, tab),
                                            at_line(origin, number));
    table.insert(source, line.substr(tab + 1), number, origin);
  }
  table.check_closed(origin);
  return table;
}

MappingTable MappingTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("mapping: cannot open " + path.string());
  return parse(in, path.string());
}

void MappingTable::insert(char32_t source, std::string replacement,
                          std::size_t line, const std::string& origin) {
  const std::string where = at_line(origin, line);
  if (index_.contains(source)) {
    throw Error(where + "duplicate source codepoint (first defined on line " +
                std::to_string(lines_[index_.at(source)]) + ")");
  }
  for (unsigned char c : replacement) {
    if (c >= 0x80) throw Error(where + "replacement must be ASCII");
    if (c < 0x20 || c == 0x7F) throw Error(where + "replacement contains a control character");
    if (c >= 'A' && c <= 'Z') {
      throw Error(where + "replacement is not idempotent: uppercase letters are lowercased on reapplication");
    }
  }
  index_.emplace(source, entries_.size());
  entries_.push_back({source, std::move(replacement)});
  lines_.push_back(line);
}

void MappingTable::check_closed(const std::string& origin) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    for (unsigned char c : entries_[i].replacement) {
      if (index_.contains(static_cast<char32_t>(c))) {
        throw Error(at_line(origin, lines_[i]) +
                    "replacement is not idempotent: it contains source character '" +
                    std::string(1, static_cast<char>(c)) + "'");
      }
    }
  }
}

const std::string* MappingTable::find(char32_t source) const {
  auto it = index_.find(source);
  return it == index_.end() ? nullptr : &entries_[it->second].replacement;
}

std::string MappingTable::to_tsv() const {
  std::ostringstream out;
  for (const auto& e : entries_) {
    out << "U+" << std::uppercase << std::hex << std::setw(4) << std::setfill('0')
        << static_cast<std::uint32_t>(e.source) << std::dec << '\t' << e.replacement << '\n';
  }
  return out.str();
}

MappingTable load_mapping(const std::optional<std::filesystem::path>& path) {
  return path ? MappingTable::load(*path) : MappingTable::builtin();
}

std::string normalize(std::string_view text, const MappingTable& table) {
  const std::u32string cleaned = canonical(utf8::decode(text));

  std::string mapped;
  mapped.reserve(cleaned.size());
  for (char32_t cp : cleaned) {
    if (const std::string* rep = table.find(cp)) {
      mapped += *rep;
    } else {
      utf8::append(mapped, cp);
    }
  }

  // Collapse whitespace. Replacements are ASCII, so only the original
  // codepoints can be non-ASCII spaces.
  std::string out;
  out.reserve(mapped.size());
  bool pending_space = false;
  for (char32_t cp : utf8::decode(mapped)) {
    if (is_space(cp)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    utf8::append(out, cp);
  }
  return out;
}

}  // namespace msbert
