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

#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "msbert/wordpiece.hpp"

namespace msbert {

// Exit codes: 0 success, 1 failure (one `msbert: error: ...` line on err),
// 2 command-line usage error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Copy of `base` with the values of `patch` written over it. Objects merge
// recursively; a key missing from `base` is an error naming its path.
nlohmann::json overlay_config(const nlohmann::json& base, const nlohmann::json& patch);

struct CorpusStats {
  std::size_t documents = 0;
  std::size_t words = 0;
  std::size_t pieces = 0;
  // (words, pieces) per document.
  std::vector<std::pair<std::size_t, std::size_t>> per_document;
  nlohmann::json to_json() const;
};

// One document per non-blank line. Throws on an empty corpus.
CorpusStats corpus_stats(std::span<const std::string> lines, const Vocabulary& vocab);

}  // namespace msbert
