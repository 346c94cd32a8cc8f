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

#include <compare>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace msbert {

struct EntitySpan {
  std::string type;
  std::size_t start = 0;
  std::size_t end = 0;  // inclusive

  auto operator<=>(const EntitySpan&) const = default;
};

// conll: an I-X after O, a sequence start or another type opens a new
// entity. strict: that situation is an error.
enum class BioMode { conll, strict };

std::vector<EntitySpan> decode_bio(std::span<const std::string> tags,
                                   BioMode mode = BioMode::conll);

struct ClassScores {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // Gold count.
  std::size_t support() const { return tp + fn; }
};

struct F1Report {
  std::map<std::string, ClassScores> per_class;
  double micro_precision = 0.0;
  double micro_recall = 0.0;
  double micro_f1 = 0.0;
  double macro_f1 = 0.0;
  // Classes the macro average runs over.
  std::vector<std::string> macro_classes;

  nlohmann::json to_json() const;
  std::string to_text() const;
};

// Precision, recall and F1 from counts; any zero division yields 0.
ClassScores score_counts(std::size_t tp, std::size_t fp, std::size_t fn);

// Entity-level exact match. Macro runs over macro_types when given,
// otherwise over the types seen in gold or pred.
F1Report entity_f1(const std::vector<std::vector<std::string>>& gold,
                   const std::vector<std::vector<std::string>>& pred,
                   const std::optional<std::vector<std::string>>& macro_types = std::nullopt,
                   BioMode mode = BioMode::conll);

double binary_f1(std::span<const int> gold, std::span<const int> pred);

// One-vs-rest per class; macro over classes in gold or pred.
F1Report multiclass_f1(std::span<const std::string> gold, std::span<const std::string> pred);

}  // namespace msbert
