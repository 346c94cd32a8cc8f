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

#include "msbert/evaluation.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <set>
#include <sstream>

#include "msbert/error.hpp"

namespace msbert {
namespace {

struct Tag {
  char prefix;  // 'O', 'B' or 'I'
  std::string type;
};

Tag parse_tag(const std::string& tag, std::size_t index) {
  if (tag == "O") return {'O', ""};
  if (tag.size() > 2 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-') {
    return {tag[0], tag.substr(2)};
  }
  throw Error("decode_bio: unknown tag '" + tag + "' at position " + std::to_string(index));
}

F1Report aggregate(const std::map<std::string, std::array<std::size_t, 3>>& counts,
                   const std::vector<std::string>& macro_classes) {
  F1Report r;
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& [name, c] : counts) {
    r.per_class[name] = score_counts(c[0], c[1], c[2]);
    tp += c[0], fp += c[1], fn += c[2];
  }
  const ClassScores micro = score_counts(tp, fp, fn);
  r.micro_precision = micro.precision;
  r.micro_recall = micro.recall;
  r.micro_f1 = micro.f1;
  r.macro_classes = macro_classes;
  double total = 0.0;
  for (const auto& name : macro_classes) {
    auto it = r.per_class.find(name);
    if (it != r.per_class.end()) total += it->second.f1;
  }
  r.macro_f1 = macro_classes.empty() ? 0.0 : total / static_cast<double>(macro_classes.size());
  return r;
}

}  // namespace

std::vector<EntitySpan> decode_bio(std::span<const std::string> tags, BioMode mode) {
  std::vector<EntitySpan> spans;
  std::optional<EntitySpan> open;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const Tag t = parse_tag(tags[i], i);
    const bool continues = t.prefix == 'I' && open && open->type == t.type;
    if (continues) {
      open->end = i;
      continue;
    }
    if (open) spans.push_back(*open), open.reset();
    if (t.prefix == 'O') continue;
    if (t.prefix == 'I' && mode == BioMode::strict) {
      throw Error("decode_bio: '" + tags[i] + "' at position " + std::to_string(i) +
                  " does not continue an entity of the same type");
    }
    open = EntitySpan{t.type, i, i};
  }
  if (open) spans.push_back(*open);
  return spans;
}

ClassScores score_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  ClassScores s{tp, fp, fn};
  const double t = static_cast<double>(tp);
  s.precision = tp + fp == 0 ? 0.0 : t / static_cast<double>(tp + fp);
  s.recall = tp + fn == 0 ? 0.0 : t / static_cast<double>(tp + fn);
  s.f1 = s.precision + s.recall == 0.0
             ? 0.0
             : 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

F1Report entity_f1(const std::vector<std::vector<std::string>>& gold,
                   const std::vector<std::vector<std::string>>& pred,
                   const std::optional<std::vector<std::string>>& macro_types, BioMode mode) {
  if (gold.size() != pred.size()) {
    throw Error("entity_f1: " + std::to_string(gold.size()) + " gold sentences vs " +
                std::to_string(pred.size()) + " predicted");
  }
  std::map<std::string, std::array<std::size_t, 3>> counts;
  for (std::size_t s = 0; s < gold.size(); ++s) {
    if (gold[s].size() != pred[s].size()) {
      throw Error("entity_f1: sentence " + std::to_string(s) + " has " +
                  std::to_string(gold[s].size()) + " gold tags vs " +
                  std::to_string(pred[s].size()) + " predicted");
    }
    const auto g = decode_bio(gold[s], mode);
    const auto p = decode_bio(pred[s], mode);
    const std::set<EntitySpan> gs(g.begin(), g.end());
    const std::set<EntitySpan> ps(p.begin(), p.end());
    for (const auto& e : ps) ++counts[e.type][gs.count(e) ? 0 : 1];
    for (const auto& e : gs) {
      if (!ps.count(e)) ++counts[e.type][2];
    }
  }
  std::vector<std::string> classes;
  if (macro_types) {
    classes = *macro_types;
  } else {
    for (const auto& [name, c] : counts) classes.push_back(name);
  }
  return aggregate(counts, classes);
}

double binary_f1(std::span<const int> gold, std::span<const int> pred) {
  if (gold.size() != pred.size()) {
    throw Error("binary_f1: " + std::to_string(gold.size()) + " gold labels vs " +
                std::to_string(pred.size()) + " predicted");
  }
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if ((gold[i] != 0 && gold[i] != 1) || (pred[i] != 0 && pred[i] != 1)) {
      throw Error("binary_f1: labels must be 0 or 1 (index " + std::to_string(i) + ")");
    }
    if (pred[i] == 1 && gold[i] == 1) ++tp;
    if (pred[i] == 1 && gold[i] == 0) ++fp;
    if (pred[i] == 0 && gold[i] == 1) ++fn;
  }
  return score_counts(tp, fp, fn).f1;
}

F1Report multiclass_f1(std::span<const std::string> gold, std::span<const std::string> pred) {
  if (gold.size() != pred.size()) {
    throw Error("multiclass_f1: " + std::to_string(gold.size()) + " gold labels vs " +
                std::to_string(pred.size()) + " predicted");
  }
  std::map<std::string, std::array<std::size_t, 3>> counts;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] == pred[i]) {
      ++counts[gold[i]][0];
    } else {
      ++counts[pred[i]][1];
      ++counts[gold[i]][2];
    }
  }
  std::vector<std::string> classes;
  for (const auto& [name, c] : counts) classes.push_back(name);
  return aggregate(counts, classes);
}

nlohmann::json F1Report::to_json() const {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [name, s] : per_class) {
    per[name] = {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1},
                 {"support", s.support()},   {"tp", s.tp},         {"fp", s.fp},
                 {"fn", s.fn}};
  }
  return {{"per_class", per},
          {"micro", {{"precision", micro_precision}, {"recall", micro_recall}, {"f1", micro_f1}}},
          {"macro_f1", macro_f1},
          {"macro_classes", macro_classes}};
}

std::string F1Report::to_text() const {
  std::size_t width = 5;
  for (const auto& [name, s] : per_class) width = std::max(width, name.size());
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %9s %9s %9s %9s\n", static_cast<int>(width), "class",
                "precision", "recall", "f1", "support");
  out << buf;
  for (const auto& [name, s] : per_class) {
    std::snprintf(buf, sizeof buf, "%-*s %9.4f %9.4f %9.4f %9zu\n", static_cast<int>(width),
                  name.c_str(), s.precision, s.recall, s.f1, s.support());
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "%-*s %9.4f %9.4f %9.4f\n", static_cast<int>(width), "micro",
                micro_precision, micro_recall, micro_f1);
  out << buf;
  std::snprintf(buf, sizeof buf, "%-*s %29.4f (over %zu classes)\n", static_cast<int>(width),
                "macro", macro_f1, macro_classes.size());
  out << buf;
  return out.str();
}

}  // namespace msbert
