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

#include "msbert/data_io.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "msbert/error.hpp"

namespace msbert {
namespace fs = std::filesystem;

namespace {

std::ifstream open_input(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return in;
}

std::string where(const std::string& origin, std::size_t line) {
  return origin + ":" + std::to_string(line) + ": ";
}

std::pair<std::size_t, std::size_t> span_of(const nlohmann::json& j, const char* key,
                                            const std::string& at) {
  if (!j.contains(key) || !j[key].is_array() || j[key].size() != 2 ||
      !j[key][0].is_number_integer() || !j[key][1].is_number_integer() || j[key][0].get<long long>() < 0 ||
      j[key][1].get<long long>() < 0) {
    throw Error(at + "'" + key + "' must be a pair of non-negative token indices");
  }
  return {j[key][0].get<std::size_t>(), j[key][1].get<std::size_t>()};
}

void write_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                         static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(bytes, 4);
}

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

}  // namespace

void validate_spans(std::pair<std::size_t, std::size_t> head,
                    std::pair<std::size_t, std::size_t> tail, std::size_t n) {
  for (auto [name, s] : {std::pair{"head", head}, std::pair{"tail", tail}}) {
    if (s.first > s.second) {
      throw Error(std::string("relation: ") + name + " span [" + std::to_string(s.first) + ", " +
                  std::to_string(s.second) + "] is reversed");
    }
    if (s.second >= n) {
      throw Error(std::string("relation: ") + name + " span [" + std::to_string(s.first) + ", " +
                  std::to_string(s.second) + "] out of range for " + std::to_string(n) +
                  " tokens");
    }
  }
  if (!(head.second < tail.first || tail.second < head.first)) {
    throw Error("relation: spans [" + std::to_string(head.first) + ", " +
                std::to_string(head.second) + "] and [" + std::to_string(tail.first) + ", " +
                std::to_string(tail.second) + "] overlap");
  }
}

void RelationInstance::validate() const {
  validate_spans(head, tail, tokens.size());
  if (label.empty()) throw Error("relation: empty label");
}

std::vector<TaggedSentence> parse_conll(std::istream& in, const std::string& origin,
                                        std::span<const std::string> allowed_tags) {
  const std::set<std::string> allowed(allowed_tags.begin(), allowed_tags.end());
  std::vector<TaggedSentence> out;
  TaggedSentence cur;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto cols = split_whitespace(line);
    if (cols.empty()) {
      if (!cur.tokens.empty()) out.push_back(std::move(cur));
      cur = {};
      continue;
    }
    if (cols.size() != 2) {
      throw Error(where(origin, number) + "expected 2 columns (token, tag), found " +
                  std::to_string(cols.size()));
    }
    if (!allowed.empty() && !allowed.count(cols[1])) {
      throw Error(where(origin, number) + "unknown tag '" + cols[1] + "'");
    }
    cur.tokens.push_back(cols[0]);
    cur.tags.push_back(cols[1]);
  }
  if (!cur.tokens.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<TaggedSentence> load_conll(const fs::path& path,
                                       std::span<const std::string> allowed_tags) {
  auto in = open_input(path);
  return parse_conll(in, path.string(), allowed_tags);
}

void write_conll(std::ostream& out, std::span<const TaggedSentence> sentences) {
  for (const auto& s : sentences) {
    for (std::size_t i = 0; i < s.tokens.size(); ++i) out << s.tokens[i] << '\t' << s.tags[i] << '\n';
    out << '\n';
  }
}

std::vector<RelationInstance> parse_relations(std::istream& in, const std::string& origin,
                                             bool require_label) {
  std::vector<RelationInstance> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (split_whitespace(line).empty()) continue;
    const std::string at = where(origin, number);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(at + "invalid JSON: " + e.what());
    }
    if (!j.is_object() || !j.contains("tokens") || !j["tokens"].is_array()) {
      throw Error(at + "missing 'tokens' array");
    }
    RelationInstance r;
    for (const auto& t : j["tokens"]) {
      if (!t.is_string()) throw Error(at + "tokens must be strings");
      r.tokens.push_back(t.get<std::string>());
    }
    r.head = span_of(j, "head", at);
    r.tail = span_of(j, "tail", at);
    if (j.contains("label") && j["label"].is_string()) {
      r.label = j["label"].get<std::string>();
    } else if (require_label || j.contains("label")) {
      throw Error(at + "missing 'label' string");
    }
    try {
      if (require_label || !r.label.empty()) {
        r.validate();
      } else {
        validate_spans(r.head, r.tail, r.tokens.size());
      }
    } catch (const Error& e) {
      throw Error(at + e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<RelationInstance> load_relations(const fs::path& path, bool require_label) {
  auto in = open_input(path);
  return parse_relations(in, path.string(), require_label);
}

nlohmann::json to_json(const RelationInstance& r) {
  return {{"tokens", r.tokens},
          {"head", {r.head.first, r.head.second}},
          {"tail", {r.tail.first, r.tail.second}},
          {"label", r.label}};
}

std::vector<TextRecord> parse_classification(std::istream& in, const std::string& origin,
                                             bool require_label) {
  std::vector<TextRecord> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (split_whitespace(line).empty()) continue;
    const std::string at = where(origin, number);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(at + "invalid JSON: " + e.what());
    }
    if (!j.is_object() || !j.contains("text") || !j["text"].is_string()) {
      throw Error(at + "missing 'text' string");
    }
    TextRecord r{j["text"].get<std::string>(), ""};
    if (!j.contains("label")) {
      if (require_label) throw Error(at + "missing 'label' field");
    } else if (j["label"].is_number_integer()) {
      r.label = std::to_string(j["label"].get<long long>());
    } else if (j["label"].is_string() && !j["label"].get<std::string>().empty()) {
      r.label = j["label"].get<std::string>();
    } else {
      throw Error(at + "'label' must be an integer or a non-empty string");
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<TextRecord> load_classification(const fs::path& path, bool require_label) {
  auto in = open_input(path);
  return parse_classification(in, path.string(), require_label);
}

std::vector<std::size_t> split_sizes(std::size_t n, std::span<const double> ratios) {
  if (ratios.empty()) throw Error("split: no ratios");
  double total = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0)) throw Error("split: ratios must be non-negative");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw Error("split: ratios must sum to 1");
  std::vector<std::size_t> sizes(ratios.size());
  std::vector<double> remainders(ratios.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    const double exact = ratios[i] * static_cast<double>(n);
    // Guard against products like 28.999999999999996.
    const double rounded = std::round(exact);
    const double whole = std::abs(exact - rounded) < 1e-9 ? rounded : std::floor(exact);
    sizes[i] = static_cast<std::size_t>(whole);
    remainders[i] = exact - whole;
    assigned += sizes[i];
  }
  std::vector<std::size_t> order(ratios.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[order[k % order.size()]];
  while (assigned > n) {
    // Only reachable through rounding up; take back from the largest part.
    auto it = std::max_element(sizes.begin(), sizes.end());
    --*it;
    --assigned;
  }
  return sizes;
}

std::vector<std::vector<std::size_t>> split_indices(std::size_t n, std::span<const double> ratios,
                                                    std::uint64_t seed) {
  const auto sizes = split_sizes(n, ratios);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng(seed).derive("split");
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> parts;
  std::size_t at = 0;
  for (std::size_t s : sizes) {
    std::vector<std::size_t> part(order.begin() + static_cast<std::ptrdiff_t>(at),
                                  order.begin() + static_cast<std::ptrdiff_t>(at + s));
    std::sort(part.begin(), part.end());
    parts.push_back(std::move(part));
    at += s;
  }
  return parts;
}

void save_checkpoint(const fs::path& dir, const Checkpoint& ckpt) {
  nlohmann::json tensors = nlohmann::json::array();
  std::ostringstream blob;
  std::size_t offset = 0;
  for (const auto& [name, p] : ckpt.params) {
    tensors.push_back({{"name", name},
                       {"shape", p.value.shape()},
                       {"dtype", "float32"},
                       {"group", p.group},
                       {"byte_offset", offset}});
    for (double v : p.value.values()) {
      write_u32(blob, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    offset += 4 * p.value.size();
  }
  nlohmann::json manifest{{"format_version", kCheckpointFormatVersion},
                          {"config", ckpt.config},
                          {"scheme", ckpt.scheme},
                          {"tensors", tensors},
                          {"blob_bytes", offset}};

  const fs::path target = fs::absolute(dir).lexically_normal();
  const fs::path parent = target.parent_path();
  fs::create_directories(parent);
  const fs::path tmp = parent / ("." + target.filename().string() + ".tmp");
  fs::remove_all(tmp);
  fs::create_directory(tmp);
  auto write = [&](const char* file, const std::string& data) {
    std::ofstream out(tmp / file, std::ios::binary);
    out << data;
    if (!out) throw Error("checkpoint: cannot write " + (tmp / file).string());
  };
  write("manifest.json", manifest.dump(1) + "\n");
  write("params.bin", blob.str());
  std::ostringstream vocab;
  for (const auto& e : ckpt.vocab.entries()) vocab << e << '\n';
  write("vocab.txt", vocab.str());
  write("mapping.tsv", ckpt.table.to_tsv());

  if (fs::exists(target)) {
    const fs::path old = parent / ("." + target.filename().string() + ".old");
    fs::remove_all(old);
    fs::rename(target, old);
    fs::rename(tmp, target);
    fs::remove_all(old);
  } else {
    fs::rename(tmp, target);
  }
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  auto in = open_input(manifest_path);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("checkpoint: invalid manifest " + manifest_path.string() + ": " + e.what());
  }
  if (manifest.value("format_version", 0) != kCheckpointFormatVersion) {
    throw Error("checkpoint: unsupported format_version in " + manifest_path.string());
  }
  auto blob_in = open_input(dir / "params.bin");
  const std::string blob((std::istreambuf_iterator<char>(blob_in)), std::istreambuf_iterator<char>());
  const std::size_t expected = manifest.at("blob_bytes").get<std::size_t>();
  if (blob.size() != expected) {
    throw Error("checkpoint: params.bin holds " + std::to_string(blob.size()) +
                " bytes, manifest expects " + std::to_string(expected));
  }

  Checkpoint ckpt;
  ckpt.config = manifest.at("config");
  ckpt.scheme = manifest.at("scheme");
  std::size_t covered = 0;
  std::string previous;
  for (const auto& t : manifest.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    if (!previous.empty() && !(previous < name)) {
      throw Error("checkpoint: tensor directory not sorted at " + name);
    }
    previous = name;
    if (t.at("dtype").get<std::string>() != "float32") {
      throw Error("checkpoint: unsupported dtype for " + name);
    }
    const Shape shape = t.at("shape").get<Shape>();
    const std::size_t offset = t.at("byte_offset").get<std::size_t>();
    const std::size_t count = shape_size(shape);
    if (offset != covered || offset + 4 * count > blob.size()) {
      throw Error("checkpoint: tensor " + name + " does not tile params.bin");
    }
    Tensor value(shape);
    const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data() + offset);
    for (std::size_t i = 0; i < count; ++i) {
      value[i] = static_cast<double>(std::bit_cast<float>(read_u32(bytes + 4 * i)));
    }
    covered = offset + 4 * count;
    const int group = t.value("group", 0);
    ckpt.params.add(name, std::move(value), group);
  }
  if (covered != blob.size()) throw Error("checkpoint: trailing bytes in params.bin");
  ckpt.vocab = Vocabulary::load(dir / "vocab.txt");
  ckpt.table = MappingTable::load(dir / "mapping.tsv");
  return ckpt;
}

std::vector<std::string> load_params_into(ParamStore& target, const ParamStore& source,
                                          const std::function<bool(const std::string&)>& filter) {
  std::vector<std::string> names;
  for (const auto& [name, p] : source) {
    if (filter && !filter(name)) continue;
    if (!target.contains(name)) throw Error("checkpoint: model has no tensor " + name);
    const Tensor& dst = target.at(name).value;
    if (dst.shape() != p.value.shape()) {
      throw Error("checkpoint: shape mismatch for " + name + ": checkpoint " +
                  shape_string(p.value.shape()) + " vs model " + shape_string(dst.shape()));
    }
    names.push_back(name);
  }
  for (const auto& name : names) target.at(name).value = source.at(name).value;
  return names;
}

}  // namespace msbert
