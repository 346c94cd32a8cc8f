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


#include "msbert/cli.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "msbert/data_io.hpp"
#include "msbert/pretraining.hpp"
#include "msbert/tasks.hpp"

namespace msbert {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const fs::path kFixtures = MSBERT_FIXTURE_DIR;

struct Result {
  int code = 0;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "msbert");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Result r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("msbert_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void put(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

// Every regular file under dir, keyed by relative path.
std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = slurp(e.path());
  }
  return files;
}

void expect_single_error_line(const Result& r, const std::string& needle) {
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("msbert: error: ", 0), 0u) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1) << r.err;
  EXPECT_NE(r.err.find(needle), std::string::npos) << r.err;
}

TEST(Cli, UnknownFlagIsUsageError) {
  auto r = run({"evaluate", "--no-such-flag"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--no-such-flag"), std::string::npos);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
}

TEST(Cli, HelpOnEverySubcommand) {
  for (const char* sub : {"normalize", "vocab-train", "vocab-overlap", "corpus-stats", "pretrain",
                          "finetune", "tag", "classify", "relate", "evaluate"}) {
    auto r = run({sub, "--help"});
    EXPECT_EQ(r.code, 0) << sub;
    EXPECT_NE(r.out.find("Usage"), std::string::npos) << sub;
  }
}

TEST(Cli, EvaluatePrintsFixtureReport) {
  const json expected = json::parse(slurp(kFixtures / "conll_repair.expected.json"));
  // Same layout as the report, filled from the independently computed numbers.
  std::string want;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-5s %9s %9s %9s %9s\n", "class", "precision", "recall", "f1", "support");
  want += buf;
  for (const auto& [type, s] : expected["per_type"].items()) {
    std::snprintf(buf, sizeof buf, "%-5s %9.4f %9.4f %9.4f %9zu\n", type.c_str(),
                  s["precision"].get<double>(), s["recall"].get<double>(), s["f1"].get<double>(),
                  s["support"].get<std::size_t>());
    want += buf;
  }
  const auto& m = expected["micro"];
  std::snprintf(buf, sizeof buf, "%-5s %9.4f %9.4f %9.4f\n", "micro", m["precision"].get<double>(),
                m["recall"].get<double>(), m["f1"].get<double>());
  want += buf;
  std::snprintf(buf, sizeof buf, "%-5s %29.4f (over %zu classes)\n", "macro",
                expected["macro_f1"].get<double>(), expected["per_type"].size());
  want += buf;

  auto r = run({"evaluate", "--input", (kFixtures / "conll_repair.txt").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, want);

  r = run({"evaluate", "--input", (kFixtures / "conll_repair.txt").string(), "--format", "json"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json got = json::parse(r.out);
  EXPECT_NEAR(got["micro"]["f1"].get<double>(), m["f1"].get<double>(), 1e-12);
  EXPECT_NEAR(got["macro_f1"].get<double>(), expected["macro_f1"].get<double>(), 1e-12);
  for (const auto& [type, s] : expected["per_type"].items()) {
    EXPECT_NEAR(got["per_class"][type]["f1"].get<double>(), s["f1"].get<double>(), 1e-12) << type;
  }
}

TEST(Cli, EvaluateGoldAgainstPredictionFiles) {
  const auto dir = scratch("eval_files");
  put(dir / "gold.conll", "a B-X\nb I-X\nc O\n\nd B-Y\n");
  put(dir / "pred.conll", "a B-X\nb O\nc O\n\nd B-Y\n");
  auto r = run({"evaluate", "--gold", (dir / "gold.conll").string(), "--pred",
                (dir / "pred.conll").string(), "--format", "json"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json got = json::parse(r.out);
  EXPECT_NEAR(got["micro"]["precision"].get<double>(), 0.5, 1e-12);
  EXPECT_NEAR(got["micro"]["recall"].get<double>(), 0.5, 1e-12);

  put(dir / "short.conll", "a B-X\nb O\nc O\n");
  expect_single_error_line(run({"evaluate", "--gold", (dir / "gold.conll").string(), "--pred",
                                (dir / "short.conll").string()}),
                           "sentences");

  put(dir / "gold.jsonl", "{\"text\": \"x\", \"label\": 1}\n{\"text\": \"y\", \"label\": 0}\n");
  put(dir / "pred.jsonl", "{\"label\": \"1\"}\n{\"label\": \"1\"}\n");
  r = run({"evaluate", "--task", "cls", "--gold", (dir / "gold.jsonl").string(), "--pred",
           (dir / "pred.jsonl").string(), "--positive", "1", "--format", "json"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NEAR(json::parse(r.out)["binary_f1"].get<double>(), 2.0 / 3.0, 1e-12);
}

TEST(Cli, CorpusStats) {
  const auto dir = scratch("stats");
  put(dir / "vocab.txt", "[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\na\nb\n##b\n");
  put(dir / "one.txt", "a b c\n");
  auto r = run({"corpus-stats", "--input", (dir / "one.txt").string(), "--vocab",
                (dir / "vocab.txt").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j["documents"], 1);
  EXPECT_EQ(j["words"], 3);
  EXPECT_EQ(j["pieces"], 3);  // a, b, [UNK]
  EXPECT_EQ(j["per_document"][0]["words"], 3);

  put(dir / "empty.txt", "\n  \n");
  expect_single_error_line(run({"corpus-stats", "--input", (dir / "empty.txt").string(), "--vocab",
                                (dir / "vocab.txt").string()}),
                           "empty corpus");
}

TEST(Cli, VocabOverlapFourDecimals) {
  const auto dir = scratch("overlap");
  put(dir / "a.txt", "[PAD]\n[UNK]\nx\ny\nz\n");
  put(dir / "b.txt", "[PAD]\nx\nq\n");
  auto r = run({"vocab-overlap", (dir / "a.txt").string(), (dir / "b.txt").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "0.3333\n");
}

TEST(Cli, NormalizeWritesFrozenConfigAndIsIdempotent) {
  const auto dir = scratch("normalize");
  put(dir / "raw.txt", "Ｔｈｅ  LiFePO4 ＞ 3 ¾\n\tCafé\n");
  auto r = run({"normalize", "--input", (dir / "raw.txt").string(), "--output", (dir / "n1.txt").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir / "n1.txt"), "the lifepo4 > 3 3/4\ncafe\n");
  const json cfg = json::parse(slurp(dir / "n1.txt.run_config.json"));
  EXPECT_EQ(cfg["subcommand"], "normalize");
  EXPECT_TRUE(cfg["config"].contains("mapping"));

  ASSERT_EQ(run({"normalize", "--input", (dir / "n1.txt").string(), "--output",
                 (dir / "n2.txt").string()}).code, 0);
  EXPECT_EQ(slurp(dir / "n2.txt"), slurp(dir / "n1.txt"));
  const std::string first = slurp(dir / "n1.txt.run_config.json");
  ASSERT_EQ(run({"normalize", "--input", (dir / "raw.txt").string(), "--output",
                 (dir / "n1.txt").string()}).code, 0);
  EXPECT_EQ(slurp(dir / "n1.txt.run_config.json"), first);
}

TEST(Cli, ConfigRejectsUnknownKeys) {
  const auto dir = scratch("config");
  put(dir / "corpus.txt", "glass glass glasses\n");
  put(dir / "bad.json", "{\"sise\": 20}");
  expect_single_error_line(run({"vocab-train", "--input", (dir / "corpus.txt").string(), "--output",
                                (dir / "v.txt").string(), "--config", (dir / "bad.json").string()}),
                           "unknown key 'sise'");
  put(dir / "nested.json", "{\"finetune\": {\"head_rate\": 1}}");
  expect_single_error_line(run({"finetune", "--train", (dir / "corpus.txt").string(), "--output",
                                (dir / "ft").string(), "--config", (dir / "nested.json").string()}),
                           "unknown key 'finetune.head_rate'");
  put(dir / "typed.json", "{\"size\": \"big\"}");
  expect_single_error_line(run({"vocab-train", "--input", (dir / "corpus.txt").string(), "--output",
                                (dir / "v.txt").string(), "--config", (dir / "typed.json").string()}),
                           "expects number");
  put(dir / "good.json", "{\"size\": 20}");
  auto r = run({"vocab-train", "--input", (dir / "corpus.txt").string(), "--output",
                (dir / "v.txt").string(), "--config", (dir / "good.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(slurp(dir / "v.txt.run_config.json"))["config"]["size"], 20);
}

TEST(Cli, OverlayConfigMergesNestedObjects) {
  const json base = {{"a", 1}, {"b", {{"c", 2.5}, {"d", "x"}}}, {"e", nullptr}};
  const json merged = overlay_config(base, {{"b", {{"c", 3}}}, {"e", {1, 2}}});
  EXPECT_EQ(merged["a"], 1);
  EXPECT_EQ(merged["b"]["c"], 3);
  EXPECT_EQ(merged["b"]["d"], "x");
  EXPECT_EQ(merged["e"], json({1, 2}));
}

TEST(Cli, PresetsNeedUserData) {
  const auto dir = scratch("preset");
  for (const char* name : {"matscholar", "sofc", "sofc-slot", "mspt", "glass"}) {
    expect_single_error_line(run({"finetune", "--preset", name, "--output", (dir / name).string()}),
                             "needs user data");
  }
  expect_single_error_line(run({"finetune", "--preset", "nope", "--train", "x", "--output",
                                (dir / "nope").string()}),
                           "nope");
}

TEST(Cli, MissingInputIsOneLineError) {
  expect_single_error_line(run({"tag", "--model", "/nonexistent/model", "--input", "/nonexistent/x"}),
                           "/nonexistent");
}

// normalize -> vocab-train(500) -> pretrain(tiny, 200 steps) -> finetune(synthetic NER, 5 epochs)
// -> tag -> evaluate.
TEST(Cli, EndToEndSmoke) {
  const auto start = std::chrono::steady_clock::now();
  const auto dir = scratch("e2e");
  Rng rng(11);
  {
    std::ofstream raw(dir / "raw.txt");
    for (auto line : synthetic_copy_corpus(400, 40, 5, 20, rng)) {
      line[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(line[0])));
      raw << line << " ＞ 5 %\n";
    }
    auto ner = synthetic_ner(120, 4, 12, 0.0, rng);
    std::ofstream train(dir / "train.conll"), valid(dir / "valid.conll"), gold(dir / "test.conll"),
        text(dir / "test.txt");
    write_conll(train, std::span(ner).subspan(0, 80));
    write_conll(valid, std::span(ner).subspan(80, 20));
    write_conll(gold, std::span(ner).subspan(100));
    for (std::size_t i = 100; i < ner.size(); ++i) {
      for (std::size_t k = 0; k < ner[i].tokens.size(); ++k) text << (k ? " " : "") << ner[i].tokens[k];
      text << '\n';
    }
  }
  auto p = [&](const char* name) { return (dir / name).string(); };
  auto ok = [](const Result& r) {
    EXPECT_EQ(r.code, 0) << r.err;
    return r.code == 0;
  };
  ASSERT_TRUE(ok(run({"normalize", "--input", p("raw.txt"), "--output", p("norm.txt")})));
  ASSERT_TRUE(ok(run({"vocab-train", "--input", p("norm.txt"), "--output", p("vocab.txt"), "--size", "500"})));
  ASSERT_TRUE(ok(run({"corpus-stats", "--input", p("norm.txt"), "--vocab", p("vocab.txt"), "--totals-only"})));
  ASSERT_TRUE(ok(run({"pretrain", "--corpus", p("norm.txt"), "--vocab", p("vocab.txt"), "--output",
                      p("pre"), "--size", "tiny", "--steps", "200", "--seed", "3"})));
  EXPECT_TRUE(fs::exists(dir / "pre" / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir / "pre" / "trace.jsonl"));
  EXPECT_EQ(json::parse(slurp(dir / "pre" / "run_config.json"))["config"]["optimizer"]["total_steps"], 200);

  ASSERT_TRUE(ok(run({"finetune", "--task", "ner", "--variant", "crf", "--train", p("train.conll"),
                      "--valid", p("valid.conll"), "--test", p("test.conll"), "--init", p("pre"),
                      "--epochs", "5", "--seeds", "1,2", "--output", p("ft")})));
  const json summary = json::parse(slurp(dir / "ft" / "summary.json"));
  EXPECT_EQ(summary["runs"].size(), 2u);
  EXPECT_TRUE(summary.contains("mean_test_micro_f1"));
  EXPECT_EQ(json::parse(slurp(dir / "ft" / "run_config.json"))["config"]["labels"],
            json({"DEV", "MAT", "VAL"}));

  auto tagged = run({"tag", "--model", p("ft/seed-1"), "--input", p("test.txt"), "--output", p("pred.conll")});
  ASSERT_TRUE(ok(tagged));
  const auto pred = load_conll(dir / "pred.conll");
  EXPECT_EQ(pred.size(), 20u);
  auto r = run({"evaluate", "--gold", p("test.conll"), "--pred", p("pred.conll"), "--format", "json"});
  ASSERT_TRUE(ok(r));
  EXPECT_NEAR(json::parse(r.out)["micro"]["f1"].get<double>(),
              summary["runs"][0]["test"]["micro"]["f1"].get<double>(), 1e-12);

  const double minutes =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;
  EXPECT_LT(minutes, 10.0);
}

TEST(Cli, PretrainAndFinetuneAreByteIdenticalOnRerun) {
  const auto dir = scratch("rerun");
  Rng rng(5);
  {
    std::ofstream corpus(dir / "corpus.txt");
    for (const auto& line : synthetic_copy_corpus(60, 8, 5, 12, rng)) corpus << line << '\n';
    auto ner = synthetic_ner(30, 4, 8, 0.1, rng);
    std::ofstream train(dir / "train.conll"), valid(dir / "valid.conll");
    write_conll(train, std::span(ner).subspan(0, 20));
    write_conll(valid, std::span(ner).subspan(20));
  }
  auto p = [&](const std::string& name) { return (dir / name).string(); };
  ASSERT_EQ(run({"vocab-train", "--input", p("corpus.txt"), "--output", p("vocab.txt"), "--size", "60"}).code, 0);
  for (const char* out : {"a", "b"}) {
    auto r = run({"pretrain", "--corpus", p("corpus.txt"), "--vocab", p("vocab.txt"), "--output",
                  p(std::string("pre_") + out), "--steps", "20", "--seed", "9"});
    ASSERT_EQ(r.code, 0) << r.err;
    r = run({"finetune", "--train", p("train.conll"), "--valid", p("valid.conll"), "--init",
             p(std::string("pre_") + out), "--variant", "bilstm_crf", "--epochs", "2", "--seed", "4",
             "--output", p(std::string("ft_") + out)});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  const auto pa = tree(dir / "pre_a"), pb = tree(dir / "pre_b");
  ASSERT_EQ(pa.size(), pb.size());
  for (const auto& [name, bytes] : pa) {
    if (name == "run_config.json") continue;  // records its own output path
    EXPECT_EQ(bytes, pb.at(name)) << name;
  }
  const auto fa = tree(dir / "ft_a"), fb = tree(dir / "ft_b");
  ASSERT_EQ(fa.size(), fb.size());
  for (const auto& [name, bytes] : fa) {
    if (name == "run_config.json") continue;
    EXPECT_EQ(bytes, fb.at(name)) << name;
  }
}

TEST(Cli, ClassifyAndRelateEmitJsonLines) {
  const auto dir = scratch("predict");
  Rng rng(2);
  auto p = [&](const std::string& name) { return (dir / name).string(); };
  {
    std::ofstream corpus(dir / "corpus.txt");
    for (const auto& line : synthetic_copy_corpus(60, 8, 5, 12, rng)) corpus << line << '\n';
    std::ofstream cls_train(dir / "cls.jsonl"), rc_train(dir / "rc.jsonl");
    for (const auto& r : synthetic_classification(24, rng)) {
      cls_train << json{{"text", r.text}, {"label", std::stoi(r.label)}}.dump() << '\n';
    }
    for (const auto& r : synthetic_relations(24, rng)) rc_train << to_json(r).dump() << '\n';
    std::ofstream unlabeled(dir / "rc_in.jsonl");
    unlabeled << R"({"tokens": ["kalo", "losu", "mivo"], "head": [0, 0], "tail": [2, 2]})" << '\n';
  }
  ASSERT_EQ(run({"vocab-train", "--input", p("corpus.txt"), "--output", p("vocab.txt"), "--size", "60"}).code, 0);
  put(dir / "small.json", R"({"encoder": {"hidden_dim": 8, "num_layers": 1, "num_heads": 2, "ff_dim": 16, "max_positions": 32}})");
  for (const char* task : {"cls", "rc"}) {
    auto r = run({"finetune", "--task", task, "--train", p(std::string(task) + ".jsonl"), "--valid",
                  p(std::string(task) + ".jsonl"), "--vocab", p("vocab.txt"), "--config", p("small.json"),
                  "--epochs", "1", "--seed", "1", "--output", p(std::string("m_") + task)});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  auto r = run({"classify", "--model", p("m_cls/seed-1"), "--input", p("cls.jsonl")});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(r.out);
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    const json j = json::parse(line);
    EXPECT_TRUE(j["label"] == "0" || j["label"] == "1");
    EXPECT_NEAR(j["probabilities"]["0"].get<double>() + j["probabilities"]["1"].get<double>(), 1.0, 1e-9);
    ++n;
  }
  EXPECT_EQ(n, 24u);

  r = run({"relate", "--model", p("m_rc/seed-1"), "--input", p("rc_in.jsonl")});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j["head"], json({0, 0}));
  EXPECT_EQ(j["probabilities"].size(), 3u);

  expect_single_error_line(run({"tag", "--model", p("m_rc/seed-1"), "--input", p("corpus.txt")}),
                           "not ner");
}

}  // namespace
}  // namespace msbert
