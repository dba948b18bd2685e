// Copyright 2026 The Spanlab Authors.
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
#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "spanlab/pipeline.hpp"

using namespace spanlab;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() /
            ("spanlab-" + std::string(info->test_suite_name()) + "-" + info->name() + "-" +
             std::to_string(::getpid()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

const char* kTuring =
    R"({"id":"a","task":"ner","lang":"en","text":"Turing was born in London.","categories":["PER","LOC"],)"
    R"("spans":[{"start":0,"end":6,"label":"PER"},{"start":19,"end":25,"label":"LOC"}]})";
const char* kCurie =
    R"({"id":"b","task":"ner","lang":"en","text":"Curie worked in Paris.","categories":["PER","LOC"],)"
    R"("spans":[{"start":0,"end":5,"label":"PER"},{"start":16,"end":21,"label":"LOC"}]})";

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(SPANLAB_CLI_PATH) + " " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Dataset, ReadsRecordsAndReportsLineNumbers) {
  TempDir dir;
  spit(dir / "ok.jsonl", std::string(kTuring) + "\n\n" + kCurie + "\n");
  const auto records = pipeline::read_dataset(dir / "ok.jsonl");
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[1].example.id, "b");
  EXPECT_EQ(records[0].example.gold[1], (Span{19, 25, "LOC"}));

  spit(dir / "dup.jsonl", std::string(kTuring) + "\n" + kTuring + "\n");
  try {
    pipeline::read_dataset(dir / "dup.jsonl");
    FAIL() << "duplicate id accepted";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find(":2: duplicate id 'a'"), std::string::npos) << e.what();
  }

  std::string bad = kCurie;
  bad.replace(bad.find("\"end\":21"), 8, "\"end\":99");
  spit(dir / "bad.jsonl", std::string(kTuring) + "\n" + bad + "\n");
  try {
    pipeline::read_dataset(dir / "bad.jsonl");
    FAIL() << "out-of-range span accepted";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
  spit(dir / "junk.jsonl", "{not json\n");
  EXPECT_THROW(pipeline::read_dataset(dir / "junk.jsonl"), Error);
  EXPECT_THROW(pipeline::read_dataset(dir / "absent.jsonl"), Error);
}

TEST(GenCpl, WritesOracleConsistentRecords) {
  TempDir dir;
  pipeline::cmd_gen_cpl(30, 5, dir / "cpl.jsonl", 40);
  const auto records = pipeline::read_dataset(dir / "cpl.jsonl");
  ASSERT_EQ(records.size(), 30u);
  for (const auto& r : records) {
    ASSERT_TRUE(r.cpl_spec.has_value());
    EXPECT_EQ(r.example.task, Task::kCpl);
    EXPECT_FALSE(r.example.gold.empty());
    EXPECT_EQ(cpl::cpl_oracle(r.example.text, *r.cpl_spec), r.example.gold);
  }
  EXPECT_THROW(pipeline::cmd_gen_cpl(0, 5, dir / "none.jsonl"), Error);
}

TEST(Run, GoldMockScoresPerfectlyForEveryStrategy) {
  TempDir dir;
  spit(dir / "d.jsonl", std::string(kTuring) + "\n" + kCurie + "\n");
  for (const char* name : {"tag", "index", "index-enriched", "match", "match-occ", "match-s", "logitmatch",
                           "logitmatch-occ", "logitmatch-s", "logitmatch-occ-s"}) {
    pipeline::RunConfig rc;
    rc.strategy = *parse_strategy_name(name);
    rc.dataset_path = (dir / "d.jsonl").string();
    rc.output_path = (dir / "p.jsonl").string();
    rc.concurrency = 2;
    const auto results = pipeline::cmd_run(rc);
    ASSERT_EQ(results.size(), 2u) << name;
    const auto report = pipeline::evaluate_files(dir / "p.jsonl", dir / "d.jsonl");
    EXPECT_DOUBLE_EQ(report.hard.f1, 1.0) << name;
    EXPECT_DOUBLE_EQ(report.parsing_error_rate, 0.0) << name;
  }
}

TEST(Run, PredictionsRoundTripThroughJson) {
  TempDir dir;
  spit(dir / "d.jsonl", std::string(kTuring) + "\n" + kCurie + "\n");
  pipeline::RunConfig rc;
  rc.strategy = *parse_strategy_name("tag");
  rc.dataset_path = (dir / "d.jsonl").string();
  rc.output_path = (dir / "p.jsonl").string();
  rc.mock_mode = backend::MockMode::kNoisy;
  rc.noise_rate = 1.0;
  const auto results = pipeline::cmd_run(rc);
  const auto back = pipeline::read_predictions(dir / "p.jsonl");
  ASSERT_EQ(back.size(), results.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].raw.example_id, results[i].raw.example_id);
    EXPECT_EQ(back[i].raw.output_text, results[i].raw.output_text);
    EXPECT_EQ(back[i].parse.spans, results[i].parse.spans);
    EXPECT_EQ(back[i].parse.parse_error, results[i].parse.parse_error);
    EXPECT_EQ(back[i].parse.span_content_errors, results[i].parse.span_content_errors);
  }
}

TEST(Run, AdversarialLogitMatchNeverProducesContentErrors) {
  TempDir dir;
  pipeline::cmd_gen_cpl(100, 9, dir / "cpl.jsonl");
  pipeline::RunConfig rc;
  rc.strategy = *parse_strategy_name("logitmatch-occ");
  rc.mock_mode = backend::MockMode::kAdversarial;
  rc.dataset_path = (dir / "cpl.jsonl").string();
  rc.output_path = (dir / "p.jsonl").string();
  rc.trace_path = (dir / "trace.jsonl").string();
  rc.seed = 3;
  pipeline::cmd_run(rc);
  const auto report = pipeline::evaluate_files(dir / "p.jsonl", dir / "cpl.jsonl");
  EXPECT_EQ(report.counts.examples, 100u);
  EXPECT_EQ(report.span_content_error_rate, 0.0);
  EXPECT_FALSE(slurp(dir / "trace.jsonl").empty());

  // Every predicted span text is a substring, audited independently.
  const auto data = pipeline::read_dataset(dir / "cpl.jsonl");
  const auto preds = pipeline::read_predictions(dir / "p.jsonl");
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (const auto& f : oracle::completed_text_fields(preds[i].raw.output_text)) {
      EXPECT_TRUE(oracle::is_substring(f, data[i].example.text)) << f;
    }
  }
}

TEST(Run, LogitMatchOverHttpIsAConfigurationError) {
  TempDir dir;
  spit(dir / "d.jsonl", std::string(kTuring) + "\n");
  pipeline::RunConfig rc;
  rc.strategy = *parse_strategy_name("logitmatch");
  rc.backend = "http";
  rc.http.model = "any-model";
  rc.dataset_path = (dir / "d.jsonl").string();
  rc.output_path = (dir / "p.jsonl").string();
  try {
    pipeline::cmd_run(rc);
    FAIL() << "expected a capability error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("logit masks"), std::string::npos) << e.what();
  }
  rc.strategy = *parse_strategy_name("tag");
  rc.backend = "carrier-pigeon";
  EXPECT_THROW(pipeline::cmd_run(rc), Error);
}

TEST(Eval, RejectsMismatchedIds) {
  TempDir dir;
  spit(dir / "d.jsonl", std::string(kTuring) + "\n" + kCurie + "\n");
  pipeline::RunConfig rc;
  rc.strategy = *parse_strategy_name("match");
  rc.dataset_path = (dir / "d.jsonl").string();
  rc.output_path = (dir / "p.jsonl").string();
  pipeline::cmd_run(rc);
  const auto lines = slurp(dir / "p.jsonl");
  const auto first = lines.substr(0, lines.find('\n') + 1);

  spit(dir / "missing.jsonl", first);
  spit(dir / "dup.jsonl", first + lines);
  std::string extra = first;
  extra.replace(extra.find("\"id\":\"a\""), 8, "\"id\":\"z\"");
  spit(dir / "extra.jsonl", lines + extra);
  for (const auto& [file, word] : std::vector<std::pair<std::string, std::string>>{
           {"missing.jsonl", "missing: b"}, {"dup.jsonl", "duplicate: a"}, {"extra.jsonl", "extra: z"}}) {
    try {
      pipeline::evaluate_files(dir / file, dir / "d.jsonl");
      FAIL() << file;
    } catch (const Error& e) {
      EXPECT_NE(std::string(e.what()).find(word), std::string::npos) << e.what();
    }
  }
  spit(dir / "empty.jsonl", "");
  EXPECT_THROW(pipeline::evaluate_files(dir / "empty.jsonl", dir / "d.jsonl"), Error);
}

TEST(Report, BuildsTableFromReportFiles) {
  TempDir dir;
  spit(dir / "d.jsonl", std::string(kTuring) + "\n" + kCurie + "\n");
  pipeline::RunConfig rc;
  rc.strategy = *parse_strategy_name("index");
  rc.dataset_path = (dir / "d.jsonl").string();
  rc.output_path = (dir / "p.jsonl").string();
  pipeline::cmd_run(rc);
  const auto table = pipeline::cmd_eval(dir / "p.jsonl", dir / "d.jsonl", dir / "r.json", "index");
  EXPECT_NE(table.find("index"), std::string::npos);
  const auto combined = pipeline::cmd_report({"first=" + (dir / "r.json").string(), (dir / "r.json").string()});
  EXPECT_NE(combined.find("first"), std::string::npos);
  EXPECT_NE(combined.find("r "), std::string::npos);
  spit(dir / "bogus.json", "[1,2]");
  EXPECT_THROW(pipeline::cmd_report({(dir / "bogus.json").string()}), Error);
  EXPECT_THROW(pipeline::cmd_report({}), Error);
}

TEST(Template, ShippedFileMatchesTheBuiltIn) {
  EXPECT_EQ(prompts::load_template(std::string(SPANLAB_TEMPLATE_DIR) + "/default.txt"),
            std::string(prompts::kDefaultTemplate));
}

TEST(Cli, EndToEndWithConfigFile) {
  TempDir dir;
  ASSERT_EQ(run_cli("gen-cpl --count 12 --seed 4 --length 30 --out " + (dir / "d.jsonl").string(), dir / "log"), 0)
      << slurp(dir / "log");
  spit(dir / "run.cfg",
       "# mock run\nstrategy = logitmatch-occ-s\nmock_mode = adversarial\nseed = 2\nconcurrency = 3\n");
  ASSERT_EQ(run_cli("run --config " + (dir / "run.cfg").string() + " --dataset " + (dir / "d.jsonl").string() +
                        " --out " + (dir / "p.jsonl").string(),
                    dir / "log"),
            0)
      << slurp(dir / "log");
  const auto preds = pipeline::read_predictions(dir / "p.jsonl");
  ASSERT_EQ(preds.size(), 12u);
  EXPECT_EQ(preds[0].raw.strategy, "logitmatch-occ-s");
  ASSERT_EQ(run_cli("eval --predictions " + (dir / "p.jsonl").string() + " --dataset " +
                        (dir / "d.jsonl").string() + " --report " + (dir / "r.json").string(),
                    dir / "log"),
            0)
      << slurp(dir / "log");
  const auto report = eval::report_from_json(nlohmann::json::parse(slurp(dir / "r.json")));
  EXPECT_EQ(report.span_content_error_rate, 0.0);

  // A flag on the command line overrides the config file.
  ASSERT_EQ(run_cli("run --config " + (dir / "run.cfg").string() + " --strategy tag --dataset " +
                        (dir / "d.jsonl").string() + " --out " + (dir / "q.jsonl").string(),
                    dir / "log"),
            0)
      << slurp(dir / "log");
  EXPECT_EQ(pipeline::read_predictions(dir / "q.jsonl")[0].raw.strategy, "tag");
}

TEST(Cli, RejectsCredentialsInConfigAndBadArguments) {
  TempDir dir;
  pipeline::cmd_gen_cpl(2, 1, dir / "d.jsonl", 20);
  spit(dir / "bad.cfg", "backend = http\napi_key = abc\n");
  EXPECT_NE(run_cli("run --config " + (dir / "bad.cfg").string() + " --dataset " + (dir / "d.jsonl").string() +
                        " --out " + (dir / "p.jsonl").string(),
                    dir / "log"),
            0);
  EXPECT_NE(slurp(dir / "log").find("environment"), std::string::npos);
  EXPECT_NE(run_cli("run --dataset " + (dir / "d.jsonl").string() + " --out " + (dir / "p.jsonl").string() +
                        " --strategy tag-s",
                    dir / "log"),
            0);
  EXPECT_NE(run_cli("run --dataset " + (dir / "d.jsonl").string() + " --out " + (dir / "p.jsonl").string() +
                        " --strategy logitmatch --backend http",
                    dir / "log"),
            0);
  EXPECT_NE(run_cli("frobnicate", dir / "log"), 0);
}
