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

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "spanlab/conformance.hpp"
#include "spanlab/pipeline.hpp"

namespace {

using namespace spanlab;

// Turns a key=value config file into "--key value" arguments. They are
// placed before the command line arguments, so explicit flags win.
std::vector<std::string> config_arguments(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read config '" + path + "'");
  std::vector<std::string> args;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(path + ":" + std::to_string(n) + ": expected key=value");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "api_key" || key == "api-key" || key == "token") {
      throw Error(path + ":" + std::to_string(n) +
                  ": credentials are read from the environment only (see --api-key-env)");
    }
    std::string flag = "--" + key;
    for (auto& c : flag) {
      if (c == '_') c = '-';
    }
    args.push_back(flag);
    args.push_back(value);
  }
  return args;
}

// Finds "run ... --config FILE" and splices the file's arguments in.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  if (args.size() < 2 || args[1] != "run") return args;
  for (std::size_t i = 2; i + 1 < args.size(); ++i) {
    if (args[i] == "--config") {
      const auto extra = config_arguments(args[i + 1]);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + 2));
      args.insert(args.begin() + 2, extra.begin(), extra.end());
      break;
    }
  }
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spanlab: span labeling with generative models", "spanlab"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  // gen-cpl
  auto* gen = app.add_subcommand("gen-cpl", "Generate a conditional pattern lookup dataset");
  std::size_t gen_count = 1000;
  std::uint64_t gen_seed = 0;
  std::size_t gen_length = 100;
  std::string gen_out;
  gen->add_option("--count", gen_count, "Number of examples")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "Random seed");
  gen->add_option("--length", gen_length, "Approximate words per example")->check(CLI::Range(10, 100000));
  gen->add_option("--out", gen_out, "Output JSONL path")->required();

  // run
  auto* run = app.add_subcommand("run", "Run a strategy over a dataset");
  pipeline::RunConfig rc;
  std::string strategy_name = "match";
  std::string mock_mode = "gold";
  std::string vocab_path, trace_path, template_path;
  run->add_option("--config", "key=value file; flags given on the command line override it");
  run->add_option("--dataset", rc.dataset_path, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  run->add_option("--out", rc.output_path, "Predictions JSONL")->required();
  run->add_option("--strategy", strategy_name,
                  "tag | index | index-enriched | match | match-occ | logitmatch | logitmatch-occ, "
                  "'-s' suffix for the structured variant");
  run->add_option("--backend", rc.backend, "mock | http")->check(CLI::IsMember({"mock", "http"}));
  run->add_option("--mock-mode", mock_mode, "gold | noisy | adversarial")
      ->check(CLI::IsMember({"gold", "noisy", "adversarial"}));
  run->add_option("--noise-rate", rc.noise_rate, "Share of corrupted spans in noisy mode")->check(CLI::Range(0.0, 1.0));
  run->add_option("--vocab", vocab_path, "Mock vocabulary file")->check(CLI::ExistingFile);
  run->add_option("--trace", trace_path, "Write per-step mask trace (JSONL)");
  run->add_option("--template", template_path, "Prompt template file")->check(CLI::ExistingFile);
  run->add_option("--seed", rc.seed, "Run seed");
  run->add_option("--concurrency", rc.concurrency, "Parallel requests")->check(CLI::PositiveNumber);
  run->add_option("--max-tokens", rc.decoding.max_tokens, "Token budget per example")->check(CLI::PositiveNumber);
  run->add_option("--temperature", rc.decoding.temperature);
  run->add_option("--top-p", rc.decoding.top_p);
  run->add_option("--top-k", rc.decoding.top_k);
  run->add_option("--base-url", rc.http.base_url, "OpenAI-compatible endpoint, e.g. http://host:8000/v1");
  run->add_option("--model", rc.http.model);
  run->add_option("--api-key-env", rc.http.api_key_env, "Environment variable holding the API token");
  run->add_option("--retries", rc.http.max_retries)->check(CLI::NonNegativeNumber);
  run->add_option("--timeout", rc.http.timeout_seconds)->check(CLI::PositiveNumber);
  run->add_option("--max-connections", rc.http.max_concurrency)->check(CLI::PositiveNumber);

  // eval
  auto* ev = app.add_subcommand("eval", "Score predictions against a dataset");
  std::string ev_pred, ev_data, ev_report, ev_name;
  bool per_pair = false;
  ev->add_option("--predictions", ev_pred)->required()->check(CLI::ExistingFile);
  ev->add_option("--dataset", ev_data)->required()->check(CLI::ExistingFile);
  ev->add_option("--report", ev_report, "Report JSON path")->required();
  ev->add_option("--name", ev_name, "Row label in the printed table");
  ev->add_flag("--per-pair-precision", per_pair, "Sum pairwise overlaps instead of the union cover");

  // report
  auto* rep = app.add_subcommand("report", "Table over report files");
  std::vector<std::string> rep_files;
  rep->add_option("reports", rep_files, "Report files, optionally NAME=PATH")->required();

  // fixtures
  auto* fx = app.add_subcommand("fixtures", "Write or check the mask conformance corpus");
  std::string fx_out, fx_check;
  std::size_t fx_count = 60;
  std::uint64_t fx_seed = 0;
  auto* fx_out_opt = fx->add_option("--out", fx_out, "Directory to write");
  fx->add_option("--check", fx_check, "Directory to verify")->excludes(fx_out_opt);
  fx->add_option("--count", fx_count, "Synthetic sequences");
  fx->add_option("--seed", fx_seed);

  std::vector<std::string> args;
  for (int i = 0; i < argc; ++i) args.emplace_back(argv[i]);
  try {
    args = expand_config(std::move(args));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) {
      pipeline::cmd_gen_cpl(gen_count, gen_seed, gen_out, gen_length);
      std::cout << "wrote " << gen_count << " examples to " << gen_out << '\n';
    } else if (*run) {
      const auto strategy = parse_strategy_name(strategy_name);
      if (!strategy) throw Error("unknown strategy '" + strategy_name + "'");
      rc.strategy = *strategy;
      rc.mock_mode = *backend::parse_mock_mode(mock_mode);
      if (!vocab_path.empty()) rc.vocab_path = vocab_path;
      if (!trace_path.empty()) rc.trace_path = trace_path;
      if (!template_path.empty()) rc.template_path = template_path;
      const auto results = pipeline::cmd_run(rc);
      std::size_t failed = 0;
      for (const auto& r : results) failed += r.raw.transport_error ? 1 : 0;
      std::cout << "wrote " << results.size() << " predictions to " << rc.output_path;
      if (failed) std::cout << " (" << failed << " failed requests)";
      std::cout << '\n';
    } else if (*ev) {
      eval::EvalOptions options;
      if (per_pair) options.precision_mode = eval::PrecisionMode::kPerPair;
      const std::string name = ev_name.empty() ? std::filesystem::path(ev_pred).stem().string() : ev_name;
      std::cout << pipeline::cmd_eval(ev_pred, ev_data, ev_report, name, options);
    } else if (*rep) {
      std::cout << pipeline::cmd_report(rep_files);
    } else if (*fx) {
      if (!fx_check.empty()) {
        const auto failures = conformance::check_corpus(fx_check);
        for (const auto& f : failures) std::cerr << f << '\n';
        if (!failures.empty()) return 1;
        std::cout << "all fixtures reproduce\n";
      } else {
        if (fx_out.empty()) throw Error("fixtures: give --out or --check");
        const auto written = conformance::write_corpus(fx_out, fx_seed, fx_count);
        std::cout << "wrote " << written.size() << " fixtures to " << fx_out << '\n';
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
