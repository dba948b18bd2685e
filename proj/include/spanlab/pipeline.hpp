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

#pragma once

// Dataset and prediction files (JSON lines) and the batch commands behind
// the command line tool: gen-cpl, run, eval and report.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"

#include "spanlab/backend.hpp"
#include "spanlab/core.hpp"
#include "spanlab/cpl.hpp"
#include "spanlab/eval.hpp"
#include "spanlab/http_backend.hpp"
#include "spanlab/logitmatch.hpp"
#include "spanlab/strategies.hpp"
#include "spanlab/tokenmodel.hpp"

namespace spanlab::pipeline {

using nlohmann::json;
using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

inline ordered_json spans_to_json(const std::vector<Span>& spans) {
  ordered_json a = ordered_json::array();
  for (const auto& s : spans) a.push_back({{"start", s.start}, {"end", s.end}, {"label", s.category}});
  return a;
}

inline std::vector<Span> spans_from_json(const json& a) {
  std::vector<Span> spans;
  for (const auto& s : a) {
    spans.push_back({s.at("start").get<std::size_t>(), s.at("end").get<std::size_t>(),
                     s.at("label").get<std::string>()});
  }
  return spans;
}

inline ordered_json example_to_json(const LabeledExample& e,
                                    const std::optional<cpl::CplSpec>& spec = std::nullopt) {
  ordered_json j{{"id", e.id}, {"task", std::string(to_string(e.task))}, {"lang", e.lang}, {"text", e.text}};
  if (e.aux_text) j["aux_text"] = *e.aux_text;
  j["categories"] = e.categories;
  j["spans"] = spans_to_json(e.gold);
  if (spec) j["cpl_spec"] = cpl::to_json(*spec);
  return j;
}

inline LabeledExample example_from_json(const json& j) {
  LabeledExample e;
  e.id = j.at("id").get<std::string>();
  const auto task = parse_task(j.at("task").get<std::string>());
  if (!task) throw Error("unknown task '" + j.at("task").get<std::string>() + "'");
  e.task = *task;
  e.lang = j.value("lang", std::string());
  e.text = j.at("text").get<std::string>();
  if (const auto a = j.find("aux_text"); a != j.end() && !a->is_null()) e.aux_text = a->get<std::string>();
  e.categories = j.at("categories").get<std::vector<std::string>>();
  e.gold = spans_from_json(j.at("spans"));
  return e;
}

struct DatasetRecord {
  LabeledExample example;
  std::optional<cpl::CplSpec> cpl_spec;
};

inline std::vector<DatasetRecord> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read dataset '" + path.string() + "'");
  std::vector<DatasetRecord> records;
  std::set<std::string> ids;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      DatasetRecord r{example_from_json(j), std::nullopt};
      if (const auto s = j.find("cpl_spec"); s != j.end()) r.cpl_spec = cpl::spec_from_json(*s);
      check_example(r.example);
      if (!ids.insert(r.example.id).second) throw Error("duplicate id '" + r.example.id + "'");
      records.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw Error(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return records;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  return out;
}

// ---------------------------------------------------------------------------
// gen-cpl
// ---------------------------------------------------------------------------

inline void cmd_gen_cpl(std::size_t count, std::uint64_t seed, const std::filesystem::path& out_path,
                        std::size_t approx_length = 100) {
  if (count < 1) throw Error("gen-cpl: count must be at least 1");
  auto out = open_output(out_path);
  for (const auto& [example, spec] : cpl::generate_cpl_dataset(count, seed, approx_length)) {
    if (cpl::cpl_oracle(example.text, spec) != example.gold || example.gold.empty()) {
      throw Error("gen-cpl: oracle mismatch for " + example.id);
    }
    out << example_to_json(example, spec).dump() << '\n';
  }
  if (!out.flush()) throw Error("gen-cpl: write failed for '" + out_path.string() + "'");
}

// ---------------------------------------------------------------------------
// Predictions
// ---------------------------------------------------------------------------

struct PredictionRecord {
  RawPrediction raw;
  ParseResult parse;
};

inline ordered_json prediction_to_json(const PredictionRecord& r) {
  ordered_json j{{"id", r.raw.example_id},
                 {"strategy", r.raw.strategy},
                 {"output", r.raw.output_text},
                 {"token_count", r.raw.token_count},
                 {"truncated", r.raw.truncated}};
  j["transport_error"] = r.raw.transport_error ? ordered_json(*r.raw.transport_error) : ordered_json();
  j["parse"] = {{"spans", spans_to_json(r.parse.spans)},
                {"parse_error", r.parse.parse_error
                                    ? ordered_json(std::string(to_string(*r.parse.parse_error)))
                                    : ordered_json()},
                {"span_content_errors", r.parse.span_content_errors},
                {"category_errors", r.parse.category_errors},
                {"item_count", r.parse.item_count}};
  return j;
}

inline PredictionRecord prediction_from_json(const json& j) {
  PredictionRecord r;
  r.raw.example_id = j.at("id").get<std::string>();
  r.raw.strategy = j.value("strategy", std::string());
  r.raw.output_text = j.value("output", std::string());
  r.raw.token_count = j.value("token_count", std::size_t{0});
  r.raw.truncated = j.value("truncated", false);
  if (const auto t = j.find("transport_error"); t != j.end() && t->is_string()) {
    r.raw.transport_error = t->get<std::string>();
  }
  const auto& p = j.at("parse");
  r.parse.spans = spans_from_json(p.at("spans"));
  if (const auto e = p.find("parse_error"); e != p.end() && e->is_string()) {
    const auto kind = parse_error_kind(e->get<std::string>());
    if (!kind) throw Error("unknown parse_error '" + e->get<std::string>() + "'");
    r.parse.parse_error = *kind;
  }
  r.parse.span_content_errors = p.value("span_content_errors", std::size_t{0});
  r.parse.category_errors = p.value("category_errors", std::size_t{0});
  r.parse.item_count = p.value("item_count", std::size_t{0});
  return r;
}

inline std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read predictions '" + path.string() + "'");
  std::vector<PredictionRecord> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(prediction_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw Error(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

struct RunConfig {
  StrategyConfig strategy;
  std::string backend = "mock";  // mock | http
  backend::MockMode mock_mode = backend::MockMode::kGold;
  double noise_rate = 0.5;                 // mock noisy mode: share of corrupted spans
  std::optional<std::string> vocab_path;   // mock vocabulary; trained on the dataset when absent
  backend::HttpConfig http;
  backend::DecodingParams decoding;
  std::string dataset_path;
  std::string output_path;
  std::optional<std::string> trace_path;
  std::optional<std::string> template_path;
  std::uint64_t seed = 0;
  std::size_t concurrency = 4;
};

inline logitmatch::SchemaKind schema_for(const StrategyConfig& s) {
  if (!is_logitmatch(s.kind) || !s.structured) return logitmatch::SchemaKind::kNone;
  return uses_occurrence(s.kind) ? logitmatch::SchemaKind::kWithOccurrence
                                 : logitmatch::SchemaKind::kPlain;
}

/// Mock vocabulary learned from the dataset texts and their gold outputs.
inline TokenVocab train_mock_vocab(const std::vector<DatasetRecord>& records,
                                   const StrategyConfig& strategy, std::uint64_t seed) {
  std::vector<std::string> corpus;
  for (std::size_t i = 0; i < records.size() && i < 64; ++i) {
    const auto& e = records[i].example;
    corpus.push_back(e.text);
    Rng rng(0);
    corpus.push_back(backend::render_noisy_output(strategy.kind, e, 0.0, rng));
  }
  if (corpus.empty()) corpus.emplace_back(" ");
  SyntheticTokenizerOptions options;
  options.max_merges = 300;
  return make_synthetic_tokenizer(seed, corpus, options).vocab();
}

inline std::unique_ptr<backend::Backend> make_backend(const RunConfig& config,
                                                      const std::vector<DatasetRecord>& records) {
  if (config.backend == "http") return std::make_unique<backend::HttpBackend>(config.http);
  if (config.backend != "mock") throw Error("unknown backend '" + config.backend + "'");
  std::shared_ptr<const TokenVocab> vocab;
  if (config.vocab_path) {
    std::ifstream in(*config.vocab_path, std::ios::binary);
    if (!in) throw Error("cannot read vocabulary '" + *config.vocab_path + "'");
    vocab = std::make_shared<const TokenVocab>(load_vocab(in));
  } else {
    vocab = std::make_shared<const TokenVocab>(train_mock_vocab(records, config.strategy, config.seed));
  }
  return std::make_unique<backend::MockBackend>(vocab, backend::make_policy_factory(config.mock_mode));
}

/// Runs every example through the backend and writes one record per line in
/// input order. Transport failures are recorded per example.
inline std::vector<PredictionRecord> cmd_run(const RunConfig& config,
                                             std::unique_ptr<backend::Backend> backend = nullptr) {
  StrategyConfig strategy = config.strategy;
  strategy.validate();
  if (config.template_path) strategy.prompt_template = prompts::load_template(*config.template_path);
  const auto records = read_dataset(config.dataset_path);
  if (!backend) backend = make_backend(config, records);
  backend::check_capability(*backend, strategy);

  const std::size_t n = records.size();
  std::vector<std::optional<PredictionRecord>> results(n);
  std::vector<std::vector<backend::TraceStep>> traces(n);
  auto out = open_output(config.output_path);
  std::optional<std::ofstream> trace_out;
  if (config.trace_path) trace_out = open_output(*config.trace_path);

  std::mutex mu;
  std::size_t next_to_write = 0;
  std::atomic<std::size_t> next_job{0};
  std::exception_ptr failure;

  auto work = [&]() {
    for (std::size_t i = next_job++; i < n; i = next_job++) {
      const auto& example = records[i].example;
      StrategyConfig s = strategy;
      s.task = example.task;
      backend::GenerationRequest req;
      req.example_id = example.id;
      req.strategy = s.name();
      req.decoding = config.decoding;
      req.decoding.seed = mix_seed(config.seed, i);
      PredictionRecord rec;
      try {
        req.prompt = render_prompt(s, example);
        if (is_logitmatch(s.kind)) {
          req.constraint = backend::LogitMatchConstraint{example.text, schema_for(s), example.categories};
        }
        Rng noise(mix_seed(config.seed ^ 0x6e6f697365ULL, i));
        const double rate = config.mock_mode == backend::MockMode::kNoisy ? config.noise_rate : 0.0;
        req.reference_output = backend::render_noisy_output(s.kind, example, rate, noise);
        auto gen = backend->generate(req);
        rec.raw = std::move(gen.prediction);
        traces[i] = std::move(gen.trace);
      } catch (const std::exception& e) {
        rec.raw.example_id = example.id;
        rec.raw.strategy = req.strategy;
        rec.raw.transport_error = std::string("generation failed: ") + e.what();
      }
      rec.parse = rec.raw.transport_error ? ParseResult::failure(ParseErrorKind::kNoOutput)
                                          : parse_output(s, rec.raw.output_text, example);

      std::lock_guard lock(mu);
      results[i] = std::move(rec);
      try {
        while (next_to_write < n && results[next_to_write]) {
          out << prediction_to_json(*results[next_to_write]).dump(-1, ' ', false, ordered_json::error_handler_t::replace) << '\n';
          out.flush();
          if (trace_out) {
            backend::write_trace(*trace_out, records[next_to_write].example.id, traces[next_to_write]);
            traces[next_to_write].clear();
          }
          ++next_to_write;
        }
      } catch (...) {
        if (!failure) failure = std::current_exception();
      }
    }
  };

  const std::size_t workers = std::clamp<std::size_t>(config.concurrency, 1, std::max<std::size_t>(n, 1));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  if (!out) throw Error("run: write failed for '" + config.output_path + "'");

  std::vector<PredictionRecord> all;
  all.reserve(n);
  for (auto& r : results) all.push_back(std::move(*r));
  return all;
}

// ---------------------------------------------------------------------------
// eval / report
// ---------------------------------------------------------------------------

inline eval::EvalReport evaluate_files(const std::filesystem::path& predictions_path,
                                       const std::filesystem::path& dataset_path,
                                       const eval::EvalOptions& options = {}) {
  const auto predictions = read_predictions(predictions_path);
  if (predictions.empty()) throw Error("eval: no predictions in '" + predictions_path.string() + "'");
  const auto records = read_dataset(dataset_path);

  std::map<std::string, const LabeledExample*> by_id;
  for (const auto& r : records) by_id.emplace(r.example.id, &r.example);
  std::set<std::string> predicted;
  std::vector<std::string> extra;
  std::vector<std::string> duplicate;
  for (const auto& p : predictions) {
    if (!by_id.count(p.raw.example_id)) extra.push_back(p.raw.example_id);
    if (!predicted.insert(p.raw.example_id).second) duplicate.push_back(p.raw.example_id);
  }
  std::vector<std::string> missing;
  for (const auto& r : records) {
    if (!predicted.count(r.example.id)) missing.push_back(r.example.id);
  }
  if (!extra.empty() || !missing.empty() || !duplicate.empty()) {
    auto list = [](const std::vector<std::string>& ids) {
      std::string s;
      for (const auto& id : ids) s += (s.empty() ? "" : ", ") + id;
      return s;
    };
    std::string msg = "eval: prediction ids do not match the dataset";
    if (!extra.empty()) msg += "\n  extra: " + list(extra);
    if (!missing.empty()) msg += "\n  missing: " + list(missing);
    if (!duplicate.empty()) msg += "\n  duplicate: " + list(duplicate);
    throw Error(msg);
  }

  std::vector<std::pair<const LabeledExample*, const ParseResult*>> corpus;
  for (const auto& p : predictions) corpus.emplace_back(by_id.at(p.raw.example_id), &p.parse);
  return eval::evaluate_corpus(corpus, options);
}

inline std::string cmd_eval(const std::filesystem::path& predictions_path,
                            const std::filesystem::path& dataset_path,
                            const std::filesystem::path& report_path, const std::string& label,
                            const eval::EvalOptions& options = {}) {
  const auto report = evaluate_files(predictions_path, dataset_path, options);
  auto out = open_output(report_path);
  out << eval::to_json(report).dump(2) << '\n';
  if (!out.flush()) throw Error("eval: write failed for '" + report_path.string() + "'");
  return eval::render_table({{label, report}});
}

/// Table over several report files; each entry is "name=path" or a path
/// (named by its file stem).
inline std::string cmd_report(const std::vector<std::string>& entries) {
  if (entries.empty()) throw Error("report: no report files given");
  std::vector<std::pair<std::string, eval::EvalReport>> rows;
  for (const auto& entry : entries) {
    std::string name;
    std::filesystem::path path;
    if (const auto eq = entry.find('='); eq != std::string::npos) {
      name = entry.substr(0, eq);
      path = entry.substr(eq + 1);
    } else {
      path = entry;
      name = path.stem().string();
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("report: cannot read '" + path.string() + "'");
    try {
      rows.emplace_back(name, eval::report_from_json(json::parse(in)));
    } catch (const json::exception& e) {
      throw Error("report: '" + path.string() + "' is not a report: " + e.what());
    }
  }
  return eval::render_table(rows);
}

}  // namespace spanlab::pipeline
