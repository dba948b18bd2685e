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

// Overlap-adjusted span precision / recall.
//
// A predicted span contributes the fraction of its characters covered by
// gold spans (of the same category in hard mode); a gold span contributes
// the fraction of its characters covered by predictions. Contributions are
// pooled over the corpus (micro average).
//
// Zero-length spans mark insertion points. A zero-length span at x counts as
// fully covered when some span of the other side (category permitting)
// satisfies start <= x <= end, otherwise it contributes 0.

#include <algorithm>
#include <cstddef>
#include <cstdio>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "spanlab/core.hpp"

namespace spanlab::eval {

enum class PrecisionMode {
  kUnion,    // coverage by the union of gold spans, bounded by 1
  kPerPair,  // sum of pairwise overlaps, may exceed 1 when gold spans overlap
};

struct Scores {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

inline double f1_score(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

struct Counts {
  std::size_t examples = 0;
  std::size_t gold_spans = 0;
  std::size_t pred_spans = 0;
  std::size_t items = 0;
  std::size_t parse_errors = 0;
  std::size_t span_content_errors = 0;
  std::size_t category_errors = 0;
};

struct EvalReport {
  Scores hard;
  Scores soft;
  double parsing_error_rate = 0;
  double span_content_error_rate = 0;
  double category_error_rate = 0;
  Counts counts;
};

namespace detail {

// Characters of [start, end) covered by the union of `cover`.
inline std::size_t covered_chars(std::size_t start, std::size_t end,
                                 std::vector<std::pair<std::size_t, std::size_t>> cover) {
  std::sort(cover.begin(), cover.end());
  std::size_t total = 0;
  std::size_t reached = start;
  for (const auto& [a, b] : cover) {
    const std::size_t lo = std::max(a, reached);
    const std::size_t hi = std::min(b, end);
    if (hi > lo) {
      total += hi - lo;
      reached = hi;
    }
  }
  return total;
}

// Coverage of `s` by `others`, in [0, 1] under union semantics.
inline double coverage(const Span& s, const std::vector<Span>& others, bool hard,
                       PrecisionMode mode = PrecisionMode::kUnion) {
  auto eligible = [&](const Span& o) { return !hard || o.category == s.category; };
  if (s.start == s.end) {
    for (const auto& o : others) {
      if (eligible(o) && o.start <= s.start && s.start <= o.end) return 1.0;
    }
    return 0.0;
  }
  const double len = static_cast<double>(s.end - s.start);
  if (mode == PrecisionMode::kPerPair) {
    double sum = 0;
    for (const auto& o : others) {
      if (!eligible(o)) continue;
      const std::size_t lo = std::max(s.start, o.start);
      const std::size_t hi = std::min(s.end, o.end);
      if (hi > lo) sum += static_cast<double>(hi - lo) / len;
    }
    return sum;
  }
  std::vector<std::pair<std::size_t, std::size_t>> cover;
  for (const auto& o : others) {
    if (eligible(o) && o.end > o.start) cover.emplace_back(o.start, o.end);
  }
  return static_cast<double>(covered_chars(s.start, s.end, std::move(cover))) / len;
}

inline double coverage_sum(const std::vector<Span>& subjects, const std::vector<Span>& others,
                           bool hard, PrecisionMode mode = PrecisionMode::kUnion) {
  double sum = 0;
  for (const auto& s : subjects) sum += coverage(s, others, hard, mode);
  return sum;
}

}  // namespace detail

inline double span_overlap_precision(const std::vector<Span>& gold, const std::vector<Span>& pred,
                                     bool hard, PrecisionMode mode = PrecisionMode::kUnion) {
  if (pred.empty()) return gold.empty() ? 1.0 : 0.0;
  return detail::coverage_sum(pred, gold, hard, mode) / static_cast<double>(pred.size());
}

inline double span_overlap_recall(const std::vector<Span>& gold, const std::vector<Span>& pred,
                                  bool hard) {
  if (gold.empty()) return 1.0;
  return detail::coverage_sum(gold, pred, hard) / static_cast<double>(gold.size());
}

struct EvalOptions {
  PrecisionMode precision_mode = PrecisionMode::kUnion;
};

/// Pools span contributions over the corpus. Throws Error on an empty corpus.
inline EvalReport evaluate_corpus(
    const std::vector<std::pair<const LabeledExample*, const ParseResult*>>& corpus,
    const EvalOptions& options = {}) {
  if (corpus.empty()) throw Error("cannot evaluate an empty corpus");
  EvalReport report;
  auto& c = report.counts;
  double p_sum[2] = {0, 0};  // [soft, hard]
  double r_sum[2] = {0, 0};
  for (const auto& [example, result] : corpus) {
    ++c.examples;
    c.gold_spans += example->gold.size();
    c.pred_spans += result->spans.size();
    c.items += result->item_count;
    if (result->parse_error) ++c.parse_errors;
    c.span_content_errors += result->span_content_errors;
    c.category_errors += result->category_errors;
    for (int hard = 0; hard < 2; ++hard) {
      p_sum[hard] += detail::coverage_sum(result->spans, example->gold, hard, options.precision_mode);
      r_sum[hard] += detail::coverage_sum(example->gold, result->spans, hard);
    }
  }
  auto scores = [&](int hard) {
    Scores s;
    s.precision = c.pred_spans ? p_sum[hard] / static_cast<double>(c.pred_spans)
                               : (c.gold_spans ? 0.0 : 1.0);
    s.recall = c.gold_spans ? r_sum[hard] / static_cast<double>(c.gold_spans) : 1.0;
    s.f1 = f1_score(s.precision, s.recall);
    return s;
  };
  report.soft = scores(0);
  report.hard = scores(1);
  report.parsing_error_rate = static_cast<double>(c.parse_errors) / static_cast<double>(c.examples);
  if (c.items) {
    report.span_content_error_rate =
        static_cast<double>(c.span_content_errors) / static_cast<double>(c.items);
    report.category_error_rate =
        static_cast<double>(c.category_errors) / static_cast<double>(c.items);
  }
  return report;
}

inline EvalReport evaluate_corpus(const std::vector<LabeledExample>& examples,
                                  const std::vector<ParseResult>& results,
                                  const EvalOptions& options = {}) {
  if (examples.size() != results.size()) {
    throw Error("evaluate_corpus: " + std::to_string(examples.size()) + " examples but " +
                std::to_string(results.size()) + " results");
  }
  std::vector<std::pair<const LabeledExample*, const ParseResult*>> corpus;
  corpus.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) corpus.emplace_back(&examples[i], &results[i]);
  return evaluate_corpus(corpus, options);
}

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  auto scores = [](const Scores& s) {
    return nlohmann::ordered_json{{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
  };
  return {{"hard", scores(r.hard)},
          {"soft", scores(r.soft)},
          {"errors",
           {{"parsing", r.parsing_error_rate},
            {"span_content", r.span_content_error_rate},
            {"category", r.category_error_rate}}},
          {"counts",
           {{"examples", r.counts.examples},
            {"gold_spans", r.counts.gold_spans},
            {"pred_spans", r.counts.pred_spans},
            {"items", r.counts.items},
            {"parse_errors", r.counts.parse_errors},
            {"span_content_errors", r.counts.span_content_errors},
            {"category_errors", r.counts.category_errors}}}};
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  auto scores = [](const nlohmann::json& s) {
    return Scores{s.at("precision").get<double>(), s.at("recall").get<double>(),
                  s.at("f1").get<double>()};
  };
  r.hard = scores(j.at("hard"));
  r.soft = scores(j.at("soft"));
  r.parsing_error_rate = j.at("errors").at("parsing").get<double>();
  r.span_content_error_rate = j.at("errors").at("span_content").get<double>();
  r.category_error_rate = j.at("errors").at("category").get<double>();
  const auto& c = j.at("counts");
  r.counts.examples = c.at("examples").get<std::size_t>();
  r.counts.gold_spans = c.at("gold_spans").get<std::size_t>();
  r.counts.pred_spans = c.at("pred_spans").get<std::size_t>();
  r.counts.items = c.value("items", std::size_t{0});
  r.counts.parse_errors = c.value("parse_errors", std::size_t{0});
  r.counts.span_content_errors = c.value("span_content_errors", std::size_t{0});
  r.counts.category_errors = c.value("category_errors", std::size_t{0});
  return r;
}

/// Fixed-width table, one row per run, scores and error rates in percent.
inline std::string render_table(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::size_t width = 6;
  for (const auto& [name, _] : rows) width = std::max(width, name.size());
  auto cells = [](const char* fmt, auto... v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, v...);
    return std::string(buf);
  };
  auto centred = [](std::string_view title, std::size_t w) {
    const std::size_t left = (w - title.size()) / 2;
    return std::string(left, ' ') + std::string(title) + std::string(w - left - title.size(), ' ');
  };
  auto pad = [&](std::string s) {
    s.resize(width, ' ');
    return s;
  };
  constexpr std::size_t kScore = 20, kErrors = 21;
  std::string out = pad("") + " | " + centred("hard", kScore) + " | " + centred("soft", kScore) + " | " +
                    centred("errors (%)", kErrors) + "\n";
  const std::string prf = cells("%6s %6s %6s", "P", "R", "F1");
  out += pad("method") + " | " + prf + " | " + prf + " | " + cells("%6s %7s %6s", "parse", "content", "cat") + "\n";
  out += std::string(width, '-') + "-+-" + std::string(kScore, '-') + "-+-" + std::string(kScore, '-') + "-+-" +
         std::string(kErrors, '-') + "\n";
  for (const auto& [name, r] : rows) {
    out += pad(name) + " | " +
           cells("%6.1f %6.1f %6.1f", 100 * r.hard.precision, 100 * r.hard.recall, 100 * r.hard.f1) + " | " +
           cells("%6.1f %6.1f %6.1f", 100 * r.soft.precision, 100 * r.soft.recall, 100 * r.soft.f1) + " | " +
           cells("%6.1f %7.1f %6.1f", 100 * r.parsing_error_rate, 100 * r.span_content_error_rate,
                 100 * r.category_error_rate) +
           "\n";
  }
  return out;
}

}  // namespace spanlab::eval
