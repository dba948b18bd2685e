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

#include <algorithm>
#include <compare>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "spanlab/utf8.hpp"

namespace spanlab {

/// Raised for malformed configuration or data. Contract violations by the
/// caller use the standard exception types instead.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Task { kNer, kGec, kEsaMt, kCpl, kCustom };

inline std::string_view to_string(Task task) {
  switch (task) {
    case Task::kNer: return "ner";
    case Task::kGec: return "gec";
    case Task::kEsaMt: return "esa-mt";
    case Task::kCpl: return "cpl";
    case Task::kCustom: return "custom";
  }
  return "custom";
}

inline std::optional<Task> parse_task(std::string_view name) {
  for (Task t : {Task::kNer, Task::kGec, Task::kEsaMt, Task::kCpl, Task::kCustom}) {
    if (to_string(t) == name) return t;
  }
  return std::nullopt;
}

/// A labeled character range [start, end) over an input text. Indices count
/// Unicode scalar values, 0-based.
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string category;

  std::size_t length() const { return end >= start ? end - start : 0; }

  auto operator<=>(const Span&) const = default;
  bool operator==(const Span&) const = default;
};

struct LabeledExample {
  std::string id;
  std::string text;
  // Source sentence for ESA-MT, instruction for CPL.
  std::optional<std::string> aux_text;
  std::vector<std::string> categories;
  std::vector<Span> gold;
  Task task = Task::kCustom;
  std::string lang;

  bool has_category(std::string_view label) const {
    return std::find(categories.begin(), categories.end(), label) != categories.end();
  }
};

enum class ParseErrorKind {
  kUnparseable,   // malformed JSON even after salvage
  kWrongShape,    // valid JSON that is not an array
  kNoSpanLines,   // index output without a single "[s:e] = LABEL" line
  kNotACopy,      // tag output without tags that does not resemble the input
  kNoOutput,      // the backend produced nothing (transport failure)
};

inline std::string_view to_string(ParseErrorKind kind) {
  switch (kind) {
    case ParseErrorKind::kUnparseable: return "unparseable";
    case ParseErrorKind::kWrongShape: return "wrong_shape";
    case ParseErrorKind::kNoSpanLines: return "no_span_lines";
    case ParseErrorKind::kNotACopy: return "not_a_copy";
    case ParseErrorKind::kNoOutput: return "no_output";
  }
  return "unparseable";
}

inline std::optional<ParseErrorKind> parse_error_kind(std::string_view name) {
  for (auto k : {ParseErrorKind::kUnparseable, ParseErrorKind::kWrongShape,
                 ParseErrorKind::kNoSpanLines, ParseErrorKind::kNotACopy,
                 ParseErrorKind::kNoOutput}) {
    if (to_string(k) == name) return k;
  }
  return std::nullopt;
}

/// Spans recovered from one model output plus the error counts used by the
/// error-rate report. `item_count` is the number of span items the parser saw
/// (valid or not) and is the denominator for the per-item error rates.
struct ParseResult {
  std::vector<Span> spans;
  std::optional<ParseErrorKind> parse_error;
  std::size_t span_content_errors = 0;
  std::size_t category_errors = 0;
  std::size_t item_count = 0;

  static ParseResult failure(ParseErrorKind kind) {
    ParseResult r;
    r.parse_error = kind;
    return r;
  }

  bool operator==(const ParseResult&) const = default;
};

struct RawPrediction {
  std::string example_id;
  std::string strategy;
  std::string output_text;
  std::size_t token_count = 0;
  bool truncated = false;  // max_tokens exhausted before a stop condition
  std::optional<std::string> transport_error;

  bool operator==(const RawPrediction&) const = default;
};

/// True iff 0 <= start <= end <= length(text). Zero-length spans are only
/// valid when `allow_empty` is set (GEC "missing" edits).
inline bool validate_span(const Span& span, std::string_view text, bool allow_empty = false) {
  if (span.start > span.end) return false;
  if (span.start == span.end && !allow_empty) return false;
  return span.end <= utf8::length(text);
}

/// Full invariant check against the owning example, including category
/// membership. Empty spans are accepted only for GEC.
inline bool validate_span(const Span& span, const LabeledExample& example) {
  return example.has_category(span.category) &&
         validate_span(span, example.text, example.task == Task::kGec);
}

/// Characters [start, end) of `text`. Throws std::out_of_range when the span
/// does not fit the text.
inline std::string span_text(const Span& span, std::string_view text) {
  if (span.start > span.end || span.end > utf8::length(text)) {
    throw std::out_of_range("span [" + std::to_string(span.start) + ", " +
                            std::to_string(span.end) + ") outside text");
  }
  return std::string(utf8::substr(text, span.start, span.end));
}

/// Checks the example-level invariants: non-empty unique categories and
/// valid gold spans.
inline void check_example(const LabeledExample& example) {
  if (example.categories.empty()) {
    throw Error("example '" + example.id + "' has no categories");
  }
  std::unordered_set<std::string_view> seen;
  for (const auto& c : example.categories) {
    if (!seen.insert(c).second) {
      throw Error("example '" + example.id + "' repeats category '" + c + "'");
    }
  }
  for (const auto& s : example.gold) {
    if (!validate_span(s, example)) {
      throw Error("example '" + example.id + "' has invalid gold span [" +
                  std::to_string(s.start) + ", " + std::to_string(s.end) + ") " + s.category);
    }
  }
}

}  // namespace spanlab
