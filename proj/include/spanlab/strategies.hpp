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

// Prompt rendering and output parsing for the span labeling strategies:
//
//   tag             input copied with <entity type="L">...</entity> markup
//   index           "[start:end] = LABEL" lines, character offsets
//   index-enriched  same output, input words prefixed with "offset::"
//   match           JSON list of {"text", "label"} objects
//   match-occ       ... plus an "occurrence" ordinal
//   logitmatch[-occ]  match[-occ] decoded under the LogitMatch constraint
//
// Every parser is total: arbitrary model output yields a ParseResult.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"

#include "spanlab/core.hpp"
#include "spanlab/spanmatch.hpp"
#include "spanlab/utf8.hpp"

namespace spanlab {

enum class StrategyKind { kTag, kIndex, kIndexEnriched, kMatch, kMatchOcc, kLogitMatch, kLogitMatchOcc };

inline std::string_view to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::kTag: return "tag";
    case StrategyKind::kIndex: return "index";
    case StrategyKind::kIndexEnriched: return "index-enriched";
    case StrategyKind::kMatch: return "match";
    case StrategyKind::kMatchOcc: return "match-occ";
    case StrategyKind::kLogitMatch: return "logitmatch";
    case StrategyKind::kLogitMatchOcc: return "logitmatch-occ";
  }
  return "tag";
}

inline constexpr StrategyKind kAllStrategies[] = {
    StrategyKind::kTag,        StrategyKind::kIndex,      StrategyKind::kIndexEnriched,
    StrategyKind::kMatch,      StrategyKind::kMatchOcc,   StrategyKind::kLogitMatch,
    StrategyKind::kLogitMatchOcc};

inline std::optional<StrategyKind> parse_strategy_kind(std::string_view name) {
  for (auto k : kAllStrategies) {
    if (to_string(k) == name) return k;
  }
  return std::nullopt;
}

inline bool is_json_strategy(StrategyKind k) {
  return k == StrategyKind::kMatch || k == StrategyKind::kMatchOcc ||
         k == StrategyKind::kLogitMatch || k == StrategyKind::kLogitMatchOcc;
}
inline bool is_logitmatch(StrategyKind k) {
  return k == StrategyKind::kLogitMatch || k == StrategyKind::kLogitMatchOcc;
}
inline bool uses_occurrence(StrategyKind k) {
  return k == StrategyKind::kMatchOcc || k == StrategyKind::kLogitMatchOcc;
}
inline bool is_index_strategy(StrategyKind k) {
  return k == StrategyKind::kIndex || k == StrategyKind::kIndexEnriched;
}

/// A worked example shown in the prompt; its output is rendered per strategy.
struct Demonstration {
  std::string text;
  std::vector<Span> spans;
};

struct StrategyConfig {
  StrategyKind kind = StrategyKind::kTag;
  bool structured = false;  // fixed JSON schema enforced (-S)
  Task task = Task::kCustom;
  std::optional<std::vector<Demonstration>> few_shot;  // nullopt: task default
  std::optional<std::string> prompt_template;          // nullopt: built-in template

  void validate() const {
    if (structured && !is_json_strategy(kind)) {
      throw Error("strategy '" + std::string(to_string(kind)) +
                  "' has no structured (-S) variant");
    }
  }

  /// e.g. "match-occ-s"
  std::string name() const {
    std::string n(to_string(kind));
    if (structured) n += "-s";
    return n;
  }
};

inline std::optional<StrategyConfig> parse_strategy_name(std::string_view name) {
  StrategyConfig cfg;
  std::string_view base = name;
  if (base.size() > 2 && base.substr(base.size() - 2) == "-s") {
    cfg.structured = true;
    base.remove_suffix(2);
  }
  const auto kind = parse_strategy_kind(base);
  if (!kind) return std::nullopt;
  cfg.kind = *kind;
  if (cfg.structured && !is_json_strategy(cfg.kind)) return std::nullopt;
  return cfg;
}

struct PromptBundle {
  std::string system_or_instruction_text;  // the complete prompt
  std::string rendered_input;              // input block (index-enriched when applicable)
  std::string expected_format_note;        // format line plus notes
};

/// Parser knobs derived from the task.
struct ParseOptions {
  // Categories whose spans are zero-length insertion points (GEC "M"). Match
  // strategies mark the text right after the insertion point; the parser
  // collapses such spans to end == start.
  std::vector<std::string> zero_length_categories;
  // Tag outputs without any tag count as "no spans" (rather than a parse
  // error) when their similarity ratio to the input reaches this value.
  double min_copy_ratio = 0.6;

  bool is_zero_length(std::string_view label) const {
    return std::find(zero_length_categories.begin(), zero_length_categories.end(), label) !=
           zero_length_categories.end();
  }
};

inline ParseOptions parse_options_for(Task task) {
  ParseOptions o;
  if (task == Task::kGec) o.zero_length_categories = {"M"};
  return o;
}

// ---------------------------------------------------------------------------
// Prompt templates
// ---------------------------------------------------------------------------

namespace prompts {

inline constexpr std::string_view kDefaultTemplate =
    "{task_description}\n"
    "Output Format: {format}\n"
    "Labels: {labels}\n"
    "Examples:\n"
    "{examples}\n"
    "{notes}\n"
    "{input}\n";

inline std::string_view task_description(Task task) {
  switch (task) {
    case Task::kNer: return "Extract named entities (PERSON, ORG, LOC) from the text.";
    case Task::kGec: return "Identify grammatical errors in learner-written text.";
    case Task::kEsaMt:
      return "Identify translation errors by comparing the translation to the source text.";
    case Task::kCpl: return "Find all text spans that match the given pattern queries.";
    case Task::kCustom: return "Identify and label the relevant spans in the text.";
  }
  return "";
}

inline constexpr std::string_view kTagNote =
    "IMPORTANT: Your output needs to include copy of the entire input text, including "
    "non-tagged parts. If you are not outputting any tags, you need to copy the input text "
    "literally. Surround the specific spans with the XML tags as required.  Do not output any "
    "additional explanations or comments, start generating output straight away.";

inline constexpr std::string_view kIndexNote =
    "IMPORTANT: Character positions are 0-indexed. - First character is at position 0 - "
    "Spaces count as characters - start is inclusive, end is exclusive";

inline constexpr std::string_view kMatchNote = "Return a valid JSON array only.";

inline constexpr std::string_view kMissingSpanNote =
    "For missing words (M), mark the word before which the missing text should be inserted.";

inline std::vector<Demonstration> default_demonstrations(Task task) {
  if (task != Task::kNer) return {};
  return {{"Lina Berg joined AstraTech in Stockholm after finishing her studies at Northvale "
           "University.",
           {{0, 9, "PER"}, {17, 26, "ORG"}, {30, 39, "LOC"}, {71, 91, "ORG"}}}};
}

/// Replaces every `{name}` placeholder present in `values`; unknown
/// placeholders are kept verbatim. Substituted text is never re-scanned.
inline std::string fill(std::string_view tmpl, const std::map<std::string, std::string>& values) {
  std::string out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const std::size_t close = tmpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        const auto it = values.find(std::string(tmpl.substr(i + 1, close - i - 1)));
        if (it != values.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out += tmpl[i++];
  }
  return out;
}

inline std::string load_template(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read prompt template '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace prompts

// ---------------------------------------------------------------------------
// Index enrichment
// ---------------------------------------------------------------------------

inline bool is_word_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

/// Prefixes every whitespace-delimited word with "<char offset>::".
inline std::string enrich_input(std::string_view text) {
  std::string out;
  std::size_t ch = 0;
  bool in_word = false;
  for (std::size_t i = 0; i < text.size();) {
    const std::size_t len = utf8::sequence_length(text, i);
    const bool space = len == 1 && is_word_space(text[i]);
    if (!space && !in_word) {
      out += std::to_string(ch);
      out += "::";
    }
    in_word = !space;
    out.append(text.substr(i, len));
    i += len;
    ++ch;
  }
  return out;
}

/// Inverse of enrich_input: drops one "<digits>::" prefix at each word start.
inline std::string strip_enrichment(std::string_view enriched) {
  std::string out;
  bool in_word = false;
  for (std::size_t i = 0; i < enriched.size();) {
    if (!in_word && !is_word_space(enriched[i])) {
      std::size_t j = i;
      while (j < enriched.size() && std::isdigit(static_cast<unsigned char>(enriched[j]))) ++j;
      if (j > i && enriched.substr(j, 2) == "::") i = j + 2;
      in_word = true;
      continue;
    }
    in_word = !is_word_space(enriched[i]);
    out += enriched[i++];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Canonical outputs
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<Span> sorted_spans(std::vector<Span> spans) {
  std::sort(spans.begin(), spans.end());
  return spans;
}

// Text a match strategy emits for a zero-length span: the word starting at
// the insertion point.
inline std::string insertion_marker(const Span& s, std::string_view text) {
  const auto offsets = utf8::char_offsets(text);
  const std::size_t n = offsets.size() - 1;
  std::size_t e = s.start;
  while (e < n && !(offsets[e + 1] - offsets[e] == 1 && is_word_space(text[offsets[e]]))) ++e;
  return std::string(utf8::substr(text, s.start, e));
}

inline std::size_t occurrence_ordinal(std::string_view needle, std::string_view haystack,
                                      std::size_t start) {
  const auto starts = spanmatch::occurrences(needle, haystack);
  const auto it = std::find(starts.begin(), starts.end(), start);
  return it == starts.end() ? 1 : static_cast<std::size_t>(it - starts.begin()) + 1;
}

}  // namespace detail

/// Output a perfect model would produce for `spans` under `kind`.
/// Tag rendering requires non-overlapping spans.
inline std::string render_canonical_output(StrategyKind kind, std::string_view text,
                                           const std::vector<Span>& spans) {
  const auto sorted = detail::sorted_spans(spans);
  std::string out;
  switch (kind) {
    case StrategyKind::kTag: {
      const auto offsets = utf8::char_offsets(text);
      std::size_t cursor = 0;
      for (const auto& s : sorted) {
        if (s.start < cursor || s.end + 1 > offsets.size()) {
          throw std::invalid_argument("tag rendering needs non-overlapping in-range spans");
        }
        out.append(text.substr(offsets[cursor], offsets[s.start] - offsets[cursor]));
        out += "<entity type=\"" + s.category + "\">";
        out.append(text.substr(offsets[s.start], offsets[s.end] - offsets[s.start]));
        out += "</entity>";
        cursor = s.end;
      }
      out.append(text.substr(offsets[cursor]));
      return out;
    }
    case StrategyKind::kIndex:
    case StrategyKind::kIndexEnriched:
      for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (i) out += '\n';
        out += "[" + std::to_string(sorted[i].start) + ":" + std::to_string(sorted[i].end) +
               "] = " + sorted[i].category;
      }
      return out;
    case StrategyKind::kMatch:
    case StrategyKind::kMatchOcc:
    case StrategyKind::kLogitMatch:
    case StrategyKind::kLogitMatchOcc: {
      out += '[';
      for (std::size_t i = 0; i < sorted.size(); ++i) {
        const auto& s = sorted[i];
        const std::string piece = s.start == s.end ? detail::insertion_marker(s, text)
                                                   : span_text(s, text);
        if (i) out += ", ";
        out += "{\"text\": \"" + utf8::json_escape(piece) + "\", \"label\": \"" +
               utf8::json_escape(s.category) + "\"";
        if (uses_occurrence(kind)) {
          out += ", \"occurrence\": " +
                 std::to_string(detail::occurrence_ordinal(piece, text, s.start));
        }
        out += '}';
      }
      out += ']';
      return out;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prompt rendering
// ---------------------------------------------------------------------------

inline std::string format_block(StrategyKind kind, const std::vector<std::string>& categories) {
  std::string cats;
  for (std::size_t i = 0; i < categories.size(); ++i) {
    if (i) cats += ", ";
    cats += categories[i];
  }
  switch (kind) {
    case StrategyKind::kTag: return "<entity type=\"LABEL\"></entity>";
    case StrategyKind::kIndex:
    case StrategyKind::kIndexEnriched: return "[start:end] = LABEL";
    case StrategyKind::kMatch:
    case StrategyKind::kLogitMatch:
      return "[{\"text\": \"exact text span from input\", \"label\": \"category (" + cats +
             ")\"}]";
    case StrategyKind::kMatchOcc:
    case StrategyKind::kLogitMatchOcc:
      return "[{\"text\": \"exact span from input\", \"label\": \"category (" + cats +
             ")\", \"occurrence\": \"which occurrence (1, 2, 3...)\"}]";
  }
  return "";
}

inline std::string notes_block(StrategyKind kind, Task task) {
  switch (kind) {
    case StrategyKind::kTag: return std::string(prompts::kTagNote);
    case StrategyKind::kIndex:
    case StrategyKind::kIndexEnriched: return std::string(prompts::kIndexNote);
    default: {
      std::string n(prompts::kMatchNote);
      if (task == Task::kGec) n += "\n" + std::string(prompts::kMissingSpanNote);
      return n;
    }
  }
}

inline std::string input_block(Task task, std::string_view text,
                               const std::optional<std::string>& aux) {
  if (aux && task == Task::kEsaMt) return "Source: " + *aux + "\nTranslation: " + std::string(text);
  if (aux && task == Task::kCpl) return "Query: " + *aux + "\nText: " + std::string(text);
  if (aux) return "Context: " + *aux + "\nText: " + std::string(text);
  return "Text: " + std::string(text);
}

inline PromptBundle render_prompt(const StrategyConfig& config, const LabeledExample& example) {
  config.validate();
  const bool enriched = config.kind == StrategyKind::kIndexEnriched;
  const auto demos = config.few_shot ? *config.few_shot : prompts::default_demonstrations(config.task);

  std::string examples;
  for (std::size_t i = 0; i < demos.size(); ++i) {
    if (i) examples += '\n';
    const std::string demo_in = enriched ? enrich_input(demos[i].text) : demos[i].text;
    examples += std::to_string(i + 1) + ". " + demo_in + " -> " +
                render_canonical_output(config.kind, demos[i].text, demos[i].spans);
  }

  std::string labels;
  for (std::size_t i = 0; i < example.categories.size(); ++i) {
    if (i) labels += ", ";
    labels += example.categories[i];
  }

  PromptBundle bundle;
  const std::string text = enriched ? enrich_input(example.text) : example.text;
  bundle.rendered_input = input_block(config.task, text, example.aux_text);
  const std::string format = format_block(config.kind, example.categories);
  const std::string notes = notes_block(config.kind, config.task);
  bundle.expected_format_note = "Output Format: " + format + "\n" + notes;
  bundle.system_or_instruction_text = prompts::fill(
      config.prompt_template ? *config.prompt_template : prompts::kDefaultTemplate,
      {{"task_description", std::string(prompts::task_description(config.task))},
       {"format", format},
       {"labels", labels},
       {"examples", examples},
       {"notes", notes},
       {"input", bundle.rendered_input}});
  return bundle;
}

// ---------------------------------------------------------------------------
// Parsers
// ---------------------------------------------------------------------------

/// 2*LCS / (|a| + |b|) over characters; 1 when both are empty.
inline double similarity_ratio(std::string_view a, std::string_view b) {
  const auto oa = utf8::char_offsets(a);
  const auto ob = utf8::char_offsets(b);
  const std::size_t n = oa.size() - 1;
  const std::size_t m = ob.size() - 1;
  if (n + m == 0) return 1.0;
  auto ch = [](std::string_view s, const std::vector<std::size_t>& o, std::size_t i) {
    return s.substr(o[i], o[i + 1] - o[i]);
  };
  std::vector<std::size_t> prev(m + 1, 0);
  std::vector<std::size_t> cur(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    const auto ci = ch(a, oa, i - 1);
    for (std::size_t j = 1; j <= m; ++j) {
      cur[j] = ci == ch(b, ob, j - 1) ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return 2.0 * static_cast<double>(prev[m]) / static_cast<double>(n + m);
}

inline ParseResult parse_tag_output(std::string_view output, std::string_view input,
                                    const std::vector<std::string>& categories,
                                    const ParseOptions& options = {}) {
  const auto scan = spanmatch::running_offset_estimate(output);
  ParseResult result;
  if (scan.items.empty()) {
    if (similarity_ratio(scan.stripped, input) >= options.min_copy_ratio) return result;
    return ParseResult::failure(ParseErrorKind::kNotACopy);
  }
  const std::size_t n = utf8::length(input);
  for (const auto& item : scan.items) {
    ++result.item_count;
    const bool known =
        std::find(categories.begin(), categories.end(), item.category) != categories.end();
    if (!known) ++result.category_errors;
    std::optional<Span> span;
    if (item.text.empty()) {
      if (options.is_zero_length(item.category) && item.estimated_offset <= n) {
        span = Span{item.estimated_offset, item.estimated_offset, item.category};
      }
    } else if (const auto r = spanmatch::locate(
                   {item.text, input, spanmatch::Nearest{std::min(item.estimated_offset, n)}})) {
      span = Span{r->first, r->second, item.category};
    }
    if (!span) {
      ++result.span_content_errors;
      continue;
    }
    if (known) result.spans.push_back(std::move(*span));
  }
  return result;
}

inline ParseResult parse_index_output(std::string_view output, std::string_view input,
                                      const std::vector<std::string>& categories,
                                      const ParseOptions& options = {}) {
  ParseResult result;
  const std::size_t n = utf8::length(input);
  bool any = false;
  std::size_t i = 0;
  auto skip_ws = [&](std::size_t& k) {
    while (k < output.size() && (output[k] == ' ' || output[k] == '\t')) ++k;
  };
  auto number = [&](std::size_t& k) -> std::optional<std::size_t> {
    const std::size_t b = k;
    while (k < output.size() && std::isdigit(static_cast<unsigned char>(output[k]))) ++k;
    if (k == b) return std::nullopt;
    if (k - b > 9) return SIZE_MAX;  // absurdly large; rejected as out of range
    return std::stoul(std::string(output.substr(b, k - b)));
  };
  while ((i = output.find('[', i)) != std::string_view::npos) {
    std::size_t k = i + 1;
    ++i;
    skip_ws(k);
    const auto s = number(k);
    if (!s) continue;
    skip_ws(k);
    if (k >= output.size() || output[k] != ':') continue;
    ++k;
    skip_ws(k);
    const auto e = number(k);
    if (!e) continue;
    skip_ws(k);
    if (k >= output.size() || output[k] != ']') continue;
    ++k;
    skip_ws(k);
    if (k >= output.size() || output[k] != '=') continue;
    ++k;
    skip_ws(k);
    const std::size_t lb = k;
    while (k < output.size() && !is_word_space(output[k]) && output[k] != ',' &&
           output[k] != ';' && output[k] != '[' && output[k] != ']') {
      ++k;
    }
    std::string label(output.substr(lb, k - lb));
    if (label.size() >= 2 && (label.front() == '"' || label.front() == '\'') &&
        label.back() == label.front()) {
      label = label.substr(1, label.size() - 2);
    }
    any = true;
    ++result.item_count;
    i = k;
    const bool known = std::find(categories.begin(), categories.end(), label) != categories.end();
    if (!known) ++result.category_errors;
    const bool range_ok = *s <= *e && *e <= n && (*s < *e || options.is_zero_length(label));
    if (!range_ok) ++result.span_content_errors;
    if (known && range_ok) result.spans.push_back({*s, *e, std::move(label)});
  }
  if (!any) return ParseResult::failure(ParseErrorKind::kNoSpanLines);
  return result;
}

namespace detail {

inline std::optional<nlohmann::json> parse_json(std::string_view s) {
  auto j = nlohmann::json::parse(s.begin(), s.end(), nullptr, false);
  if (j.is_discarded()) return std::nullopt;
  return j;
}

inline std::optional<std::string_view> strip_code_fence(std::string_view s) {
  const std::size_t open = s.find("```");
  if (open == std::string_view::npos) return std::nullopt;
  std::size_t body = s.find('\n', open + 3);
  if (body == std::string_view::npos) return std::nullopt;
  ++body;
  const std::size_t close = s.find("```", body);
  if (close == std::string_view::npos) return s.substr(body);
  return s.substr(body, close - body);
}

// Every [ ... ] substring with balanced brackets outside string literals,
// longest first.
inline std::vector<std::string_view> balanced_arrays(std::string_view s) {
  std::vector<std::string_view> found;
  for (std::size_t open = s.find('['); open != std::string_view::npos;
       open = s.find('[', open + 1)) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t k = open; k < s.size(); ++k) {
      const char c = s[k];
      if (in_string) {
        if (escaped) escaped = false;
        else if (c == '\\') escaped = true;
        else if (c == '"') in_string = false;
        continue;
      }
      if (c == '"') in_string = true;
      else if (c == '[' || c == '{') ++depth;
      else if (c == ']' || c == '}') {
        if (--depth == 0) {
          if (c == ']') found.push_back(s.substr(open, k - open + 1));
          break;
        }
        if (depth < 0) break;
      }
    }
  }
  std::stable_sort(found.begin(), found.end(),
                   [](std::string_view a, std::string_view b) { return a.size() > b.size(); });
  return found;
}

}  // namespace detail

/// JSON array recovery: the output as-is, then inside a code fence, then the
/// longest bracket-balanced array that parses.
inline std::variant<nlohmann::json, ParseErrorKind> salvage_json_array(std::string_view output) {
  bool parsed_something = false;
  if (auto j = detail::parse_json(output)) {
    if (j->is_array()) return *j;
    parsed_something = true;
  }
  if (const auto fenced = detail::strip_code_fence(output)) {
    if (auto j = detail::parse_json(*fenced)) {
      if (j->is_array()) return *j;
      parsed_something = true;
    }
  }
  for (const auto candidate : detail::balanced_arrays(output)) {
    if (auto j = detail::parse_json(candidate); j && j->is_array()) return *j;
  }
  return parsed_something ? ParseErrorKind::kWrongShape : ParseErrorKind::kUnparseable;
}

inline ParseResult parse_match_output(std::string_view output, std::string_view input,
                                      const std::vector<std::string>& categories,
                                      bool use_occurrence, const ParseOptions& options = {}) {
  auto salvaged = salvage_json_array(output);
  if (const auto* err = std::get_if<ParseErrorKind>(&salvaged)) return ParseResult::failure(*err);
  const auto& items = std::get<nlohmann::json>(salvaged);

  ParseResult result;
  for (const auto& item : items) {
    ++result.item_count;
    std::optional<std::string> text;
    std::optional<std::string> label;
    std::optional<std::size_t> occurrence;
    if (item.is_object()) {
      if (const auto t = item.find("text"); t != item.end() && t->is_string()) {
        text = t->get<std::string>();
      }
      if (const auto l = item.find("label"); l != item.end() && l->is_string()) {
        label = l->get<std::string>();
      }
      if (const auto o = item.find("occurrence"); o != item.end()) {
        if (o->is_number_unsigned() && o->get<std::uint64_t>() >= 1) {
          occurrence = o->get<std::uint64_t>();
        } else if (o->is_number_integer() && o->get<std::int64_t>() >= 1) {
          occurrence = static_cast<std::size_t>(o->get<std::int64_t>());
        } else if (o->is_string()) {
          const auto& s = o->get_ref<const std::string&>();
          if (!s.empty() && s.size() < 10 &&
              std::all_of(s.begin(), s.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }) &&
              std::stoul(s) >= 1) {
            occurrence = std::stoul(s);
          }
        }
      }
    }
    const bool known =
        label && std::find(categories.begin(), categories.end(), *label) != categories.end();
    if (!known) ++result.category_errors;

    std::optional<spanmatch::CharRange> range;
    if (text && !text->empty()) {
      if (use_occurrence && occurrence) {
        range = spanmatch::locate({*text, input, spanmatch::Occurrence{*occurrence}});
      }
      // A wrong ordinal still names real input text: fall back to the first occurrence.
      if (!range) range = spanmatch::locate({*text, input, spanmatch::Leftmost{}});
    }
    if (!range) {
      ++result.span_content_errors;
      continue;
    }
    if (!known) continue;
    Span s{range->first, range->second, *label};
    if (options.is_zero_length(s.category)) s.end = s.start;
    result.spans.push_back(std::move(s));
  }
  return result;
}

/// Dispatches to the parser for `config.kind`.
inline ParseResult parse_output(const StrategyConfig& config, std::string_view output,
                                const LabeledExample& example) {
  const ParseOptions options = parse_options_for(example.task);
  switch (config.kind) {
    case StrategyKind::kTag: return parse_tag_output(output, example.text, example.categories, options);
    case StrategyKind::kIndex:
    case StrategyKind::kIndexEnriched:
      return parse_index_output(output, example.text, example.categories, options);
    case StrategyKind::kMatch:
    case StrategyKind::kLogitMatch:
      return parse_match_output(output, example.text, example.categories, false, options);
    case StrategyKind::kMatchOcc:
    case StrategyKind::kLogitMatchOcc:
      return parse_match_output(output, example.text, example.categories, true, options);
  }
  return ParseResult::failure(ParseErrorKind::kUnparseable);
}

}  // namespace spanlab
