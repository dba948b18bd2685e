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

// Conditional pattern lookup: random word sequences, a word-level pattern
// and one adjacency constraint. Gold spans come from the regex oracle.

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <iterator>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "spanlab/core.hpp"
#include "spanlab/cpl_words.hpp"
#include "spanlab/random.hpp"

namespace spanlab::cpl {

inline constexpr std::string_view kLabel = "MATCH";

enum class ConstraintKind { kPrecededBy, kNotPrecededBy, kFollowedBy, kNotFollowedBy };

inline std::string_view to_string(ConstraintKind k) {
  switch (k) {
    case ConstraintKind::kPrecededBy: return "preceded_by";
    case ConstraintKind::kNotPrecededBy: return "not_preceded_by";
    case ConstraintKind::kFollowedBy: return "followed_by";
    case ConstraintKind::kNotFollowedBy: return "not_followed_by";
  }
  return "preceded_by";
}

inline std::optional<ConstraintKind> parse_constraint_kind(std::string_view s) {
  for (auto k : {ConstraintKind::kPrecededBy, ConstraintKind::kNotPrecededBy,
                 ConstraintKind::kFollowedBy, ConstraintKind::kNotFollowedBy}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

struct CplSpec {
  std::string pattern;  // e.g. "\w+ dry"
  ConstraintKind constraint_kind = ConstraintKind::kNotPrecededBy;
  std::string constraint_word;
  std::uint64_t seed = 0;
  std::size_t approx_length = 100;

  bool operator==(const CplSpec&) const = default;
};

inline nlohmann::ordered_json to_json(const CplSpec& s) {
  return {{"pattern", s.pattern},
          {"constraint_kind", std::string(to_string(s.constraint_kind))},
          {"constraint_word", s.constraint_word},
          {"seed", s.seed},
          {"approx_length", s.approx_length}};
}

inline CplSpec spec_from_json(const nlohmann::json& j) {
  CplSpec s;
  s.pattern = j.at("pattern").get<std::string>();
  const auto kind = parse_constraint_kind(j.at("constraint_kind").get<std::string>());
  if (!kind) throw Error("unknown constraint_kind in cpl spec");
  s.constraint_kind = *kind;
  s.constraint_word = j.at("constraint_word").get<std::string>();
  s.seed = j.value("seed", std::uint64_t{0});
  s.approx_length = j.value("approx_length", std::size_t{100});
  return s;
}

inline std::string instruction(const CplSpec& spec) {
  std::string relation;
  switch (spec.constraint_kind) {
    case ConstraintKind::kPrecededBy: relation = "are preceded by"; break;
    case ConstraintKind::kNotPrecededBy: relation = "are not preceded by"; break;
    case ConstraintKind::kFollowedBy: relation = "are followed by"; break;
    case ConstraintKind::kNotFollowedBy: relation = "are not followed by"; break;
  }
  return "Find all sequences matching '" + spec.pattern + "' that " + relation + " '" +
         spec.constraint_word + "'";
}

namespace detail {

inline bool is_word_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

// The word token ending right before `pos` / starting right after `pos`,
// skipping spaces. Empty at the text edges.
inline std::string_view word_before(std::string_view text, std::size_t pos) {
  std::size_t e = pos;
  while (e > 0 && !is_word_char(text[e - 1])) --e;
  std::size_t b = e;
  while (b > 0 && is_word_char(text[b - 1])) --b;
  return text.substr(b, e - b);
}

inline std::string_view word_after(std::string_view text, std::size_t pos) {
  std::size_t b = pos;
  while (b < text.size() && !is_word_char(text[b])) ++b;
  std::size_t e = b;
  while (e < text.size() && is_word_char(text[e])) ++e;
  return text.substr(b, e - b);
}

}  // namespace detail

/// Raw pattern matches at word boundaries, leftmost and non-overlapping,
/// as [start, end) character ranges. The text is expected to be ASCII.
inline std::vector<std::pair<std::size_t, std::size_t>> raw_matches(std::string_view text,
                                                                    const std::string& pattern) {
  std::regex re;
  try {
    re = std::regex("\\b(?:" + pattern + ")\\b", std::regex::ECMAScript);
  } catch (const std::regex_error& e) {
    throw Error("invalid cpl pattern '" + pattern + "': " + e.what());
  }
  std::vector<std::pair<std::size_t, std::size_t>> out;
  const std::string s(text);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), re); it != std::sregex_iterator(); ++it) {
    const auto pos = static_cast<std::size_t>(it->position(0));
    const auto len = static_cast<std::size_t>(it->length(0));
    if (len > 0) out.emplace_back(pos, pos + len);
  }
  return out;
}

inline bool satisfies(std::string_view text, std::size_t start, std::size_t end,
                      const CplSpec& spec) {
  switch (spec.constraint_kind) {
    case ConstraintKind::kPrecededBy: return detail::word_before(text, start) == spec.constraint_word;
    case ConstraintKind::kNotPrecededBy: return detail::word_before(text, start) != spec.constraint_word;
    case ConstraintKind::kFollowedBy: return detail::word_after(text, end) == spec.constraint_word;
    case ConstraintKind::kNotFollowedBy: return detail::word_after(text, end) != spec.constraint_word;
  }
  return false;
}

inline std::vector<Span> cpl_oracle(std::string_view text, const CplSpec& spec) {
  std::vector<Span> spans;
  for (const auto& [b, e] : raw_matches(text, spec.pattern)) {
    if (satisfies(text, b, e, spec)) spans.push_back({b, e, std::string(kLabel)});
  }
  return spans;
}

namespace detail {

inline std::string join(const std::vector<std::string_view>& words) {
  std::string s;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) s += ' ';
    s += words[i];
  }
  return s;
}

inline std::string_view random_word(Rng& rng) {
  return kCommonWords[rng.below(std::size(kCommonWords))];
}

inline std::string_view other_word(Rng& rng, std::string_view avoid) {
  for (;;) {
    const auto w = random_word(rng);
    if (w != avoid) return w;
  }
}

}  // namespace detail

/// A random spec of the form `\w+ W` or `W \w+` with one constraint.
inline CplSpec random_spec(std::uint64_t seed, std::size_t approx_length = 100) {
  Rng rng(mix_seed(seed, 1));
  CplSpec spec;
  spec.seed = seed;
  spec.approx_length = approx_length;
  const auto anchor = detail::random_word(rng);
  spec.pattern = rng.chance(0.5) ? "\\w+ " + std::string(anchor) : std::string(anchor) + " \\w+";
  spec.constraint_kind = static_cast<ConstraintKind>(rng.below(4));
  spec.constraint_word = std::string(detail::other_word(rng, anchor));
  return spec;
}

/// Deterministic per spec.seed; always at least one gold span.
inline LabeledExample generate_cpl_example(const CplSpec& spec, std::string id = "cpl") {
  if (spec.approx_length < 10) throw Error("cpl approx_length must be at least 10");
  Rng rng(mix_seed(spec.seed, 2));
  const std::size_t tol = spec.approx_length / 10;
  const std::size_t n =
      spec.approx_length - tol + static_cast<std::size_t>(rng.below(2 * tol + 1));

  std::vector<std::string_view> words(n);
  for (auto& w : words) w = detail::random_word(rng);

  // Patterns of the shape "\w+ W" or "W \w+" get planted instances; other
  // patterns rely on the random text and the retry loop.
  std::optional<std::string> anchor;
  bool anchor_last = false;
  if (spec.pattern.rfind("\\w+ ", 0) == 0) {
    anchor = spec.pattern.substr(4);
    anchor_last = true;
  } else if (spec.pattern.size() > 4 && spec.pattern.substr(spec.pattern.size() - 4) == " \\w+") {
    anchor = spec.pattern.substr(0, spec.pattern.size() - 4);
  }
  const bool before = spec.constraint_kind == ConstraintKind::kPrecededBy ||
                      spec.constraint_kind == ConstraintKind::kNotPrecededBy;
  const bool positive = spec.constraint_kind == ConstraintKind::kPrecededBy ||
                        spec.constraint_kind == ConstraintKind::kFollowedBy;

  // Plants the two-word match at words[i], words[i+1], with the constraint
  // word either honored (`satisfy`) or violated next to it.
  auto plant = [&](std::size_t i, bool satisfy) {
    words[anchor_last ? i + 1 : i] = *anchor;
    words[anchor_last ? i : i + 1] = detail::other_word(rng, *anchor);
    const std::size_t k = before ? i - 1 : i + 2;
    const bool put_word = satisfy == positive;
    words[k] = put_word ? std::string_view(spec.constraint_word)
                        : detail::other_word(rng, spec.constraint_word);
  };
  auto random_slot = [&]() { return 1 + static_cast<std::size_t>(rng.below(n - 3)); };

  if (anchor) {
    const std::size_t decoys = rng.below(3);
    for (std::size_t d = 0; d < decoys; ++d) plant(random_slot(), false);
    const std::size_t hits = 1 + rng.below(3);
    for (std::size_t h = 0; h < hits; ++h) plant(random_slot(), true);
  }

  LabeledExample ex;
  ex.id = std::move(id);
  ex.task = Task::kCpl;
  ex.lang = "en";
  ex.categories = {std::string(kLabel)};
  ex.aux_text = instruction(spec);
  for (int attempt = 0;; ++attempt) {
    ex.text = detail::join(words);
    ex.gold = cpl_oracle(ex.text, spec);
    if (!ex.gold.empty()) break;
    if (!anchor || attempt > 1000) {
      throw Error("cpl pattern '" + spec.pattern + "' produced no match for seed " +
                  std::to_string(spec.seed));
    }
    plant(random_slot(), true);
  }
  return ex;
}

/// `count` examples with independent random specs derived from `seed`.
inline std::vector<std::pair<LabeledExample, CplSpec>> generate_cpl_dataset(
    std::size_t count, std::uint64_t seed, std::size_t approx_length = 100) {
  std::vector<std::pair<LabeledExample, CplSpec>> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const CplSpec spec = random_spec(mix_seed(seed, i), approx_length);
    char id[32];
    std::snprintf(id, sizeof id, "cpl-%05zu", i);
    out.emplace_back(generate_cpl_example(spec, id), spec);
  }
  return out;
}

}  // namespace spanlab::cpl
