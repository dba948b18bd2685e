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

// Locating generated span text inside the input. Matching is exact: no case
// folding, no whitespace normalization.

#include <cstddef>
#include <cstdlib>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "spanlab/utf8.hpp"

namespace spanlab::spanmatch {

struct Leftmost {};
struct Occurrence {
  std::size_t n = 1;  // 1-based
};
struct Nearest {
  std::size_t estimate = 0;  // character offset
};

using LocateMode = std::variant<Leftmost, Occurrence, Nearest>;

struct LocateRequest {
  std::string_view needle;
  std::string_view haystack;
  LocateMode mode = Leftmost{};
};

/// Character range [first, second) of a match.
using CharRange = std::pair<std::size_t, std::size_t>;

/// Character start of every exact occurrence of `needle` (overlapping
/// occurrences included), in increasing order.
inline std::vector<std::size_t> occurrences(std::string_view needle, std::string_view haystack) {
  std::vector<std::size_t> starts;
  if (needle.empty()) return starts;
  const auto offsets = utf8::char_offsets(haystack);
  // offsets is sorted; walk it alongside the byte-level search.
  std::size_t ci = 0;
  for (std::size_t pos = haystack.find(needle); pos != std::string_view::npos;
       pos = haystack.find(needle, pos + 1)) {
    while (ci < offsets.size() && offsets[ci] < pos) ++ci;
    if (ci < offsets.size() && offsets[ci] == pos) starts.push_back(ci);
  }
  return starts;
}

inline std::optional<CharRange> locate(const LocateRequest& request) {
  if (request.needle.empty()) {
    throw std::invalid_argument("locate: needle must be non-empty");
  }
  const auto starts = occurrences(request.needle, request.haystack);
  if (starts.empty()) return std::nullopt;
  const std::size_t len = utf8::length(request.needle);

  std::size_t chosen = starts.front();
  if (const auto* occ = std::get_if<Occurrence>(&request.mode)) {
    if (occ->n == 0) throw std::invalid_argument("locate: occurrence index is 1-based");
    if (occ->n > starts.size()) return std::nullopt;
    chosen = starts[occ->n - 1];
  } else if (const auto* near = std::get_if<Nearest>(&request.mode)) {
    std::size_t best_dist = static_cast<std::size_t>(-1);
    for (const std::size_t s : starts) {
      const std::size_t dist = s > near->estimate ? s - near->estimate : near->estimate - s;
      // Strict comparison keeps the smaller start on ties.
      if (dist < best_dist) {
        best_dist = dist;
        chosen = s;
      }
    }
  }
  return CharRange{chosen, chosen + len};
}

/// Markup recognized by the tag parser.
struct TagGrammar {
  std::string open_prefix = "<entity type=\"";
  std::string open_suffix = "\">";
  std::string close = "</entity>";
};

struct TaggedItem {
  std::string text;
  std::string category;
  std::size_t estimated_offset = 0;  // characters of tag-free output before the item

  bool operator==(const TaggedItem&) const = default;
};

struct TagScan {
  std::vector<TaggedItem> items;
  // False when an unclosed, nested, stray or malformed tag stopped the scan.
  bool balanced = true;
  // Output with every recognized tag removed (up to the point the scan stopped).
  std::string stripped;
};

/// Walks a tagged output left to right, estimating each item's position as
/// the number of characters in the tag-stripped output that precede it.
inline TagScan running_offset_estimate(std::string_view output, const TagGrammar& grammar = {}) {
  TagScan scan;
  std::size_t offset = 0;
  std::size_t pos = 0;
  auto keep = [&](std::string_view piece) {
    offset += utf8::length(piece);
    scan.stripped.append(piece);
  };

  while (pos < output.size()) {
    const std::size_t open = output.find(grammar.open_prefix, pos);
    const std::size_t close = output.find(grammar.close, pos);
    if (open == std::string_view::npos && close == std::string_view::npos) break;
    if (close < open) {
      // Closing tag without an opening one.
      keep(output.substr(pos, close - pos));
      scan.balanced = false;
      return scan;
    }
    keep(output.substr(pos, open - pos));
    const std::size_t label_begin = open + grammar.open_prefix.size();
    const std::size_t label_end = output.find(grammar.open_suffix, label_begin);
    if (label_end == std::string_view::npos) {
      scan.balanced = false;
      return scan;
    }
    const std::size_t content_begin = label_end + grammar.open_suffix.size();
    const std::size_t content_end = output.find(grammar.close, content_begin);
    const std::size_t nested = output.find(grammar.open_prefix, content_begin);
    if (content_end == std::string_view::npos || nested < content_end) {
      scan.balanced = false;
      return scan;
    }
    TaggedItem item;
    item.category = std::string(output.substr(label_begin, label_end - label_begin));
    item.text = std::string(output.substr(content_begin, content_end - content_begin));
    item.estimated_offset = offset;
    keep(item.text);
    scan.items.push_back(std::move(item));
    pos = content_end + grammar.close.size();
  }
  if (pos < output.size()) keep(output.substr(pos));
  return scan;
}

}  // namespace spanlab::spanmatch
