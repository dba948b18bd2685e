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

// LogitMatch constrained decoding.
//
// The decoder emits a JSON list of span objects. While the value of a "text"
// field is being decoded, only tokens that keep the value a verbatim
// contiguous piece of the input are allowed:
//
//   DEFAULT  free decoding (or the fixed JSON schema when one is active) until
//            the stream ends with  "text" : "
//   SELECT   the first span token must be a prefix of the input at some
//            position
//   COPY     every further token continues the copy at one of the live
//            candidate positions, or closes the string with '"' (optionally
//            followed by more JSON in the same token)
//
// All matching happens against the JSON-escaped input, because the decoded
// bytes sit inside a JSON string literal. Spans start and end only on
// escaped-character boundaries.
//
// Tokens are processed byte by byte; a token is allowed iff every one of its
// bytes is legal from the current state. allowed_tokens() computes that set
// with one pruned walk over the vocabulary trie.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "spanlab/core.hpp"
#include "spanlab/field_opener.hpp"
#include "spanlab/strategies.hpp"
#include "spanlab/tokenmodel.hpp"
#include "spanlab/utf8.hpp"

namespace spanlab::logitmatch {

enum class Mode : std::uint8_t { kDefault, kSelect, kCopy };

inline std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::kDefault: return "DEFAULT";
    case Mode::kSelect: return "SELECT";
    case Mode::kCopy: return "COPY";
  }
  return "DEFAULT";
}

/// Fixed JSON schema enforced alongside the span constraint (-S variants).
enum class SchemaKind { kNone, kPlain, kWithOccurrence };

inline std::string_view to_string(SchemaKind kind) {
  switch (kind) {
    case SchemaKind::kNone: return "none";
    case SchemaKind::kPlain: return "plain";
    case SchemaKind::kWithOccurrence: return "occurrence";
  }
  return "none";
}

inline std::optional<SchemaKind> parse_schema_kind(std::string_view name) {
  for (auto k : {SchemaKind::kNone, SchemaKind::kPlain, SchemaKind::kWithOccurrence}) {
    if (to_string(k) == name) return k;
  }
  return std::nullopt;
}

struct SchemaSpec {
  SchemaKind kind = SchemaKind::kNone;
  std::vector<std::string> escaped_categories;

  bool with_occurrence() const { return kind == SchemaKind::kWithOccurrence; }
};

// Longest whitespace run accepted between schema tokens.
inline constexpr std::uint8_t kMaxWhitespaceRun = 32;
// Occurrence values are integers in [1, kMaxOccurrence].
inline constexpr int kMaxOccurrence = 99;

// ---------------------------------------------------------------------------
// SchemaCursor
// ---------------------------------------------------------------------------

/// Character-level automaton for
///   [ {"text": <string>, "label": <category>[, "occurrence": <1..99>]} , ... ]
/// with optional whitespace between tokens. The text value itself is not
/// consumed here: the cursor parks in kTextValue until the span is closed.
class SchemaCursor {
 public:
  enum class Phase : std::uint8_t {
    kArrayOpen, kItemOrEnd, kObjOpen, kTextKey, kTextColon, kTextQuote, kTextValue,
    kLabelComma, kLabelKey, kLabelColon, kLabelQuote, kLabelValue,
    kOccComma, kOccKey, kOccColon, kOccValue, kObjClose, kItemSep, kDone,
  };

  Phase phase() const { return phase_; }
  bool done() const { return phase_ == Phase::kDone; }

  /// Consumes one byte. Returns false (and leaves the cursor unspecified)
  /// when the byte is not allowed.
  bool feed(char c, const SchemaSpec& spec) {
    switch (phase_) {
      case Phase::kItemOrEnd:
        if (utf8::is_json_whitespace(c)) return take_whitespace();
        if (c == '{') return go(Phase::kTextKey);
        if (c == ']') return go(Phase::kDone);
        return false;
      case Phase::kItemSep:
        if (utf8::is_json_whitespace(c)) return take_whitespace();
        if (c == ',') return go(Phase::kObjOpen);
        if (c == ']') return go(Phase::kDone);
        return false;
      case Phase::kLabelValue: return feed_label(c, spec);
      case Phase::kOccValue:
        if (c >= '0' && c <= '9') {
          const int v = occurrence_ * 10 + (c - '0');
          if (v == 0 || v > kMaxOccurrence) return false;
          occurrence_ = static_cast<std::uint8_t>(v);
          return true;
        }
        if (occurrence_ == 0) return utf8::is_json_whitespace(c) && take_whitespace();
        go(Phase::kObjClose);
        return feed(c, spec);
      case Phase::kTextValue:
      case Phase::kDone:
        return false;
      default: return feed_literal(c, spec);
    }
  }

  /// The span constraint closed the text value.
  void close_text_value() {
    if (phase_ != Phase::kTextValue) throw std::logic_error("schema cursor not in text value");
    go(Phase::kLabelComma);
  }

  bool operator==(const SchemaCursor&) const = default;

 private:
  static std::string_view literal(Phase p) {
    switch (p) {
      case Phase::kArrayOpen: return "[";
      case Phase::kObjOpen: return "{";
      case Phase::kTextKey: return "\"text\"";
      case Phase::kTextColon: return ":";
      case Phase::kTextQuote: return "\"";
      case Phase::kLabelComma: return ",";
      case Phase::kLabelKey: return "\"label\"";
      case Phase::kLabelColon: return ":";
      case Phase::kLabelQuote: return "\"";
      case Phase::kOccComma: return ",";
      case Phase::kOccKey: return "\"occurrence\"";
      case Phase::kOccColon: return ":";
      case Phase::kObjClose: return "}";
      default: return "";
    }
  }

  static Phase after_literal(Phase p, const SchemaSpec& spec) {
    switch (p) {
      case Phase::kArrayOpen: return Phase::kItemOrEnd;
      case Phase::kObjOpen: return Phase::kTextKey;
      case Phase::kTextKey: return Phase::kTextColon;
      case Phase::kTextColon: return Phase::kTextQuote;
      case Phase::kTextQuote: return Phase::kTextValue;
      case Phase::kLabelComma: return Phase::kLabelKey;
      case Phase::kLabelKey: return Phase::kLabelColon;
      case Phase::kLabelColon: return Phase::kLabelQuote;
      case Phase::kLabelQuote: return Phase::kLabelValue;
      case Phase::kOccComma: return Phase::kOccKey;
      case Phase::kOccKey: return Phase::kOccColon;
      case Phase::kOccColon: return Phase::kOccValue;
      case Phase::kObjClose: return Phase::kItemSep;
      default: (void)spec; return Phase::kDone;
    }
  }

  bool go(Phase p) {
    phase_ = p;
    matched_ = 0;
    whitespace_ = 0;
    occurrence_ = 0;
    label_.clear();
    return true;
  }

  bool take_whitespace() {
    if (whitespace_ >= kMaxWhitespaceRun) return false;
    ++whitespace_;
    return true;
  }

  bool feed_literal(char c, const SchemaSpec& spec) {
    const std::string_view lit = literal(phase_);
    if (matched_ == 0 && utf8::is_json_whitespace(c)) return take_whitespace();
    if (c != lit[matched_]) return false;
    if (++matched_ == lit.size()) go(after_literal(phase_, spec));
    return true;
  }

  bool feed_label(char c, const SchemaSpec& spec) {
    const auto& cats = spec.escaped_categories;
    if (c == '"' && std::find(cats.begin(), cats.end(), label_) != cats.end()) {
      return go(spec.with_occurrence() ? Phase::kOccComma : Phase::kObjClose);
    }
    label_.push_back(c);
    for (const auto& cat : cats) {
      if (cat.size() >= label_.size() && std::string_view(cat).substr(0, label_.size()) == label_) {
        return true;
      }
    }
    return false;
  }

  Phase phase_ = Phase::kArrayOpen;
  std::uint8_t matched_ = 0;
  std::uint8_t whitespace_ = 0;
  std::uint8_t occurrence_ = 0;
  std::string label_;
};

// ---------------------------------------------------------------------------
// DecodeState
// ---------------------------------------------------------------------------

/// A live hypothesis: the span being copied starts at byte `start` of the
/// escaped input and `offset` bytes of it have been decoded.
struct Candidate {
  std::uint32_t start = 0;
  std::uint32_t offset = 0;

  std::uint32_t position() const { return start + offset; }
  auto operator<=>(const Candidate&) const = default;
};

/// Per-sequence decoder state. Invariants:
///   mode == kDefault => candidates empty
///   mode == kSelect  => candidates empty (every span start is live)
///   mode == kCopy    => candidates non-empty, all with the same offset
struct DecodeState {
  Mode mode = Mode::kDefault;
  field_opener::State opener = field_opener::kStart;
  std::optional<SchemaCursor> schema;
  std::vector<Candidate> candidates;
  std::shared_ptr<const SchemaSpec> spec;
  // Empty input without a schema: nothing can be copied, so masking is off.
  bool passthrough = false;

  bool schema_active() const { return schema && !schema->done(); }
  bool constrained() const { return mode != Mode::kDefault || schema_active(); }

  bool operator==(const DecodeState& o) const {
    return mode == o.mode && opener == o.opener && schema == o.schema &&
           candidates == o.candidates && passthrough == o.passthrough;
  }
};

/// Either every token (`all`) or an explicit ascending list.
struct MaskResponse {
  bool all = false;
  std::vector<TokenId> allowed;

  bool permits(TokenId id) const {
    return all || std::binary_search(allowed.begin(), allowed.end(), id);
  }
  std::size_t count(std::size_t vocab_size) const { return all ? vocab_size : allowed.size(); }

  bool operator==(const MaskResponse&) const = default;
};

inline DecodeState init_state(std::string_view input_text, SchemaKind schema = SchemaKind::kNone,
                              const std::vector<std::string>& categories = {}) {
  DecodeState state;
  if (schema != SchemaKind::kNone) {
    if (input_text.empty()) throw Error("logitmatch: empty input cannot produce spans");
    if (categories.empty()) throw Error("logitmatch: structured output needs categories");
    auto spec = std::make_shared<SchemaSpec>();
    spec->kind = schema;
    for (const auto& c : categories) spec->escaped_categories.push_back(utf8::json_escape(c));
    state.spec = std::move(spec);
    state.schema.emplace();
  } else if (input_text.empty()) {
    state.passthrough = true;
  }
  return state;
}

/// Rejects vocabularies where some byte cannot be spelled; without byte
/// fallback the mask could become empty mid-span.
inline void require_byte_fallback(const TokenVocab& vocab) {
  if (!vocab.has_byte_fallback()) {
    throw Error("logitmatch: vocabulary lacks single-byte tokens for every byte value");
  }
}

namespace detail {

inline bool any_at_boundary(const std::vector<Candidate>& cands, const SuffixIndex& index) {
  return std::any_of(cands.begin(), cands.end(),
                     [&](const Candidate& c) { return index.is_boundary(c.position()); });
}

inline void close_span(DecodeState& s) {
  s.mode = Mode::kDefault;
  s.candidates.clear();
  s.opener = field_opener::kStart;
  if (s.schema_active()) s.schema->close_text_value();
}

inline bool step_byte(DecodeState& s, char c, const SuffixIndex& index) {
  const std::string& text = index.text();
  switch (s.mode) {
    case Mode::kDefault: {
      bool opened = false;
      if (s.schema_active()) {
        if (!s.schema->feed(c, *s.spec)) return false;
        opened = s.schema->phase() == SchemaCursor::Phase::kTextValue;
      } else {
        s.opener = field_opener::step(s.opener, c);
        opened = s.opener == field_opener::kAccept;
        if (opened) s.opener = field_opener::kStart;
      }
      if (opened) s.mode = Mode::kSelect;
      return true;
    }
    case Mode::kSelect: {
      std::vector<Candidate> next;
      for (const std::uint32_t p : index.span_starts()) {
        if (text[p] == c) next.push_back({p, 1});
      }
      if (next.empty()) return false;
      s.candidates = std::move(next);
      s.mode = Mode::kCopy;
      return true;
    }
    case Mode::kCopy: {
      if (c == '"' && any_at_boundary(s.candidates, index)) {
        close_span(s);
        return true;
      }
      std::vector<Candidate> next;
      for (const auto& cand : s.candidates) {
        const std::uint32_t p = cand.position();
        if (p < text.size() && text[p] == c) next.push_back({cand.start, cand.offset + 1});
      }
      if (next.empty()) return false;
      s.candidates = std::move(next);
      return true;
    }
  }
  return false;
}

// State carried through the trie walk outside of span content.
struct FreeCursor {
  field_opener::State opener = field_opener::kStart;
  std::optional<SchemaCursor> schema;

  bool schema_active() const { return schema && !schema->done(); }
};

class MaskWalker {
 public:
  MaskWalker(const TokenVocab& vocab, const SuffixIndex& index, const SchemaSpec* spec)
      : trie_(vocab.trie()), order_(trie_.order()), index_(index), spec_(spec) {}

  std::vector<TokenId> take() {
    std::sort(out_.begin(), out_.end());
    out_.erase(std::unique(out_.begin(), out_.end()), out_.end());
    return std::move(out_);
  }

  void free_text(std::uint32_t node, const FreeCursor& cur) {
    for (const auto& [b, c] : trie_.node(node).children) {
      FreeCursor next = cur;
      bool opened = false;
      if (next.schema_active()) {
        if (!next.schema->feed(static_cast<char>(b), *spec_)) continue;
        opened = next.schema->phase() == SchemaCursor::Phase::kTextValue;
      } else {
        next.opener = field_opener::step(next.opener, static_cast<char>(b));
        opened = next.opener == field_opener::kAccept;
        if (opened) next.opener = field_opener::kStart;
      }
      add_own(c);
      if (opened) {
        std::vector<std::uint32_t> starts(index_.span_starts().begin(),
                                          index_.span_starts().end());
        span_text(c, starts, 0, next);
      } else {
        continue_free(c, next);
      }
    }
  }

  // `positions` are the current byte positions of the live candidates.
  void span_text(std::uint32_t node, const std::vector<std::uint32_t>& positions,
                 std::size_t content, const FreeCursor& after) {
    const std::string& text = index_.text();
    if (content > 0 && std::any_of(positions.begin(), positions.end(),
                                   [&](std::uint32_t p) { return index_.is_boundary(p); })) {
      const std::uint32_t q = trie_.child(node, '"');
      if (q != VocabTrie::kNone) {
        FreeCursor closed = after;
        closed.opener = field_opener::kStart;
        if (closed.schema_active()) closed.schema->close_text_value();
        add_own(q);
        continue_free(q, closed);
      }
    }
    std::vector<std::pair<unsigned char, std::uint32_t>> moves;
    for (const std::uint32_t p : positions) {
      if (p < text.size()) moves.emplace_back(static_cast<unsigned char>(text[p]), p + 1);
    }
    std::sort(moves.begin(), moves.end());
    std::vector<std::uint32_t> group;
    for (std::size_t i = 0; i < moves.size();) {
      const unsigned char b = moves[i].first;
      group.clear();
      for (; i < moves.size() && moves[i].first == b; ++i) group.push_back(moves[i].second);
      const std::uint32_t c = trie_.child(node, b);
      if (c == VocabTrie::kNone) continue;
      add_own(c);
      span_text(c, group, content + 1, after);
    }
  }

 private:
  void continue_free(std::uint32_t node, const FreeCursor& cur) {
    if (!cur.schema_active() && !((trie_.node(node).opener_mask >> cur.opener) & 1U)) {
      // Nothing below can open a text field: the whole subtree is free.
      const auto& n = trie_.node(node);
      out_.insert(out_.end(), order_.begin() + n.own_end, order_.begin() + n.end);
      return;
    }
    free_text(node, cur);
  }

  void add_own(std::uint32_t node) {
    const auto& n = trie_.node(node);
    out_.insert(out_.end(), order_.begin() + n.own_begin, order_.begin() + n.own_end);
  }

  const VocabTrie& trie_;
  const std::vector<TokenId>& order_;
  const SuffixIndex& index_;
  const SchemaSpec* spec_;
  std::vector<TokenId> out_;
};

}  // namespace detail

/// The set of tokens that may be sampled next.
inline MaskResponse allowed_tokens(const DecodeState& state, const TokenVocab& vocab,
                                   const SuffixIndex& index) {
  MaskResponse response;
  if (state.passthrough) {
    response.all = true;
    return response;
  }
  const auto& trie = vocab.trie();
  detail::MaskWalker walker(vocab, index, state.spec.get());
  detail::FreeCursor cursor{state.opener, state.schema};

  switch (state.mode) {
    case Mode::kDefault:
      if (!state.schema_active() &&
          !((trie.node(VocabTrie::kRoot).opener_mask >> state.opener) & 1U)) {
        response.all = true;
        return response;
      }
      walker.free_text(VocabTrie::kRoot, cursor);
      break;
    case Mode::kSelect: {
      std::vector<std::uint32_t> starts(index.span_starts().begin(), index.span_starts().end());
      walker.span_text(VocabTrie::kRoot, starts, 0, cursor);
      break;
    }
    case Mode::kCopy: {
      std::vector<std::uint32_t> positions;
      for (const auto& c : state.candidates) positions.push_back(c.position());
      std::sort(positions.begin(), positions.end());
      positions.erase(std::unique(positions.begin(), positions.end()), positions.end());
      walker.span_text(VocabTrie::kRoot, positions, state.candidates.front().offset, cursor);
      break;
    }
  }
  response.allowed = walker.take();
  if (state.mode == Mode::kDefault && !state.schema_active()) {
    // Control tokens (end of sequence) stay available in free text.
    for (const TokenId id : vocab.special_ids()) response.allowed.push_back(id);
    std::sort(response.allowed.begin(), response.allowed.end());
    if (response.allowed.size() == vocab.size()) {
      response.all = true;
      response.allowed.clear();
    }
  }
  return response;
}

/// Feeds `token` through the state machine. Throws std::logic_error when the
/// token is not in allowed_tokens(state): the mask must be applied before
/// sampling.
inline DecodeState advance(DecodeState state, TokenId token, const TokenVocab& vocab,
                           const SuffixIndex& index) {
  if (!vocab.contains(token)) {
    throw std::out_of_range("logitmatch: token id " + std::to_string(token) + " outside vocabulary");
  }
  if (state.passthrough) return state;
  if (vocab.is_special(token)) {
    if (state.constrained()) {
      throw std::logic_error("logitmatch: control token " + std::to_string(token) +
                             " while the output is constrained");
    }
    return state;
  }
  for (const char c : vocab.bytes(token)) {
    if (!detail::step_byte(state, c, index)) {
      throw std::logic_error("logitmatch: token " + std::to_string(token) +
                             " is not allowed in " + std::string(to_string(state.mode)) + " mode");
    }
  }
  return state;
}

/// Non-throwing variant of advance(): nullopt when the token is disallowed.
inline std::optional<DecodeState> try_advance(DecodeState state, TokenId token,
                                              const TokenVocab& vocab, const SuffixIndex& index) {
  if (!vocab.contains(token)) return std::nullopt;
  if (state.passthrough) return state;
  if (vocab.is_special(token)) {
    if (state.constrained()) return std::nullopt;
    return state;
  }
  for (const char c : vocab.bytes(token)) {
    if (!detail::step_byte(state, c, index)) return std::nullopt;
  }
  return state;
}

/// Post-hoc span recovery for LogitMatch outputs. Occurrence fields are used
/// when present. For genuinely constrained outputs span_content_errors is 0.
inline ParseResult extract_spans_from_constrained_output(std::string_view output_text,
                                                         std::string_view input_text,
                                                         const std::vector<std::string>& categories,
                                                         const ParseOptions& options = {}) {
  return parse_match_output(output_text, input_text, categories, /*use_occurrence=*/true, options);
}

// ---------------------------------------------------------------------------
// Session / MaskServer
// ---------------------------------------------------------------------------

/// One decode sequence: shared vocabulary, per-input index, owned state.
class Session {
 public:
  Session(std::shared_ptr<const TokenVocab> vocab, std::string_view input, SchemaKind schema,
          const std::vector<std::string>& categories)
      : vocab_(std::move(vocab)), index_(input), state_(init_state(input, schema, categories)) {
    require_byte_fallback(*vocab_);
  }

  MaskResponse allowed() const { return allowed_tokens(state_, *vocab_, index_); }
  void advance(TokenId token) { state_ = logitmatch::advance(std::move(state_), token, *vocab_, index_); }

  const DecodeState& state() const { return state_; }
  const SuffixIndex& index() const { return index_; }
  const TokenVocab& vocab() const { return *vocab_; }

 private:
  std::shared_ptr<const TokenVocab> vocab_;
  SuffixIndex index_;
  DecodeState state_;
};

/// Mask service keyed by sequence id: each request carries the sequence id
/// and the previously sampled token (none on the first step) and gets back
/// the mask for the next step. Distinct sequences may be driven from
/// different threads; calls for one sequence must be serialized by the caller.
class MaskServer {
 public:
  explicit MaskServer(std::shared_ptr<const TokenVocab> vocab) : vocab_(std::move(vocab)) {
    require_byte_fallback(*vocab_);
  }

  void open(const std::string& sequence_id, std::string_view input, SchemaKind schema,
            const std::vector<std::string>& categories = {}) {
    auto session = std::make_shared<Session>(vocab_, input, schema, categories);
    std::lock_guard lock(mu_);
    if (!sessions_.emplace(sequence_id, std::move(session)).second) {
      throw Error("mask server: sequence '" + sequence_id + "' already open");
    }
  }

  MaskResponse step(const std::string& sequence_id, std::optional<TokenId> last_token) {
    auto session = find(sequence_id);
    if (last_token) session->advance(*last_token);
    return session->allowed();
  }

  void close(const std::string& sequence_id) {
    std::lock_guard lock(mu_);
    sessions_.erase(sequence_id);
  }

  std::size_t open_sessions() const {
    std::lock_guard lock(mu_);
    return sessions_.size();
  }

 private:
  std::shared_ptr<Session> find(const std::string& sequence_id) const {
    std::lock_guard lock(mu_);
    const auto it = sessions_.find(sequence_id);
    if (it == sessions_.end()) throw Error("mask server: unknown sequence '" + sequence_id + "'");
    return it->second;
  }

  std::shared_ptr<const TokenVocab> vocab_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, std::shared_ptr<Session>> sessions_;
};

}  // namespace spanlab::logitmatch
