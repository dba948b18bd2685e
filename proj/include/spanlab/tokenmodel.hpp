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

// Tokenizer model: token-id <-> byte-string tables, a byte trie over the
// vocabulary, a suffix index over the (JSON-escaped) input and a small
// deterministic BPE trainer used to build adversarial test vocabularies.
//
// Matching is always byte-level: a token matches at position p when its bytes
// are a prefix of the indexed text starting at byte p.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <boost/archive/iterators/base64_from_binary.hpp>
#include <boost/archive/iterators/binary_from_base64.hpp>
#include <boost/archive/iterators/transform_width.hpp>

#include "spanlab/core.hpp"
#include "spanlab/field_opener.hpp"
#include "spanlab/random.hpp"
#include "spanlab/utf8.hpp"

namespace spanlab {

using TokenId = std::int32_t;

// ---------------------------------------------------------------------------
// VocabTrie
// ---------------------------------------------------------------------------

/// Byte trie over the non-special tokens of a vocabulary. Token ids are laid
/// out in preorder so that every subtree owns a contiguous range of `order()`.
class VocabTrie {
 public:
  struct Node {
    std::vector<std::pair<unsigned char, std::uint32_t>> children;  // sorted by byte
    std::uint32_t own_begin = 0;  // tokens ending exactly here: order[own_begin, own_end)
    std::uint32_t own_end = 0;
    std::uint32_t end = 0;  // whole subtree: order[own_begin, end)
    // Bit q set iff, starting the field-opener recognizer in state q at this
    // node, some path below completes the opener.
    std::uint16_t opener_mask = 0;
  };

  static constexpr std::uint32_t kRoot = 0;
  static constexpr std::uint32_t kNone = UINT32_MAX;

  VocabTrie() : nodes_(1) {}

  void build(const std::vector<std::string>& tokens, const std::vector<bool>& skip) {
    nodes_.assign(1, Node{});
    std::vector<std::vector<TokenId>> terminals(1);
    for (std::size_t id = 0; id < tokens.size(); ++id) {
      if (skip[id] || tokens[id].empty()) continue;
      std::uint32_t node = kRoot;
      for (const char c : tokens[id]) {
        const auto b = static_cast<unsigned char>(c);
        std::uint32_t next = child(node, b);
        if (next == kNone) {
          next = static_cast<std::uint32_t>(nodes_.size());
          nodes_.emplace_back();
          terminals.emplace_back();
          auto& kids = nodes_[node].children;
          auto it = std::lower_bound(kids.begin(), kids.end(), b,
                                     [](const auto& e, unsigned char v) { return e.first < v; });
          kids.insert(it, {b, next});
        }
        node = next;
      }
      terminals[node].push_back(static_cast<TokenId>(id));
    }
    order_.clear();
    layout(kRoot, terminals);
    // Children always have larger indices than their parent.
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      std::uint16_t mask = 0;
      for (int q = 0; q < field_opener::kStates; ++q) {
        for (const auto& [b, c] : nodes_[i].children) {
          const auto next = field_opener::step(static_cast<field_opener::State>(q),
                                               static_cast<char>(b));
          if (next == field_opener::kAccept || (nodes_[c].opener_mask >> next) & 1U) {
            mask |= static_cast<std::uint16_t>(1U << q);
            break;
          }
        }
      }
      nodes_[i].opener_mask = mask;
    }
  }

  std::uint32_t child(std::uint32_t node, unsigned char b) const {
    const auto& kids = nodes_[node].children;
    auto it = std::lower_bound(kids.begin(), kids.end(), b,
                               [](const auto& e, unsigned char v) { return e.first < v; });
    return (it != kids.end() && it->first == b) ? it->second : kNone;
  }

  const Node& node(std::uint32_t i) const { return nodes_[i]; }
  std::size_t node_count() const { return nodes_.size(); }
  const std::vector<TokenId>& order() const { return order_; }

 private:
  void layout(std::uint32_t root, std::vector<std::vector<TokenId>>& terminals) {
    // Explicit stack: (node, children visited?)
    std::vector<std::pair<std::uint32_t, bool>> stack{{root, false}};
    while (!stack.empty()) {
      auto [n, done] = stack.back();
      stack.pop_back();
      if (done) {
        nodes_[n].end = static_cast<std::uint32_t>(order_.size());
        continue;
      }
      nodes_[n].own_begin = static_cast<std::uint32_t>(order_.size());
      order_.insert(order_.end(), terminals[n].begin(), terminals[n].end());
      nodes_[n].own_end = static_cast<std::uint32_t>(order_.size());
      stack.push_back({n, true});
      const auto& kids = nodes_[n].children;
      for (auto it = kids.rbegin(); it != kids.rend(); ++it) stack.push_back({it->second, false});
    }
  }

  std::vector<Node> nodes_;
  std::vector<TokenId> order_;
};

// ---------------------------------------------------------------------------
// TokenVocab
// ---------------------------------------------------------------------------

/// Immutable token table. Ids are dense in [0, size()); special (control)
/// tokens never take part in span matching.
class TokenVocab {
 public:
  TokenVocab() = default;

  TokenVocab(std::vector<std::string> tokens, std::vector<TokenId> special_ids)
      : tokens_(std::move(tokens)), special_(tokens_.size(), false) {
    for (const TokenId id : special_ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw Error("special token id " + std::to_string(id) + " outside vocabulary");
      }
      special_[id] = true;
    }
    std::sort(special_ids.begin(), special_ids.end());
    special_ids.erase(std::unique(special_ids.begin(), special_ids.end()), special_ids.end());
    special_ids_ = std::move(special_ids);
    for (std::size_t id = 0; id < tokens_.size(); ++id) {
      if (!special_[id] && tokens_[id].empty()) {
        throw Error("token " + std::to_string(id) + " has empty bytes");
      }
    }
    trie_.build(tokens_, special_);
  }

  std::size_t size() const { return tokens_.size(); }
  bool contains(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < size(); }
  const std::string& bytes(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  bool is_special(TokenId id) const { return special_.at(static_cast<std::size_t>(id)); }
  const std::vector<TokenId>& special_ids() const { return special_ids_; }
  const VocabTrie& trie() const { return trie_; }

  /// True when every single byte value is spelled by some non-special token.
  bool has_byte_fallback() const {
    for (int b = 0; b < 256; ++b) {
      const auto n = trie_.child(VocabTrie::kRoot, static_cast<unsigned char>(b));
      if (n == VocabTrie::kNone) return false;
      const auto& node = trie_.node(n);
      if (node.own_begin == node.own_end) return false;
    }
    return true;
  }

  std::string decode(const std::vector<TokenId>& ids) const {
    std::string out;
    for (const TokenId id : ids) out += bytes(id);
    return out;
  }

 private:
  std::vector<std::string> tokens_;
  std::vector<bool> special_;
  std::vector<TokenId> special_ids_;
  VocabTrie trie_;
};

// ---------------------------------------------------------------------------
// SuffixIndex
// ---------------------------------------------------------------------------

/// Index over the JSON-string-escaped form of an input text. Besides the
/// suffix array it records which byte positions fall on a unit boundary,
/// i.e. at the start of an escaped code point; a decoded span may only begin
/// and end there.
class SuffixIndex {
 public:
  SuffixIndex() : boundary_(1, 1), char_at_(1, 0) {}

  explicit SuffixIndex(std::string_view input) {
    std::size_t ch = 0;
    for (std::size_t i = 0; i < input.size(); ++ch) {
      const std::size_t len = utf8::sequence_length(input, i);
      const std::size_t before = text_.size();
      utf8::append_json_escaped(text_, input.substr(i, len));
      for (std::size_t k = before; k < text_.size(); ++k) {
        boundary_.push_back(k == before ? 1 : 0);
        char_at_.push_back(static_cast<std::uint32_t>(ch));
      }
      i += len;
    }
    boundary_.push_back(1);
    char_at_.push_back(static_cast<std::uint32_t>(ch));
    for (std::size_t p = 0; p < text_.size(); ++p) {
      if (boundary_[p]) starts_.push_back(static_cast<std::uint32_t>(p));
    }
    suffixes_.resize(text_.size());
    for (std::size_t p = 0; p < text_.size(); ++p) suffixes_[p] = static_cast<std::uint32_t>(p);
    const std::string_view t = text_;
    std::sort(suffixes_.begin(), suffixes_.end(),
              [t](std::uint32_t a, std::uint32_t b) { return t.substr(a) < t.substr(b); });
  }

  /// The escaped text.
  const std::string& text() const { return text_; }
  std::size_t size() const { return text_.size(); }

  bool is_boundary(std::size_t pos) const { return boundary_.at(pos) != 0; }
  /// Character index (in the raw input) of the character containing byte `pos`.
  std::size_t char_index(std::size_t pos) const { return char_at_.at(pos); }
  /// Boundary positions where a span may start (excludes the end).
  const std::vector<std::uint32_t>& span_starts() const { return starts_; }
  const std::vector<std::uint32_t>& suffix_array() const { return suffixes_; }

  /// Every position p with `prefix` a prefix of text()[p..], ascending.
  std::vector<std::uint32_t> query(std::string_view prefix) const {
    std::vector<std::uint32_t> out;
    if (prefix.empty()) {
      for (std::size_t p = 0; p <= text_.size(); ++p) out.push_back(static_cast<std::uint32_t>(p));
      return out;
    }
    const auto [lo, hi] = range(prefix);
    out.assign(suffixes_.begin() + static_cast<std::ptrdiff_t>(lo),
               suffixes_.begin() + static_cast<std::ptrdiff_t>(hi));
    std::sort(out.begin(), out.end());
    return out;
  }

  /// Suffix-array interval [lo, hi) of suffixes starting with `prefix`.
  std::pair<std::size_t, std::size_t> range(std::string_view prefix) const {
    const std::string_view t = text_;
    const auto key = [&](std::uint32_t p) { return t.substr(p, prefix.size()); };
    auto lo = std::partition_point(suffixes_.begin(), suffixes_.end(),
                                   [&](std::uint32_t p) { return key(p) < prefix; });
    auto hi = std::partition_point(lo, suffixes_.end(),
                                   [&](std::uint32_t p) { return key(p) == prefix; });
    return {static_cast<std::size_t>(lo - suffixes_.begin()),
            static_cast<std::size_t>(hi - suffixes_.begin())};
  }

  /// Narrows a suffix-array interval whose suffixes share their first
  /// `depth` bytes to those whose byte at `depth` equals `b`.
  std::pair<std::size_t, std::size_t> narrow(std::pair<std::size_t, std::size_t> r,
                                             std::size_t depth, unsigned char b) const {
    const auto at = [&](std::uint32_t p) -> int {
      const std::size_t i = p + depth;
      return i < text_.size() ? static_cast<unsigned char>(text_[i]) : -1;
    };
    const auto first = suffixes_.begin() + static_cast<std::ptrdiff_t>(r.first);
    const auto last = suffixes_.begin() + static_cast<std::ptrdiff_t>(r.second);
    auto lo = std::partition_point(first, last, [&](std::uint32_t p) { return at(p) < b; });
    auto hi = std::partition_point(lo, last, [&](std::uint32_t p) { return at(p) == b; });
    return {static_cast<std::size_t>(lo - suffixes_.begin()),
            static_cast<std::size_t>(hi - suffixes_.begin())};
  }

 private:
  std::string text_;
  std::vector<std::uint8_t> boundary_;
  std::vector<std::uint32_t> char_at_;
  std::vector<std::uint32_t> starts_;
  std::vector<std::uint32_t> suffixes_;
};

/// Tokens whose bytes are a prefix of index.text()[position..], ascending.
inline std::vector<TokenId> tokens_matching_prefix(const TokenVocab& vocab, const SuffixIndex& index,
                                                   std::size_t position) {
  if (position > index.size()) {
    throw std::out_of_range("tokens_matching_prefix: position " + std::to_string(position) +
                            " beyond text of length " + std::to_string(index.size()));
  }
  const auto& trie = vocab.trie();
  const auto& order = trie.order();
  std::vector<TokenId> out;
  std::uint32_t node = VocabTrie::kRoot;
  for (std::size_t p = position; p < index.size(); ++p) {
    node = trie.child(node, static_cast<unsigned char>(index.text()[p]));
    if (node == VocabTrie::kNone) break;
    const auto& n = trie.node(node);
    out.insert(out.end(), order.begin() + n.own_begin, order.begin() + n.own_end);
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Tokens that occur anywhere in index.text(), ascending.
inline std::vector<TokenId> tokens_matching_anywhere(const TokenVocab& vocab,
                                                     const SuffixIndex& index) {
  const auto& trie = vocab.trie();
  const auto& order = trie.order();
  std::vector<TokenId> out;
  struct Frame {
    std::uint32_t node;
    std::pair<std::size_t, std::size_t> range;
    std::size_t depth;
  };
  std::vector<Frame> stack{{VocabTrie::kRoot, {0, index.suffix_array().size()}, 0}};
  while (!stack.empty()) {
    const Frame f = stack.back();
    stack.pop_back();
    for (const auto& [b, c] : trie.node(f.node).children) {
      const auto r = index.narrow(f.range, f.depth, b);
      if (r.first == r.second) continue;
      const auto& n = trie.node(c);
      out.insert(out.end(), order.begin() + n.own_begin, order.begin() + n.own_end);
      stack.push_back({c, r, f.depth + 1});
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary files
// ---------------------------------------------------------------------------

inline std::string base64_encode(std::string_view bytes) {
  using namespace boost::archive::iterators;
  using It = base64_from_binary<transform_width<std::string_view::const_iterator, 6, 8>>;
  std::string out(It(bytes.begin()), It(bytes.end()));
  out.append((3 - bytes.size() % 3) % 3, '=');
  return out;
}

inline std::string base64_decode(std::string_view text) {
  using namespace boost::archive::iterators;
  using It = transform_width<binary_from_base64<std::string::const_iterator>, 8, 6>;
  if (text.size() % 4 != 0) throw Error("base64 length not a multiple of 4");
  std::string padded(text);
  std::size_t pad = 0;
  while (!padded.empty() && padded.back() == '=' && pad < 2) {
    padded.back() = 'A';
    padded.pop_back();
    ++pad;
  }
  padded.append(pad, 'A');
  try {
    std::string out(It(padded.cbegin()), It(padded.cend()));
    out.resize(out.size() - pad);
    return out;
  } catch (const std::exception&) {
    throw Error("invalid base64 '" + std::string(text) + "'");
  }
}

/// Writes the plain-text vocabulary format:
///   #special<TAB>id,id,...
///   <id><TAB><base64 bytes>      (one line per token)
inline void save_vocab(const TokenVocab& vocab, std::ostream& out) {
  out << "#special\t";
  for (std::size_t i = 0; i < vocab.special_ids().size(); ++i) {
    if (i) out << ',';
    out << vocab.special_ids()[i];
  }
  out << '\n';
  for (std::size_t id = 0; id < vocab.size(); ++id) {
    out << id << '\t' << base64_encode(vocab.bytes(static_cast<TokenId>(id))) << '\n';
  }
}

inline TokenVocab load_vocab(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("#special", 0) != 0) {
    throw Error("vocabulary file must start with a '#special' header line");
  }
  std::vector<TokenId> special;
  {
    const auto tab = line.find('\t');
    std::string list = tab == std::string::npos ? "" : line.substr(tab + 1);
    std::replace(list.begin(), list.end(), ',', ' ');
    std::istringstream ss(list);
    long long id = 0;
    while (ss >> id) special.push_back(static_cast<TokenId>(id));
  }
  std::vector<std::string> tokens;
  std::vector<bool> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw Error("vocabulary line " + std::to_string(line_no) + ": expected <id>\\t<base64>");
    }
    std::size_t id = 0;
    try {
      id = std::stoul(line.substr(0, tab));
    } catch (const std::exception&) {
      throw Error("vocabulary line " + std::to_string(line_no) + ": bad id");
    }
    if (id >= tokens.size()) {
      tokens.resize(id + 1);
      seen.resize(id + 1, false);
    }
    if (seen[id]) throw Error("vocabulary id " + std::to_string(id) + " listed twice");
    seen[id] = true;
    tokens[id] = base64_decode(std::string_view(line).substr(tab + 1));
  }
  for (std::size_t id = 0; id < seen.size(); ++id) {
    if (!seen[id]) throw Error("vocabulary ids are not dense: missing " + std::to_string(id));
  }
  return TokenVocab(std::move(tokens), std::move(special));
}

// ---------------------------------------------------------------------------
// SyntheticTokenizer
// ---------------------------------------------------------------------------

struct SyntheticTokenizerOptions {
  std::size_t max_merges = 400;
  // Extra merges of randomly chosen adjacent pairs. They make the learned
  // segmentation depend on context in ways frequency merges rarely do.
  std::size_t random_merges = 40;
  std::vector<std::string> special_tokens = {"<|eos|>"};
};

/// Byte-level BPE without pre-tokenization. Ids 0..255 are the single bytes
/// (so the vocabulary always has byte fallback), then one id per merge, then
/// the special tokens.
class SyntheticTokenizer {
 public:
  std::uint64_t seed = 0;
  std::vector<std::pair<TokenId, TokenId>> merge_table;
  std::vector<std::string> pieces;
  std::vector<TokenId> special_ids;

  std::vector<TokenId> encode(std::string_view s) const {
    std::vector<TokenId> ids;
    ids.reserve(s.size());
    for (const char c : s) ids.push_back(static_cast<unsigned char>(c));
    for (;;) {
      std::size_t best_rank = SIZE_MAX;
      for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
        const auto it = rank_.find(key(ids[i], ids[i + 1]));
        if (it != rank_.end() && it->second < best_rank) best_rank = it->second;
      }
      if (best_rank == SIZE_MAX) break;
      const auto [a, b] = merge_table[best_rank];
      const auto merged = static_cast<TokenId>(256 + best_rank);
      std::vector<TokenId> next;
      next.reserve(ids.size());
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i + 1 < ids.size() && ids[i] == a && ids[i + 1] == b) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(ids[i]);
        }
      }
      ids = std::move(next);
    }
    return ids;
  }

  std::string decode(const std::vector<TokenId>& ids) const {
    std::string out;
    for (const TokenId id : ids) out += pieces.at(static_cast<std::size_t>(id));
    return out;
  }

  TokenVocab vocab() const { return TokenVocab(pieces, special_ids); }

  TokenId eos() const { return special_ids.empty() ? -1 : special_ids.front(); }

  void add_merge(TokenId a, TokenId b) {
    rank_.emplace(key(a, b), merge_table.size());
    merge_table.emplace_back(a, b);
    pieces.push_back(pieces[static_cast<std::size_t>(a)] + pieces[static_cast<std::size_t>(b)]);
  }

  bool has_merge(TokenId a, TokenId b) const { return rank_.count(key(a, b)) != 0; }

 private:
  static std::uint64_t key(TokenId a, TokenId b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
  }

  std::unordered_map<std::uint64_t, std::size_t> rank_;
};

/// Trains a SyntheticTokenizer on `corpus`. Deterministic for a fixed seed:
/// frequency ties are broken by a seeded hash of the pair.
inline SyntheticTokenizer make_synthetic_tokenizer(std::uint64_t seed,
                                                   const std::vector<std::string>& corpus,
                                                   const SyntheticTokenizerOptions& options = {}) {
  if (corpus.empty()) throw std::invalid_argument("make_synthetic_tokenizer: empty corpus");
  SyntheticTokenizer tok;
  tok.seed = seed;
  for (int b = 0; b < 256; ++b) tok.pieces.emplace_back(1, static_cast<char>(b));

  std::vector<std::vector<TokenId>> seqs;
  for (const auto& s : corpus) {
    std::vector<TokenId> ids;
    for (const char c : s) ids.push_back(static_cast<unsigned char>(c));
    seqs.push_back(std::move(ids));
  }
  auto pair_key = [](TokenId a, TokenId b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
  };
  auto apply = [&](TokenId a, TokenId b, TokenId merged) {
    for (auto& ids : seqs) {
      std::vector<TokenId> next;
      next.reserve(ids.size());
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i + 1 < ids.size() && ids[i] == a && ids[i + 1] == b) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(ids[i]);
        }
      }
      ids = std::move(next);
    }
  };

  for (std::size_t m = 0; m < options.max_merges; ++m) {
    std::unordered_map<std::uint64_t, std::size_t> counts;
    for (const auto& ids : seqs) {
      for (std::size_t i = 0; i + 1 < ids.size(); ++i) ++counts[pair_key(ids[i], ids[i + 1])];
    }
    std::uint64_t best = 0;
    std::size_t best_count = 0;
    std::uint64_t best_tie = 0;
    for (const auto& [k, n] : counts) {
      const std::uint64_t tie = mix_seed(seed, k);
      if (n > best_count || (n == best_count && tie > best_tie)) {
        best = k;
        best_count = n;
        best_tie = tie;
      }
    }
    if (best_count < 2) break;
    const auto a = static_cast<TokenId>(best >> 32);
    const auto b = static_cast<TokenId>(best & 0xFFFFFFFFU);
    tok.add_merge(a, b);
    apply(a, b, static_cast<TokenId>(tok.pieces.size() - 1));
  }

  Rng rng(mix_seed(seed, 0x5eed));
  for (std::size_t m = 0, attempts = 0; m < options.random_merges && attempts < 50 * (m + 1);
       ++attempts) {
    auto& ids = seqs[rng.below(seqs.size())];
    if (ids.size() < 2) continue;
    const std::size_t i = rng.below(ids.size() - 1);
    const TokenId a = ids[i];
    const TokenId b = ids[i + 1];
    if (tok.has_merge(a, b)) continue;
    tok.add_merge(a, b);
    apply(a, b, static_cast<TokenId>(tok.pieces.size() - 1));
    ++m;
  }

  for (const auto& s : options.special_tokens) {
    tok.special_ids.push_back(static_cast<TokenId>(tok.pieces.size()));
    tok.pieces.push_back(s);
  }
  return tok;
}

}  // namespace spanlab
