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

#include <sstream>

#include <gtest/gtest.h>

#include "spanlab/field_opener.hpp"
#include "spanlab/random.hpp"
#include "spanlab/tokenmodel.hpp"

using namespace spanlab;

namespace {

std::vector<std::string> sample_corpus() {
  return {"Turing was born in London.", "[{\"text\": \"London\", \"label\": \"LOC\"}]",
          "Ada Lovelace met Charles Babbage in London in 1833.",
          "Z\xC3\xBCrich ist sch\xC3\xB6n \"quoted\" and back\\slash"};
}

// Every position p where `prefix` occurs, by direct comparison.
std::vector<std::uint32_t> naive_query(const std::string& text, const std::string& prefix) {
  std::vector<std::uint32_t> out;
  for (std::size_t p = 0; p <= text.size(); ++p) {
    if (text.compare(p, prefix.size(), prefix) == 0 && p + prefix.size() <= text.size()) {
      out.push_back(static_cast<std::uint32_t>(p));
    }
  }
  return out;
}

}  // namespace

TEST(FieldOpener, RecognizesOpenersWithWhitespace) {
  auto run = [](std::string_view s) {
    field_opener::State q = field_opener::kStart;
    for (std::size_t i = 0; i < s.size(); ++i) {
      q = field_opener::step(q, s[i]);
      if (q == field_opener::kAccept) return static_cast<int>(i);
    }
    return -1;
  };
  EXPECT_EQ(run("\"text\":\""), 7);
  EXPECT_EQ(run("[{\"text\": \"a"), 10);
  EXPECT_EQ(run("\"text\" \n:\t \""), 11);
  EXPECT_EQ(run("\"\"text\":\""), 8);
  EXPECT_EQ(run("\"text\"text\": \""), 13);
  EXPECT_EQ(run("\"tex\"text\":\""), 11);
  EXPECT_EQ(run("\"label\": \"LOC\""), -1);
  EXPECT_EQ(run("text: \""), -1);
  EXPECT_EQ(run("\"text\" x: \""), -1);
}

TEST(FieldOpener, AgreesWithSuffixSearch) {
  // The recognizer accepts exactly when the stream first ends in a match of
  // "text"\s*:\s*" (checked by rescanning every prefix).
  const std::string alphabet = "\"text: \nx";
  Rng rng(3);
  for (int trial = 0; trial < 3000; ++trial) {
    std::string s;
    for (int i = 0, n = 4 + static_cast<int>(rng.below(16)); i < n; ++i) s += alphabet[rng.below(alphabet.size())];
    field_opener::State q = field_opener::kStart;
    for (std::size_t i = 0; i < s.size(); ++i) {
      q = field_opener::step(q, s[i]);
      const std::string prefix = s.substr(0, i + 1);
      // Does some suffix of prefix match the opener pattern?
      bool suffix_match = false;
      for (std::size_t b = 0; b < prefix.size() && !suffix_match; ++b) {
        std::string_view t(prefix);
        t.remove_prefix(b);
        if (t.substr(0, 6) != "\"text\"") continue;
        std::size_t k = 6;
        while (k < t.size() && utf8::is_json_whitespace(t[k])) ++k;
        if (k >= t.size() || t[k] != ':') continue;
        ++k;
        while (k < t.size() && utf8::is_json_whitespace(t[k])) ++k;
        suffix_match = k + 1 == t.size() && t[k] == '"';
      }
      ASSERT_EQ(q == field_opener::kAccept, suffix_match) << s << " @" << i;
      if (q == field_opener::kAccept) q = field_opener::kStart;
      if (suffix_match) break;
    }
  }
}

TEST(SuffixIndex, EscapesInputAndMarksBoundaries) {
  const SuffixIndex index("a\"\xC3\xA9\n");
  EXPECT_EQ(index.text(), "a\\\"\xC3\xA9\\n");
  EXPECT_EQ(index.span_starts(), (std::vector<std::uint32_t>{0, 1, 3, 5}));
  EXPECT_FALSE(index.is_boundary(2));
  EXPECT_FALSE(index.is_boundary(4));
  EXPECT_TRUE(index.is_boundary(7));  // end of text
  EXPECT_EQ(index.char_index(4), 2u);
  EXPECT_EQ(index.char_index(6), 3u);
}

TEST(SuffixIndex, QueryMatchesNaiveScan) {
  Rng rng(5);
  const std::string alphabet = "ab\"\\ ";
  for (int trial = 0; trial < 200; ++trial) {
    std::string input;
    for (int i = 0, n = static_cast<int>(rng.below(40)); i < n; ++i) input += alphabet[rng.below(alphabet.size())];
    const SuffixIndex index(input);
    for (int q = 0; q < 10; ++q) {
      std::string prefix;
      for (int i = 0, n = 1 + static_cast<int>(rng.below(4)); i < n; ++i) prefix += alphabet[rng.below(alphabet.size())];
      EXPECT_EQ(index.query(prefix), naive_query(index.text(), prefix));
    }
  }
}

TEST(TokenVocab, TrieHelpersMatchBruteForce) {
  const auto tok = make_synthetic_tokenizer(1, sample_corpus());
  const auto vocab = tok.vocab();
  const SuffixIndex index("Ada met \"Turing\" in London");
  for (std::size_t pos = 0; pos <= index.size(); ++pos) {
    std::vector<TokenId> expected;
    for (std::size_t id = 0; id < vocab.size(); ++id) {
      const auto t = static_cast<TokenId>(id);
      if (!vocab.is_special(t) && index.text().compare(pos, vocab.bytes(t).size(), vocab.bytes(t)) == 0 &&
          pos + vocab.bytes(t).size() <= index.size()) {
        expected.push_back(t);
      }
    }
    ASSERT_EQ(tokens_matching_prefix(vocab, index, pos), expected) << pos;
  }
  std::vector<TokenId> anywhere;
  for (std::size_t id = 0; id < vocab.size(); ++id) {
    const auto t = static_cast<TokenId>(id);
    if (!vocab.is_special(t) && index.text().find(vocab.bytes(t)) != std::string::npos) anywhere.push_back(t);
  }
  EXPECT_EQ(tokens_matching_anywhere(vocab, index), anywhere);
  EXPECT_THROW(tokens_matching_prefix(vocab, index, index.size() + 1), std::out_of_range);
}

TEST(TokenVocab, OpenerMaskAgreesWithSubtreeSearch) {
  std::vector<std::string> tokens;
  for (int b = 0; b < 256; ++b) tokens.emplace_back(1, static_cast<char>(b));
  for (const char* t : {"\"text\"", "text", "\": \"", "xt\":", " \"", "\"te", "ext\"", ": \"Lon"}) tokens.emplace_back(t);
  const TokenVocab vocab(tokens, {});
  const auto& trie = vocab.trie();
  // Brute force: a token reaches the accept state from q iff running the
  // recognizer from q over some prefix of some token in the subtree accepts.
  for (std::uint32_t n = 0; n < trie.node_count(); ++n) {
    const auto& node = trie.node(n);
    for (int q = 0; q < field_opener::kStates; ++q) {
      bool expected = false;
      for (std::uint32_t k = node.own_begin; k < node.end && !expected; ++k) {
        const std::string& bytes = vocab.bytes(trie.order()[k]);
        // Only bytes below this node matter: find the node depth by re-walking.
        std::uint32_t cur = VocabTrie::kRoot;
        std::size_t depth = 0;
        while (cur != n) cur = trie.child(cur, static_cast<unsigned char>(bytes[depth++]));
        auto s = static_cast<field_opener::State>(q);
        for (std::size_t i = depth; i < bytes.size(); ++i) {
          s = field_opener::step(s, bytes[i]);
          if (s == field_opener::kAccept) {
            expected = true;
            break;
          }
        }
      }
      EXPECT_EQ(((node.opener_mask >> q) & 1U) != 0, expected) << "node " << n << " q " << q;
    }
  }
}

TEST(TokenVocab, ByteFallbackAndValidation) {
  const auto vocab = make_synthetic_tokenizer(2, sample_corpus()).vocab();
  EXPECT_TRUE(vocab.has_byte_fallback());
  const TokenVocab small({"a", "b", "ab"}, {});
  EXPECT_FALSE(small.has_byte_fallback());
  EXPECT_THROW(TokenVocab({"a", ""}, {}), Error);
  EXPECT_THROW(TokenVocab({"a"}, {3}), Error);
  EXPECT_NO_THROW(TokenVocab({"a", ""}, {1}));
}

TEST(TokenVocab, SaveLoadRoundTrip) {
  const auto vocab = make_synthetic_tokenizer(9, sample_corpus()).vocab();
  std::stringstream ss;
  save_vocab(vocab, ss);
  const auto back = load_vocab(ss);
  ASSERT_EQ(back.size(), vocab.size());
  for (std::size_t id = 0; id < vocab.size(); ++id) {
    EXPECT_EQ(back.bytes(static_cast<TokenId>(id)), vocab.bytes(static_cast<TokenId>(id)));
    EXPECT_EQ(back.is_special(static_cast<TokenId>(id)), vocab.is_special(static_cast<TokenId>(id)));
  }
  std::istringstream bad("0\tYQ==\n");
  EXPECT_THROW(load_vocab(bad), Error);
  std::istringstream gap("#special\t\n0\tYQ==\n2\tYg==\n");
  EXPECT_THROW(load_vocab(gap), Error);
}

TEST(TokenVocab, Base64) {
  for (const std::string s : {"", "a", "ab", "abc", "abcd", "\x00\xff\"", "\xC3\xA9t\xC3\xA9"}) {
    EXPECT_EQ(base64_decode(base64_encode(s)), s);
  }
  EXPECT_EQ(base64_encode("Hel"), "SGVs");
  EXPECT_EQ(base64_encode("lo"), "bG8=");
}

TEST(SyntheticTokenizer, RoundTripsAndIsDeterministic) {
  const auto corpus = sample_corpus();
  const auto a = make_synthetic_tokenizer(17, corpus);
  const auto b = make_synthetic_tokenizer(17, corpus);
  EXPECT_EQ(a.pieces, b.pieces);
  EXPECT_EQ(a.merge_table, b.merge_table);
  for (const auto& s : corpus) {
    const auto ids = a.encode(s);
    EXPECT_EQ(a.decode(ids), s);
    EXPECT_LT(ids.size(), s.size());
  }
  EXPECT_EQ(a.decode(a.encode("unseen \xE2\x82\xAC text")), "unseen \xE2\x82\xAC text");
  ASSERT_EQ(a.special_ids.size(), 1u);
  EXPECT_EQ(a.pieces[static_cast<std::size_t>(a.eos())], "<|eos|>");
  EXPECT_TRUE(a.vocab().is_special(a.eos()));
}

TEST(SyntheticTokenizer, SeedsChangeTheVocabulary) {
  const auto corpus = sample_corpus();
  EXPECT_NE(make_synthetic_tokenizer(1, corpus).pieces, make_synthetic_tokenizer(2, corpus).pieces);
}
