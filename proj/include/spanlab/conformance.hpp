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

// Mask conformance corpus. Each record is one JSON line:
//
//   {"name": ..., "input": ..., "schema": "none"|"plain"|"occurrence",
//    "categories": [...], "vocab": "<file next to the corpus>",
//    "tokens": [ids...], "mask_hashes": [...]}
//
// mask_hashes has tokens.size() + 1 entries: the mask before each token and
// the mask after the last one. An entry is "ALL" or the lowercase hex
// FNV-1a 64 digest of the ascending allowed ids, each as 4 little-endian
// bytes. Any implementation of the mask contract must reproduce the digests
// from the same vocabulary.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "spanlab/backend.hpp"
#include "spanlab/logitmatch.hpp"
#include "spanlab/random.hpp"
#include "spanlab/tokenmodel.hpp"
#include "spanlab/utf8.hpp"

namespace spanlab::conformance {

inline std::string mask_digest(const logitmatch::MaskResponse& mask) {
  if (mask.all) return "ALL";
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const TokenId id : mask.allowed) {
    const auto v = static_cast<std::uint32_t>(id);
    for (int k = 0; k < 4; ++k) {
      h ^= (v >> (8 * k)) & 0xFFU;
      h *= 0x100000001b3ULL;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct Fixture {
  std::string name;
  std::string input;
  logitmatch::SchemaKind schema = logitmatch::SchemaKind::kNone;
  std::vector<std::string> categories;
  std::string vocab_file;
  std::vector<TokenId> tokens;
  std::vector<std::string> mask_hashes;
};

inline nlohmann::ordered_json to_json(const Fixture& f) {
  return {{"name", f.name},
          {"input", f.input},
          {"schema", std::string(logitmatch::to_string(f.schema))},
          {"categories", f.categories},
          {"vocab", f.vocab_file},
          {"tokens", f.tokens},
          {"mask_hashes", f.mask_hashes}};
}

inline Fixture fixture_from_json(const nlohmann::json& j) {
  Fixture f;
  f.name = j.at("name").get<std::string>();
  f.input = j.at("input").get<std::string>();
  const auto schema = logitmatch::parse_schema_kind(j.at("schema").get<std::string>());
  if (!schema) throw Error("fixture '" + f.name + "': unknown schema");
  f.schema = *schema;
  f.categories = j.at("categories").get<std::vector<std::string>>();
  f.vocab_file = j.at("vocab").get<std::string>();
  f.tokens = j.at("tokens").get<std::vector<TokenId>>();
  f.mask_hashes = j.at("mask_hashes").get<std::vector<std::string>>();
  return f;
}

/// The mask before every token and after the last one.
inline std::vector<logitmatch::MaskResponse> mask_sequence(const TokenVocab& vocab,
                                                           const Fixture& f) {
  const SuffixIndex index(f.input);
  auto state = logitmatch::init_state(f.input, f.schema, f.categories);
  std::vector<logitmatch::MaskResponse> masks;
  for (const TokenId t : f.tokens) {
    masks.push_back(logitmatch::allowed_tokens(state, vocab, index));
    state = logitmatch::advance(std::move(state), t, vocab, index);
  }
  masks.push_back(logitmatch::allowed_tokens(state, vocab, index));
  return masks;
}

inline void fill_hashes(const TokenVocab& vocab, Fixture& f) {
  f.mask_hashes.clear();
  for (const auto& m : mask_sequence(vocab, f)) f.mask_hashes.push_back(mask_digest(m));
}

/// Empty when the engine reproduces every digest, otherwise a description of
/// the first divergence.
inline std::string check_fixture(const TokenVocab& vocab, const Fixture& f) {
  std::vector<logitmatch::MaskResponse> masks;
  try {
    masks = mask_sequence(vocab, f);
  } catch (const std::exception& e) {
    return f.name + ": " + e.what();
  }
  if (masks.size() != f.mask_hashes.size()) return f.name + ": step count differs";
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const auto d = mask_digest(masks[i]);
    if (d != f.mask_hashes[i]) {
      return f.name + ": step " + std::to_string(i) + " digest " + d + " != " + f.mask_hashes[i];
    }
  }
  return "";
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

/// Random text of [min_chars, max_chars] characters mixing words,
/// punctuation, quotes, backslashes, control whitespace and multi-byte
/// characters.
inline std::string random_text(Rng& rng, std::size_t min_chars, std::size_t max_chars) {
  static const char* const kPieces[] = {
      "the", "cat", "London", "Turing", "was", "born", "in", "text", "label", "dry", "house",
      "\"", "\\", "\"text\"", ":", ",", ".", "{", "}", "[", "]", "\\n", "\\\"", "'",
      "\xc3\xa9", "\xc3\x9f", "\xe4\xb8\xad", "\xf0\x9f\x99\x82", "\xd0\x96", "M&M", "-", "\t", "\n",
      "Saint", "Gaudens", "0", "42"};
  const std::size_t target = min_chars + rng.below(max_chars - min_chars + 1);
  std::string out;
  std::size_t chars = 0;
  while (chars < target) {
    std::string piece = rng.chance(0.7) ? std::string(kPieces[rng.below(std::size(kPieces))])
                                        : std::string(1, static_cast<char>('a' + rng.below(26)));
    const std::size_t n = utf8::length(piece);
    if (chars + n > target) continue;
    out += piece;
    chars += n;
    if (chars < target && rng.chance(0.5)) {
      out += ' ';
      ++chars;
    }
  }
  return out;
}

/// A plausible model answer: a few random input substrings rendered as a
/// match list, optionally with occurrence fields.
inline std::string random_answer(Rng& rng, std::string_view input,
                                 const std::vector<std::string>& categories, bool occurrence) {
  const std::size_t n = utf8::length(input);
  std::string out = "[";
  const std::size_t k = 1 + rng.below(4);
  for (std::size_t i = 0; i < k && n > 0; ++i) {
    const std::size_t b = rng.below(n);
    const std::size_t e = b + 1 + rng.below(std::min<std::size_t>(12, n - b));
    const std::string piece(utf8::substr(input, b, e));
    if (i) out += ", ";
    out += "{\"text\": \"" + utf8::json_escape(piece) + "\", \"label\": \"" +
           utf8::json_escape(categories[rng.below(categories.size())]) + "\"";
    if (occurrence) out += ", \"occurrence\": 1";
    out += "}";
  }
  return out + "]";
}

/// Hand-made vocabulary with the token splits discussed for span copying:
/// "Hel" + "lo" against an input spelled "Hello", and an opening quote fused
/// with span text as in ` "London`.
inline TokenVocab worked_fixture_vocab() {
  std::vector<std::string> tokens;
  for (int b = 0; b < 256; ++b) tokens.emplace_back(1, static_cast<char>(b));
  for (const char* t : {"Hello", "Hel", "lo", "\"text\"", ": ", " \"", "\"London", " \"London",
                        "London", "Turing", " was", " born", " in", "[{", "}]", "\"}]", "\", ",
                        "\"label\"", "LOC", "PER", "\"text", "\": \"", "\",\n", "\"."}) {
    tokens.emplace_back(t);
  }
  const auto eos = static_cast<TokenId>(tokens.size());
  tokens.emplace_back("<|eos|>");
  return TokenVocab(std::move(tokens), {eos});
}

inline TokenId token_id(const TokenVocab& vocab, std::string_view bytes) {
  for (std::size_t id = 0; id < vocab.size(); ++id) {
    if (!vocab.is_special(static_cast<TokenId>(id)) && vocab.bytes(static_cast<TokenId>(id)) == bytes) {
      return static_cast<TokenId>(id);
    }
  }
  throw Error("no token spelled '" + std::string(bytes) + "'");
}

inline std::vector<Fixture> worked_fixtures(const TokenVocab& vocab, const std::string& vocab_file) {
  auto ids = [&](std::initializer_list<std::string_view> pieces) {
    std::vector<TokenId> out;
    for (const auto p : pieces) out.push_back(token_id(vocab, p));
    return out;
  };
  std::vector<Fixture> out;
  out.push_back({"hello-split", "Hello.", logitmatch::SchemaKind::kNone, {}, vocab_file,
                 ids({"\"text\"", ": ", "\"", "Hel", "lo", ".", "\""}), {}});
  out.push_back({"hello-fused-close", "Hello.", logitmatch::SchemaKind::kNone, {}, vocab_file,
                 ids({"\"text\"", ": ", "\"", "Hel", "lo", "\"."}), {}});
  out.push_back({"london-fused-open", "Turing was born in London.", logitmatch::SchemaKind::kNone,
                 {}, vocab_file, ids({"[{", "\"text\"", ":", " \"London", "\"}]"}), {}});
  out.push_back({"london-schema", "Turing was born in London.", logitmatch::SchemaKind::kPlain,
                 {"PER", "LOC"}, vocab_file,
                 ids({"[{", "\"text\"", ":", " \"London", "\", ", "\"label\"", ": ", "\"", "LOC",
                      "\"}]"}),
                 {}});
  for (auto& f : out) fill_hashes(vocab, f);
  return out;
}

/// Writes the corpus (fixtures.jsonl plus vocabulary files) into `dir`:
/// the hand-made fixtures and `synthetic` sequences decoded by scripted
/// policies under the constraint over a trained vocabulary.
inline std::vector<Fixture> write_corpus(const std::filesystem::path& dir, std::uint64_t seed,
                                         std::size_t synthetic) {
  std::filesystem::create_directories(dir);
  const auto worked_vocab = worked_fixture_vocab();
  {
    std::ofstream out(dir / "worked.vocab", std::ios::binary | std::ios::trunc);
    save_vocab(worked_vocab, out);
  }
  auto fixtures = worked_fixtures(worked_vocab, "worked.vocab");

  Rng rng(mix_seed(seed, 0xf1));
  const std::vector<std::string> categories = {"PER", "LOC", "ERR"};
  struct Case {
    std::string input;
    std::string answer;
    logitmatch::SchemaKind schema;
    bool adversarial;
  };
  std::vector<Case> cases;
  std::vector<std::string> corpus;
  for (std::size_t i = 0; i < synthetic; ++i) {
    Case c;
    c.input = random_text(rng, 20, 120);
    c.schema = static_cast<logitmatch::SchemaKind>(rng.below(3));
    c.answer = random_answer(rng, c.input, categories,
                             c.schema == logitmatch::SchemaKind::kWithOccurrence);
    c.adversarial = rng.chance(0.5);
    corpus.push_back(utf8::json_escape(c.input));
    corpus.push_back(c.answer);
    cases.push_back(std::move(c));
  }
  if (!cases.empty()) {
    const auto vocab = std::make_shared<const TokenVocab>(
        make_synthetic_tokenizer(seed, corpus).vocab());
    {
      std::ofstream out(dir / "synthetic.vocab", std::ios::binary | std::ios::trunc);
      save_vocab(*vocab, out);
    }
    for (std::size_t i = 0; i < cases.size(); ++i) {
      const auto& c = cases[i];
      backend::MockBackend mock(vocab, [&](const backend::GenerationRequest& r) -> std::unique_ptr<backend::Policy> {
        if (c.adversarial) {
          backend::AdversarialPolicy::Options o;
          o.seed = r.decoding.seed;
          return std::make_unique<backend::AdversarialPolicy>(o, c.answer);
        }
        return std::make_unique<backend::TargetPolicy>(c.answer);
      });
      backend::GenerationRequest req;
      req.example_id = "synthetic-" + std::to_string(i);
      req.decoding.max_tokens = 160;
      req.decoding.seed = mix_seed(seed, i);
      req.constraint = backend::LogitMatchConstraint{c.input, c.schema, categories};
      const auto gen = mock.generate(req);
      Fixture f{req.example_id, c.input, c.schema,
                c.schema == logitmatch::SchemaKind::kNone ? std::vector<std::string>{} : categories,
                "synthetic.vocab", {}, {}};
      for (const auto& step : gen.trace) f.tokens.push_back(step.chosen_token);
      fill_hashes(*vocab, f);
      fixtures.push_back(std::move(f));
    }
  }

  std::ofstream out(dir / "fixtures.jsonl", std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write fixtures into '" + dir.string() + "'");
  for (const auto& f : fixtures) out << to_json(f).dump() << '\n';
  return fixtures;
}

/// Re-derives every digest of the corpus in `dir`; returns the failures.
inline std::vector<std::string> check_corpus(const std::filesystem::path& dir) {
  std::ifstream in(dir / "fixtures.jsonl", std::ios::binary);
  if (!in) throw Error("no fixtures.jsonl in '" + dir.string() + "'");
  std::map<std::string, std::shared_ptr<TokenVocab>> vocabs;
  std::vector<std::string> failures;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = fixture_from_json(nlohmann::json::parse(line));
    auto& v = vocabs[f.vocab_file];
    if (!v) {
      std::ifstream vin(dir / f.vocab_file, std::ios::binary);
      if (!vin) throw Error("missing vocabulary '" + f.vocab_file + "'");
      v = std::make_shared<TokenVocab>(load_vocab(vin));
    }
    if (auto err = check_fixture(*v, f); !err.empty()) failures.push_back(std::move(err));
  }
  return failures;
}

}  // namespace spanlab::conformance
