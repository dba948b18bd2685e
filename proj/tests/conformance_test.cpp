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
#include <gtest/gtest.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>

#include "spanlab/conformance.hpp"

using namespace spanlab;
namespace fs = std::filesystem;

TEST(Digest, AllAndFnvOverLittleEndianIds) {
  EXPECT_EQ(conformance::mask_digest(logitmatch::MaskResponse{true, {}}), "ALL");
  logitmatch::MaskResponse empty;
  EXPECT_EQ(conformance::mask_digest(empty), "cbf29ce484222325");
  // Independent FNV-1a over the bytes 01 00 00 00 02 01 00 00.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : {0x01, 0x00, 0x00, 0x00, 0x02, 0x01, 0x00, 0x00}) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  char want[17];
  std::snprintf(want, sizeof want, "%016llx", static_cast<unsigned long long>(h));
  logitmatch::MaskResponse two;
  two.allowed = {1, 258};
  EXPECT_EQ(conformance::mask_digest(two), want);
}

TEST(Fixtures, WorkedFixturesReproduce) {
  const auto vocab = conformance::worked_fixture_vocab();
  const auto fixtures = conformance::worked_fixtures(vocab, "worked.vocab");
  ASSERT_EQ(fixtures.size(), 4u);
  for (const auto& f : fixtures) {
    EXPECT_EQ(f.mask_hashes.size(), f.tokens.size() + 1) << f.name;
    EXPECT_EQ(conformance::check_fixture(vocab, f), "") << f.name;
    // Without a schema, nothing is constrained before a field opens.
    if (f.schema == logitmatch::SchemaKind::kNone) {
      EXPECT_EQ(f.mask_hashes.front(), "ALL") << f.name;
    }
  }
  auto broken = fixtures[0];
  broken.mask_hashes[3] = "0000000000000000";
  EXPECT_NE(conformance::check_fixture(vocab, broken), "");
}

TEST(Fixtures, JsonRoundTrip) {
  const auto vocab = conformance::worked_fixture_vocab();
  for (const auto& f : conformance::worked_fixtures(vocab, "worked.vocab")) {
    const auto back = conformance::fixture_from_json(nlohmann::json::parse(conformance::to_json(f).dump()));
    EXPECT_EQ(back.name, f.name);
    EXPECT_EQ(back.input, f.input);
    EXPECT_EQ(back.schema, f.schema);
    EXPECT_EQ(back.categories, f.categories);
    EXPECT_EQ(back.tokens, f.tokens);
    EXPECT_EQ(back.mask_hashes, f.mask_hashes);
  }
}

TEST(Corpus, WrittenCorpusChecksCleanAndDetectsTampering) {
  const auto dir = fs::temp_directory_path() / ("spanlab-fixtures-" + std::to_string(::getpid()));
  fs::remove_all(dir);
  const auto written = conformance::write_corpus(dir, 17, 60);
  EXPECT_EQ(written.size(), 64u);
  std::size_t constrained = 0;
  for (const auto& f : written) {
    for (const auto& h : f.mask_hashes) constrained += h != "ALL";
  }
  EXPECT_GT(constrained, 100u);
  EXPECT_TRUE(conformance::check_corpus(dir).empty());

  // Identical bytes when regenerated.
  std::ifstream a(dir / "fixtures.jsonl");
  const std::string first((std::istreambuf_iterator<char>(a)), {});
  conformance::write_corpus(dir, 17, 60);
  std::ifstream b(dir / "fixtures.jsonl");
  EXPECT_EQ(first, std::string((std::istreambuf_iterator<char>(b)), {}));

  std::string tampered = first;
  const auto pos = tampered.find("\"mask_hashes\":[\"ALL\",\"");
  ASSERT_NE(pos, std::string::npos);
  tampered[pos + 22] = tampered[pos + 22] == '0' ? '1' : '0';
  std::ofstream(dir / "fixtures.jsonl", std::ios::trunc) << tampered;
  EXPECT_EQ(conformance::check_corpus(dir).size(), 1u);
  fs::remove_all(dir);
}
