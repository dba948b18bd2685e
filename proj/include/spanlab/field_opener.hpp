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

#include <cstdint>

#include "spanlab/utf8.hpp"

namespace spanlab {

// Streaming recognizer for the opening of the span text field, i.e. the
// decoded stream ending in  "text" \s* : \s* "  . A KMP automaton over the
// pattern; states:
//   0 nothing   1 "   2 "t   3 "te   4 "tex   5 "text
//   6 "text"    7 "text" followed by whitespace   8 after the colon
namespace field_opener {

using State = std::uint8_t;

inline constexpr State kStart = 0;
inline constexpr State kAccept = 9;
inline constexpr int kStates = 9;  // non-accepting states 0..8

inline State step(State state, char c) {
  switch (state) {
    case 0: return c == '"' ? 1 : 0;
    case 1: return c == 't' ? 2 : (c == '"' ? 1 : 0);
    case 2: return c == 'e' ? 3 : (c == '"' ? 1 : 0);
    case 3: return c == 'x' ? 4 : (c == '"' ? 1 : 0);
    case 4: return c == 't' ? 5 : (c == '"' ? 1 : 0);
    case 5: return c == '"' ? 6 : 0;
    case 6:
      // The closing quote of "text" may itself open "text.
      if (c == 't') return 2;
      [[fallthrough]];
    case 7:
      if (utf8::is_json_whitespace(c)) return 7;
      if (c == ':') return 8;
      return c == '"' ? 1 : 0;
    case 8:
      if (utf8::is_json_whitespace(c)) return 8;
      return c == '"' ? kAccept : 0;
    default: return 0;
  }
}

}  // namespace field_opener
}  // namespace spanlab
