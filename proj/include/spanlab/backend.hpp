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

// Generation backends. MockBackend samples from a scripted policy over a
// token vocabulary and applies the LogitMatch mask on constrained requests,
// recording one trace entry per step. The HTTP client lives in
// http_backend.hpp.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "spanlab/core.hpp"
#include "spanlab/logitmatch.hpp"
#include "spanlab/random.hpp"
#include "spanlab/strategies.hpp"
#include "spanlab/tokenmodel.hpp"

namespace spanlab::backend {

struct DecodingParams {
  double temperature = 0.0;
  double top_p = 1.0;
  int top_k = 0;  // 0: backend default
  std::size_t max_tokens = 1024;
  std::uint64_t seed = 0;
};

/// Everything needed to build a DecodeState for one request.
struct LogitMatchConstraint {
  std::string input_text;
  logitmatch::SchemaKind schema = logitmatch::SchemaKind::kNone;
  std::vector<std::string> categories;
};

struct GenerationRequest {
  std::string example_id;
  std::string strategy;
  PromptBundle prompt;
  DecodingParams decoding;
  std::optional<LogitMatchConstraint> constraint;
  // Output the scripted mock policies steer towards. Ignored by real models.
  std::optional<std::string> reference_output;
};

struct TraceStep {
  std::size_t step = 0;
  std::string mode;  // default | select | copy | unconstrained
  std::size_t allowed_count = 0;
  TokenId chosen_token = -1;

  bool operator==(const TraceStep&) const = default;
};

struct GenerationResult {
  RawPrediction prediction;
  std::vector<TraceStep> trace;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string name() const = 0;
  /// True when the backend can apply a per-step token mask.
  virtual bool supports_logit_masks() const = 0;
  /// Must be safe to call from several threads at once.
  virtual GenerationResult generate(const GenerationRequest& request) = 0;
};

/// Strategy/backend compatibility, checked before any request is sent.
inline void check_capability(const Backend& backend, const StrategyConfig& strategy) {
  strategy.validate();
  if (is_logitmatch(strategy.kind) && !backend.supports_logit_masks()) {
    throw Error("strategy '" + strategy.name() + "' needs per-step logit masks, which backend '" +
                backend.name() + "' does not provide");
  }
}

inline void write_trace(std::ostream& out, std::string_view example_id,
                        const std::vector<TraceStep>& trace) {
  for (const auto& t : trace) {
    nlohmann::ordered_json j{{"example_id", example_id},
                             {"step", t.step},
                             {"mode", t.mode},
                             {"allowed_count", t.allowed_count},
                             {"chosen_token", t.chosen_token}};
    out << j.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

struct StepContext {
  std::size_t step = 0;
  const logitmatch::MaskResponse* mask = nullptr;
  const TokenVocab* vocab = nullptr;
  const std::string* output = nullptr;  // decoded text so far
  // Present on constrained requests only.
  const logitmatch::DecodeState* state = nullptr;
  const SuffixIndex* index = nullptr;
};

class Policy {
 public:
  virtual ~Policy() = default;
  /// The next token, which must be permitted by ctx.mask, or nullopt to stop.
  virtual std::optional<TokenId> choose(const StepContext& ctx) = 0;
};

namespace detail {

inline TokenId first_permitted(const logitmatch::MaskResponse& mask, const TokenVocab& vocab) {
  if (!mask.all) return mask.allowed.empty() ? -1 : mask.allowed.front();
  for (std::size_t id = 0; id < vocab.size(); ++id) {
    if (!vocab.is_special(static_cast<TokenId>(id))) return static_cast<TokenId>(id);
  }
  return vocab.size() ? 0 : -1;
}

template <typename F>
void for_each_permitted(const logitmatch::MaskResponse& mask, const TokenVocab& vocab, F&& f) {
  if (mask.all) {
    for (std::size_t id = 0; id < vocab.size(); ++id) f(static_cast<TokenId>(id));
  } else {
    for (const TokenId id : mask.allowed) f(id);
  }
}

}  // namespace detail

/// Replays a fixed token sequence; stops when the script ends. A scripted
/// token the mask forbids is replaced by the lowest permitted id.
class ExactReplayPolicy : public Policy {
 public:
  explicit ExactReplayPolicy(std::vector<TokenId> tokens) : tokens_(std::move(tokens)) {}

  std::optional<TokenId> choose(const StepContext& ctx) override {
    if (ctx.step >= tokens_.size()) return std::nullopt;
    const TokenId t = tokens_[ctx.step];
    if (ctx.mask->permits(t)) return t;
    const TokenId f = detail::first_permitted(*ctx.mask, *ctx.vocab);
    return f < 0 ? std::nullopt : std::optional<TokenId>(f);
  }

 private:
  std::vector<TokenId> tokens_;
};

/// Per-step preference lists; the first permitted entry wins, otherwise the
/// lowest permitted id. Stops when the lists run out.
class RankedPolicy : public Policy {
 public:
  explicit RankedPolicy(std::vector<std::vector<TokenId>> preferences)
      : preferences_(std::move(preferences)) {}

  std::optional<TokenId> choose(const StepContext& ctx) override {
    if (ctx.step >= preferences_.size()) return std::nullopt;
    for (const TokenId t : preferences_[ctx.step]) {
      if (ctx.vocab->contains(t) && ctx.mask->permits(t)) return t;
    }
    const TokenId f = detail::first_permitted(*ctx.mask, *ctx.vocab);
    return f < 0 ? std::nullopt : std::optional<TokenId>(f);
  }

 private:
  std::vector<std::vector<TokenId>> preferences_;
};

/// Writes `target`, the way a model that has the target in mind would.
/// Progress is tracked by an edit-distance alignment of the output against
/// the target. When the mask forbids every token that continues the target
/// verbatim, the best few permitted tokens are compared by a greedy rollout
/// through the constraint and the one ending closest to the target wins.
class TargetPolicy : public Policy {
 public:
  struct Options {
    std::size_t beam = 4;        // candidates rolled out on a deviation; 0 disables rollouts
    std::size_t lookahead = 24;  // max tokens per rollout
    std::size_t resync = 16;     // a rollout ends once it has matched this many target bytes
  };

  explicit TargetPolicy(std::string target) : TargetPolicy(std::move(target), Options{}) {}
  TargetPolicy(std::string target, Options options)
      : target_(std::move(target)), options_(options), row_(target_.size() + 1, 0),
        rest_(target_.size() + 1, 0) {
    for (std::size_t j = 1; j < row_.size(); ++j) row_[j] = row_[j - 1] + unit(target_[j - 1]);
    for (std::size_t j = target_.size(); j-- > 0;) rest_[j] = rest_[j + 1] + unit(target_[j]);
  }

  std::optional<TokenId> choose(const StepContext& ctx) override {
    sync(*ctx.output);
    return pick(*ctx.mask, *ctx.vocab, row_, ctx.state, ctx.index, /*rollout=*/options_.beam > 0);
  }

  const std::string& target() const { return target_; }

  /// Feeds output produced since the last call into the alignment.
  void sync(const std::string& output) {
    for (; consumed_ < output.size(); ++consumed_) extend(row_, output[consumed_]);
  }

 private:
  using Row = std::vector<std::uint32_t>;

  // Edits touching a quote are expensive: a model that means to write a
  // string does not emit or drop its delimiters by accident.
  static std::uint32_t unit(char c) { return c == '"' ? 3U : 1U; }

  void extend(Row& row, char c) const {
    const std::uint32_t ins = unit(c);
    std::uint32_t diag = row[0];
    row[0] += ins;
    for (std::size_t j = 1; j < row.size(); ++j) {
      const std::uint32_t up = row[j];
      const char t = target_[j - 1];
      const std::uint32_t sub = t == c ? 0U : std::max(ins, unit(t));
      row[j] = std::min({up + ins, row[j - 1] + unit(t), diag + sub});
      diag = up;
    }
  }

  // Lowest cost, largest target prefix on ties.
  static std::pair<std::uint32_t, std::size_t> best(const Row& row) {
    std::pair<std::uint32_t, std::size_t> b{row[0], 0};
    for (std::size_t j = 1; j < row.size(); ++j) {
      if (row[j] <= b.first) b = {row[j], j};
    }
    return b;
  }

  std::uint64_t final_cost(const Row& row) const {
    std::uint64_t c = std::numeric_limits<std::uint64_t>::max();
    for (std::size_t j = 0; j < row.size(); ++j) c = std::min<std::uint64_t>(c, row[j] + rest_[j]);
    return c;
  }

  static std::optional<TokenId> stop_token(const logitmatch::MaskResponse& mask,
                                           const TokenVocab& vocab) {
    for (const TokenId id : vocab.special_ids()) {
      if (mask.permits(id)) return id;
    }
    return std::nullopt;
  }

  // Longest permitted token spelling target[j..]; lowest id among equals.
  std::optional<TokenId> exact_progress(const logitmatch::MaskResponse& mask,
                                        const TokenVocab& vocab, std::size_t j) const {
    const auto& trie = vocab.trie();
    std::optional<TokenId> found;
    std::uint32_t node = VocabTrie::kRoot;
    for (std::size_t k = j; k < target_.size(); ++k) {
      node = trie.child(node, static_cast<unsigned char>(target_[k]));
      if (node == VocabTrie::kNone) break;
      const auto& n = trie.node(node);
      std::optional<TokenId> here;
      for (auto p = n.own_begin; p < n.own_end; ++p) {
        const TokenId id = trie.order()[p];
        if (mask.permits(id) && (!here || id < *here)) here = id;
      }
      if (here) found = here;
    }
    return found;
  }

  struct Scored {
    std::uint32_t cost;
    std::size_t reach;
    std::size_t length;
    TokenId id;
    bool stop;
  };

  std::optional<TokenId> pick(const logitmatch::MaskResponse& mask, const TokenVocab& vocab,
                              const Row& row, const logitmatch::DecodeState* state,
                              const SuffixIndex* index, bool rollout) const {
    const auto [cost, reach] = best(row);
    if (reach == target_.size()) {
      if (const auto s = stop_token(mask, vocab)) return s;
      if (vocab.special_ids().empty() && (!state || !state->constrained())) return std::nullopt;
    }
    if (const auto t = exact_progress(mask, vocab, reach)) return t;

    std::vector<Scored> scored;
    detail::for_each_permitted(mask, vocab, [&](TokenId id) {
      if (vocab.is_special(id)) {
        scored.push_back({cost + rest_[reach], target_.size(), 0, id, true});
        return;
      }
      Row r = row;
      for (const char c : vocab.bytes(id)) extend(r, c);
      const auto [c2, j2] = best(r);
      scored.push_back({c2, j2, vocab.bytes(id).size(), id, false});
    });
    if (scored.empty()) return std::nullopt;
    auto order = [](const Scored& a, const Scored& b) {
      if (a.cost != b.cost) return a.cost < b.cost;
      if (a.reach != b.reach) return a.reach > b.reach;
      if (a.length != b.length) return a.length > b.length;
      return a.id < b.id;
    };
    std::sort(scored.begin(), scored.end(), order);
    if (!rollout || !state || scored.size() == 1) return scored.front().id;

    const std::size_t width = std::min(options_.beam, scored.size());
    std::optional<TokenId> winner;
    std::uint64_t winner_cost = std::numeric_limits<std::uint64_t>::max();
    for (std::size_t i = 0; i < width; ++i) {
      const std::uint64_t c = scored[i].stop ? scored[i].cost : simulate(scored[i].id, vocab, row, *state, *index);
      if (c < winner_cost) {
        winner_cost = c;
        winner = scored[i].id;
      }
    }
    return winner;
  }

  std::uint64_t simulate(TokenId first, const TokenVocab& vocab, Row row,
                         logitmatch::DecodeState state, const SuffixIndex& index) const {
    const std::size_t start_reach = best(row).second;
    TokenId next = first;
    for (std::size_t step = 0; step < options_.lookahead; ++step) {
      if (vocab.is_special(next)) break;
      auto advanced = logitmatch::try_advance(std::move(state), next, vocab, index);
      if (!advanced) break;
      state = std::move(*advanced);
      for (const char c : vocab.bytes(next)) extend(row, c);
      if (best(row).second >= start_reach + options_.resync) break;
      const auto mask = logitmatch::allowed_tokens(state, vocab, index);
      const auto t = pick(mask, vocab, row, &state, &index, /*rollout=*/false);
      if (!t) break;
      next = *t;
    }
    return final_cost(row);
  }

  std::string target_;
  Options options_;
  Row row_;
  Row rest_;  // deletion cost of target[j..]
  std::size_t consumed_ = 0;
};

/// Mostly follows a guide output, but with probability `deviation_rate`
/// samples a permitted token weighted towards what breaks naive span
/// matchers: quotes, backslashes, multi-byte characters, long tokens and
/// pieces of the field opener. Without a guide every step is adversarial.
class AdversarialPolicy : public Policy {
 public:
  struct Options {
    std::uint64_t seed = 0;
    double deviation_rate = 0.35;
    double stop_weight = 0.5;
  };

  AdversarialPolicy(Options options, std::optional<std::string> guide)
      : options_(options), rng_(options.seed) {
    if (guide) {
      TargetPolicy::Options o;
      o.beam = 0;
      guide_.emplace(std::move(*guide), o);
    }
  }

  std::optional<TokenId> choose(const StepContext& ctx) override {
    if (guide_ && !rng_.chance(options_.deviation_rate)) return guide_->choose(ctx);
    if (guide_) guide_->sync(*ctx.output);
    return sample(*ctx.mask, *ctx.vocab);
  }

  static double weight(std::string_view bytes) {
    double w = 1.0 + 0.25 * static_cast<double>(bytes.size());
    if (bytes.find('"') != std::string_view::npos) w += 3;
    if (bytes.find('\\') != std::string_view::npos) w += 3;
    if (std::any_of(bytes.begin(), bytes.end(), [](char c) { return static_cast<unsigned char>(c) >= 0x80; })) w += 2;
    if (bytes.find("text") != std::string_view::npos || bytes.find(':') != std::string_view::npos) w += 3;
    return w;
  }

 private:
  std::optional<TokenId> sample(const logitmatch::MaskResponse& mask, const TokenVocab& vocab) {
    std::vector<std::pair<TokenId, double>> items;
    double total = 0;
    detail::for_each_permitted(mask, vocab, [&](TokenId id) {
      const double w = vocab.is_special(id) ? options_.stop_weight : weight(vocab.bytes(id));
      items.emplace_back(id, w);
      total += w;
    });
    if (items.empty()) return std::nullopt;
    double x = rng_.unit() * total;
    for (const auto& [id, w] : items) {
      if (x < w) return id;
      x -= w;
    }
    return items.back().first;
  }

  Options options_;
  Rng rng_;
  std::optional<TargetPolicy> guide_;
};

// ---------------------------------------------------------------------------
// MockBackend
// ---------------------------------------------------------------------------

using PolicyFactory = std::function<std::unique_ptr<Policy>(const GenerationRequest&)>;

/// Scripted backend over a fixed vocabulary. Stops on a special token or
/// when the policy ends; flags truncation when max_tokens runs out first.
class MockBackend : public Backend {
 public:
  MockBackend(std::shared_ptr<const TokenVocab> vocab, PolicyFactory factory)
      : vocab_(std::move(vocab)), factory_(std::move(factory)) {
    logitmatch::require_byte_fallback(*vocab_);
  }

  std::string name() const override { return "mock"; }
  bool supports_logit_masks() const override { return true; }
  const TokenVocab& vocab() const { return *vocab_; }

  GenerationResult generate(const GenerationRequest& request) override {
    if (request.decoding.max_tokens < 1) throw Error("max_tokens must be at least 1");
    auto policy = factory_(request);
    if (!policy) throw Error("mock backend: no policy for example '" + request.example_id + "'");

    std::optional<SuffixIndex> index;
    std::optional<logitmatch::DecodeState> state;
    if (request.constraint) {
      index.emplace(request.constraint->input_text);
      state = logitmatch::init_state(request.constraint->input_text, request.constraint->schema,
                                     request.constraint->categories);
    }

    GenerationResult result;
    auto& pred = result.prediction;
    pred.example_id = request.example_id;
    pred.strategy = request.strategy;
    const logitmatch::MaskResponse unconstrained{true, {}};
    bool stopped = false;
    for (std::size_t step = 0; step < request.decoding.max_tokens; ++step) {
      logitmatch::MaskResponse mask;
      if (state) mask = logitmatch::allowed_tokens(*state, *vocab_, *index);
      const auto& m = state ? mask : unconstrained;

      StepContext ctx{step, &m, vocab_.get(), &pred.output_text,
                      state ? &*state : nullptr, index ? &*index : nullptr};
      const auto chosen = policy->choose(ctx);
      if (!chosen) {
        stopped = true;
        break;
      }
      if (!vocab_->contains(*chosen) || !m.permits(*chosen)) {
        throw std::logic_error("mock policy chose token " + std::to_string(*chosen) +
                               " outside the step mask");
      }
      result.trace.push_back({step, state ? std::string(logitmatch::to_string(state->mode)) : "unconstrained",
                              m.count(vocab_->size()), *chosen});
      ++pred.token_count;
      if (vocab_->is_special(*chosen)) {
        stopped = true;
        break;
      }
      if (state) state = logitmatch::advance(std::move(*state), *chosen, *vocab_, *index);
      pred.output_text += vocab_->bytes(*chosen);
    }
    pred.truncated = !stopped;
    return result;
  }

 private:
  std::shared_ptr<const TokenVocab> vocab_;
  PolicyFactory factory_;
};

// ---------------------------------------------------------------------------
// Reference outputs for the mock policies
// ---------------------------------------------------------------------------

/// Small corruption of a span text: a dropped or added space, a changed
/// letter case or an extra character. Always returns a different string.
inline std::string perturb_text(std::string s, Rng& rng) {
  const std::size_t n = s.size();
  switch (rng.below(4)) {
    case 0:
      if (const auto p = s.find(' '); p != std::string::npos) {
        s.erase(p, 1);
        return s;
      }
      [[fallthrough]];
    case 1:
      if (n > 1) {
        s.insert(1 + rng.below(n - 1), " ");
        return s;
      }
      [[fallthrough]];
    case 2:
      if (n && std::isalpha(static_cast<unsigned char>(s[0]))) {
        s[0] = std::isupper(static_cast<unsigned char>(s[0]))
                   ? static_cast<char>(std::tolower(static_cast<unsigned char>(s[0])))
                   : static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
        return s;
      }
      [[fallthrough]];
    default:
      return s + "s";
  }
}

/// Canonical output for `example.gold` in which each span is corrupted with
/// probability `rate`. Tag and match outputs get corrupted span text, index
/// outputs get an off-by-some end offset.
inline std::string render_noisy_output(StrategyKind kind, const LabeledExample& example,
                                       double rate, Rng& rng) {
  if (is_index_strategy(kind)) {
    std::string out;
    const std::size_t n = utf8::length(example.text);
    for (const auto& s : spanlab::detail::sorted_spans(example.gold)) {
      std::size_t end = s.end;
      if (rng.chance(rate)) end = std::min(n + 3, end + 1 + rng.below(3));
      if (!out.empty()) out += '\n';
      out += "[" + std::to_string(s.start) + ":" + std::to_string(end) + "] = " + s.category;
    }
    return out;
  }
  if (kind == StrategyKind::kTag) {
    const auto sorted = spanlab::detail::sorted_spans(example.gold);
    std::string out;
    std::size_t cursor = 0;
    for (const auto& s : sorted) {
      if (s.start < cursor) continue;
      out += utf8::substr(example.text, cursor, s.start);
      std::string inner(utf8::substr(example.text, s.start, s.end));
      if (rng.chance(rate)) inner = perturb_text(std::move(inner), rng);
      out += "<entity type=\"" + s.category + "\">" + inner + "</entity>";
      cursor = s.end;
    }
    out += utf8::substr(example.text, cursor, utf8::length(example.text));
    return out;
  }
  std::string out = "[";
  bool first = true;
  for (const auto& s : spanlab::detail::sorted_spans(example.gold)) {
    std::string piece = s.start == s.end ? spanlab::detail::insertion_marker(s, example.text)
                                         : span_text(s, example.text);
    const std::size_t occ = spanlab::detail::occurrence_ordinal(piece, example.text, s.start);
    if (rng.chance(rate)) piece = perturb_text(std::move(piece), rng);
    if (!first) out += ", ";
    first = false;
    out += "{\"text\": \"" + utf8::json_escape(piece) + "\", \"label\": \"" +
           utf8::json_escape(s.category) + "\"";
    if (uses_occurrence(kind)) out += ", \"occurrence\": " + std::to_string(occ);
    out += '}';
  }
  return out + "]";
}

enum class MockMode { kGold, kNoisy, kAdversarial };

inline std::string_view to_string(MockMode m) {
  switch (m) {
    case MockMode::kGold: return "gold";
    case MockMode::kNoisy: return "noisy";
    case MockMode::kAdversarial: return "adversarial";
  }
  return "gold";
}

inline std::optional<MockMode> parse_mock_mode(std::string_view s) {
  for (auto m : {MockMode::kGold, MockMode::kNoisy, MockMode::kAdversarial}) {
    if (to_string(m) == s) return m;
  }
  return std::nullopt;
}

/// Policy factory used by the runner: every request carries its reference
/// output; the mode decides how faithfully it is followed.
inline PolicyFactory make_policy_factory(MockMode mode) {
  return [mode](const GenerationRequest& r) -> std::unique_ptr<Policy> {
    const std::string target = r.reference_output.value_or("");
    if (mode == MockMode::kAdversarial) {
      AdversarialPolicy::Options o;
      o.seed = r.decoding.seed;
      return std::make_unique<AdversarialPolicy>(o, target);
    }
    return std::make_unique<TargetPolicy>(target);
  };
}

}  // namespace spanlab::backend
