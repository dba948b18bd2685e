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

#include <atomic>
#include <cstdlib>
#include <thread>

#include <gtest/gtest.h>

#include "spanlab/http_backend.hpp"

using namespace spanlab;
using namespace spanlab::backend;

namespace {

// OpenAI-compatible stub on an ephemeral port. The handler decides the
// status and body for each call.
class StubServer {
 public:
  using Handler = std::function<void(const httplib::Request&, httplib::Response&, int call)>;

  explicit StubServer(Handler handler) : handler_(std::move(handler)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const int call = calls_++;
      const int now = ++active_;
      int seen = peak_.load();
      while (now > seen && !peak_.compare_exchange_weak(seen, now)) {
      }
      handler_(req, res, call);
      --active_;
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }

  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
  int calls() const { return calls_.load(); }
  int peak() const { return peak_.load(); }

 private:
  Handler handler_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> calls_{0}, active_{0}, peak_{0};
};

std::string completion(const std::string& content, const std::string& finish = "stop") {
  return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}},
                                      {"finish_reason", finish}}}},
                        {"usage", {{"completion_tokens", 17}}}}
      .dump();
}

HttpConfig config_for(const StubServer& s) {
  HttpConfig c;
  c.base_url = s.base_url();
  c.model = "stub-model";
  c.api_key_env = "SPANLAB_TEST_TOKEN";
  c.backoff_ms = 1;
  c.timeout_seconds = 5;
  return c;
}

GenerationRequest plain_request() {
  GenerationRequest r;
  r.example_id = "e1";
  r.strategy = "match";
  r.prompt.system_or_instruction_text = "Find the entities.";
  r.decoding.max_tokens = 64;
  r.decoding.seed = 5;
  return r;
}

}  // namespace

TEST(HttpBackend, SendsChatRequestAndParsesReply) {
  ::setenv("SPANLAB_TEST_TOKEN", "tok-123", 1);
  nlohmann::json seen_body;
  std::string seen_auth;
  StubServer server([&](const httplib::Request& req, httplib::Response& res, int) {
    seen_body = nlohmann::json::parse(req.body);
    seen_auth = req.get_header_value("Authorization");
    res.set_content(completion("[{\"text\": \"x\"}]"), "application/json");
  });
  HttpBackend backend(config_for(server));
  const auto g = backend.generate(plain_request());
  EXPECT_EQ(g.prediction.output_text, "[{\"text\": \"x\"}]");
  EXPECT_EQ(g.prediction.token_count, 17u);
  EXPECT_FALSE(g.prediction.truncated);
  EXPECT_FALSE(g.prediction.transport_error);
  EXPECT_EQ(seen_auth, "Bearer tok-123");
  EXPECT_EQ(seen_body["model"], "stub-model");
  EXPECT_EQ(seen_body["messages"][0]["content"], "Find the entities.");
  EXPECT_EQ(seen_body["max_tokens"], 64);
  EXPECT_EQ(seen_body["seed"], 5);
  ::unsetenv("SPANLAB_TEST_TOKEN");
}

TEST(HttpBackend, NoTokenNoAuthorizationHeader) {
  ::unsetenv("SPANLAB_TEST_TOKEN");
  bool had_auth = true;
  StubServer server([&](const httplib::Request& req, httplib::Response& res, int) {
    had_auth = req.has_header("Authorization");
    res.set_content(completion("ok"), "application/json");
  });
  HttpBackend backend(config_for(server));
  backend.generate(plain_request());
  EXPECT_FALSE(had_auth);
}

TEST(HttpBackend, LengthFinishIsTruncation) {
  StubServer server([](const httplib::Request&, httplib::Response& res, int) {
    res.set_content(completion("[{\"text\": \"Lon", "length"), "application/json");
  });
  HttpBackend backend(config_for(server));
  EXPECT_TRUE(backend.generate(plain_request()).prediction.truncated);
}

TEST(HttpBackend, RetriesServerErrors) {
  StubServer server([](const httplib::Request&, httplib::Response& res, int call) {
    if (call < 2) {
      res.status = call == 0 ? 503 : 429;
      return;
    }
    res.set_content(completion("fine"), "application/json");
  });
  HttpBackend backend(config_for(server));
  const auto g = backend.generate(plain_request());
  EXPECT_EQ(g.prediction.output_text, "fine");
  EXPECT_EQ(server.calls(), 3);
}

TEST(HttpBackend, ClientErrorsAreNotRetried) {
  StubServer server([](const httplib::Request&, httplib::Response& res, int) {
    res.status = 400;
    res.set_content("bad request", "text/plain");
  });
  HttpBackend backend(config_for(server));
  const auto g = backend.generate(plain_request());
  ASSERT_TRUE(g.prediction.transport_error);
  EXPECT_NE(g.prediction.transport_error->find("400"), std::string::npos);
  EXPECT_EQ(server.calls(), 1);
}

TEST(HttpBackend, ExhaustedRetriesAndMalformedReplies) {
  StubServer server([](const httplib::Request&, httplib::Response& res, int) { res.status = 500; });
  auto cfg = config_for(server);
  cfg.max_retries = 2;
  HttpBackend backend(cfg);
  EXPECT_TRUE(backend.generate(plain_request()).prediction.transport_error);
  EXPECT_EQ(server.calls(), 3);

  StubServer junk([](const httplib::Request&, httplib::Response& res, int) {
    res.set_content("{\"choices\": []}", "application/json");
  });
  HttpBackend junk_backend(config_for(junk));
  EXPECT_EQ(junk_backend.generate(plain_request()).prediction.transport_error, "malformed completion response");
}

TEST(HttpBackend, UnreachableServerIsATransportError) {
  int port = 0;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  HttpConfig cfg;
  cfg.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
  cfg.model = "m";
  cfg.max_retries = 1;
  cfg.backoff_ms = 1;
  cfg.timeout_seconds = 2;
  HttpBackend backend(cfg);
  const auto g = backend.generate(plain_request());
  ASSERT_TRUE(g.prediction.transport_error);
  EXPECT_EQ(g.prediction.transport_error->rfind("transport:", 0), 0u);
}

TEST(HttpBackend, ConcurrencyIsBounded) {
  StubServer server([](const httplib::Request&, httplib::Response& res, int) {
    std::this_thread::sleep_for(std::chrono::milliseconds(30));
    res.set_content(completion("x"), "application/json");
  });
  auto cfg = config_for(server);
  cfg.max_concurrency = 2;
  HttpBackend backend(cfg);
  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i) threads.emplace_back([&] { backend.generate(plain_request()); });
  for (auto& t : threads) t.join();
  EXPECT_EQ(server.calls(), 8);
  EXPECT_LE(server.peak(), 2);
}

TEST(HttpBackend, LogitMatchIsAConfigurationError) {
  HttpConfig cfg;
  cfg.model = "m";
  HttpBackend backend(cfg);
  EXPECT_FALSE(backend.supports_logit_masks());
  EXPECT_THROW(check_capability(backend, StrategyConfig{StrategyKind::kLogitMatch}), Error);
  EXPECT_THROW(check_capability(backend, StrategyConfig{StrategyKind::kLogitMatchOcc, true}), Error);
  EXPECT_NO_THROW(check_capability(backend, StrategyConfig{StrategyKind::kMatch}));
  auto req = plain_request();
  req.constraint = LogitMatchConstraint{"x", logitmatch::SchemaKind::kNone, {}};
  EXPECT_THROW(backend.generate(req), Error);
}

TEST(HttpBackend, ConfigValidation) {
  HttpConfig cfg;
  cfg.model = "m";
  cfg.base_url = "localhost:8000";
  EXPECT_THROW(HttpBackend{cfg}, Error);
  cfg.base_url = "ftp://x/v1";
  EXPECT_THROW(HttpBackend{cfg}, Error);
  cfg.base_url = "http://x/v1";
  cfg.model.clear();
  EXPECT_THROW(HttpBackend{cfg}, Error);
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
  cfg.model = "m";
  cfg.base_url = "https://x/v1";
  EXPECT_THROW(HttpBackend{cfg}, Error);
#endif
}
