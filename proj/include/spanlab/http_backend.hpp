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

// Client for OpenAI-compatible chat completion endpoints. https needs the
// translation unit to be built with SPANLAB_WITH_OPENSSL (and linked against
// OpenSSL).

#ifdef SPANLAB_WITH_OPENSSL
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#endif

#include <chrono>
#include <cstdlib>
#include <semaphore>
#include <string>
#include <thread>

#include "httplib.h"
#include "json.hpp"

#include "spanlab/backend.hpp"

namespace spanlab::backend {

struct HttpConfig {
  std::string base_url = "http://localhost:8000/v1";  // ".../chat/completions" is appended
  std::string model;
  std::string api_key_env = "SPANLAB_API_KEY";  // the token itself is never read from files
  std::size_t max_concurrency = 4;
  int max_retries = 3;
  int timeout_seconds = 120;
  int backoff_ms = 500;
};

class HttpBackend : public Backend {
 public:
  static constexpr std::ptrdiff_t kMaxConcurrency = 256;

  explicit HttpBackend(HttpConfig config)
      : config_(std::move(config)),
        slots_(static_cast<std::ptrdiff_t>(
            std::clamp<std::size_t>(config_.max_concurrency, 1, kMaxConcurrency))) {
    const auto scheme_end = config_.base_url.find("://");
    if (scheme_end == std::string::npos) throw Error("http backend: base_url needs a scheme");
    const std::string scheme = config_.base_url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https") {
      throw Error("http backend: unsupported scheme '" + scheme + "'");
    }
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
    if (scheme == "https") throw Error("http backend: built without TLS support");
#endif
    const auto path_begin = config_.base_url.find('/', scheme_end + 3);
    origin_ = config_.base_url.substr(0, path_begin);
    path_ = path_begin == std::string::npos ? "" : config_.base_url.substr(path_begin);
    while (!path_.empty() && path_.back() == '/') path_.pop_back();
    path_ += "/chat/completions";
    if (config_.model.empty()) throw Error("http backend: model name missing");
  }

  std::string name() const override { return "http"; }
  bool supports_logit_masks() const override { return false; }

  GenerationResult generate(const GenerationRequest& request) override {
    if (request.constraint) {
      throw Error("http backend cannot apply logit masks (strategy '" + request.strategy + "')");
    }
    if (request.decoding.max_tokens < 1) throw Error("max_tokens must be at least 1");

    nlohmann::json body{
        {"model", config_.model},
        {"messages", {{{"role", "user"}, {"content", request.prompt.system_or_instruction_text}}}},
        {"max_tokens", request.decoding.max_tokens},
        {"temperature", request.decoding.temperature},
        {"top_p", request.decoding.top_p},
        {"seed", request.decoding.seed}};
    if (request.decoding.top_k > 0) body["top_k"] = request.decoding.top_k;
    const std::string payload = body.dump();

    httplib::Headers headers;
    if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    GenerationResult result;
    auto& pred = result.prediction;
    pred.example_id = request.example_id;
    pred.strategy = request.strategy;

    slots_.acquire();
    struct Release {
      std::counting_semaphore<kMaxConcurrency>& s;
      ~Release() { s.release(); }
    } release{slots_};

    std::string last_error;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(config_.backoff_ms << (attempt - 1)));
      }
      httplib::Client client(origin_);
      client.set_connection_timeout(config_.timeout_seconds);
      client.set_read_timeout(config_.timeout_seconds);
      client.set_write_timeout(config_.timeout_seconds);
      const auto res = client.Post(path_, headers, payload, "application/json");
      if (!res) {
        last_error = "transport: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last_error = "http status " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) {
        last_error = "http status " + std::to_string(res->status) + ": " + res->body.substr(0, 200);
        break;
      }
      const auto j = nlohmann::json::parse(res->body, nullptr, false);
      if (j.is_discarded() || !j.contains("choices") || !j["choices"].is_array() ||
          j["choices"].empty()) {
        last_error = "malformed completion response";
        break;
      }
      const auto& choice = j["choices"][0];
      if (const auto m = choice.find("message"); m != choice.end() && m->is_object()) {
        if (const auto c = m->find("content"); c != m->end() && c->is_string()) {
          pred.output_text = c->get<std::string>();
        }
      }
      if (const auto f = choice.find("finish_reason"); f != choice.end() && f->is_string()) {
        pred.truncated = f->get<std::string>() == "length";
      }
      if (const auto u = j.find("usage"); u != j.end() && u->is_object()) {
        pred.token_count = u->value("completion_tokens", std::size_t{0});
      }
      return result;
    }
    pred.transport_error = last_error;
    return result;
  }

 private:
  HttpConfig config_;
  std::counting_semaphore<kMaxConcurrency> slots_;
  std::string origin_;
  std::string path_;
};

}  // namespace spanlab::backend
