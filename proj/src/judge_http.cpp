// Copyright 2026 The fmxcoders Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// OpenAI-compatible chat-completion client over cpp-httplib.

#include <cstdlib>
#include <regex>

#include "fmx/errors.hpp"
#include "fmx/judge.hpp"
#include "httplib.h"
#include "json.hpp"

namespace fmx {

namespace {

using json = nlohmann::json;

class HttpChatClient : public ChatClient {
 public:
  HttpChatClient(const EndpointConfig& cfg, std::string token)
      : cfg_(cfg), token_(std::move(token)) {
    static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch match;
    if (!std::regex_match(cfg.base_url, match, url)) {
      throw ConfigError("judge.base_url is not an http(s) URL: " + cfg.base_url);
    }
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
    if (cfg.base_url.rfind("https://", 0) == 0) {
      throw ConfigError("judge.base_url uses https but this build has no TLS support");
    }
#endif
    origin_ = match[1].str();
    path_ = match[2].str();
    while (!path_.empty() && path_.back() == '/') path_.pop_back();
    path_ += cfg.path;
  }

  ChatReply send(const std::string& system, const std::string& user) override {
    httplib::Client http(origin_);
    http.set_connection_timeout(cfg_.timeout_s, 0);
    http.set_read_timeout(cfg_.timeout_s, 0);
    http.set_bearer_token_auth(token_);
    const json body{{"model", cfg_.model},
                    {"temperature", cfg_.temperature},
                    {"messages",
                     json::array({{{"role", "system"}, {"content", system}},
                                  {{"role", "user"}, {"content", user}}})}};
    const auto res = http.Post(path_, body.dump(), "application/json");
    if (!res) return {0, "", httplib::to_string(res.error())};
    if (res->status != 200) return {res->status, "", res->body};
    // Unexpected shapes pass the body through; parse_verdict reports them.
    const json parsed = json::parse(res->body, nullptr, false);
    if (!parsed.is_discarded()) {
      const auto content = parsed.value("/choices/0/message/content"_json_pointer, json());
      if (content.is_string()) return {200, content.get<std::string>(), ""};
    }
    return {200, res->body, ""};
  }

 private:
  EndpointConfig cfg_;
  std::string token_;
  std::string origin_;
  std::string path_;
};

}  // namespace

std::unique_ptr<ChatClient> make_http_client(const EndpointConfig& cfg) {
  if (cfg.model.empty()) throw ConfigError("judge.model must name the chat model");
  const char* token = std::getenv(cfg.auth_env.c_str());
  if (token == nullptr || *token == '\0') {
    throw ConfigError("judge auth token missing: set the " + cfg.auth_env + " environment variable");
  }
  return std::make_unique<HttpChatClient>(cfg, token);
}

}  // namespace fmx
