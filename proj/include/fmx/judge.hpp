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

// Judging latents with a chat model: prompt construction from top-activating
// tokens, verdict parsing and labeling, and a rate-limited, retrying runner
// over a pluggable chat-completion client.

#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fmx/activations.hpp"
#include "fmx/model.hpp"

namespace fmx {

inline constexpr std::size_t kContextChars = 80;

struct TokenEvidence {
  std::string token;
  std::vector<std::string> contexts;  // at most two, token wrapped in << >>
};

// Tokens ordered by maximum activation, strongest first.
struct LatentEvidence {
  std::uint32_t feature_id = 0;
  std::vector<TokenEvidence> tokens;

  // Throws DataError on an empty token list or more than two contexts.
  void validate() const;
};

// Text around one token occurrence: up to `chars` code points on each side
// of the token, which is wrapped as <<token>>. Line breaks become spaces so
// each context stays on its own prompt line.
std::string context_window(const std::string& left, const std::string& token,
                           const std::string& right, std::size_t chars = kContextChars);

// Source text for one activation-batch token.
struct TokenText {
  std::string token;
  std::string left;
  std::string right;
};

struct EvidenceConfig {
  std::size_t top_tokens = 20;
  std::size_t contexts_per_token = 2;
};

// Evidence for each requested latent from one pass over `data`. Distinct token
// strings are ranked by their maximum activation; contexts come from the
// strongest occurrences. Latents that never fire are skipped.
std::vector<LatentEvidence> collect_evidence(const CrosscoderModel& m, const ActivationBatch& data,
                                             const std::vector<TokenText>& text,
                                             const std::vector<std::uint32_t>& latents,
                                             const SparsifyMode& mode,
                                             const EvidenceConfig& cfg = {});

// System message sent with every prompt. This is our own wording.
extern const char* const kJudgeSystemMessage;

// User message. Values are inserted literally; braces inside tokens are
// never treated as placeholders.
std::string build_prompt(const LatentEvidence& ev);

enum class JudgeLabel { kSemantic, kSurface, kUnlabeled };
std::string to_string(JudgeLabel label);

struct JudgeVerdict {
  double semantic_score = 0.0;
  double surface_score = 0.0;
  JudgeLabel label = JudgeLabel::kUnlabeled;
  std::string raw;
};

// semantic when semantic > 0.7 and surface < 0.3; surface when reversed.
JudgeLabel label_for(double semantic_score, double surface_score);

// First well-formed JSON object in `response`; both scores clipped to
// [0, 1]. Throws ParseError (with the raw text) when there is no object or a
// score is missing or not a number.
JudgeVerdict parse_verdict(const std::string& response);

// One chat-completion exchange. status 0 means the request never got a
// response (connection failure, timeout).
struct ChatReply {
  int status = 0;
  std::string content;
  std::string error;
};

bool is_transient(const ChatReply& r);

class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual ChatReply send(const std::string& system, const std::string& user) = 0;
};

struct EndpointConfig {
  std::string base_url = "https://openrouter.ai/api/v1";
  std::string path = "/chat/completions";
  std::string model;
  std::string auth_env = "FMX_JUDGE_API_KEY";
  double temperature = 0.0;
  int timeout_s = 60;
};

// OpenAI-compatible endpoint. Reads the bearer token from the environment
// variable named by `auth_env` at construction and throws ConfigError when it
// is unset or empty, or when the model name is empty.
std::unique_ptr<ChatClient> make_http_client(const EndpointConfig& cfg);

// Offline client: `script(user_message)` produces the reply.
class StubChatClient : public ChatClient {
 public:
  using Script = std::function<ChatReply(const std::string& user)>;
  explicit StubChatClient(Script script) : script_(std::move(script)) {}
  ChatReply send(const std::string& system, const std::string& user) override;
  std::size_t calls() const;

 private:
  Script script_;
  mutable std::mutex mu_;
  std::size_t calls_ = 0;
};

struct JudgeRunConfig {
  int max_retries = 3;                                     // after the first attempt
  std::chrono::milliseconds backoff{500};                  // doubles per retry
  double requests_per_second = 0.0;                        // 0: no limit
  std::size_t in_flight = 4;
};

struct LatentJudgement {
  std::uint32_t feature_id = 0;
  std::optional<JudgeVerdict> verdict;
  std::string error;
  int attempts = 0;
};

struct JudgeCounts {
  std::size_t semantic = 0;
  std::size_t surface = 0;
  std::size_t unlabeled = 0;
  std::size_t errored = 0;

  friend bool operator==(const JudgeCounts&, const JudgeCounts&) = default;
};

struct JudgeRun {
  std::vector<LatentJudgement> results;  // same order as the evidence
  JudgeCounts counts;
};

// One request per latent. Transient failures are retried with exponential
// backoff; parse failures and exhausted retries are recorded per latent and
// the run continues. When `audit` is set, one NDJSON record per latent is
// written in completion order.
JudgeRun judge_latents(const std::vector<LatentEvidence>& evidence, ChatClient& client,
                       const JudgeRunConfig& cfg, std::ostream* audit = nullptr);

// Evidence interchange: one JSON object per line,
// {"feature_id": 3, "tokens": [{"token": "Ohio", "contexts": ["..."]}]}.
std::vector<LatentEvidence> read_evidence_jsonl(std::istream& in);
void write_evidence_jsonl(std::ostream& out, const std::vector<LatentEvidence>& evidence);

// "feature_id,label,semantic_score,surface_score,attempts,error".
void write_judgements_csv(std::ostream& out, const JudgeRun& run);

}  // namespace fmx
