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

#include "fmx/judge.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "fmx/errors.hpp"
#include "fmx/synth_data.hpp"
#include "httplib.h"
#include "json.hpp"

namespace fmx {
namespace {

LatentEvidence fixture_evidence() {
  return {1234,
          {{"Ohio", {"the governor of <<Ohio>> said on Monday", "from Columbus, <<Ohio>>, a city"}},
           {"Texas", {"cattle ranches in <<Texas>> and"}},
           {"{feature_id}", {}}}};
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TEST(BuildPrompt, MatchesGoldenFile) {
  const std::string golden = read_file(FMX_GOLDEN_DIR "/judge_prompt.txt");
  ASSERT_FALSE(golden.empty());
  EXPECT_EQ(build_prompt(fixture_evidence()), golden);
}

TEST(BuildPrompt, EmptyContextsLeaveSectionEmpty) {
  const auto p = build_prompt({7, {{"a", {}}}});
  EXPECT_NE(p.find("(activating token wrapped in <<>>):\n\nReturn ONLY valid JSON"), std::string::npos);
  EXPECT_NE(p.find("****Feature ID****: 7\n"), std::string::npos);
}

TEST(ContextWindow, TruncatesByCodePoint) {
  const std::string left(100, 'x');
  const std::string right = "line one\nline two";
  const auto w = context_window(left, "tok", right);
  EXPECT_EQ(w, std::string(80, 'x') + "<<tok>>line one line two");
  // Two-byte characters are never split.
  std::string accents;
  for (int n = 0; n < 90; ++n) accents += "\xc3\xa9";
  const auto a = context_window(accents, "t", "", 80);
  EXPECT_EQ(a.size(), 160u + 5u);
  EXPECT_EQ(context_window("ab", "t", "cd", 1), "b<<t>>c");
}

TEST(ParseVerdict, ExampleCases) {
  const auto v = parse_verdict(R"({"semantic_score": 0.85, "surface_score": 0.1})");
  EXPECT_EQ(v.label, JudgeLabel::kSemantic);
  EXPECT_EQ(v.semantic_score, 0.85);
  EXPECT_EQ(v.surface_score, 0.1);
  EXPECT_EQ(parse_verdict(R"({"semantic_score": 0.5, "surface_score": 0.5})").label,
            JudgeLabel::kUnlabeled);
  const auto c = parse_verdict(R"({"semantic_score": 1.3, "surface_score": -0.2})");
  EXPECT_EQ(c.semantic_score, 1.0);
  EXPECT_EQ(c.surface_score, 0.0);
  EXPECT_EQ(c.label, JudgeLabel::kSemantic);
  EXPECT_EQ(parse_verdict(R"({"semantic_score": 0.05, "surface_score": 0.95})").label,
            JudgeLabel::kSurface);
}

TEST(ParseVerdict, BoundariesAreStrict) {
  EXPECT_EQ(label_for(0.7, 0.1), JudgeLabel::kUnlabeled);
  EXPECT_EQ(label_for(0.9, 0.3), JudgeLabel::kUnlabeled);
  EXPECT_EQ(label_for(0.3, 0.9), JudgeLabel::kUnlabeled);
  EXPECT_EQ(label_for(0.1, 0.71), JudgeLabel::kSurface);
  EXPECT_EQ(label_for(0.9, 0.9), JudgeLabel::kUnlabeled);
}

TEST(ParseVerdict, FindsFirstObjectInProse) {
  const auto v = parse_verdict(
      "Sure! {not json} Here: ```json\n{\"surface_score\": 0.2, \"semantic_score\": 0.75, "
      "\"note\": \"a } inside\"}\n``` and {\"semantic_score\": 0, \"surface_score\": 1}");
  EXPECT_EQ(v.semantic_score, 0.75);
  EXPECT_EQ(v.label, JudgeLabel::kSemantic);
}

TEST(ParseVerdict, ErrorsCarryRawText) {
  for (const std::string raw : {"no json here", R"({"semantic_score": 0.4})",
                                R"({"semantic_score": "high", "surface_score": 0.1})", "{broken"}) {
    try {
      parse_verdict(raw);
      FAIL() << raw;
    } catch (const ParseError& e) {
      EXPECT_EQ(e.raw(), raw);
    }
  }
}

TEST(ParseVerdict, EchoRoundTrip) {
  for (double s : {0.0, 0.25, 0.71, 1.0}) {
    for (double f : {0.0, 0.29, 0.5, 1.0}) {
      const auto v = parse_verdict(nlohmann::json{{"semantic_score", s}, {"surface_score", f}}.dump());
      EXPECT_EQ(v.semantic_score, s);
      EXPECT_EQ(v.surface_score, f);
      EXPECT_EQ(v.label, label_for(s, f));
    }
  }
}

// Stub replies keyed by the feature id in the prompt.
ChatReply reply_for(std::uint32_t id, const std::string& verdict_script) {
  const char c = verdict_script[id];
  if (c == 's') return {200, R"({"semantic_score": 0.9, "surface_score": 0.1})", ""};
  if (c == 'f') return {200, R"({"semantic_score": 0.1, "surface_score": 0.8})", ""};
  if (c == 'u') return {200, R"({"semantic_score": 0.5, "surface_score": 0.5})", ""};
  return {200, "I cannot decide.", ""};
}

std::uint32_t feature_in(const std::string& prompt) {
  const std::string key = "****Feature ID****: ";
  return std::stoul(prompt.substr(prompt.find(key) + key.size()));
}

std::vector<LatentEvidence> ten_latents() {
  std::vector<LatentEvidence> ev;
  for (std::uint32_t i = 0; i < 10; ++i) ev.push_back({i, {{"tok" + std::to_string(i), {}}}});
  return ev;
}

TEST(JudgeLatents, StubCountsAreExact) {
  const std::string script = "sfsfusffsf";  // 4 semantic, 5 surface, 1 unlabeled
  StubChatClient stub([&](const std::string& user) { return reply_for(feature_in(user), script); });
  const auto evidence = ten_latents();
  const auto before = evidence;
  std::ostringstream audit;
  JudgeRunConfig cfg;
  cfg.in_flight = 3;
  const auto run = judge_latents(evidence, stub, cfg, &audit);
  EXPECT_EQ(run.counts, (JudgeCounts{4, 5, 1, 0}));
  EXPECT_EQ(stub.calls(), 10u);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(run.results[i].feature_id, i);
  EXPECT_EQ(evidence.size(), before.size());
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(evidence[i].tokens[0].token, before[i].tokens[0].token);

  std::istringstream lines(audit.str());
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    const auto rec = nlohmann::json::parse(line);
    EXPECT_TRUE(rec.contains("feature_id"));
    ++n;
  }
  EXPECT_EQ(n, 10u);

  const auto again = judge_latents(evidence, stub, cfg);
  EXPECT_EQ(again.counts, run.counts);
}

TEST(JudgeLatents, MalformedReplyIsIsolated) {
  const std::string script = "sssxffffuu";
  StubChatClient stub([&](const std::string& user) { return reply_for(feature_in(user), script); });
  const auto run = judge_latents(ten_latents(), stub, {});
  EXPECT_EQ(run.counts, (JudgeCounts{3, 4, 2, 1}));
  EXPECT_FALSE(run.results[3].verdict);
  EXPECT_NE(run.results[3].error.find("parse"), std::string::npos);
  EXPECT_EQ(run.results[3].attempts, 1);
}

TEST(JudgeLatents, TransientFailuresRetryWithBackoff) {
  std::atomic<int> calls{0};
  StubChatClient stub([&](const std::string&) -> ChatReply {
    return ++calls <= 2 ? ChatReply{503, "", "busy"}
                        : ChatReply{200, R"({"semantic_score": 1, "surface_score": 0})", ""};
  });
  JudgeRunConfig cfg;
  cfg.backoff = std::chrono::milliseconds(1);
  const auto run = judge_latents({{5, {{"x", {}}}}}, stub, cfg);
  EXPECT_EQ(run.results[0].attempts, 3);
  EXPECT_EQ(run.counts.semantic, 1u);

  StubChatClient down([](const std::string&) { return ChatReply{503, "", "busy"}; });
  const auto failed = judge_latents(ten_latents(), down, cfg);
  EXPECT_EQ(failed.counts.errored, 10u);
  EXPECT_EQ(down.calls(), 40u);  // 1 + 3 retries each

  StubChatClient denied([](const std::string&) { return ChatReply{401, "", "bad key"}; });
  const auto no_retry = judge_latents({{1, {{"x", {}}}}}, denied, cfg);
  EXPECT_EQ(denied.calls(), 1u);
  EXPECT_EQ(no_retry.results[0].error, "http 401: bad key");
}

TEST(JudgeLatents, InFlightAndRateLimits) {
  std::atomic<int> active{0}, peak{0};
  StubChatClient stub([&](const std::string&) {
    const int now = ++active;
    int p = peak.load();
    while (now > p && !peak.compare_exchange_weak(p, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
    --active;
    return ChatReply{200, R"({"semantic_score": 0, "surface_score": 0})", ""};
  });
  JudgeRunConfig cfg;
  cfg.in_flight = 2;
  cfg.requests_per_second = 100.0;
  const auto start = std::chrono::steady_clock::now();
  const auto run = judge_latents(ten_latents(), stub, cfg);
  const auto elapsed = std::chrono::steady_clock::now() - start;
  EXPECT_LE(peak.load(), 2);
  EXPECT_EQ(run.counts.unlabeled, 10u);
  EXPECT_GE(elapsed, std::chrono::milliseconds(85));  // 10 starts spaced 10 ms apart
}

TEST(HttpClient, MissingAuthIsConfigError) {
  EndpointConfig cfg;
  cfg.model = "m";
  cfg.auth_env = "FMX_TEST_UNSET_TOKEN_VARIABLE";
  ::unsetenv(cfg.auth_env.c_str());
  EXPECT_THROW(make_http_client(cfg), ConfigError);
  ::setenv(cfg.auth_env.c_str(), "", 1);
  EXPECT_THROW(make_http_client(cfg), ConfigError);
  ::setenv(cfg.auth_env.c_str(), "k", 1);
  cfg.model.clear();
  EXPECT_THROW(make_http_client(cfg), ConfigError);
}

TEST(HttpClient, LocalServerRetryThenSuccess) {
  httplib::Server server;
  std::atomic<int> hits{0};
  std::string seen_auth, seen_model, seen_system;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    if (++hits == 1) {
      res.status = 503;
      res.set_content("overloaded", "text/plain");
      return;
    }
    seen_auth = req.get_header_value("Authorization");
    const auto body = nlohmann::json::parse(req.body);
    seen_model = body["model"];
    seen_system = body["messages"][0]["content"];
    const nlohmann::json reply{
        {"choices",
         {{{"message",
            {{"role", "assistant"},
             {"content", R"({"semantic_score": 0.85, "surface_score": 0.1})"}}}}}}};
    res.set_content(reply.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread serve([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ::setenv("FMX_TEST_JUDGE_TOKEN", "secret-token", 1);
  EndpointConfig cfg;
  cfg.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
  cfg.model = "test-model";
  cfg.auth_env = "FMX_TEST_JUDGE_TOKEN";
  cfg.timeout_s = 5;
  auto client = make_http_client(cfg);
  JudgeRunConfig run_cfg;
  run_cfg.backoff = std::chrono::milliseconds(1);
  const auto run = judge_latents({fixture_evidence()}, *client, run_cfg);
  server.stop();
  serve.join();

  EXPECT_EQ(hits.load(), 2);
  ASSERT_TRUE(run.results[0].verdict);
  EXPECT_EQ(run.results[0].attempts, 2);
  EXPECT_EQ(run.counts.semantic, 1u);
  EXPECT_EQ(seen_auth, "Bearer secret-token");
  EXPECT_EQ(seen_model, "test-model");
  EXPECT_EQ(seen_system, kJudgeSystemMessage);
}

TEST(HttpClient, UnreachableEndpointIsRecorded) {
  ::setenv("FMX_TEST_JUDGE_TOKEN", "t", 1);
  EndpointConfig cfg;
  cfg.base_url = "http://127.0.0.1:1";
  cfg.model = "m";
  cfg.auth_env = "FMX_TEST_JUDGE_TOKEN";
  cfg.timeout_s = 1;
  auto client = make_http_client(cfg);
  JudgeRunConfig run_cfg;
  run_cfg.backoff = std::chrono::milliseconds(1);
  run_cfg.max_retries = 1;
  const auto run = judge_latents({{1, {{"x", {}}}}}, *client, run_cfg);
  EXPECT_EQ(run.counts.errored, 1u);
  EXPECT_EQ(run.results[0].attempts, 2);
  EXPECT_EQ(run.results[0].error.rfind("http 0: ", 0), 0u);
}

TEST(Evidence, CollectRanksTokensByMaxActivation) {
  // One shared feature on a 2-layer, 2-dim space; the embedded latent's
  // activation equals the planted magnitude.
  SynthSpec spec;
  spec.d = 2;
  spec.layers = 2;
  spec.features.push_back({{0, 1}, {{1.0, 0.0}, {1.0, 0.0}}, 0.5});
  const auto m = embed_planted_dictionary(spec, 1);
  const std::vector<float> mags{0.5f, 2.0f, 1.0f, 3.0f, 0.0f};
  std::vector<float> flat;
  for (float a : mags) flat.insert(flat.end(), {a, 0.0f, a, 0.0f});
  const ActivationBatch data(5, 2, 2, flat);
  const std::vector<TokenText> text{{"a", "L0 ", " R0"}, {"b", "L1 ", " R1"}, {"a", "L2 ", " R2"},
                                    {"c", "L3 ", " R3"}, {"d", "L4 ", " R4"}};
  EvidenceConfig cfg;
  cfg.contexts_per_token = 1;
  const auto ev = collect_evidence(m, data, text, {0}, SparsifyMode::threshold(0.0), cfg);
  ASSERT_EQ(ev.size(), 1u);
  ASSERT_EQ(ev[0].tokens.size(), 3u);  // "d" never fires
  EXPECT_EQ(ev[0].tokens[0].token, "c");
  EXPECT_EQ(ev[0].tokens[1].token, "b");
  EXPECT_EQ(ev[0].tokens[2].token, "a");
  EXPECT_EQ(ev[0].tokens[2].contexts, std::vector<std::string>{"L2 <<a>> R2"});

  std::stringstream io;
  write_evidence_jsonl(io, ev);
  const auto back = read_evidence_jsonl(io);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(build_prompt(back[0]), build_prompt(ev[0]));
  std::istringstream bad("{\"feature_id\": 1}\n");
  EXPECT_THROW(read_evidence_jsonl(bad), DataError);
}

}  // namespace
}  // namespace fmx
