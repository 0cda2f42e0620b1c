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

#include <algorithm>
#include <atomic>
#include <iomanip>
#include <istream>
#include <thread>
#include <unordered_map>

#include "fmx/errors.hpp"
#include "json.hpp"

namespace fmx {

namespace {

using json = nlohmann::json;

// User-message template, split at its placeholders.
constexpr const char* kPromptHead =
    "You are evaluating a latent feature from a sparse autoencoder trained on a language model. "
    "You are given the tokens that most strongly activate this feature.\n"
    "\n"
    "Score the feature on two independent dimensions:\n"
    "\n"
    "****semantic_score**** (0 to 1, continuous): How strongly do these tokens collectively "
    "represent a coherent, high-level concept that is interpretable by humans?\n"
    "- 1.0 = tokens clearly belong to a unified semantic category (e.g. US states and cities, "
    "negative-emotion words, cooking verbs, animal species, financial terms)\n"
    "- 0.5 = tokens share some thematic connection but it's loose or partial\n"
    "- 0.0 = no discernible high-level concept; tokens seem unrelated or random\n"
    "\n"
    "****surface_score**** (0 to 1, continuous): How strongly do these tokens collectively "
    "describe low-level linguistic or surface patterns rather than meaning?\n"
    "- 1.0 = tokens are unified by syntax, morphology, punctuation, character class, or "
    "formatting (e.g. closing braces, digits, -ing suffixes, markup tags, subword fragments)\n"
    "- 0.5 = tokens partially share surface-level properties but also carry some semantic "
    "content\n"
    "- 0.0 = tokens are not unified by any surface-level pattern\n"
    "\n"
    "These two scores are INDEPENDENT and can vary continuously from 0 to 1. A feature can be "
    "high on both (rare), low on both (noise/random), or high on one and low on the other "
    "(typical).\n"
    "\n"
    "Think carefully about whether the unifying pattern is semantic (about meaning) or "
    "surface-level (about form/syntax/characters).\n"
    "\n"
    "****Feature ID****: ";
constexpr const char* kPromptTokens =
    "\n****Top-activating tokens**** (ordered by activation strength): ";
constexpr const char* kPromptContexts =
    "\n\n****Example contexts**** (activating token wrapped in <<>>):\n";
constexpr const char* kPromptTail =
    "\nReturn ONLY valid JSON with keys \"semantic_score\" and \"surface_score\", both floats "
    "between 0 and 1.\n"
    "\n"
    "Example: {\"semantic_score\": 0.85, \"surface_score\": 0.1}";

bool is_continuation(char c) { return (static_cast<unsigned char>(c) & 0xC0) == 0x80; }

// Last / first `n` UTF-8 code points of `s`.
std::string tail_code_points(const std::string& s, std::size_t n) {
  std::size_t pos = s.size();
  for (std::size_t count = 0; pos > 0 && count < n; ++count) {
    --pos;
    while (pos > 0 && is_continuation(s[pos])) --pos;
  }
  return s.substr(pos);
}

std::string head_code_points(const std::string& s, std::size_t n) {
  std::size_t pos = 0;
  for (std::size_t count = 0; pos < s.size() && count < n; ++count) {
    ++pos;
    while (pos < s.size() && is_continuation(s[pos])) ++pos;
  }
  return s.substr(0, pos);
}

std::string flatten_lines(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '\r', ' ');
  return s;
}

// End of the balanced {...} starting at `begin`, honoring JSON strings.
std::optional<std::size_t> matching_brace(const std::string& s, std::size_t begin) {
  int depth = 0;
  bool in_string = false;
  for (std::size_t n = begin; n < s.size(); ++n) {
    const char c = s[n];
    if (in_string) {
      if (c == '\\') {
        ++n;
      } else if (c == '"') {
        in_string = false;
      }
    } else if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}' && --depth == 0) {
      return n;
    }
  }
  return std::nullopt;
}

double score_field(const json& obj, const char* key, const std::string& raw) {
  const auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(std::string("verdict is missing \"") + key + "\"", raw);
  if (!it->is_number()) throw ParseError(std::string("verdict field \"") + key + "\" is not a number", raw);
  return std::clamp(it->get<double>(), 0.0, 1.0);
}

// Minimum spacing between request starts.
class RateLimiter {
 public:
  explicit RateLimiter(double per_second) : per_second_(per_second) {}

  void acquire() {
    if (per_second_ <= 0.0) return;
    const auto interval = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(1.0 / per_second_));
    std::chrono::steady_clock::time_point slot;
    {
      std::lock_guard lock(mu_);
      slot = std::max(std::chrono::steady_clock::now(), next_);
      next_ = slot + interval;
    }
    std::this_thread::sleep_until(slot);
  }

 private:
  double per_second_;
  std::mutex mu_;
  std::chrono::steady_clock::time_point next_{};
};

json audit_record(const LatentJudgement& j) {
  json rec{{"feature_id", j.feature_id}, {"attempts", j.attempts}};
  if (j.verdict) {
    rec["label"] = to_string(j.verdict->label);
    rec["semantic_score"] = j.verdict->semantic_score;
    rec["surface_score"] = j.verdict->surface_score;
    rec["raw"] = j.verdict->raw;
  } else {
    rec["error"] = j.error;
  }
  return rec;
}

}  // namespace

const char* const kJudgeSystemMessage =
    "You are an expert in neural network interpretability. You evaluate latent features of "
    "sparse dictionaries from the tokens that activate them and answer with JSON only.";

void LatentEvidence::validate() const {
  if (tokens.empty()) throw DataError("evidence for feature " + std::to_string(feature_id) + " has no tokens");
  for (const auto& t : tokens) {
    if (t.contexts.size() > 2) {
      throw DataError("evidence for feature " + std::to_string(feature_id) +
                      " has more than two contexts for one token");
    }
  }
}

std::string context_window(const std::string& left, const std::string& token,
                           const std::string& right, std::size_t chars) {
  return flatten_lines(tail_code_points(left, chars) + "<<" + token + ">>" +
                       head_code_points(right, chars));
}

std::vector<LatentEvidence> collect_evidence(const CrosscoderModel& m, const ActivationBatch& data,
                                             const std::vector<TokenText>& text,
                                             const std::vector<std::uint32_t>& latents,
                                             const SparsifyMode& mode,
                                             const EvidenceConfig& cfg) {
  if (text.size() != data.tokens()) {
    throw DimensionError("token text count " + std::to_string(text.size()) +
                         " != activation token count " + std::to_string(data.tokens()));
  }
  const std::size_t width = m.dims().d_sae;
  std::vector<int> slot(width, -1);
  for (std::size_t n = 0; n < latents.size(); ++n) {
    if (latents[n] >= width) throw IndexError("latent " + std::to_string(latents[n]) + " out of range");
    slot[latents[n]] = static_cast<int>(n);
  }

  struct Occurrence {
    double act;
    std::size_t token;
  };
  // Per requested latent: token string -> occurrences (strongest few kept).
  std::vector<std::unordered_map<std::string, std::vector<Occurrence>>> seen(latents.size());
  const std::size_t keep = std::max<std::size_t>(cfg.contexts_per_token, 1);
  auto stronger = [](const Occurrence& a, const Occurrence& b) {
    return a.act != b.act ? a.act > b.act : a.token < b.token;
  };

  const std::size_t block =
      mode.kind == SparsifyMode::Kind::kBatchTopK && mode.chunk > 0 ? mode.chunk : 4096;
  for (std::size_t begin = 0; begin < data.tokens(); begin += block) {
    const SparseCode code = encode(m, data.slice(begin, begin + block), mode);
    for (std::size_t t = 0; t < code.tokens(); ++t) {
      const auto idx = code.indices(t);
      const auto val = code.values(t);
      for (std::size_t n = 0; n < idx.size(); ++n) {
        if (slot[idx[n]] < 0) continue;
        auto& occ = seen[slot[idx[n]]][text[begin + t].token];
        occ.push_back({val[n], begin + t});
        std::sort(occ.begin(), occ.end(), stronger);
        if (occ.size() > keep) occ.pop_back();
      }
    }
  }

  std::vector<LatentEvidence> out;
  for (std::size_t n = 0; n < latents.size(); ++n) {
    if (seen[n].empty()) continue;
    std::vector<std::pair<std::string, const std::vector<Occurrence>*>> ranked;
    for (const auto& [tok, occ] : seen[n]) ranked.emplace_back(tok, &occ);
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      const double x = a.second->front().act;
      const double y = b.second->front().act;
      return x != y ? x > y : a.first < b.first;
    });
    if (ranked.size() > cfg.top_tokens) ranked.resize(cfg.top_tokens);
    LatentEvidence ev{latents[n], {}};
    for (const auto& [tok, occ] : ranked) {
      TokenEvidence te{tok, {}};
      for (std::size_t c = 0; c < std::min(cfg.contexts_per_token, occ->size()); ++c) {
        const auto& src = text[(*occ)[c].token];
        te.contexts.push_back(context_window(src.left, src.token, src.right));
      }
      ev.tokens.push_back(std::move(te));
    }
    out.push_back(std::move(ev));
  }
  return out;
}

std::string build_prompt(const LatentEvidence& ev) {
  std::string out = kPromptHead;
  out += std::to_string(ev.feature_id);
  out += kPromptTokens;
  for (std::size_t n = 0; n < ev.tokens.size(); ++n) {
    if (n > 0) out += ", ";
    out += '"';
    out += ev.tokens[n].token;
    out += '"';
  }
  out += kPromptContexts;
  for (const auto& t : ev.tokens) {
    if (t.contexts.empty()) continue;
    out += "- token \"";
    out += t.token;
    out += "\":\n";
    for (const auto& c : t.contexts) {
      out += " - ";
      out += c;
      out += '\n';
    }
  }
  out += kPromptTail;
  return out;
}

std::string to_string(JudgeLabel label) {
  switch (label) {
    case JudgeLabel::kSemantic:
      return "semantic";
    case JudgeLabel::kSurface:
      return "surface";
    case JudgeLabel::kUnlabeled:
      break;
  }
  return "unlabeled";
}

JudgeLabel label_for(double semantic_score, double surface_score) {
  if (semantic_score > 0.7 && surface_score < 0.3) return JudgeLabel::kSemantic;
  if (surface_score > 0.7 && semantic_score < 0.3) return JudgeLabel::kSurface;
  return JudgeLabel::kUnlabeled;
}

JudgeVerdict parse_verdict(const std::string& response) {
  for (std::size_t pos = response.find('{'); pos != std::string::npos;
       pos = response.find('{', pos + 1)) {
    const auto end = matching_brace(response, pos);
    if (!end) break;
    const json obj = json::parse(response.begin() + static_cast<std::ptrdiff_t>(pos),
                                 response.begin() + static_cast<std::ptrdiff_t>(*end + 1), nullptr,
                                 false);
    if (obj.is_discarded() || !obj.is_object()) continue;
    JudgeVerdict v;
    v.semantic_score = score_field(obj, "semantic_score", response);
    v.surface_score = score_field(obj, "surface_score", response);
    v.label = label_for(v.semantic_score, v.surface_score);
    v.raw = response;
    return v;
  }
  throw ParseError("no JSON object in judge response", response);
}

bool is_transient(const ChatReply& r) {
  return r.status == 0 || r.status == 408 || r.status == 429 || r.status >= 500;
}

ChatReply StubChatClient::send(const std::string&, const std::string& user) {
  {
    std::lock_guard lock(mu_);
    ++calls_;
  }
  return script_(user);
}

std::size_t StubChatClient::calls() const {
  std::lock_guard lock(mu_);
  return calls_;
}

JudgeRun judge_latents(const std::vector<LatentEvidence>& evidence, ChatClient& client,
                       const JudgeRunConfig& cfg, std::ostream* audit) {
  if (cfg.max_retries < 0) throw ConfigError("judge.max_retries must be >= 0");
  for (const auto& ev : evidence) ev.validate();

  JudgeRun run;
  run.results.resize(evidence.size());
  RateLimiter limiter(cfg.requests_per_second);
  std::mutex audit_mu;
  std::atomic<std::size_t> next{0};

  auto judge_one = [&](std::size_t n) {
    const auto& ev = evidence[n];
    LatentJudgement& out = run.results[n];
    out.feature_id = ev.feature_id;
    const std::string prompt = build_prompt(ev);
    auto delay = cfg.backoff;
    for (int attempt = 0;; ++attempt) {
      limiter.acquire();
      ChatReply reply;
      try {
        reply = client.send(kJudgeSystemMessage, prompt);
      } catch (const std::exception& e) {
        reply = {0, "", e.what()};
      }
      out.attempts = attempt + 1;
      if (reply.status == 200) {
        try {
          out.verdict = parse_verdict(reply.content);
        } catch (const ParseError& e) {
          out.error = std::string("parse: ") + e.what();
        }
        break;
      }
      if (!is_transient(reply) || attempt >= cfg.max_retries) {
        out.error = "http " + std::to_string(reply.status) + ": " + reply.error;
        break;
      }
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
    if (audit) {
      std::lock_guard lock(audit_mu);
      *audit << audit_record(out).dump() << '\n';
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(cfg.in_flight, evidence.size()));
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t n = next++; n < evidence.size(); n = next++) judge_one(n);
    });
  }
  for (auto& t : pool) t.join();

  for (const auto& r : run.results) {
    if (!r.verdict) {
      ++run.counts.errored;
    } else if (r.verdict->label == JudgeLabel::kSemantic) {
      ++run.counts.semantic;
    } else if (r.verdict->label == JudgeLabel::kSurface) {
      ++run.counts.surface;
    } else {
      ++run.counts.unlabeled;
    }
  }
  return run;
}

std::vector<LatentEvidence> read_evidence_jsonl(std::istream& in) {
  std::vector<LatentEvidence> out;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "evidence line " + std::to_string(lineno);
    const json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object()) throw DataError(where + " is not a JSON object");
    try {
      LatentEvidence ev;
      ev.feature_id = rec.at("feature_id").get<std::uint32_t>();
      for (const auto& t : rec.at("tokens")) {
        TokenEvidence te{t.at("token").get<std::string>(), {}};
        if (t.contains("contexts")) te.contexts = t.at("contexts").get<std::vector<std::string>>();
        ev.tokens.push_back(std::move(te));
      }
      ev.validate();
      out.push_back(std::move(ev));
    } catch (const json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
  }
  return out;
}

void write_evidence_jsonl(std::ostream& out, const std::vector<LatentEvidence>& evidence) {
  for (const auto& ev : evidence) {
    json tokens = json::array();
    for (const auto& t : ev.tokens) tokens.push_back({{"token", t.token}, {"contexts", t.contexts}});
    out << json{{"feature_id", ev.feature_id}, {"tokens", tokens}}.dump() << '\n';
  }
}

void write_judgements_csv(std::ostream& out, const JudgeRun& run) {
  out << "feature_id,label,semantic_score,surface_score,attempts,error\n";
  for (const auto& r : run.results) {
    out << r.feature_id << ',';
    if (r.verdict) {
      out << to_string(r.verdict->label) << ',' << std::setprecision(10) << r.verdict->semantic_score
          << ',' << r.verdict->surface_score << ',' << r.attempts << ",\n";
    } else {
      // Errors are free text; quote them and double inner quotes.
      std::string e = r.error;
      for (std::size_t p = e.find('"'); p != std::string::npos; p = e.find('"', p + 2)) e.insert(p, "\"");
      std::replace(e.begin(), e.end(), '\n', ' ');
      out << "error,,," << r.attempts << ",\"" << e << "\"\n";
    }
  }
}

}  // namespace fmx
